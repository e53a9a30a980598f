//! In-process simulated browser. Pages come from a [`WorldSpec`]; rendering is
//! fully deterministic, so identical worlds plus identical action sequences
//! yield byte-identical screenshots. No network, no credentials, no sleeping.

use std::collections::BTreeMap;
use std::time::Duration;

use super::render::render_page;
use super::world::{Effect, PageSpec, TextRegion, WorldSpec};
use super::{EnvConfig, EnvError, Environment, Observation};
use crate::domain::{Action, BBox, Point, ScrollDirection};

/// URL scheme used by simulated pages: `sim://{page_id}`.
pub const SIM_SCHEME: &str = "sim://";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Location {
    Page(usize),
    NotFound(String),
}

/// Simulated environment backed by a static world description plus mutable
/// state (key/value flags set by clicks) and text buffers (typed input).
#[derive(Debug, Clone)]
pub struct SimEnv {
    world: WorldSpec,
    config: EnvConfig,
    current: Location,
    scroll: u32,
    state: BTreeMap<String, String>,
    buffers: BTreeMap<String, String>,
    history: Vec<(Location, u32)>,
}

impl SimEnv {
    pub fn new(world: WorldSpec, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        world.validate((config.viewport_width, config.viewport_height))?;
        let start = world
            .pages
            .iter()
            .position(|p| p.id == world.start)
            .expect("validate checked the start page exists");
        Ok(Self {
            world,
            config,
            current: Location::Page(start),
            scroll: 0,
            state: BTreeMap::new(),
            buffers: BTreeMap::new(),
            history: Vec::new(),
        })
    }

    pub fn from_json(json: &str, config: EnvConfig) -> Result<Self, EnvError> {
        Self::new(WorldSpec::from_json(json)?, config)
    }

    pub fn load_file(path: &std::path::Path, config: EnvConfig) -> Result<Self, EnvError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Spec(format!("cannot read world file {}: {e}", path.display())))?;
        Self::from_json(&json, config)
    }

    /// Current scroll offset in page pixels.
    pub fn scroll_offset(&self) -> u32 {
        self.scroll
    }

    /// Value of a state key set by clicked elements, if any.
    pub fn state_value(&self, key: &str) -> Option<&str> {
        self.state.get(key).map(String::as_str)
    }

    /// Text accumulated in a named input buffer, if any.
    pub fn buffer(&self, region: &str) -> Option<&str> {
        self.buffers.get(region).map(String::as_str)
    }

    fn page(&self) -> Option<&PageSpec> {
        match &self.current {
            Location::Page(idx) => Some(&self.world.pages[*idx]),
            Location::NotFound(_) => None,
        }
    }

    fn page_height(&self) -> u32 {
        self.page()
            .map(|p| p.height(self.config.viewport_height))
            .unwrap_or(self.config.viewport_height)
    }

    fn max_scroll(&self) -> u32 {
        self.page_height().saturating_sub(self.config.viewport_height)
    }

    fn navigate_to(&mut self, page_id: &str) -> Result<(), EnvError> {
        let idx = self
            .world
            .pages
            .iter()
            .position(|p| p.id == page_id)
            .ok_or_else(|| EnvError::Spec(format!("navigation target {page_id:?} does not exist")))?;
        self.history.push((self.current.clone(), self.scroll));
        self.current = Location::Page(idx);
        self.scroll = 0;
        Ok(())
    }

    /// Topmost element under a viewport point, honoring the current scroll.
    /// Later elements in the page spec paint over earlier ones, so the last
    /// hit wins.
    fn element_at(&self, point: Point) -> Option<usize> {
        let page = self.page()?;
        let x = point.x as i64;
        let y = point.y as i64 + self.scroll as i64;
        page.elements
            .iter()
            .enumerate()
            .rev()
            .find(|(_, e)| e.bbox.contains(x, y))
            .map(|(idx, _)| idx)
    }

    fn require_point(&self, action: &Action) -> Result<Point, EnvError> {
        let query = action
            .target()
            .expect("only targeted actions reach require_point");
        let point = query.resolved.ok_or_else(|| {
            EnvError::Contract(format!(
                "{} action reached the environment without resolved coordinates",
                action.kind()
            ))
        })?;
        if point.x >= self.config.viewport_width || point.y >= self.config.viewport_height {
            return Err(EnvError::Contract(format!(
                "point ({}, {}) is outside the {}x{} viewport",
                point.x, point.y, self.config.viewport_width, self.config.viewport_height
            )));
        }
        Ok(point)
    }

    /// Applies the effect of the element under `point`, if any. Returns the
    /// element index so callers can chain typing behavior.
    fn click_at(&mut self, point: Point) -> Result<Option<usize>, EnvError> {
        let Some(idx) = self.element_at(point) else {
            return Ok(None);
        };
        let effect = self
            .page()
            .expect("element_at only matches on real pages")
            .elements[idx]
            .effect
            .clone();
        match effect {
            Effect::Navigate { to } => self.navigate_to(&to)?,
            Effect::SetState { key, value } => {
                self.state.insert(key, value);
            }
            Effect::AppendText { .. } | Effect::None => {}
        }
        Ok(Some(idx))
    }

    fn not_found_page(&self, url: &str) -> PageSpec {
        let right = self.config.viewport_width as i64 - 20;
        PageSpec {
            id: "__not_found".to_string(),
            background: "not-found".to_string(),
            height: None,
            elements: Vec::new(),
            text_regions: vec![TextRegion {
                bbox: BBox::new(20, 20, right, 160).expect("viewport is wider than 40px"),
                content: format!("page not found: {url}"),
            }],
        }
    }

    fn observation(&self, latency: Duration) -> Observation {
        let screenshot = match &self.current {
            Location::Page(_) => render_page(
                self.page().expect("location points at a page"),
                self.scroll,
                &self.state,
                &self.buffers,
                &self.config,
            ),
            Location::NotFound(url) => render_page(
                &self.not_found_page(url),
                0,
                &self.state,
                &self.buffers,
                &self.config,
            ),
        };
        Observation { screenshot, url: self.current_url(), step_latency: latency }
    }
}

impl Environment for SimEnv {
    fn execute(&mut self, action: &Action) -> Result<Observation, EnvError> {
        action
            .validate()
            .map_err(|e| EnvError::Contract(e.to_string()))?;
        let mut latency = Duration::ZERO;
        match action {
            Action::Click { .. } => {
                let point = self.require_point(action)?;
                self.click_at(point)?;
            }
            Action::Type { text, .. } => {
                let point = self.require_point(action)?;
                if let Some(idx) = self.click_at(point)? {
                    let effect = self
                        .page()
                        .map(|p| p.elements[idx].effect.clone())
                        .unwrap_or_default();
                    if let Effect::AppendText { region } = effect {
                        self.buffers.entry(region).or_default().push_str(text);
                    }
                }
            }
            Action::Scroll { direction } => {
                let step = self.config.scroll_step();
                self.scroll = match direction {
                    ScrollDirection::Down => (self.scroll + step).min(self.max_scroll()),
                    ScrollDirection::Up => self.scroll.saturating_sub(step),
                };
            }
            Action::Wait => {
                latency = Duration::from_millis(self.config.wait_duration_ms);
            }
            Action::Refresh => {}
            Action::GoTo { url } => {
                match url.strip_prefix(SIM_SCHEME) {
                    Some(id) if self.world.page(id).is_some() => self.navigate_to(id)?,
                    _ => {
                        self.history.push((self.current.clone(), self.scroll));
                        self.current = Location::NotFound(url.clone());
                        self.scroll = 0;
                    }
                }
            }
            Action::Back => {
                if let Some((location, scroll)) = self.history.pop() {
                    self.current = location;
                    self.scroll = scroll;
                }
            }
            Action::Answer { .. } => {}
        }
        Ok(self.observation(latency))
    }

    fn observe(&mut self) -> Result<Observation, EnvError> {
        Ok(self.observation(Duration::ZERO))
    }

    fn current_url(&self) -> String {
        match &self.current {
            Location::Page(idx) => format!("{SIM_SCHEME}{}", self.world.pages[*idx].id),
            Location::NotFound(url) => url.clone(),
        }
    }

    fn reset(&mut self) -> Result<Observation, EnvError> {
        let start = self
            .world
            .pages
            .iter()
            .position(|p| p.id == self.world.start)
            .expect("world was validated on construction");
        self.current = Location::Page(start);
        self.scroll = 0;
        self.state.clear();
        self.buffers.clear();
        self.history.clear();
        Ok(self.observation(Duration::ZERO))
    }
}
