//! The localizer: turns an element description into pixel coordinates on a
//! screenshot, plus the grounding evaluation harness that scores such models
//! on (screenshot, instruction, bounding box) datasets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{BBox, DomainError, ElementQuery, ImageData, ImageId, Point};
use crate::gateway::{ChatRequest, Gateway, GatewayError, ImagePayload, ModuleTag};
use crate::util::parallel_map;

const SYSTEM_TEMPLATE: &str = include_str!("../templates/localizer_system.txt");

#[derive(Debug, thiserror::Error)]
pub enum LocalizeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("coordinates unparseable after {attempts} attempts: {last_raw:?}")]
    Unparseable { attempts: u32, last_raw: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("dataset error: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone)]
pub struct LocalizerConfig {
    /// Screenshots with a longer edge are downscaled to this before
    /// transmission; predictions are mapped back to original pixels.
    pub max_edge: u32,
    pub max_parse_retries: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self { max_edge: 1200, max_parse_retries: 3, temperature: 0.0, max_output_tokens: 64 }
    }
}

/// A resolved location: where to click, what the model literally said, and
/// whether the prediction had to be clamped into the screenshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located {
    pub point: Point,
    pub raw: String,
    pub out_of_bounds: bool,
}

/// Extracts click coordinates from model text. Two formats are recognized,
/// and the one appearing earliest in the text wins: a `(x, y)` tuple
/// (also inside wrappers like `Click(42, 7)`) and a `{"x":..,"y":..}` JSON
/// object.
pub fn parse_coordinates(text: &str) -> Result<Point, String> {
    static TUPLE: OnceLock<Regex> = OnceLock::new();
    static OBJECT: OnceLock<Regex> = OnceLock::new();
    let tuple = TUPLE.get_or_init(|| Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)").unwrap());
    let object = OBJECT.get_or_init(|| Regex::new(r"\{[^{}]*\}").unwrap());

    let mut best: Option<(usize, Point)> = None;
    if let Some(caps) = tuple.captures(text) {
        let m = caps.get(0).unwrap();
        if let (Ok(x), Ok(y)) = (caps[1].parse::<u32>(), caps[2].parse::<u32>()) {
            best = Some((m.start(), Point::new(x, y)));
        }
    }
    for m in object.find_iter(text) {
        if best.is_some_and(|(start, _)| start < m.start()) {
            break;
        }
        let Ok(value) = serde_json::from_str::<serde_json::Value>(m.as_str()) else {
            continue;
        };
        if let (Some(x), Some(y)) = (value["x"].as_u64(), value["y"].as_u64()) {
            if x <= u32::MAX as u64 && y <= u32::MAX as u64 {
                best = Some((m.start(), Point::new(x as u32, y as u32)));
                break;
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| format!("no coordinates in {text:?}"))
}

/// True iff the point falls inside the box, boundaries included.
pub fn hit_test(point: Point, bbox: &BBox) -> bool {
    bbox.contains(point.x as i64, point.y as i64)
}

/// Downscales a screenshot so its longer edge is at most `max_edge`. Returns
/// the transmitted image and the factor that maps predicted coordinates back
/// to original pixels (1.0 when no downscale happened).
fn prepare_for_transmission(
    image: &ImageData,
    max_edge: u32,
) -> Result<(Arc<ImageData>, f64), LocalizeError> {
    let longest = image.width.max(image.height);
    if longest <= max_edge {
        return Ok((Arc::new(image.clone()), 1.0));
    }
    let scale = max_edge as f64 / longest as f64;
    let new_w = ((image.width as f64 * scale).round() as u32).max(1);
    let new_h = ((image.height as f64 * scale).round() as u32).max(1);
    let decoded = image::load_from_memory_with_format(&image.png, image::ImageFormat::Png)
        .map_err(|e| DomainError::Invalid { what: "screenshot", why: e.to_string() })?;
    let resized = decoded.resize_exact(new_w, new_h, image::imageops::FilterType::Triangle);
    let mut png = Vec::new();
    resized
        .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| DomainError::Invalid { what: "screenshot", why: e.to_string() })?;
    let sent = ImageData::from_png(png).map_err(LocalizeError::Domain)?;
    Ok((Arc::new(sent), longest as f64 / max_edge as f64))
}

pub struct Localizer {
    config: LocalizerConfig,
}

impl Localizer {
    pub fn new(config: LocalizerConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &LocalizerConfig {
        &self.config
    }

    /// Resolves an element description to a point on the screenshot, in the
    /// original image's pixel space. Out-of-bounds predictions are clamped to
    /// the nearest edge and flagged.
    pub fn locate(
        &self,
        gateway: &Gateway,
        screenshot: &ImageData,
        query: &ElementQuery,
    ) -> Result<Located, LocalizeError> {
        if screenshot.width == 0 || screenshot.height == 0 {
            return Err(DomainError::Contract("empty screenshot".into()).into());
        }
        let (sent, inverse) = prepare_for_transmission(screenshot, self.config.max_edge)?;
        let payload = ImagePayload::new(ImageId::of_bytes(&sent.png), sent);
        let request = ChatRequest::new()
            .system(SYSTEM_TEMPLATE)
            .user(format!("Locate: {}", query.description), vec![payload])
            .temperature(self.config.temperature)
            .max_output_tokens(self.config.max_output_tokens);

        let attempts = 1 + self.config.max_parse_retries;
        let mut last_raw = String::new();
        for _ in 0..attempts {
            let response = gateway.call(ModuleTag::Localizer, &request)?;
            match parse_coordinates(&response.text) {
                Ok(predicted) => {
                    return Ok(map_back(predicted, inverse, screenshot, response.text));
                }
                Err(e) => {
                    log::warn!("localizer output unparseable: {e}");
                    last_raw = response.text;
                }
            }
        }
        Err(LocalizeError::Unparseable { attempts, last_raw })
    }
}

/// Applies the inverse transmission scale and clamps into image bounds.
fn map_back(predicted: Point, inverse: f64, original: &ImageData, raw: String) -> Located {
    let x = (predicted.x as f64 * inverse).round() as i64;
    let y = (predicted.y as f64 * inverse).round() as i64;
    let max_x = original.width as i64 - 1;
    let max_y = original.height as i64 - 1;
    let clamped_x = x.clamp(0, max_x);
    let clamped_y = y.clamp(0, max_y);
    Located {
        point: Point::new(clamped_x as u32, clamped_y as u32),
        raw,
        out_of_bounds: clamped_x != x || clamped_y != y,
    }
}

/// One grounding example: find the element described by `instruction` in
/// `image`; a prediction scores when it lands inside `bbox`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingExample {
    #[serde(rename = "image")]
    pub image_path: String,
    pub instruction: String,
    pub bbox: BBox,
    #[serde(rename = "tag", default = "default_tag")]
    pub source_tag: String,
}

fn default_tag() -> String {
    "untagged".to_string()
}

/// An example with its screenshot loaded and bounds-checked.
#[derive(Debug, Clone)]
pub struct LoadedExample {
    pub example: GroundingExample,
    pub image: Arc<ImageData>,
}

/// Anything that can point at an element for evaluation purposes. The
/// model-backed implementation reads only the instruction; test oracles may
/// use the whole example.
pub trait Locator: Send + Sync {
    fn locate_example(&self, example: &LoadedExample) -> Result<Point, String>;
}

/// The real thing: a gateway-backed localizer driven by the instruction.
pub struct ModelLocator<'a> {
    pub localizer: &'a Localizer,
    pub gateway: &'a Gateway,
}

impl Locator for ModelLocator<'_> {
    fn locate_example(&self, example: &LoadedExample) -> Result<Point, String> {
        let query = ElementQuery::new(&example.example.instruction);
        self.localizer
            .locate(self.gateway, &example.image, &query)
            .map(|l| l.point)
            .map_err(|e| e.to_string())
    }
}

/// Evaluation oracle that answers with the center of each example's bbox.
pub struct CenterOracle;

impl Locator for CenterOracle {
    fn locate_example(&self, example: &LoadedExample) -> Result<Point, String> {
        let (cx, cy) = example.example.bbox.center();
        Ok(Point::new(cx.max(0) as u32, cy.max(0) as u32))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagAccuracy {
    pub hits: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Scores for one evaluation run: per-example hits in dataset order, plus
/// accuracy per source tag and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub hits: Vec<bool>,
    pub per_tag: BTreeMap<String, TagAccuracy>,
    pub overall: TagAccuracy,
}

impl GroundingReport {
    /// Aligned text table, one row per tag plus the overall row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>6} {:>6} {:>9}\n", "tag", "hits", "total", "accuracy"));
        for (tag, acc) in &self.per_tag {
            out.push_str(&format!(
                "{:<12} {:>6} {:>6} {:>9.3}\n",
                tag, acc.hits, acc.total, acc.accuracy
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>9.3}\n",
            "overall", self.overall.hits, self.overall.total, self.overall.accuracy
        ));
        out
    }
}

/// Runs the locator over every example and scores hits. Locate failures count
/// as misses. `width` bounds the worker pool; results are reduced in dataset
/// order regardless of completion order.
pub fn evaluate_grounding(
    dataset: &[LoadedExample],
    locator: &(dyn Locator + '_),
    width: usize,
) -> GroundingReport {
    let hits: Vec<bool> = parallel_map(dataset.iter().collect::<Vec<_>>(), width, |_, example| {
        match locator.locate_example(example) {
            Ok(point) => hit_test(point, &example.example.bbox),
            Err(e) => {
                log::warn!("locate failed for {:?}: {e}", example.example.image_path);
                false
            }
        }
    });

    let mut per_tag: BTreeMap<String, TagAccuracy> = BTreeMap::new();
    for (example, &hit) in dataset.iter().zip(&hits) {
        let acc = per_tag.entry(example.example.source_tag.clone()).or_default();
        acc.total += 1;
        acc.hits += hit as u64;
    }
    let mut overall = TagAccuracy::default();
    for acc in per_tag.values_mut() {
        overall.hits += acc.hits;
        overall.total += acc.total;
        acc.accuracy = if acc.total == 0 { 0.0 } else { acc.hits as f64 / acc.total as f64 };
    }
    overall.accuracy =
        if overall.total == 0 { 0.0 } else { overall.hits as f64 / overall.total as f64 };
    GroundingReport { hits, per_tag, overall }
}

/// Loads a grounding dataset: either a directory holding `index.jsonl` (image
/// paths resolved against the directory) or a JSONL file (paths resolved
/// against its parent). Every image is read and the bbox checked against its
/// bounds before any evaluation starts.
pub fn load_grounding_dataset(path: &Path) -> Result<Vec<LoadedExample>, LocalizeError> {
    let (index_path, base) = if path.is_dir() {
        (path.join("index.jsonl"), path.to_path_buf())
    } else {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        (path.to_path_buf(), base)
    };
    let text = std::fs::read_to_string(&index_path)
        .map_err(|e| LocalizeError::Dataset(format!("cannot read {index_path:?}: {e}")))?;

    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: GroundingExample = serde_json::from_str(line).map_err(|e| {
            LocalizeError::Dataset(format!("{index_path:?} line {}: {e}", lineno + 1))
        })?;
        let image_path = base.join(&example.image_path);
        let png = std::fs::read(&image_path)
            .map_err(|e| LocalizeError::Dataset(format!("cannot read {image_path:?}: {e}")))?;
        let image = ImageData::from_png(png).map_err(|e| {
            LocalizeError::Dataset(format!("{image_path:?} is not a valid PNG: {e}"))
        })?;
        let inside = example.bbox.x1 >= 0
            && example.bbox.y1 >= 0
            && example.bbox.x2 < image.width as i64
            && example.bbox.y2 < image.height as i64;
        if !inside {
            return Err(LocalizeError::Dataset(format!(
                "{index_path:?} line {}: bbox {:?} outside the {}x{} image",
                lineno + 1,
                example.bbox,
                image.width,
                image.height
            )));
        }
        out.push(LoadedExample { example, image: Arc::new(image) });
    }
    Ok(out)
}
