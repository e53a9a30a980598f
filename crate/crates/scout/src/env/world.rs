use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::domain::BBox;

/// What clicking an element does.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// Go to another page of the world.
    Navigate { to: String },
    /// Set a state key, changing how this element renders.
    SetState { key: String, value: String },
    /// Focus a text buffer; Type actions landing here append to it.
    AppendText { region: String },
    #[default]
    None,
}

/// A clickable region with a label and an effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub bbox: BBox,
    pub label: String,
    #[serde(default)]
    pub effect: Effect,
}

/// Static text rendered into the page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    pub bbox: BBox,
    pub content: String,
}

/// One synthetic page. Pages may be taller than the viewport; `height`
/// defaults to the viewport height and scrolling exposes the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSpec {
    pub id: String,
    /// Names the page's background color (hashed to a stable tint).
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub elements: Vec<ElementSpec>,
    #[serde(default, rename = "text")]
    pub text_regions: Vec<TextRegion>,
}

impl PageSpec {
    pub fn height(&self, viewport_height: u32) -> u32 {
        self.height.unwrap_or(viewport_height).max(viewport_height)
    }
}

/// A deterministic test world: a handful of pages wired together by
/// navigation effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub start: String,
    pub pages: Vec<PageSpec>,
}

impl WorldSpec {
    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        serde_json::from_str(text).map_err(|e| EnvError::Spec(e.to_string()))
    }

    pub fn page(&self, id: &str) -> Option<&PageSpec> {
        self.pages.iter().find(|p| p.id == id)
    }

    /// Checks structural invariants: the start page exists, page ids are
    /// unique, every navigation target exists (errors name the missing id),
    /// and all boxes fit their page.
    pub fn validate(&self, viewport: (u32, u32)) -> Result<(), EnvError> {
        if self.pages.is_empty() {
            return Err(EnvError::Spec("world has no pages".into()));
        }
        let mut ids = BTreeSet::new();
        for page in &self.pages {
            if !ids.insert(page.id.as_str()) {
                return Err(EnvError::Spec(format!("duplicate page id {:?}", page.id)));
            }
        }
        if !ids.contains(self.start.as_str()) {
            return Err(EnvError::Spec(format!("start page {:?} does not exist", self.start)));
        }
        for page in &self.pages {
            let height = page.height(viewport.1) as i64;
            let width = viewport.0 as i64;
            let fits = |bbox: &BBox| {
                bbox.x1 >= 0 && bbox.y1 >= 0 && bbox.x2 < width && bbox.y2 < height
            };
            for element in &page.elements {
                if !fits(&element.bbox) {
                    return Err(EnvError::Spec(format!(
                        "page {:?} element {:?} box {:?} outside the {}x{} page",
                        page.id, element.label, element.bbox, width, height
                    )));
                }
                if let Effect::Navigate { to } = &element.effect {
                    if !ids.contains(to.as_str()) {
                        return Err(EnvError::Spec(format!(
                            "page {:?} element {:?} navigates to missing page {to:?}",
                            page.id, element.label
                        )));
                    }
                }
            }
            for region in &page.text_regions {
                if !fits(&region.bbox) {
                    return Err(EnvError::Spec(format!(
                        "page {:?} text region at {:?} outside the {}x{} page",
                        page.id, region.bbox, width, height
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_page_world() -> WorldSpec {
        WorldSpec::from_json(
            r#"{
                "start": "p1",
                "pages": [
                    {
                        "id": "p1",
                        "background": "home",
                        "elements": [
                            {"bbox": [100, 100, 300, 160], "label": "Go", "effect": {"kind": "navigate", "to": "p2"}}
                        ],
                        "text": [{"bbox": [100, 200, 600, 260], "content": "Welcome"}]
                    },
                    {"id": "p2", "background": "detail"}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn valid_world_passes() {
        two_page_world().validate((1200, 1200)).unwrap();
    }

    #[test]
    fn dangling_navigation_names_the_page() {
        let mut world = two_page_world();
        world.pages[0].elements[0].effect = Effect::Navigate { to: "p9".into() };
        let err = world.validate((1200, 1200)).unwrap_err();
        assert!(err.to_string().contains("p9"));
    }

    #[test]
    fn missing_start_and_duplicate_ids_are_rejected() {
        let mut world = two_page_world();
        world.start = "nope".into();
        assert!(world.validate((1200, 1200)).is_err());

        let mut world = two_page_world();
        world.pages[1].id = "p1".into();
        assert!(world.validate((1200, 1200)).is_err());
    }

    #[test]
    fn oversized_boxes_are_rejected_unless_the_page_is_tall() {
        let mut world = two_page_world();
        world.pages[0].elements[0].bbox = BBox::new(0, 1100, 200, 1500).unwrap();
        assert!(world.validate((1200, 1200)).is_err());
        world.pages[0].height = Some(2400);
        world.validate((1200, 1200)).unwrap();
    }

    #[test]
    fn effect_defaults_to_none() {
        let page: PageSpec = serde_json::from_str(
            r#"{"id": "p", "elements": [{"bbox": [0,0,10,10], "label": "x"}]}"#,
        )
        .unwrap();
        assert_eq!(page.elements[0].effect, Effect::None);
    }
}
