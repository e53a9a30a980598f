use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{DomainError, Point};

/// A natural-language reference to an on-screen element, optionally resolved
/// to pixel coordinates by the localizer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementQuery {
    pub description: String,
    pub resolved: Option<Point>,
}

impl ElementQuery {
    pub fn new(description: impl Into<String>) -> Self {
        Self { description: description.into(), resolved: None }
    }

    pub fn resolved_at(mut self, p: Point) -> Self {
        self.resolved = Some(p);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl fmt::Display for ScrollDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        })
    }
}

/// The agent's whole action space. Everything it can do to a page goes
/// through one of these eight variants; `Answer` ends an attempt.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click { target: ElementQuery },
    Type { target: ElementQuery, text: String },
    Scroll { direction: ScrollDirection },
    Wait,
    Refresh,
    GoTo { url: String },
    Back,
    Answer { text: String },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Click { .. } => "click",
            Action::Type { .. } => "type",
            Action::Scroll { .. } => "scroll",
            Action::Wait => "wait",
            Action::Refresh => "refresh",
            Action::GoTo { .. } => "goto",
            Action::Back => "back",
            Action::Answer { .. } => "answer",
        }
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, Action::Answer { .. })
    }

    /// The element query carried by `Click`/`Type`, if any.
    pub fn target(&self) -> Option<&ElementQuery> {
        match self {
            Action::Click { target } | Action::Type { target, .. } => Some(target),
            _ => None,
        }
    }

    /// The action as the policy emits it: coordinates stripped, since only
    /// the localizer ever resolves them.
    pub fn policy_form(&self) -> Action {
        let mut a = self.clone();
        match &mut a {
            Action::Click { target } | Action::Type { target, .. } => target.resolved = None,
            _ => {}
        }
        a
    }

    /// Checks the per-variant invariants: non-empty targets and answers,
    /// syntactically valid `goto` URLs.
    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |why: String| DomainError::Invalid { what: "action", why };
        match self {
            Action::Click { target } | Action::Type { target, .. } => {
                if target.description.trim().is_empty() {
                    return Err(invalid(format!("{} target description is empty", self.kind())));
                }
            }
            Action::Answer { text } => {
                if text.trim().is_empty() {
                    return Err(invalid("answer text is empty".into()));
                }
            }
            Action::GoTo { url } => {
                url::Url::parse(url).map_err(|e| invalid(format!("goto url {url:?}: {e}")))?;
            }
            _ => {}
        }
        Ok(())
    }
}

// Wire format: tagged objects like {"kind":"click","target":"..."}. A target
// serializes as a bare string until the localizer resolves it, after which it
// becomes {"description":"...","resolved":[x,y]} so traces keep coordinates.
impl Serialize for ElementQuery {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.resolved {
            None => s.serialize_str(&self.description),
            Some(p) => {
                let mut m = Map::new();
                m.insert("description".into(), Value::String(self.description.clone()));
                m.insert("resolved".into(), json!([p.x, p.y]));
                m.serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for ElementQuery {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        element_query_from_value(&v).map_err(D::Error::custom)
    }
}

fn element_query_from_value(v: &Value) -> Result<ElementQuery, String> {
    match v {
        Value::String(s) => Ok(ElementQuery::new(s.clone())),
        Value::Object(m) => {
            for key in m.keys() {
                if key != "description" && key != "resolved" {
                    return Err(format!("unexpected key {key:?} in element target"));
                }
            }
            let description = m
                .get("description")
                .and_then(Value::as_str)
                .ok_or("element target object needs a string \"description\"")?
                .to_string();
            let resolved = match m.get("resolved") {
                None | Some(Value::Null) => None,
                Some(Value::Array(xs)) if xs.len() == 2 => {
                    let x = xs[0].as_u64().ok_or("resolved[0] must be a non-negative integer")?;
                    let y = xs[1].as_u64().ok_or("resolved[1] must be a non-negative integer")?;
                    Some(Point::new(x as u32, y as u32))
                }
                Some(other) => return Err(format!("bad resolved coordinates: {other}")),
            };
            Ok(ElementQuery { description, resolved })
        }
        other => Err(format!("element target must be a string or object, got {other}")),
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Action::from_value(&v).map_err(D::Error::custom)
    }
}

impl Action {
    pub fn to_value(&self) -> Value {
        fn target_value(t: &ElementQuery) -> Value {
            serde_json::to_value(t).expect("element query serializes")
        }
        match self {
            Action::Click { target } => json!({"kind": "click", "target": target_value(target)}),
            Action::Type { target, text } => {
                json!({"kind": "type", "target": target_value(target), "text": text})
            }
            Action::Scroll { direction } => {
                json!({"kind": "scroll", "direction": direction.to_string()})
            }
            Action::Wait => json!({"kind": "wait"}),
            Action::Refresh => json!({"kind": "refresh"}),
            Action::GoTo { url } => json!({"kind": "goto", "url": url}),
            Action::Back => json!({"kind": "back"}),
            Action::Answer { text } => json!({"kind": "answer", "text": text}),
        }
    }

    /// Strict parse of the tagged wire form. Unknown kinds and stray keys are
    /// rejected rather than ignored.
    pub fn from_value(v: &Value) -> Result<Action, String> {
        let obj = v.as_object().ok_or_else(|| format!("action must be an object, got {v}"))?;
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or("action is missing a string \"kind\"")?;

        let allowed: &[&str] = match kind {
            "click" => &["kind", "target"],
            "type" => &["kind", "target", "text"],
            "scroll" => &["kind", "direction"],
            "wait" | "refresh" | "back" => &["kind"],
            "goto" => &["kind", "url"],
            "answer" => &["kind", "text"],
            other => return Err(format!("unsupported action kind {other:?}")),
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(format!("unexpected key {key:?} in {kind:?} action"));
            }
        }
        let str_field = |name: &str| -> Result<String, String> {
            obj.get(name)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("{kind:?} action needs a string {name:?}"))
        };
        let target_field = || -> Result<ElementQuery, String> {
            element_query_from_value(obj.get("target").ok_or("missing \"target\"")?)
        };

        let action = match kind {
            "click" => Action::Click { target: target_field()? },
            "type" => Action::Type { target: target_field()?, text: str_field("text")? },
            "scroll" => {
                let direction = match str_field("direction")?.as_str() {
                    "up" => ScrollDirection::Up,
                    "down" => ScrollDirection::Down,
                    other => return Err(format!("bad scroll direction {other:?}")),
                };
                Action::Scroll { direction }
            }
            "wait" => Action::Wait,
            "refresh" => Action::Refresh,
            "goto" => Action::GoTo { url: str_field("url")? },
            "back" => Action::Back,
            "answer" => Action::Answer { text: str_field("text")? },
            _ => unreachable!(),
        };
        action.validate().map_err(|e| e.to_string())?;
        Ok(action)
    }
}
