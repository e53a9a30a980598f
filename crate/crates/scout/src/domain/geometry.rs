use serde::{Deserialize, Serialize};

/// A pixel position, origin at the top-left of the image it refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// True when the point lies inside an image of the given dimensions.
    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x < width && self.y < height
    }
}

/// An axis-aligned pixel rectangle `(x1, y1, x2, y2)` with `x1 <= x2` and
/// `y1 <= y2`. Both edges are part of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, super::DomainError> {
        if x1 > x2 || y1 > y2 {
            return Err(super::DomainError::Invalid {
                what: "bbox",
                why: format!("degenerate corners ({x1},{y1},{x2},{y2})"),
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    pub fn center(&self) -> (i64, i64) {
        ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1 + 1
    }
}

// Wire form is the 4-element array `[x1, y1, x2, y2]`.
impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x1, self.y1, self.x2, self.y2].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[i64; 4]>::deserialize(d)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}
