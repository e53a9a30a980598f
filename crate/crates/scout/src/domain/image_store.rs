use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Content address of a screenshot: the SHA-256 of its PNG bytes, written as
/// `sha256:<hex>` on the wire.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageId(String);

impl ImageId {
    pub fn of_bytes(png: &[u8]) -> Self {
        ImageId(hex::encode(Sha256::digest(png)))
    }

    /// Bare hex digest, without the `sha256:` prefix.
    pub fn hex(&self) -> &str {
        &self.0
    }

    /// Wire form, `sha256:<hex>`.
    pub fn as_ref_string(&self) -> String {
        format!("sha256:{}", self.0)
    }

    /// Parses either the `sha256:<hex>` wire form or a bare hex digest.
    pub fn parse(s: &str) -> Result<Self, super::DomainError> {
        let hex_part = s.strip_prefix("sha256:").unwrap_or(s);
        if hex_part.len() != 64 || !hex_part.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(super::DomainError::Invalid {
                what: "image id",
                why: format!("not a sha256 reference: {s:?}"),
            });
        }
        Ok(ImageId(hex_part.to_ascii_lowercase()))
    }
}

impl fmt::Debug for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageId({}..)", &self.0[..8.min(self.0.len())])
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_ref_string())
    }
}

impl Serialize for ImageId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_ref_string())
    }
}

impl<'de> Deserialize<'de> for ImageId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ImageId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A decoded-enough screenshot: PNG bytes plus pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl ImageData {
    /// Wraps PNG bytes, reading the dimensions from the image header.
    pub fn from_png(png: Vec<u8>) -> Result<Self, super::DomainError> {
        let cursor = std::io::Cursor::new(&png);
        let reader = image::ImageReader::with_format(cursor, image::ImageFormat::Png);
        let (width, height) = reader.into_dimensions().map_err(|e| super::DomainError::Invalid {
            what: "png image",
            why: e.to_string(),
        })?;
        Ok(Self { png, width, height })
    }

    pub fn id(&self) -> ImageId {
        ImageId::of_bytes(&self.png)
    }
}

/// Content-addressed screenshot store shared by everything in one episode.
///
/// Cloning is cheap (the images are behind `Arc`) and inserting the same
/// bytes twice is a no-op, so the store behaves like a value even though it
/// accumulates entries.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    images: HashMap<ImageId, Arc<ImageData>>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, data: ImageData) -> ImageId {
        let id = data.id();
        self.images.entry(id.clone()).or_insert_with(|| Arc::new(data));
        id
    }

    pub fn get(&self, id: &ImageId) -> Option<Arc<ImageData>> {
        self.images.get(id).cloned()
    }

    pub fn contains(&self, id: &ImageId) -> bool {
        self.images.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ImageId> {
        self.images.keys()
    }
}
