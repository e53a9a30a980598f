//! Deterministic page renderer for the simulator. Every pixel is a pure
//! function of (page spec, scroll offset, state, text buffers, config), so a
//! given world and action sequence always produces byte-identical PNGs.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::font;
use super::world::{Effect, PageSpec};
use super::EnvConfig;
use crate::domain::{BBox, ImageData};

const TEXT_SCALE: u32 = 2;
const CHAR_ADVANCE: u32 = (font::GLYPH_WIDTH + 1) * TEXT_SCALE;
const LINE_ADVANCE: u32 = (font::GLYPH_HEIGHT + 2) * TEXT_SCALE;
const INK: Rgb<u8> = Rgb([25, 25, 25]);
const BORDER: Rgb<u8> = Rgb([40, 40, 40]);
const BUFFER_INK: Rgb<u8> = Rgb([10, 10, 110]);

/// Stable color from a label: hash bytes mapped into [lo, hi) per channel.
fn label_color(label: &str, lo: u8, hi: u8) -> Rgb<u8> {
    let digest = Sha256::digest(label.as_bytes());
    let span = (hi - lo) as u16;
    let channel = |b: u8| lo + (b as u16 % span) as u8;
    Rgb([channel(digest[0]), channel(digest[1]), channel(digest[2])])
}

fn fill_rect(img: &mut RgbImage, bbox: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in bbox.y1.max(0)..=bbox.y2.min(h - 1) {
        for x in bbox.x1.max(0)..=bbox.x2.min(w - 1) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn stroke_rect(img: &mut RgbImage, bbox: &BBox, color: Rgb<u8>, thickness: i64) {
    for t in 0..thickness {
        let inner = BBox::new(bbox.x1 + t, bbox.y1 + t, bbox.x2 - t, bbox.y2 - t);
        let Ok(inner) = inner else { break };
        let (w, h) = (img.width() as i64, img.height() as i64);
        for x in inner.x1.max(0)..=inner.x2.min(w - 1) {
            for y in [inner.y1, inner.y2] {
                if (0..h).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
        for y in inner.y1.max(0)..=inner.y2.min(h - 1) {
            for x in [inner.x1, inner.x2] {
                if (0..w).contains(&x) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
}

/// Draws text starting at (x, y), wrapping at the clip box's right edge and
/// stopping at its bottom edge.
fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>, clip: &BBox) {
    let mut cx = x;
    let mut cy = y;
    for c in text.chars() {
        if c == '\n' || cx + CHAR_ADVANCE as i64 > clip.x2 {
            cx = x;
            cy += LINE_ADVANCE as i64;
            if c == '\n' {
                continue;
            }
        }
        if cy + (font::GLYPH_HEIGHT * TEXT_SCALE) as i64 > clip.y2 {
            return;
        }
        draw_glyph(img, cx, cy, c, color, clip);
        cx += CHAR_ADVANCE as i64;
    }
}

fn draw_glyph(img: &mut RgbImage, x: i64, y: i64, c: char, color: Rgb<u8>, clip: &BBox) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for col in 0..font::GLYPH_WIDTH {
        for row in 0..font::GLYPH_HEIGHT {
            if !font::pixel_set(c, col, row) {
                continue;
            }
            for dx in 0..TEXT_SCALE {
                for dy in 0..TEXT_SCALE {
                    let px = x + (col * TEXT_SCALE + dx) as i64;
                    let py = y + (row * TEXT_SCALE + dy) as i64;
                    if px >= clip.x1
                        && px <= clip.x2
                        && py >= clip.y1
                        && py <= clip.y2
                        && (0..w).contains(&px)
                        && (0..h).contains(&py)
                    {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
}

/// Renders the viewport-sized screenshot of a page at a scroll offset.
pub(super) fn render_page(
    page: &PageSpec,
    scroll: u32,
    state: &BTreeMap<String, String>,
    buffers: &BTreeMap<String, String>,
    config: &EnvConfig,
) -> ImageData {
    let page_height = page.height(config.viewport_height);
    let background = if page.background.is_empty() {
        Rgb([235, 235, 235])
    } else {
        label_color(&page.background, 200, 245)
    };
    let mut canvas = RgbImage::from_pixel(config.viewport_width, page_height, background);

    for region in &page.text_regions {
        draw_text(
            &mut canvas,
            region.bbox.x1 + 4,
            region.bbox.y1 + 4,
            &region.content,
            INK,
            &region.bbox,
        );
    }

    for element in &page.elements {
        let active = match &element.effect {
            Effect::SetState { key, value } => state.get(key) == Some(value),
            _ => false,
        };
        let base = label_color(&element.label, 150, 220);
        let fill = if active {
            Rgb([255 - base[0], 255 - base[1], 255 - base[2]])
        } else {
            base
        };
        fill_rect(&mut canvas, &element.bbox, fill);
        stroke_rect(&mut canvas, &element.bbox, BORDER, 2);
        draw_text(
            &mut canvas,
            element.bbox.x1 + 6,
            element.bbox.y1 + 6,
            &element.label,
            INK,
            &element.bbox,
        );
        if let Effect::AppendText { region } = &element.effect {
            if let Some(content) = buffers.get(region) {
                draw_text(
                    &mut canvas,
                    element.bbox.x1 + 6,
                    element.bbox.y1 + 6 + LINE_ADVANCE as i64,
                    content,
                    BUFFER_INK,
                    &element.bbox,
                );
            }
        }
    }

    let max_scroll = page_height.saturating_sub(config.viewport_height);
    let scroll = scroll.min(max_scroll);
    let mut view = image::imageops::crop_imm(
        &canvas,
        0,
        scroll,
        config.viewport_width,
        config.viewport_height,
    )
    .to_image();

    if page_height > config.viewport_height {
        draw_scrollbar(&mut view, scroll, page_height, config);
    }

    let mut png = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new_with_quality(
        std::io::Cursor::new(&mut png),
        image::codecs::png::CompressionType::Fast,
        image::codecs::png::FilterType::Sub,
    );
    image::ImageEncoder::write_image(
        encoder,
        view.as_raw(),
        view.width(),
        view.height(),
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory PNG encoding cannot fail");
    ImageData::from_png(png).expect("renderer emits valid PNGs")
}

/// Right-edge scrollbar showing the viewport's position within the page.
fn draw_scrollbar(img: &mut RgbImage, scroll: u32, page_height: u32, config: &EnvConfig) {
    let track_x1 = config.viewport_width.saturating_sub(8) as i64;
    let track = BBox::new(
        track_x1,
        0,
        config.viewport_width as i64 - 1,
        config.viewport_height as i64 - 1,
    )
    .unwrap();
    fill_rect(img, &track, Rgb([210, 210, 210]));
    let thumb_height =
        (config.viewport_height as u64 * config.viewport_height as u64 / page_height as u64) as i64;
    let max_scroll = (page_height - config.viewport_height) as u64;
    let travel = config.viewport_height as i64 - thumb_height;
    let thumb_top = (scroll as u64 * travel as u64 / max_scroll.max(1)) as i64;
    let thumb = BBox::new(
        track_x1,
        thumb_top,
        config.viewport_width as i64 - 1,
        (thumb_top + thumb_height).min(config.viewport_height as i64 - 1),
    )
    .unwrap();
    fill_rect(img, &thumb, Rgb([120, 120, 120]));
}
