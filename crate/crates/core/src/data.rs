//! Dataset tooling: box normalization, seeded subsampling, record checks and
//! the synthetic spatial-QA generator.
//!
//! Synthetic scenes separate two independent factors. The red and green
//! channels carry an object glyph (class and position), which is all the
//! semantic encoder can see. The blue channel carries a centered square
//! whose size and brightness grow with a discrete geometry level; the
//! ground-truth answer is a function of that level alone.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::encoders::{ImageGrid, GEOMETRY_CHANNEL};
use crate::error::{bail, Result};
use crate::eval::{parse_quantity, Quantity, QuestionCategory, Unit};
use crate::rng;

/// Pixel-space box inside a `width x height` image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl BBox {
    /// First violated invariant, if any.
    pub fn violation(&self) -> Option<String> {
        let all = [self.x, self.y, self.w, self.h, self.image_width, self.image_height];
        if all.iter().any(|v| !v.is_finite()) {
            return Some("non-finite box field".into());
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Some("image dimensions must be positive".into());
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Some(format!("w and h must be positive, got {} and {}", self.w, self.h));
        }
        if self.x < 0.0 || self.x + self.w > self.image_width {
            return Some(format!("x+w {} outside [0, {}]", self.x + self.w, self.image_width));
        }
        if self.y < 0.0 || self.y + self.h > self.image_height {
            return Some(format!("y+h {} outside [0, {}]", self.y + self.h, self.image_height));
        }
        None
    }
}

/// Corner-normalized box: `(x, y)` is the top-left corner, all fields are
/// fractions of the image extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelBBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl RelBBox {
    /// Name and description of the first violated field, if any.
    pub fn violation(&self) -> Option<(&'static str, String)> {
        for (name, v) in [("x", self.x), ("y", self.y), ("w", self.w), ("h", self.h)] {
            if !(0.0..=1.0).contains(&v) {
                return Some((name, format!("{v} outside [0, 1]")));
            }
        }
        if self.x + self.w > 1.0 {
            return Some(("x+w", format!("{} exceeds 1", self.x + self.w)));
        }
        if self.y + self.h > 1.0 {
            return Some(("y+h", format!("{} exceeds 1", self.y + self.h)));
        }
        None
    }
}

/// `record_id` only labels the error.
pub fn rescale_bbox(record_id: &str, b: &BBox) -> Result<RelBBox> {
    if let Some(msg) = b.violation() {
        bail!(Data, "record {}: {}", record_id, msg);
    }
    Ok(RelBBox { x: b.x / b.image_width, y: b.y / b.image_height, w: b.w / b.image_width, h: b.h / b.image_height })
}

pub fn unrescale_bbox(r: &RelBBox, image_width: f64, image_height: f64) -> BBox {
    BBox { x: r.x * image_width, y: r.y * image_height, w: r.w * image_width, h: r.h * image_height, image_width, image_height }
}

/// `k` records drawn uniformly without replacement, kept in input order.
pub fn subsample<T: Clone>(records: &[T], k: usize, seed: u64) -> Result<Vec<T>> {
    if k > records.len() {
        bail!(Input, "cannot draw {} of {} records", k, records.len());
    }
    let mut r = rng::seeded(seed);
    let mut picked = index::sample(&mut r, records.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

pub const OBJECTS: [&str; 8] = ["chair", "table", "cup", "book", "lamp", "box", "plant", "bottle"];

/// Per-class 4x4 glyph bitmaps, row-major in the low 16 bits.
const GLYPHS: [u16; 8] = [0x8421, 0x1248, 0xF00F, 0x0FF0, 0xAAAA, 0x5555, 0xCC33, 0x33CC];

/// Ground-truth lengths per geometry level, in meters. Neighbouring levels
/// lie within the scoring band of each other.
pub const LEVEL_METERS: [f64; 16] = [0.5, 0.6, 0.72, 0.86, 1.0, 1.2, 1.5, 1.8, 2.2, 2.6, 3.1, 3.7, 4.5, 5.4, 6.4, 7.7];

/// Everything needed to re-render a synthetic image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SceneSpec {
    /// Index into [`OBJECTS`].
    pub object: usize,
    /// Glyph cell, counted in glyph-sized cells from the top-left.
    pub glyph_row: usize,
    pub glyph_col: usize,
    /// Index into [`LEVEL_METERS`].
    pub level: usize,
}

impl SceneSpec {
    pub fn validate(&self, side: usize) -> Result<()> {
        let cells = side / glyph_side(side);
        if self.object >= OBJECTS.len() {
            bail!(Data, "object index {} out of range", self.object);
        }
        if self.level >= LEVEL_METERS.len() {
            bail!(Data, "geometry level {} out of range", self.level);
        }
        if self.glyph_row >= cells || self.glyph_col >= cells {
            bail!(Data, "glyph cell ({}, {}) outside {}x{} grid", self.glyph_row, self.glyph_col, cells, cells);
        }
        Ok(())
    }

    pub fn with_level(self, level: usize) -> Self {
        Self { level, ..self }
    }

    pub fn answer_meters(&self) -> f64 {
        LEVEL_METERS[self.level]
    }

    /// Normalized level in `[0, 1]`.
    fn g(&self) -> f64 {
        self.level as f64 / (LEVEL_METERS.len() - 1) as f64
    }

    /// Side of the blue square in pixels.
    pub fn square_side(&self, side: usize) -> usize {
        let s = ((0.25 + 0.75 * self.g()) * side as f64 + 0.5) as usize;
        s.clamp(1, side)
    }

    pub fn render(&self, side: usize) -> Result<ImageGrid> {
        self.validate(side)?;
        let mut img = ImageGrid::filled(side, side, 0.1)?;
        let sq = self.square_side(side);
        let off = self.square_offset(side);
        let blue = 0.2 + 0.7 * self.g();
        for y in 0..side {
            for x in 0..side {
                let inside = (off..off + sq).contains(&y) && (off..off + sq).contains(&x);
                img.set(y, x, GEOMETRY_CHANNEL, if inside { blue } else { 0.05 });
            }
        }
        let gs = glyph_side(side);
        let cell = gs / 4;
        let bits = GLYPHS[self.object];
        let tint = 0.3 + 0.6 * self.object as f64 / (OBJECTS.len() - 1) as f64;
        for gy in 0..gs {
            for gx in 0..gs {
                let bit = (bits >> ((gy / cell) * 4 + gx / cell)) & 1;
                let (y, x) = (self.glyph_row * gs + gy, self.glyph_col * gs + gx);
                img.set(y, x, 0, if bit == 1 { 0.9 } else { 0.1 });
                img.set(y, x, 1, tint);
            }
        }
        Ok(img)
    }

    /// Row and column of the square's top-left corner; it is centered.
    pub fn square_offset(&self, side: usize) -> usize {
        (side - self.square_side(side)) / 2
    }

    /// Pixel boxes of the glyph and the blue square.
    pub fn pixel_boxes(&self, side: usize) -> [BBox; 2] {
        let gs = glyph_side(side) as f64;
        let sq = self.square_side(side) as f64;
        let off = self.square_offset(side) as f64;
        let s = side as f64;
        [
            BBox { x: self.glyph_col as f64 * gs, y: self.glyph_row as f64 * gs, w: gs, h: gs, image_width: s, image_height: s },
            BBox { x: off, y: off, w: sq, h: sq, image_width: s, image_height: s },
        ]
    }
}

/// Glyphs occupy a quarter of the side, at least 4 pixels.
fn glyph_side(side: usize) -> usize {
    (side / 4).max(4) / 4 * 4
}

pub fn question_text(category: QuestionCategory, object: &str) -> String {
    match category {
        QuestionCategory::Height => format!("how tall is the {object} ?"),
        QuestionCategory::Width => format!("how wide is the {object} ?"),
        QuestionCategory::VerticalDistance => format!("how high above the floor is the {object} ?"),
        QuestionCategory::HorizontalDistance => format!("what is the horizontal distance to the {object} ?"),
        QuestionCategory::DirectDistance => format!("how far is the {object} from the camera ?"),
    }
}

/// Lengths under a meter in whole centimeters, others in meters with at
/// most one decimal.
pub fn answer_text(meters: f64) -> String {
    if meters < 1.0 {
        format!("{} cm", (meters * 100.0 + 0.5) as u64)
    } else {
        let tenths = (meters * 10.0 + 0.5) as u64;
        if tenths % 10 == 0 {
            format!("{} m", tenths / 10)
        } else {
            format!("{}.{} m", tenths / 10, tenths % 10)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Scene(SceneSpec),
    /// Path of an image file, resolved by the caller.
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VQARecord {
    pub id: String,
    pub image: ImageSource,
    pub question: String,
    pub answer: String,
    pub category: QuestionCategory,
    pub boxes: Vec<RelBBox>,
}

/// One failed check on one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: usize,
    pub id: String,
    pub field: String,
    pub message: String,
}

impl VQARecord {
    /// Ground truth parsed from the answer text.
    pub fn ground_truth(&self) -> Result<Quantity> {
        parse_quantity(&self.answer).ok_or_else(|| crate::Error::Data(format!("record {}: answer {:?} has no quantity", self.id, self.answer)))
    }

    /// Every invariant violation; `line` is copied into each entry.
    pub fn violations(&self, line: usize, side: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation { line, id: self.id.clone(), field: field.to_string(), message });
        };
        if self.id.trim().is_empty() {
            push("id", "empty id".into());
        }
        if self.question.trim().is_empty() {
            push("question", "empty question".into());
        }
        match parse_quantity(&self.answer) {
            None => push("answer", format!("{:?} has no number with a unit", self.answer)),
            Some(q) if !(q.meters() > 0.0) => push("answer", format!("{:?} is not a positive length", self.answer)),
            Some(_) => {}
        }
        if let ImageSource::Scene(s) = &self.image {
            if let Err(e) = s.validate(side) {
                push("scene", e.to_string());
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((f, msg)) = b.violation() {
                push(&format!("boxes[{i}].{f}"), msg);
            }
        }
        out
    }
}

/// A rendered image with its record.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: ImageGrid,
    pub record: VQARecord,
}

pub fn random_scene<R: Rng + ?Sized>(r: &mut R, side: usize) -> SceneSpec {
    let cells = side / glyph_side(side);
    SceneSpec {
        object: r.random_range(0..OBJECTS.len()),
        glyph_row: r.random_range(0..cells),
        glyph_col: r.random_range(0..cells),
        level: r.random_range(0..LEVEL_METERS.len()),
    }
}

/// Builds the record for a scene; `id` and `category` are given.
pub fn scene_record(id: String, scene: SceneSpec, category: QuestionCategory, side: usize) -> Result<VQARecord> {
    let boxes = scene.pixel_boxes(side).iter().map(|b| rescale_bbox(&id, b)).collect::<Result<Vec<_>>>()?;
    Ok(VQARecord {
        question: question_text(category, OBJECTS[scene.object]),
        answer: answer_text(scene.answer_meters()),
        image: ImageSource::Scene(scene),
        category,
        boxes,
        id,
    })
}

/// Record `i` depends only on `(seed, i)`.
pub fn generate_synth_record(i: usize, seed: u64, side: usize) -> Result<VQARecord> {
    let mut r = rng::stream(seed, i as u64);
    let scene = random_scene(&mut r, side);
    let category = QuestionCategory::ALL[r.random_range(0..QuestionCategory::ALL.len())];
    scene_record(format!("syn-{seed}-{i:05}"), scene, category, side)
}

pub fn generate_synth_dataset(count: usize, seed: u64, side: usize) -> Result<Vec<SyntheticSample>> {
    (0..count)
        .map(|i| {
            let record = generate_synth_record(i, seed, side)?;
            let image = render_record(&record, side)?;
            Ok(SyntheticSample { image, record })
        })
        .collect()
}

pub fn render_record(record: &VQARecord, side: usize) -> Result<ImageGrid> {
    match &record.image {
        ImageSource::Scene(s) => s.render(side),
        ImageSource::File(p) => bail!(Input, "record {} references file {}; load it through the IO layer", record.id, p),
    }
}

/// Level gap between the two halves of a [`matched_pair`].
pub const MATCHED_LEVEL_GAP: usize = 4;

/// Two scenes with the same glyph whose geometry levels differ by
/// [`MATCHED_LEVEL_GAP`].
pub fn matched_pair<R: Rng + ?Sized>(r: &mut R, side: usize) -> (SceneSpec, SceneSpec) {
    let a = random_scene(r, side);
    let up = a.level + MATCHED_LEVEL_GAP < LEVEL_METERS.len() && (a.level < MATCHED_LEVEL_GAP || r.random_bool(0.5));
    let level = if up { a.level + MATCHED_LEVEL_GAP } else { a.level - MATCHED_LEVEL_GAP };
    (a, a.with_level(level))
}

/// Unit to use when phrasing a record's answer.
pub fn answer_unit(meters: f64) -> Unit {
    if meters < 1.0 {
        Unit::Centimeter
    } else {
        Unit::Meter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::score;

    #[test]
    fn rescale_examples() {
        let full = BBox { x: 0.0, y: 0.0, w: 640.0, h: 480.0, image_width: 640.0, image_height: 480.0 };
        assert_eq!(rescale_bbox("a", &full).unwrap(), RelBBox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 });
        let b = BBox { x: 64.0, y: 48.0, w: 320.0, h: 240.0, image_width: 640.0, image_height: 480.0 };
        assert_eq!(rescale_bbox("a", &b).unwrap(), RelBBox { x: 0.1, y: 0.1, w: 0.5, h: 0.5 });
        let bad = BBox { x: 600.0, ..b };
        let err = rescale_bbox("rec-7", &bad).unwrap_err();
        assert!(matches!(&err, crate::Error::Data(m) if m.contains("rec-7")));
    }

    #[test]
    fn subsample_boundaries() {
        let v: Vec<u32> = (0..20).collect();
        assert_eq!(subsample(&v, 20, 3).unwrap(), v);
        assert!(subsample(&v, 0, 3).unwrap().is_empty());
        assert!(subsample(&v, 21, 3).is_err());
    }

    #[test]
    fn adjacent_levels_within_band() {
        for w in LEVEL_METERS.windows(2) {
            assert!(score(w[0], w[1]).unwrap() && score(w[1], w[0]).unwrap());
        }
    }

    #[test]
    fn answers_round_trip_through_parser() {
        for m in LEVEL_METERS {
            let q = parse_quantity(&answer_text(m)).unwrap();
            assert!((q.meters() - m).abs() < 1e-12, "{m}");
            assert_eq!(q.unit, answer_unit(m));
        }
    }

    #[test]
    fn render_separates_channels() {
        let a = SceneSpec { object: 2, glyph_row: 1, glyph_col: 3, level: 4 };
        let b = a.with_level(11);
        let (ia, ib) = (a.render(32).unwrap(), b.render(32).unwrap());
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..2 {
                    assert_eq!(ia.get(y, x, c), ib.get(y, x, c));
                }
            }
        }
        assert_ne!(ia, ib);
        assert_eq!(a.square_side(32), 14);
    }

    #[test]
    fn records_are_valid() {
        for i in 0..50 {
            let r = generate_synth_record(i, 9, 32).unwrap();
            assert!(r.violations(i, 32).is_empty(), "{:?}", r.violations(i, 32));
            assert_eq!(r.boxes.len(), 2);
        }
    }
}
