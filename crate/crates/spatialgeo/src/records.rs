//! JSON Lines formats.
//!
//! Dataset records, one object per line:
//!
//! ```text
//! {"id":"syn-0-00000","image":{"scene":{"object":1,"glyph_row":0,"glyph_col":2,"level":5}},
//!  "question":"how tall is the table ?","answer":"1.2 m","category":"height",
//!  "boxes":[{"x":0.0,"y":0.0,"w":0.25,"h":0.25}]}
//! ```
//!
//! `image` is either an inline `scene` or a `file` path (binary PPM) relative
//! to the JSONL file. `boxes` may be omitted.
//!
//! Scoring records carry `id`, `category`, `gt_value`, `gt_unit` and
//! `answer`; scored output adds `parsed_value`, `parsed_unit` and `correct`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spatialgeo_core::data::{ImageSource, RelBBox, SceneSpec, VQARecord};
use spatialgeo_core::eval::{EvalRecord, Quantity, QuestionCategory, Unit};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneJson {
    pub object: usize,
    pub glyph_row: usize,
    pub glyph_col: usize,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ImageJson {
    Scene(SceneJson),
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxJson {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordJson {
    pub id: String,
    pub image: ImageJson,
    pub question: String,
    pub answer: String,
    pub category: String,
    #[serde(default)]
    pub boxes: Vec<BoxJson>,
}

impl From<&VQARecord> for RecordJson {
    fn from(r: &VQARecord) -> Self {
        let image = match &r.image {
            ImageSource::Scene(s) => {
                ImageJson::Scene(SceneJson { object: s.object, glyph_row: s.glyph_row, glyph_col: s.glyph_col, level: s.level })
            }
            ImageSource::File(p) => ImageJson::File(p.clone()),
        };
        RecordJson {
            id: r.id.clone(),
            image,
            question: r.question.clone(),
            answer: r.answer.clone(),
            category: r.category.name().to_string(),
            boxes: r.boxes.iter().map(|b| BoxJson { x: b.x, y: b.y, w: b.w, h: b.h }).collect(),
        }
    }
}

impl RecordJson {
    /// Fails only on an unknown category; value checks are left to
    /// [`VQARecord::violations`].
    pub fn into_record(self) -> spatialgeo_core::Result<VQARecord> {
        let category: QuestionCategory = self.category.parse()?;
        let image = match self.image {
            ImageJson::Scene(s) => ImageSource::Scene(SceneSpec {
                object: s.object,
                glyph_row: s.glyph_row,
                glyph_col: s.glyph_col,
                level: s.level,
            }),
            ImageJson::File(p) => ImageSource::File(p),
        };
        Ok(VQARecord {
            id: self.id,
            image,
            question: self.question,
            answer: self.answer,
            category,
            boxes: self.boxes.into_iter().map(|b| RelBBox { x: b.x, y: b.y, w: b.w, h: b.h }).collect(),
        })
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l.to_string())).collect())
}

/// Serializes one value per line. Output bytes depend only on `items`.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        let line = serde_json::to_string(&it).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Strict reader: the first malformed line aborts with its line number.
pub fn read_records(path: &Path) -> Result<Vec<VQARecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let j: RecordJson =
                serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {n}: {e}")))?;
            j.into_record().map_err(|e| Error::format(path, format!("line {n}: {e}")))
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[VQARecord]) -> Result<()> {
    write_jsonl(path, records.iter().map(RecordJson::from))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInputJson {
    pub id: String,
    pub category: String,
    pub gt_value: f64,
    pub gt_unit: String,
    pub answer: String,
}

/// An answer keyed by record id, to be joined with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerJson {
    pub id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredJson {
    pub id: String,
    pub category: String,
    pub gt_value: f64,
    pub gt_unit: String,
    pub answer: String,
    pub parsed_value: Option<f64>,
    pub parsed_unit: Option<String>,
    pub correct: bool,
}

impl From<&EvalRecord> for ScoredJson {
    fn from(r: &EvalRecord) -> Self {
        ScoredJson {
            id: r.id.clone(),
            category: r.category.name().to_string(),
            gt_value: r.ground_truth.value,
            gt_unit: r.ground_truth.unit.symbol().to_string(),
            answer: r.answer.clone(),
            parsed_value: r.parsed.map(|q| q.value),
            parsed_unit: r.parsed.map(|q| q.unit.symbol().to_string()),
            correct: r.is_correct(),
        }
    }
}

fn to_eval_record(j: ScoreInputJson) -> spatialgeo_core::Result<EvalRecord> {
    let category = j.category.parse()?;
    let unit: Unit = j.gt_unit.parse()?;
    Ok(EvalRecord::new(j.id, category, Quantity::new(j.gt_value, unit)?, j.answer))
}

/// Reads self-contained scoring records. Every bad line is reported, by id
/// where one is readable.
pub fn read_score_inputs(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (n, line) in read_lines(path)? {
        let parsed = serde_json::from_str::<ScoreInputJson>(&line);
        match parsed {
            Ok(j) => {
                let id = j.id.clone();
                match to_eval_record(j) {
                    Ok(r) => out.push(r),
                    Err(e) => bad.push(format!("{id} (line {n}: {e})")),
                }
            }
            Err(e) => bad.push(format!("line {n} ({e})")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Invalid { count: bad.len(), ids: bad.join(", ") });
    }
    Ok(out)
}

/// Joins `{id, answer}` lines with the ground truth of `dataset`, in
/// answer-file order.
pub fn join_answers(path: &Path, dataset: &[VQARecord]) -> Result<Vec<EvalRecord>> {
    let index: std::collections::HashMap<&str, &VQARecord> = dataset.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (n, line) in read_lines(path)? {
        let a: AnswerJson = match serde_json::from_str(&line) {
            Ok(a) => a,
            Err(e) => {
                bad.push(format!("line {n} ({e})"));
                continue;
            }
        };
        match index.get(a.id.as_str()).map(|r| r.ground_truth().map(|gt| (r, gt))) {
            Some(Ok((r, gt))) => out.push(EvalRecord::new(a.id, r.category, gt, a.answer)),
            Some(Err(e)) => bad.push(format!("{} ({e})", a.id)),
            None => bad.push(format!("{} (not in dataset)", a.id)),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Invalid { count: bad.len(), ids: bad.join(", ") });
    }
    Ok(out)
}
