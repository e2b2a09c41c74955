//! Metric-answer scoring: pull a length out of free text, convert it to
//! meters and accept it when it lies within a quarter of the ground truth.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{bail, Error, Result};

pub const LOWER_RATIO: f64 = 0.75;
pub const UPPER_RATIO: f64 = 1.25;
/// Relative slack on the band edges. It only absorbs rounding from unit
/// conversion (`150 cm` against `2 m` must land on exactly 0.75).
pub const BAND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Millimeter,
    Centimeter,
    Meter,
    Kilometer,
    Inch,
    Foot,
    Yard,
}

impl Unit {
    pub const ALL: [Unit; 7] = [Unit::Millimeter, Unit::Centimeter, Unit::Meter, Unit::Kilometer, Unit::Inch, Unit::Foot, Unit::Yard];

    /// Meters per unit.
    pub fn factor(self) -> f64 {
        match self {
            Unit::Millimeter => 0.001,
            Unit::Centimeter => 0.01,
            Unit::Meter => 1.0,
            Unit::Kilometer => 1000.0,
            Unit::Inch => 0.0254,
            Unit::Foot => 0.3048,
            Unit::Yard => 0.9144,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Millimeter => "mm",
            Unit::Centimeter => "cm",
            Unit::Meter => "m",
            Unit::Kilometer => "km",
            Unit::Inch => "in",
            Unit::Foot => "ft",
            Unit::Yard => "yd",
        }
    }

    /// Looks up a lowercase word. `in` is deliberately absent because it is
    /// also a preposition; the parser only accepts it right after a number.
    pub fn from_word(w: &str) -> Option<Unit> {
        Some(match w {
            "mm" | "millimeter" | "millimeters" | "millimetre" | "millimetres" => Unit::Millimeter,
            "cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres" => Unit::Centimeter,
            "m" | "meter" | "meters" | "metre" | "metres" => Unit::Meter,
            "km" | "kilometer" | "kilometers" | "kilometre" | "kilometres" => Unit::Kilometer,
            "inch" | "inches" => Unit::Inch,
            "ft" | "foot" | "feet" => Unit::Foot,
            "yd" | "yds" | "yard" | "yards" => Unit::Yard,
            _ => return None,
        })
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "in" | "\"" => Ok(Unit::Inch),
            "'" => Ok(Unit::Foot),
            w => Unit::from_word(w).ok_or_else(|| Error::Data(alloc::format!("unknown unit {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Result<Self> {
        if !value.is_finite() {
            bail!(Data, "quantity value {} is not finite", value);
        }
        Ok(Self { value, unit })
    }

    pub fn meters(&self) -> f64 {
        to_meters(*self)
    }
}

pub fn to_meters(q: Quantity) -> f64 {
    q.value * q.unit.factor()
}

/// True iff `pred_m / gt_m` lies in `[0.75, 1.25]`, edges included.
pub fn score(pred_m: f64, gt_m: f64) -> Result<bool> {
    if !(gt_m > 0.0) || !gt_m.is_finite() {
        bail!(Data, "ground truth must be positive and finite, got {}", gt_m);
    }
    if !pred_m.is_finite() {
        return Ok(false);
    }
    let ratio = pred_m / gt_m;
    Ok(ratio >= LOWER_RATIO * (1.0 - BAND_SLACK) && ratio <= UPPER_RATIO * (1.0 + BAND_SLACK))
}

fn is_clause_end(bytes: &[u8], i: usize) -> bool {
    match bytes[i] {
        b',' | b';' | b':' | b'!' | b'?' | b'\n' | b'\r' => true,
        // A period ends the clause unless it sits inside a word or number.
        b'.' => !bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphanumeric()),
        _ => false,
    }
}

/// Scans a numeric literal starting at `start`: digits with optional
/// thousands separators and an optional fraction.
fn scan_number(s: &str, start: usize) -> (f64, usize) {
    let b = s.as_bytes();
    let digits = |mut j: usize| {
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        j
    };
    let mut end = digits(start);
    let mut text: String = s[start..end].into();
    // Thousands groups only extend a lead of at most three digits.
    if end - start <= 3 {
        while end + 4 <= b.len() && b[end] == b',' && b[end + 1..end + 4].iter().all(u8::is_ascii_digit) && !b.get(end + 4).is_some_and(u8::is_ascii_digit) {
            text.push_str(&s[end + 1..end + 4]);
            end += 4;
        }
    }
    if end + 1 < b.len() && b[end] == b'.' && b[end + 1].is_ascii_digit() {
        let frac_end = digits(end + 1);
        text.push_str(&s[end..frac_end]);
        end = frac_end;
    }
    (text.parse().unwrap_or(f64::NAN), end)
}

/// Extracts the first number and the nearest unit after it in the same
/// clause. Returns `None` when either is missing.
pub fn parse_quantity(answer: &str) -> Option<Quantity> {
    let b = answer.as_bytes();
    let mut i = 0;
    let start = loop {
        if i >= b.len() {
            return None;
        }
        if b[i].is_ascii_digit() {
            break i;
        }
        if b[i] == b'.' && b.get(i + 1).is_some_and(u8::is_ascii_digit) && !(i > 0 && b[i - 1].is_ascii_alphanumeric()) {
            break i;
        }
        i += 1;
    };
    let (value, end) = if b[start] == b'.' {
        let (_, e) = scan_number(answer, start + 1);
        (alloc::format!("0.{}", &answer[start + 1..e]).parse().unwrap_or(f64::NAN), e)
    } else {
        scan_number(answer, start)
    };
    if !value.is_finite() {
        return None;
    }
    // Quote marks bind only when glued to the number.
    match answer[end..].chars().next() {
        Some('"') | Some('\u{2033}') | Some('\u{201d}') => return Quantity::new(value, Unit::Inch).ok(),
        Some('\'') | Some('\u{2032}') | Some('\u{2019}') => return Quantity::new(value, Unit::Foot).ok(),
        _ => {}
    }
    let mut j = end;
    let mut first_word = true;
    while j < b.len() {
        if is_clause_end(b, j) || b[j].is_ascii_digit() {
            return None;
        }
        if b[j].is_ascii_alphabetic() {
            let w_start = j;
            while j < b.len() && b[j].is_ascii_alphabetic() {
                j += 1;
            }
            let word = answer[w_start..j].to_ascii_lowercase();
            if let Some(u) = Unit::from_word(&word) {
                return Quantity::new(value, u).ok();
            }
            if first_word && word == "in" {
                return Quantity::new(value, Unit::Inch).ok();
            }
            first_word = false;
            continue;
        }
        j += answer[j..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuestionCategory {
    Height,
    Width,
    VerticalDistance,
    HorizontalDistance,
    DirectDistance,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 5] = [
        QuestionCategory::Height,
        QuestionCategory::Width,
        QuestionCategory::VerticalDistance,
        QuestionCategory::HorizontalDistance,
        QuestionCategory::DirectDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionCategory::Height => "height",
            QuestionCategory::Width => "width",
            QuestionCategory::VerticalDistance => "vertical-distance",
            QuestionCategory::HorizontalDistance => "horizontal-distance",
            QuestionCategory::DirectDistance => "direct-distance",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuestionCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        QuestionCategory::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::Data(alloc::format!("unknown category {s:?}")))
    }
}

/// One scored question. `correct` is `Some` exactly when `parsed` is.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub category: QuestionCategory,
    pub ground_truth: Quantity,
    pub answer: String,
    pub parsed: Option<Quantity>,
    pub correct: Option<bool>,
}

impl EvalRecord {
    pub fn new(id: impl Into<String>, category: QuestionCategory, ground_truth: Quantity, answer: impl Into<String>) -> Self {
        Self { id: id.into(), category, ground_truth, answer: answer.into(), parsed: None, correct: None }
    }

    /// Parses and scores the answer in place.
    pub fn score(&mut self) -> Result<()> {
        let gt = self.ground_truth.meters();
        if !(gt > 0.0) {
            bail!(Data, "record {}: ground truth {} m is not positive", self.id, gt);
        }
        self.parsed = parse_quantity(&self.answer);
        self.correct = match self.parsed {
            Some(q) => Some(score(q.meters(), gt)?),
            None => None,
        };
        Ok(())
    }

    /// Parse failures count as wrong.
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryStats {
    pub category: QuestionCategory,
    pub total: usize,
    pub correct: usize,
    pub parse_failures: usize,
}

impl CategoryStats {
    /// Percent correct, `None` for a category with no records.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Always five entries in [`QuestionCategory::ALL`] order.
    pub categories: Vec<CategoryStats>,
    pub total: usize,
    pub correct: usize,
    pub parse_failures: usize,
}

impl Report {
    /// Overall accuracy over every record, not the mean of categories.
    pub fn average(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }

    pub fn category(&self, c: QuestionCategory) -> &CategoryStats {
        &self.categories[c.index()]
    }
}

pub fn aggregate(records: &[EvalRecord]) -> Result<Report> {
    if records.is_empty() {
        bail!(Data, "no records to aggregate");
    }
    let mut categories: Vec<CategoryStats> =
        QuestionCategory::ALL.iter().map(|&category| CategoryStats { category, total: 0, correct: 0, parse_failures: 0 }).collect();
    for r in records {
        if r.parsed.is_some() != r.correct.is_some() {
            bail!(State, "record {} was parsed but not scored", r.id);
        }
        let s = &mut categories[r.category.index()];
        s.total += 1;
        s.correct += usize::from(r.is_correct());
        s.parse_failures += usize::from(r.parsed.is_none());
    }
    Ok(Report {
        total: records.len(),
        correct: categories.iter().map(|c| c.correct).sum(),
        parse_failures: categories.iter().map(|c| c.parse_failures).sum(),
        categories,
    })
}

/// Scores every record and aggregates.
pub fn evaluate(records: &mut [EvalRecord]) -> Result<Report> {
    for r in records.iter_mut() {
        r.score()?;
    }
    aggregate(records)
}
