use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use spatialgeo_core::data::Violation;

use crate::error::{Error, Result};
use crate::records::RecordJson;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Non-blank lines read.
    pub lines: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            let id = if v.id.is_empty() { "?" } else { &v.id };
            writeln!(f, "line {} id {} field {}: {}", v.line, id, v.field, v.message)?;
        }
        write!(f, "{} records, {} violations", self.lines, self.violations.len())
    }
}

/// Checks one line. A line that is not a well-formed record yields exactly
/// one `json` violation; otherwise every failed invariant is listed.
pub fn check_line(line_no: usize, line: &str, side: usize) -> Vec<Violation> {
    let one = |id: &str, field: &str, message: String| vec![Violation { line: line_no, id: id.into(), field: field.into(), message }];
    let j: RecordJson = match serde_json::from_str(line) {
        Ok(j) => j,
        Err(e) => return one("", "json", e.to_string()),
    };
    let id = j.id.clone();
    match j.into_record() {
        Ok(r) => r.violations(line_no, side),
        Err(e) => one(&id, "category", e.to_string()),
    }
}

/// Validates every non-blank line of `text`; repeated ids are violations
/// on the later line.
pub fn validate_text(text: &str, side: usize) -> ValidationReport {
    let mut seen = HashSet::new();
    let mut violations = Vec::new();
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let found = check_line(i + 1, line, side);
        if let Some(id) = serde_json::from_str::<RecordJson>(line).ok().map(|j| j.id) {
            if !seen.insert(id.clone()) {
                violations.push(Violation { line: i + 1, id, field: "id".into(), message: "duplicate id".into() });
            }
        }
        violations.extend(found);
    }
    ValidationReport { lines, violations }
}

pub fn validate_jsonl(path: &Path, side: usize) -> Result<ValidationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(validate_text(&text, side))
}
