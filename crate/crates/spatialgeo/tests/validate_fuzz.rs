//! A 10,000-line file with planted defects, checked against a naive
//! per-line oracle that knows only what was planted.

use std::collections::HashSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use spatialgeo::records::RecordJson;
use spatialgeo::validate::validate_text;
use spatialgeo_core::data::generate_synth_record;

#[derive(Debug, Clone, Copy)]
enum Defect {
    None,
    Json,
    Category,
    Question,
    Answer,
    BoxOverflow,
    BoxNegative,
    SceneLevel,
    DuplicateId,
    Blank,
}

const ALL: [Defect; 10] = [
    Defect::None,
    Defect::Json,
    Defect::Category,
    Defect::Question,
    Defect::Answer,
    Defect::BoxOverflow,
    Defect::BoxNegative,
    Defect::SceneLevel,
    Defect::DuplicateId,
    Defect::Blank,
];

fn plant(i: usize, d: Defect, first_id: &str) -> (String, Option<&'static str>) {
    let rec = generate_synth_record(i, 11, 32).unwrap();
    let mut v = serde_json::to_value(RecordJson::from(&rec)).unwrap();
    let field = match d {
        Defect::None => None,
        Defect::Blank => return ("   ".into(), None),
        Defect::Json => return (serde_json::to_string(&v).unwrap()[..20].to_string(), Some("json")),
        Defect::Category => {
            v["category"] = "depth".into();
            Some("category")
        }
        Defect::Question => {
            v["question"] = " ".into();
            Some("question")
        }
        Defect::Answer => {
            v["answer"] = "no idea".into();
            Some("answer")
        }
        Defect::BoxOverflow => {
            v["boxes"][0]["w"] = (1.5 - v["boxes"][0]["x"].as_f64().unwrap()).into();
            Some("boxes[0].")
        }
        Defect::BoxNegative => {
            v["boxes"][1]["y"] = (-0.25).into();
            Some("boxes[1].")
        }
        Defect::SceneLevel => {
            v["image"]["scene"]["level"] = 99.into();
            Some("scene")
        }
        Defect::DuplicateId => {
            v["id"] = first_id.into();
            Some("id")
        }
    };
    (serde_json::to_string(&v).unwrap(), field)
}

#[test]
fn violation_count_matches_planted_defects() {
    let mut r = StdRng::seed_from_u64(2024);
    let first_id = generate_synth_record(0, 11, 32).unwrap().id;
    let mut lines = Vec::new();
    let mut expected = Vec::new();
    for i in 0..10_000 {
        let d = if i == 0 || r.random_bool(0.7) { Defect::None } else { ALL[r.random_range(1..ALL.len())] };
        let (line, field) = plant(i, d, &first_id);
        if let Some(f) = field {
            expected.push((i + 1, f));
        }
        lines.push(line);
    }
    let report = validate_text(&lines.join("\n"), 32);
    let blank = lines.iter().filter(|l| l.trim().is_empty()).count();
    assert_eq!(report.lines, 10_000 - blank);

    let got: Vec<(usize, String)> = report.violations.iter().map(|v| (v.line, v.field.clone())).collect();
    assert_eq!(got.len(), expected.len(), "violation count differs from the oracle");
    for ((gl, gf), (el, ef)) in got.iter().zip(&expected) {
        assert_eq!(gl, el);
        assert!(gf.starts_with(ef), "line {gl}: field {gf}, planted {ef}");
    }
    let lines_hit: HashSet<usize> = got.iter().map(|g| g.0).collect();
    assert_eq!(lines_hit.len(), got.len(), "one violation per defective line");
}
