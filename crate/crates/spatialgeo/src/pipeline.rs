//! File-level workflows behind each subcommand. Outputs depend only on the
//! inputs and the seed; wall-clock times go to `*.meta.json` sidecars.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use spatialgeo_core::data::{generate_synth_record, matched_pair, random_scene, ImageSource, VQARecord};
use spatialgeo_core::diagnostics::{mean_similarities, probe_pair, SimilarityProbe, TapSimilarity};
use spatialgeo_core::encoders::{Encoders, ImageGrid};
use spatialgeo_core::eval::{evaluate, EvalRecord, Report};
use spatialgeo_core::lm::Vocab;
use spatialgeo_core::rng;
use spatialgeo_core::training::{answer_and_score, run_stage, EvalItem, LossEntry, Model, Stage, TrainSample};

use crate::checkpoint_io::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{load_square, write_ppm};
use crate::records::{join_answers, read_records, read_score_inputs, write_jsonl, write_records, AnswerJson, ScoredJson};
use crate::report::{accuracy_plot_csv, contrast_csv, loss_csv, report_csv, report_json, similarity_csv, write_text};
use crate::validate::{validate_text, ValidationReport};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const IMAGE_DIR: &str = "images";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_meta(path: &Path, command: &str, started: u64) -> Result<()> {
    let meta = serde_json::json!({ "command": command, "started_unix": started, "finished_unix": unix_now() });
    write_text(path, &format!("{meta:#}\n"))
}

/// Writes `count` synthetic records. With `images`, scenes are rendered to
/// PPM files and referenced by path; otherwise they stay inline.
pub fn make_data(count: usize, seed: u64, side: usize, images: bool, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let mut records = (0..count).map(|i| generate_synth_record(i, seed, side)).collect::<spatialgeo_core::Result<Vec<_>>>()?;
    if images {
        ensure_dir(&out.join(IMAGE_DIR))?;
        for r in &mut records {
            let ImageSource::Scene(s) = &r.image else { unreachable!("generated records are inline scenes") };
            let rel = format!("{IMAGE_DIR}/{}.ppm", r.id);
            write_ppm(&out.join(&rel), &s.render(side)?)?;
            r.image = ImageSource::File(rel);
        }
    }
    let path = out.join(DATASET_FILE);
    write_records(&path, &records)?;
    Ok(path)
}

/// A record with its image at encoder resolution.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub record: VQARecord,
    pub image: ImageGrid,
}

fn load_image(record: &VQARecord, dir: &Path, side: usize) -> Result<ImageGrid> {
    match &record.image {
        ImageSource::Scene(s) => Ok(s.render(side)?),
        ImageSource::File(p) => load_square(&dir.join(p), side),
    }
}

/// Validates then loads a dataset. Any violation aborts with the offending
/// ids; an empty file is a data error as well.
pub fn load_dataset(path: &Path, side: usize) -> Result<Vec<Loaded>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report = validate_text(&text, side);
    if !report.is_clean() {
        let mut ids: Vec<String> =
            report.violations.iter().map(|v| if v.id.is_empty() { format!("line {}", v.line) } else { v.id.clone() }).collect();
        ids.dedup();
        return Err(Error::Invalid { count: report.violations.len(), ids: ids.join(", ") });
    }
    if report.lines == 0 {
        return Err(Error::format(path, "dataset is empty"));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    read_records(path)?
        .into_iter()
        .map(|record| Ok(Loaded { image: load_image(&record, dir, side)?, record }))
        .collect()
}

pub fn prepare_samples(model: &Model, data: &[Loaded]) -> Result<Vec<TrainSample>> {
    data.iter().map(|d| Ok(model.prepare(&d.image, &d.record.question, &d.record.answer)?)).collect()
}

pub struct TrainRequest<'a> {
    pub config: &'a RunConfig,
    pub stage: Stage,
    pub from: Option<&'a Path>,
    pub data: &'a Path,
    pub out: &'a Path,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub losses: Vec<LossEntry>,
    pub resumed_at_epoch: Option<u64>,
}

pub fn stage_file(stage: Stage) -> String {
    format!("stage{}.ckpt", stage.id())
}

/// Runs one stage. A `from` checkpoint that holds an unfinished state of
/// the same stage is resumed; any other checkpoint only supplies weights.
pub fn train(req: &TrainRequest) -> Result<TrainOutcome> {
    let started = unix_now();
    let cfg = req.config;
    if req.stage == Stage::Two && req.from.is_none() {
        return Err(Error::Usage("stage 2 needs --from with a stage-1 checkpoint".into()));
    }
    let (mut model, resume) = match req.from {
        Some(p) => {
            let (mut m, state) = load_checkpoint(p)?;
            m.set_fusion(cfg.fusion_over(m.config.fusion)?)?;
            (m, state.filter(|s| s.stage == req.stage))
        }
        None => {
            let vocab = Vocab::spatial();
            (Model::new(cfg.model_config(&vocab)?, vocab)?, None)
        }
    };
    let resumed_at_epoch = resume.as_ref().map(|s| s.epoch);
    let data = load_dataset(req.data, model.config.encoder.image_side)?;
    let samples = prepare_samples(&model, &data)?;
    let spec = cfg.stage_spec(req.stage, &req.data.display().to_string());
    ensure_dir(req.out)?;

    let n = req.stage.id();
    let state = run_stage(&mut model, &spec, &samples, resume, &mut |m, st| {
        save_checkpoint(m, Some(st), &req.out.join(format!("stage{n}-epoch{:03}.ckpt", st.epoch))).map_err(into_core)
    })?;
    let checkpoint = req.out.join(stage_file(req.stage));
    save_checkpoint(&model, Some(&state), &checkpoint)?;
    write_text(&req.out.join(format!("loss_stage{n}.csv")), &loss_csv(&state.losses))?;
    write_meta(&req.out.join(format!("train_stage{n}.meta.json")), &format!("train --stage {n}"), started)?;
    Ok(TrainOutcome { checkpoint, losses: state.losses, resumed_at_epoch })
}

/// The training callback can only return core errors.
fn into_core(e: Error) -> spatialgeo_core::Error {
    match e {
        Error::Core(c) => c,
        other => spatialgeo_core::Error::Checkpoint(other.to_string()),
    }
}

/// Answers and scores `data` on `workers` threads. Each thread takes one
/// contiguous chunk and results are joined in input order, so the output
/// does not depend on the worker count.
pub fn answer_all(model: &Model, data: &[Loaded], workers: usize) -> Result<Vec<EvalRecord>> {
    let run = |chunk: &[Loaded]| -> Result<Vec<EvalRecord>> {
        let items = chunk
            .iter()
            .map(|d| {
                Ok(EvalItem {
                    id: d.record.id.clone(),
                    category: d.record.category,
                    ground_truth: d.record.ground_truth()?,
                    features: model.features(&d.image)?,
                    prompt: model.prompt_ids(&d.record.question)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(answer_and_score(model, &items)?)
    };
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let size = data.len().div_ceil(workers.max(1));
    let parts: Vec<Result<Vec<EvalRecord>>> = thread::scope(|s| {
        let handles: Vec<_> = data.chunks(size).map(|c| s.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn write_reports(out: &Path, records: &[EvalRecord], report: &Report) -> Result<()> {
    write_jsonl(&out.join("scored.jsonl"), records.iter().map(ScoredJson::from))?;
    write_text(&out.join("report.json"), &report_json(report))?;
    write_text(&out.join("report.csv"), &report_csv(report))?;
    write_text(&out.join("accuracy_plot.csv"), &accuracy_plot_csv(report))
}

pub struct EvalRequest<'a> {
    pub config: &'a RunConfig,
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub workers: usize,
}

/// Fusion switches set in the configuration override the checkpoint's.
pub fn eval(req: &EvalRequest) -> Result<Report> {
    let started = unix_now();
    let (mut model, _) = load_checkpoint(req.checkpoint)?;
    model.set_fusion(req.config.fusion_over(model.config.fusion)?)?;
    let data = load_dataset(req.data, model.config.encoder.image_side)?;
    let records = answer_all(&model, &data, req.workers)?;
    let report = spatialgeo_core::eval::aggregate(&records)?;
    ensure_dir(req.out)?;
    write_jsonl(&req.out.join("answers.jsonl"), records.iter().map(|r| AnswerJson { id: r.id.clone(), answer: r.answer.clone() }))?;
    write_reports(req.out, &records, &report)?;
    write_meta(&req.out.join("eval.meta.json"), "eval", started)?;
    Ok(report)
}

pub enum ScoreInput<'a> {
    /// Self-contained records with ground truth.
    Records(&'a Path),
    /// `{id, answer}` lines joined with a dataset.
    Answers { answers: &'a Path, dataset: &'a Path },
}

pub fn score(input: ScoreInput, out: &Path) -> Result<Report> {
    let mut records = match input {
        ScoreInput::Records(p) => read_score_inputs(p)?,
        ScoreInput::Answers { answers, dataset } => join_answers(answers, &read_records(dataset)?)?,
    };
    let report = evaluate(&mut records)?;
    ensure_dir(out)?;
    write_reports(out, &records, &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DiagnoseSummary {
    pub matched: Vec<TapSimilarity>,
    pub unrelated: Vec<TapSimilarity>,
}

/// Probes `pairs` matched and `pairs` unrelated scene pairs at every
/// encoder tap.
pub fn diagnose(config: &RunConfig, pairs: usize, out: &Path) -> Result<DiagnoseSummary> {
    let vocab = Vocab::spatial();
    let mc = config.model_config(&vocab)?;
    let enc = Encoders::new(mc.encoder)?;
    let side = mc.encoder.image_side;
    let probe = SimilarityProbe::all(&enc);
    let mut r = rng::seeded(config.seed);
    let mut matched = Vec::with_capacity(pairs);
    let mut unrelated = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let (a, b) = matched_pair(&mut r, side);
        matched.push((format!("matched-{i:04}"), probe_pair(&enc, &a.render(side)?, &b.render(side)?, &probe)?));
        let (c, d) = (random_scene(&mut r, side), random_scene(&mut r, side));
        unrelated.push((format!("unrelated-{i:04}"), probe_pair(&enc, &c.render(side)?, &d.render(side)?, &probe)?));
    }
    let tables = |v: &[(String, Vec<TapSimilarity>)]| v.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>();
    let summary = DiagnoseSummary { matched: mean_similarities(&tables(&matched))?, unrelated: mean_similarities(&tables(&unrelated))? };
    ensure_dir(out)?;
    let all: Vec<_> = matched.into_iter().chain(unrelated).collect();
    write_text(&out.join("similarity.csv"), &similarity_csv(&all))?;
    write_text(&out.join("contrast.csv"), &contrast_csv(&[("matched", summary.matched.clone()), ("unrelated", summary.unrelated.clone())]))?;
    Ok(summary)
}

pub fn validate(path: &Path, side: usize) -> Result<ValidationReport> {
    crate::validate::validate_jsonl(path, side)
}
