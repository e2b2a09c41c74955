//! Binary checkpoint codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SGEOCKPT" | version u32
//! metadata: count u32, then (key, value) strings
//! tensors:  count u32, then name, frozen u8, rank u32, dims u64.., values f64..
//! state:    flag u8, then the training state when the flag is 1
//! trailer:  FNV-1a u64 over every preceding byte
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Encoding is a pure
//! function of the checkpoint, so save, load and save again reproduces the
//! same bytes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::lm::{LoRAConfig, Vocab};
use crate::optim::{AdamW, AdamWConfig, Moments};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::tensor::{Fnv, Tensor};
use crate::training::{LossEntry, Model, ModelConfig, Stage, TrainState};

pub const MAGIC: &[u8; 8] = b"SGEOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamSet,
    pub state: Option<TrainState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<()> {
        match u32::try_from(n) {
            Ok(v) => {
                self.u32(v);
                Ok(())
            }
            Err(_) => bail!(Checkpoint, "length {} does not fit the format", n),
        }
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            bail!(Checkpoint, "truncated at byte {}", self.pos);
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            bail!(Checkpoint, "array of {} values exceeds remaining bytes", n);
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_state(w: &mut Writer, s: &TrainState) -> Result<()> {
    w.u8(s.stage.id());
    w.u64(s.epoch);
    let c = &s.optimizer.config;
    w.f64s(&[c.lr, c.beta1, c.beta2, c.eps, c.weight_decay]);
    w.u64(s.optimizer.step);
    w.len(s.optimizer.moments.len())?;
    for (name, m) in &s.optimizer.moments {
        w.str(name)?;
        w.len(m.m.len())?;
        w.f64s(&m.m);
        w.f64s(&m.v);
    }
    w.0.extend_from_slice(&s.rng.seed);
    w.u64(s.rng.stream);
    w.0.extend_from_slice(&s.rng.word_pos.to_le_bytes());
    w.len(s.losses.len())?;
    for e in &s.losses {
        w.u64(e.step);
        w.u8(e.stage.id());
        w.f64(e.loss);
        w.f64(e.drop_rate);
    }
    Ok(())
}

fn read_state(r: &mut Reader<'_>) -> Result<TrainState> {
    let stage = Stage::from_id(r.u8()?).map_err(|e| Error::Checkpoint(alloc::format!("{e}")))?;
    let epoch = r.u64()?;
    let c = r.f64s(5)?;
    let config = AdamWConfig { lr: c[0], beta1: c[1], beta2: c[2], eps: c[3], weight_decay: c[4] };
    let step = r.u64()?;
    let mut moments = BTreeMap::new();
    for _ in 0..r.count()? {
        let name = r.str()?;
        let n = r.count()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        moments.insert(name, Moments { m, v });
    }
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let mut losses = Vec::new();
    for _ in 0..r.count()? {
        let step = r.u64()?;
        let stage = Stage::from_id(r.u8()?).map_err(|e| Error::Checkpoint(alloc::format!("{e}")))?;
        losses.push(LossEntry { step, stage, loss: r.f64()?, drop_rate: r.f64()? });
    }
    Ok(TrainState {
        stage,
        epoch,
        optimizer: AdamW { config, step, moments },
        rng: RngState { seed, stream, word_pos },
        losses,
    })
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.len(ck.metadata.len())?;
    for (k, v) in &ck.metadata {
        w.str(k)?;
        w.str(v)?;
    }
    w.len(ck.params.len())?;
    for (name, t) in ck.params.iter() {
        w.str(name)?;
        w.u8(u8::from(ck.params.is_frozen(name)));
        w.len(t.shape().len())?;
        t.shape().iter().for_each(|d| w.u64(*d as u64));
        w.f64s(t.data());
    }
    match &ck.state {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            write_state(&mut w, s)?;
        }
    }
    let mut h = Fnv::new();
    h.write(&w.0);
    let digest = h.finish();
    w.u64(digest);
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        bail!(Checkpoint, "not a checkpoint file");
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        bail!(Checkpoint, "unsupported checkpoint version {} (expected {})", version, VERSION);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut h = Fnv::new();
    h.write(body);
    if h.finish() != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        bail!(Checkpoint, "checksum mismatch: file is corrupt");
    }
    let mut r = Reader { buf: body, pos: 12 };
    let mut metadata = BTreeMap::new();
    for _ in 0..r.count()? {
        let k = r.str()?;
        let v = r.str()?;
        metadata.insert(k, v);
    }
    let mut params = ParamSet::new();
    for _ in 0..r.count()? {
        let name = r.str()?;
        let frozen = r.u8()? == 1;
        let rank = r.count()?;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let data = r.f64s(n)?;
        params.insert(&name, Tensor::new(&shape, data)?)?;
        if frozen {
            params.freeze(&name)?;
        }
    }
    let state = match r.u8()? {
        0 => None,
        1 => Some(read_state(&mut r)?),
        f => bail!(Checkpoint, "bad state flag {}", f),
    };
    if r.pos != body.len() {
        bail!(Checkpoint, "{} trailing bytes", body.len() - r.pos);
    }
    Ok(Checkpoint { metadata, params, state })
}

impl Checkpoint {
    /// Snapshot of a model, with an optional stage state to resume from.
    pub fn from_model(model: &Model, state: Option<&TrainState>) -> Self {
        let mut metadata = model.config.to_metadata();
        metadata.insert("vocab".into(), model.vocab.to_lines());
        metadata.insert("encoders.checksum".into(), alloc::format!("{:016x}", model.encoders.checksum()));
        let stages: Vec<String> = model.stages_done.iter().map(|s| alloc::format!("{}", s.id())).collect();
        metadata.insert("stages_done".into(), stages.join(","));
        if let Some(l) = &model.lora {
            metadata.insert("lora.rank".into(), alloc::format!("{}", l.rank));
            metadata.insert("lora.alpha".into(), alloc::format!("{:?}", l.alpha));
            metadata.insert("lora.targets".into(), l.targets.join(","));
        }
        Self { metadata, params: model.params.clone(), state: state.cloned() }
    }

    /// Rebuilds the model; fails when the stored encoder digest does not
    /// match the encoders regenerated from the stored configuration.
    pub fn into_model(self) -> Result<(Model, Option<TrainState>)> {
        let m = &self.metadata;
        let get = |k: &str| m.get(k).ok_or_else(|| Error::Checkpoint(alloc::format!("missing metadata key {k}")));
        let config = ModelConfig::from_metadata(m)?;
        let vocab = Vocab::from_lines(get("vocab")?)?;
        let stages_done = get("stages_done")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u8>().map_err(|_| Error::Checkpoint(alloc::format!("bad stage {s:?}"))).and_then(Stage::from_id))
            .collect::<Result<Vec<_>>>()?;
        let lora = match m.get("lora.rank") {
            None => None,
            Some(r) => Some(LoRAConfig {
                rank: r.parse().map_err(|_| Error::Checkpoint("bad lora.rank".into()))?,
                alpha: get("lora.alpha")?.parse().map_err(|_| Error::Checkpoint("bad lora.alpha".into()))?,
                targets: get("lora.targets")?.split(',').map(String::from).collect(),
            }),
        };
        let expected = get("encoders.checksum")?.clone();
        let model = Model::from_parts(config, vocab, self.params, lora, stages_done)?;
        if alloc::format!("{:016x}", model.encoders.checksum()) != expected {
            bail!(Checkpoint, "encoder digest mismatch");
        }
        Ok((model, self.state))
    }
}
