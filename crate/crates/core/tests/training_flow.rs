use spatialgeo_core::checkpoint::{decode, encode, Checkpoint};
use spatialgeo_core::data::generate_synth_dataset;
use spatialgeo_core::encoders::EncoderConfig;
use spatialgeo_core::lm::{DecoderConfig, LoRAConfig, Vocab};
use spatialgeo_core::training::{run_stage, LossEntry, Model, ModelConfig, Stage, StageSpec, TrainSample, TrainState};
use spatialgeo_core::{Error, Result};

fn tiny() -> (Model, Vec<TrainSample>) {
    let vocab = Vocab::spatial();
    let mut cfg = ModelConfig::new(&vocab);
    cfg.encoder = EncoderConfig { patch_size: 8, image_side: 16, d_sem: 8, d_geo: 8, blocks: 4, seed: 3 };
    cfg.decoder = DecoderConfig { layers: 1, d_model: 8, heads: 2, max_len: 32, vocab_size: vocab.len(), mlp_hidden: 8 };
    let model = Model::new(cfg, vocab).unwrap();
    let data = generate_synth_dataset(12, 4, 16)
        .unwrap()
        .iter()
        .map(|s| model.prepare(&s.image, &s.record.question, &s.record.answer).unwrap())
        .collect();
    (model, data)
}

fn spec(mut s: StageSpec, epochs: usize) -> StageSpec {
    s.epochs = epochs;
    s.batch_size = 4;
    s.seed = 9;
    s
}

fn run(model: &mut Model, s: &StageSpec, data: &[TrainSample]) -> Result<TrainState> {
    run_stage(model, s, data, None, &mut |_, _| Ok(()))
}

fn bits(losses: &[LossEntry]) -> Vec<(u64, u64)> {
    losses.iter().map(|l| (l.loss.to_bits(), l.drop_rate.to_bits())).collect()
}

fn after_stage1() -> (Model, Vec<TrainSample>) {
    let (mut m, data) = tiny();
    run(&mut m, &spec(StageSpec::stage1(), 1), &data).unwrap();
    (m, data)
}

#[test]
fn same_seed_same_losses() {
    let (mut a, data) = tiny();
    let (mut b, _) = tiny();
    let s = spec(StageSpec::stage1(), 2);
    let la = run(&mut a, &s, &data).unwrap();
    let lb = run(&mut b, &s, &data).unwrap();
    assert_eq!(bits(&la.losses), bits(&lb.losses));
    assert_eq!(a.params, b.params);
    assert_eq!(la.losses.len(), 6);
}

#[test]
fn zero_epochs_changes_nothing() {
    let (mut m, data) = tiny();
    let before = m.clone();
    let st = run(&mut m, &spec(StageSpec::stage1(), 0), &data).unwrap();
    assert!(st.losses.is_empty());
    assert!(m.params.changed_names(&before.params).is_empty());
}

#[test]
fn dropping_changes_the_trajectory() {
    let (base, data) = after_stage1();
    let (mut off, mut on) = (base.clone(), base.clone());
    let mut s0 = spec(StageSpec::stage2(None), 2);
    s0.drop_probability = 0.0;
    let s3 = spec(StageSpec::stage2(None), 2);
    let l0 = run(&mut off, &s0, &data).unwrap();
    let l3 = run(&mut on, &s3, &data).unwrap();
    assert!(l0.losses.iter().all(|l| l.drop_rate == 0.0));
    assert!(l3.losses.iter().any(|l| l.drop_rate > 0.0));
    assert_ne!(bits(&l0.losses), bits(&l3.losses));
}

#[test]
fn low_rank_stage_keeps_decoder_and_encoders_fixed() {
    let (mut m, data) = after_stage1();
    let before = m.clone();
    let lora = LoRAConfig::attention_and_mlp(2, 4.0);
    run(&mut m, &spec(StageSpec::stage2(Some(lora.clone())), 2), &data).unwrap();
    for n in before.params.names().filter(|n| n.starts_with("lm.")) {
        assert!(m.params.get(n).unwrap().bit_eq(before.params.get(n).unwrap()), "{n}");
    }
    assert_eq!(m.encoders.checksum(), before.encoders.checksum());
    assert_eq!(m.lora, Some(lora));
    let changed = m.params.changed_names(&before.params);
    assert!(changed.iter().any(|n| n.starts_with("hier_adapter.")));
    assert!(changed.iter().any(|n| n.starts_with("clip_adapter.")));
    assert!(m.params.names().any(|n| n.starts_with("lora.")));
    assert_eq!(m.stages_done, vec![Stage::One, Stage::Two]);
}

#[test]
fn stage2_needs_stage1() {
    let (mut m, data) = tiny();
    assert!(matches!(run(&mut m, &spec(StageSpec::stage2(None), 1), &data), Err(Error::State(_))));
}

#[test]
fn resuming_from_an_epoch_checkpoint_reproduces_the_run() {
    let (start, data) = after_stage1();
    let s = spec(StageSpec::stage2(Some(LoRAConfig::attention_and_mlp(2, 4.0))), 3);

    let mut full = start.clone();
    let mut saved: Option<Vec<u8>> = None;
    let st_full = run_stage(&mut full, &s, &data, None, &mut |m, st| {
        if st.epoch == 1 {
            saved = Some(encode(&Checkpoint::from_model(m, Some(st)))?);
        }
        Ok(())
    })
    .unwrap();

    let (mut resumed, state) = decode(&saved.unwrap()).unwrap().into_model().unwrap();
    let state = state.expect("state stored");
    assert_eq!(state.epoch, 1);
    let st_resumed = run_stage(&mut resumed, &s, &data, Some(state), &mut |_, _| Ok(())).unwrap();

    assert_eq!(bits(&st_resumed.losses), bits(&st_full.losses));
    assert_eq!(st_resumed.optimizer, st_full.optimizer);
    assert_eq!(resumed.params, full.params);
}

#[test]
fn stage1_checkpoint_feeds_stage2() {
    let (m, data) = after_stage1();
    let bytes = encode(&Checkpoint::from_model(&m, None)).unwrap();
    let (mut loaded, state) = decode(&bytes).unwrap().into_model().unwrap();
    assert!(state.is_none());
    assert_eq!(loaded.stages_done, vec![Stage::One]);
    let mut direct = m.clone();
    let s = spec(StageSpec::stage2(None), 1);
    let a = run(&mut loaded, &s, &data).unwrap();
    let b = run(&mut direct, &s, &data).unwrap();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    assert_eq!(encode(&Checkpoint::from_model(&loaded, None)).unwrap(), encode(&Checkpoint::from_model(&direct, None)).unwrap());
}
