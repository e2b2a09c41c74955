use proptest::prelude::*;
use spatialgeo_core::data::{
    generate_synth_dataset, generate_synth_record, matched_pair, rescale_bbox, subsample, unrescale_bbox, BBox, LEVEL_METERS,
    OBJECTS,
};
use spatialgeo_core::diagnostics::{mean_pool, LinearProbe};
use spatialgeo_core::encoders::{EncoderConfig, Encoders};
use spatialgeo_core::eval::QuestionCategory;
use spatialgeo_core::rng::seeded;

const SIDE: usize = 32;

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn rescale_is_dimension_free(
        w in 1u32..4000, h in 1u32..4000,
        fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0,
        k in prop::sample::select(vec![0.25f64, 0.5, 2.0, 4.0, 8.0]),
    ) {
        let (wf, hf) = (f64::from(w), f64::from(h));
        let x = (fx * (wf - 1.0)).floor();
        let y = (fy * (hf - 1.0)).floor();
        let (bw, bh) = (1.0 + (fw * (wf - x - 1.0)).floor(), 1.0 + (fh * (hf - y - 1.0)).floor());
        let b = BBox { x, y, w: bw, h: bh, image_width: wf, image_height: hf };
        let s = BBox { x: k * b.x, y: k * b.y, w: k * b.w, h: k * b.h, image_width: k * wf, image_height: k * hf };
        prop_assert_eq!(rescale_bbox("p", &b).unwrap(), rescale_bbox("p", &s).unwrap());

        let back = unrescale_bbox(&rescale_bbox("p", &b).unwrap(), wf, hf);
        for (u, v) in [(back.x, b.x), (back.y, b.y), (back.w, b.w), (back.h, b.h)] {
            prop_assert!((u - v).abs() <= 0.5);
        }
    }

    #[test]
    fn subsample_is_deterministic_and_sorted(n in 0usize..300, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = (frac * n as f64) as usize;
        let items: Vec<usize> = (0..n).collect();
        let a = subsample(&items, k, seed).unwrap();
        prop_assert_eq!(&a, &subsample(&items, k, seed).unwrap());
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn records_depend_only_on_seed_and_index(seed in any::<u64>(), i in 0usize..10_000) {
        prop_assert_eq!(generate_synth_record(i, seed, SIDE).unwrap(), generate_synth_record(i, seed, SIDE).unwrap());
    }

    #[test]
    fn matched_pairs_share_semantics(seed in any::<u64>()) {
        let (a, b) = matched_pair(&mut seeded(seed), SIDE);
        prop_assert_eq!((a.object, a.glyph_row, a.glyph_col), (b.object, b.glyph_row, b.glyph_col));
        prop_assert_ne!(a.level, b.level);
        let enc = Encoders::new(EncoderConfig::default()).unwrap();
        let (ia, ib) = (a.render(SIDE).unwrap(), b.render(SIDE).unwrap());
        prop_assert!(enc.semantic_encode(&ia).unwrap().bit_eq(&enc.semantic_encode(&ib).unwrap()));
    }
}

#[test]
fn subsample_overlap_follows_hypergeometric_mean() {
    // Two independent 160-of-1000 draws share k^2 / n = 25.6 items on average.
    let items: Vec<usize> = (0..1000).collect();
    let trials = 400;
    let mut total = 0usize;
    for t in 0..trials {
        let a = subsample(&items, 160, 2 * t).unwrap();
        let b = subsample(&items, 160, 2 * t + 1).unwrap();
        total += a.iter().filter(|x| b.binary_search(x).is_ok()).count();
    }
    let mean = total as f64 / trials as f64;
    // The per-trial standard deviation is about 4.3, so the mean of 400 is within 1 of 25.6.
    assert!((mean - 25.6).abs() < 1.0, "{mean}");
    assert!(matches!(subsample(&items, 1001, 0), Err(spatialgeo_core::Error::Input(_))));
}

#[test]
fn dataset_is_seed_deterministic_and_seed_sensitive() {
    let a = generate_synth_dataset(40, 7, SIDE).unwrap();
    assert_eq!(a, generate_synth_dataset(40, 7, SIDE).unwrap());
    assert_ne!(a, generate_synth_dataset(40, 8, SIDE).unwrap());
    assert!(generate_synth_dataset(0, 7, SIDE).unwrap().is_empty());
}

#[test]
fn five_hundred_records_cover_every_value() {
    let ds = generate_synth_dataset(500, 11, SIDE).unwrap();
    let mut cats = [0usize; 5];
    let mut objects = [0usize; OBJECTS.len()];
    let mut levels = [0usize; LEVEL_METERS.len()];
    for s in &ds {
        assert!(s.record.violations(1, SIDE).is_empty(), "{}", s.record.id);
        cats[s.record.category.index()] += 1;
        let spatialgeo_core::data::ImageSource::Scene(sc) = &s.record.image else { panic!("inline scene expected") };
        objects[sc.object] += 1;
        levels[sc.level] += 1;
    }
    // Expected 100 per category, 62.5 per object and 31.25 per level.
    assert!(cats.iter().all(|c| (70..=130).contains(c)), "{cats:?}");
    assert!(objects.iter().all(|c| (35..=95).contains(c)), "{objects:?}");
    assert!(levels.iter().all(|c| (12..=55).contains(c)), "{levels:?}");
    for c in QuestionCategory::ALL {
        assert!(ds.iter().any(|s| s.record.category == c));
    }
}

fn probe_r2(features: &[Vec<f64>], y: &[f64]) -> f64 {
    let split = features.len() * 3 / 4;
    let probe = LinearProbe::fit(&features[..split], &y[..split], 1e-3).unwrap();
    probe.r_squared(&features[split..], &y[split..]).unwrap()
}

#[test]
fn answers_are_linearly_readable_from_geometry_only() {
    let enc = Encoders::new(EncoderConfig::default()).unwrap();
    let ds = generate_synth_dataset(600, 3, SIDE).unwrap();
    let y: Vec<f64> = ds.iter().map(|s| s.record.ground_truth().unwrap().meters()).collect();
    let geo: Vec<Vec<f64>> = ds.iter().map(|s| mean_pool(enc.geometry_encode(&s.image).unwrap().last()).unwrap()).collect();
    let r2_geo = probe_r2(&geo, &y);
    assert!(r2_geo > 0.9, "geometry R^2 {r2_geo}");

    let mut r = seeded(5);
    let mut sem = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..300 {
        let (a, b) = matched_pair(&mut r, SIDE);
        for s in [a, b] {
            sem.push(mean_pool(&enc.semantic_encode(&s.render(SIDE).unwrap()).unwrap()).unwrap());
            ys.push(s.answer_meters());
        }
    }
    let r2_sem = probe_r2(&sem, &ys);
    assert!(r2_sem < 0.2, "semantic R^2 {r2_sem}");
}
