use proptest::prelude::*;
use rand::Rng;
use spatialgeo_core::eval::{aggregate, evaluate, parse_quantity, score, to_meters, EvalRecord, Quantity, QuestionCategory, Unit};
use spatialgeo_core::rng::seeded;

fn unit() -> impl Strategy<Value = Unit> {
    prop::sample::select(Unit::ALL.to_vec())
}

fn category() -> impl Strategy<Value = QuestionCategory> {
    prop::sample::select(QuestionCategory::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn scoring_ignores_common_scale(gt in 1e-3f64..1e3, ratio in 0.5f64..1.5, k in 1e-3f64..1e3) {
        // Ratios within 1e-6 of a band edge can flip on rounding alone.
        prop_assume!((ratio - 0.75).abs() > 1e-6 && (ratio - 1.25).abs() > 1e-6);
        let pred = gt * ratio;
        prop_assert_eq!(score(k * pred, k * gt).unwrap(), score(pred, gt).unwrap());
    }

    #[test]
    fn conversion_is_linear(v in 1e-6f64..1e6, u in unit(), k in 1e-3f64..1e3) {
        let q = Quantity::new(v, u).unwrap();
        let m = to_meters(q);
        prop_assert_eq!(m.to_bits(), (v * u.factor()).to_bits());
        // Division re-rounds, so the recovered factor may sit one ulp away.
        let back = m / v;
        prop_assert!((back - u.factor()).abs() <= 2.0 * f64::EPSILON * u.factor());
        let scaled = to_meters(Quantity::new(k * v, u).unwrap());
        prop_assert!((scaled - k * m).abs() <= 4.0 * f64::EPSILON * scaled.abs());
    }

    #[test]
    fn exact_factors_for_dyadic_values(e in -20i32..20, u in unit()) {
        let v = 2f64.powi(e);
        prop_assert_eq!(to_meters(Quantity::new(v, u).unwrap()) / v, u.factor());
    }

    #[test]
    fn suffixes_never_change_a_parse(
        cents in 1u32..100_000,
        u in unit(),
        tail in "[ \t][a-zA-Z ,.;:!?()-]{0,24}",
    ) {
        let v = f64::from(cents) / 100.0;
        let answer = format!("{} {}", v, u.symbol());
        let first = parse_quantity(&answer);
        prop_assert!(first.is_some(), "{} did not parse", answer);
        prop_assert_eq!(parse_quantity(&format!("{answer}{tail}")), first);
    }

    #[test]
    fn totals_add_up(cases in prop::collection::vec((category(), 0.01f64..10.0, 0.1f64..3.0, any::<bool>()), 1..80)) {
        let mut records: Vec<EvalRecord> = cases
            .iter()
            .enumerate()
            .map(|(i, (c, gt, ratio, garble))| {
                let answer = if *garble { "no idea".to_string() } else { format!("{} m", gt * ratio) };
                EvalRecord::new(format!("r{i}"), *c, Quantity::new(*gt, Unit::Meter).unwrap(), answer)
            })
            .collect();
        let report = evaluate(&mut records).unwrap();
        prop_assert_eq!(report.total, records.len());
        prop_assert_eq!(report.categories.iter().map(|c| c.total).sum::<usize>(), records.len());
        prop_assert_eq!(report.categories.iter().map(|c| c.correct).sum::<usize>(), report.correct);
        let recount = records.iter().filter(|r| r.is_correct()).count();
        prop_assert_eq!(report.correct, recount);
        prop_assert!((report.average() - 100.0 * recount as f64 / records.len() as f64).abs() < 1e-12);
        prop_assert_eq!(report.parse_failures, cases.iter().filter(|c| c.3).count());
    }
}

/// Independent tally: counts by hand from the generating parameters.
#[test]
fn fifty_record_tally_matches_hand_count() {
    let mut r = seeded(50);
    let mut records = Vec::new();
    let mut expected = [(0usize, 0usize); 5];
    for i in 0..50 {
        let c = QuestionCategory::ALL[i % 5];
        let gt = r.random_range(0.5..8.0);
        let ratio: f64 = [0.5, 0.8, 1.0, 1.2, 1.4, 0.7][r.random_range(0..6)];
        let in_band = (0.75..=1.25).contains(&ratio);
        let answer = format!("about {} cm", gt * ratio * 100.0);
        expected[i % 5].0 += 1;
        expected[i % 5].1 += usize::from(in_band);
        records.push(EvalRecord::new(format!("t{i}"), c, Quantity::new(gt, Unit::Meter).unwrap(), answer));
    }
    let report = evaluate(&mut records).unwrap();
    for (k, c) in QuestionCategory::ALL.iter().enumerate() {
        let stats = report.category(*c);
        assert_eq!((stats.total, stats.correct), expected[k], "{}", c.name());
    }
    let correct: usize = expected.iter().map(|e| e.1).sum();
    assert_eq!(report.correct, correct);
    assert!((report.average() - 2.0 * correct as f64).abs() < 1e-12);
    assert_eq!(aggregate(&records).unwrap(), report);
}
