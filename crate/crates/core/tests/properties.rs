use affect_core::dataset::{parse_essay_table, to_examples, SchemaConfig, Split};
use affect_core::ensemble::{assemble_matrix, combine, fit_combiner, CombinerKind};
use affect_core::encoders::PredictionVector;
use affect_core::metrics::pearson;
use affect_core::{Fingerprint, ScoreRange, Target};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook definition, written independently of the library.
fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..200).prop_flat_map(|n| {
        (prop::collection::vec(-50.0f64..50.0, n), prop::collection::vec(-50.0f64..50.0, n))
    })
}

proptest! {
    #[test]
    fn pearson_matches_naive_and_is_bounded((x, y) in vec_pair()) {
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - naive_pearson(&x, &y)).abs() < 1e-10);
            prop_assert_eq!(r, pearson(&y, &x).unwrap());
        }
    }

    #[test]
    fn pearson_affine_invariance((x, y) in vec_pair(), a in 0.1f64..10.0, b in -20.0f64..20.0) {
        if let Ok(r) = pearson(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-9);
            let x3: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&x3, &y).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_round_trips_through_tsv(
        essays in prop::collection::vec("[a-zA-Z ,.!?'\"\t\n]{1,60}[a-z]", 1..12),
        labels in prop::collection::vec((1.0f64..=7.0, prop::option::of(1.0f64..=7.0)), 12),
        ages in prop::collection::vec(18u32..90, 12),
    ) {
        let mut raw = String::from("essay_id\tessay\tempathy\tdistress\tage\n");
        for (i, essay) in essays.iter().enumerate() {
            let quoted = format!("\"{}\"", essay.replace('"', "\"\""));
            let (e, d) = labels[i];
            let d = d.map(|v| v.to_string()).unwrap_or_default();
            raw.push_str(&format!("id{i}\t{quoted}\t{e}\t{d}\t{}\n", ages[i]));
        }
        let range = ScoreRange::default();
        let schema = SchemaConfig::default();
        let first = parse_essay_table(&raw, Split::Train, &schema, range).unwrap();
        prop_assert_eq!(first.len(), essays.len());
        for (r, e) in first.records.iter().zip(&essays) {
            prop_assert_eq!(&r.essay, e);
        }
        let second = parse_essay_table(&first.to_tsv(), Split::Train, &schema, range).unwrap();
        prop_assert_eq!(&first, &second);
        let ex = to_examples(&first, Target::Empathy).unwrap();
        for (x, r) in ex.iter().zip(&first.records) {
            prop_assert_eq!(Some(x.label), r.gold_empathy);
            prop_assert!(range.contains(x.label));
        }
    }

    #[test]
    fn combiners_preserve_rows_and_range(n in 8usize..40, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..7.0)).collect();
        let preds: Vec<PredictionVector> = (0..3)
            .map(|j| PredictionVector {
                values: gold.iter().map(|g| g + rng.random_range(-3.0..3.0)).collect(),
                record_ids: (0..n).map(|i| i.to_string()).collect(),
                source_model: format!("m{j}"),
                target: Target::Distress,
                dataset_fingerprint: Fingerprint::from_hex("01"),
            })
            .collect();
        let m = assemble_matrix(&preds).unwrap();
        for kind in CombinerKind::all_defaults() {
            let f = fit_combiner(&kind, &m, &gold, seed, ScoreRange::default()).unwrap();
            let out = combine(&f, &m).unwrap();
            prop_assert_eq!(out.len(), n);
            prop_assert!(out.values.iter().all(|v| (1.0..=7.0).contains(v)));
        }
    }
}

#[test]
fn uncorrelated_noise_averages_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let mut draw = || (0..10_000).map(|_| rng.random_range(1.0..7.0)).collect::<Vec<f64>>();
    let (pe, ge, pd, gd) = (draw(), draw(), draw(), draw());
    let r = affect_core::metrics::evaluate(&pe, &pd, &ge, &gd).unwrap();
    assert!(r.averaged_pearson.abs() < 0.05, "{}", r.averaged_pearson);
}
