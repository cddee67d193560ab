//! End-to-end acceptance suite. Each criterion prints exactly one
//! `ACCEPTANCE <n>: PASS|FAIL` line.

use std::panic::AssertUnwindSafe;

use ndarray::Array2;
use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use funnelcast::attribution::{
    build_labels, linear_attribution, time_decay_attribution, AttributionModel, IndicatorMatrix,
    NUM_CLASSES,
};
use funnelcast::features::{
    apply_normalizer, compute_rpt_stats, encode_journey, fit_normalizer, map_shopping_stage,
    pearson_correlation_matrix, EncodedJourney, NormMethod,
};
use funnelcast::ingest::{join_journeys, parse_table, ParsedTable, ShoppingStage, TableKind};
use funnelcast::model::{backward, forward, mse_loss, parameter_count, ModelConfig, ModelParams};
use funnelcast::synthgen::{generate, SynthConfig};
use funnelcast::targeting::{score_users, simulate_targeting, ScoringMethod, TrialResult};
use funnelcast::training::{evaluate, prevalence_baseline, split_by_user, train, TrainConfig};

fn criterion(name: &str, f: impl FnOnce()) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("ACCEPTANCE {name}: PASS"),
        Err(e) => {
            println!("ACCEPTANCE {name}: FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

// ---------------------------------------------------------------------------
// shared trained-model context for criteria 4 and 5
// ---------------------------------------------------------------------------

struct Trained {
    params: ModelParams<f64>,
    train_set: Vec<EncodedJourney<f64>>,
    val_set: Vec<EncodedJourney<f64>>,
    bought_last: Vec<bool>,
    revenue_last: Vec<f64>,
}

static TRAINED: Lazy<Trained> = Lazy::new(|| {
    let corpus =
        generate(&SynthConfig { n_users: 2000, seed: 424242, ..SynthConfig::default() }).unwrap();
    let users = match parse_table(TableKind::Users, corpus.users_csv.as_bytes()).unwrap() {
        ParsedTable::Users(v) => v,
        _ => unreachable!(),
    };
    let sessions = match parse_table(TableKind::Sessions, corpus.sessions_csv.as_bytes()).unwrap() {
        ParsedTable::Sessions(v) => v,
        _ => unreachable!(),
    };
    let hits = match parse_table(TableKind::Hits, corpus.hits_csv.as_bytes()).unwrap() {
        ParsedTable::Hits(v) => v,
        _ => unreachable!(),
    };
    let (journeys, _) = join_journeys(&users, &sessions, &hits);
    let (train_raw, val_raw) = split_by_user(journeys, 0.2, 0).unwrap();
    let stats = compute_rpt_stats(&train_raw).unwrap();
    let mut train_set: Vec<EncodedJourney<f64>> =
        train_raw.iter().map(|j| encode_journey(j, &stats).unwrap()).collect();
    let mut val_set: Vec<EncodedJourney<f64>> =
        val_raw.iter().map(|j| encode_journey(j, &stats).unwrap()).collect();
    let normalizer = fit_normalizer(&train_set, NormMethod::MinMax).unwrap();
    apply_normalizer(&normalizer, &mut train_set);
    apply_normalizer(&normalizer, &mut val_set);

    let config = TrainConfig {
        attribution: AttributionModel::Linear,
        normalization: NormMethod::MinMax,
        seed: 0,
        ..TrainConfig::default()
    };
    let (params, _history) =
        train(&train_set, &val_set, &config, ModelConfig::default()).unwrap();

    let bought_last = val_raw
        .iter()
        .map(|j| j.sessions.last().map(|(s, _)| s.transactions > 0).unwrap_or(false))
        .collect();
    let revenue_last = val_raw
        .iter()
        .map(|j| j.sessions.last().map(|(s, _)| s.revenue).unwrap_or(0.0))
        .collect();
    Trained { params, train_set, val_set, bought_last, revenue_last }
});

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_attribution_oracle() {
    criterion("1 (attribution oracle)", || {
        // transactions in sessions 2 and 5 of five
        let v = IndicatorMatrix::from_class_ids(&[0, 5, 0, 0, 5]).unwrap();
        let linear = linear_attribution::<f64>(&v);
        let expected = [0.0, 0.5, 1.0 / 3.0, 0.25, 0.4];
        for (n, &e) in expected.iter().enumerate() {
            assert!((linear.t[(n, 5)] - e).abs() < 1e-12, "linear t({}) = {}", n + 1, linear.t[(n, 5)]);
        }
        let decay = time_decay_attribution::<f64>(&v);
        let expected_prefix = [0.0, 2.0 / 3.0, 2.0 / 7.0, 2.0 / 15.0];
        for (n, &e) in expected_prefix.iter().enumerate() {
            assert!(
                (decay.t[(n, 5)] - e).abs() < 1e-12,
                "time-decay t({}) = {}",
                n + 1,
                decay.t[(n, 5)]
            );
        }
        // rounded forms match the published [0, 0.66, 0.28, 0.13]
        let rounded: Vec<f64> =
            expected_prefix.iter().map(|t| (t * 100.0).floor() / 100.0).collect();
        assert_eq!(rounded, vec![0.0, 0.66, 0.28, 0.13]);
        // shifted example: transactions in sessions 3 and 5
        let shifted = IndicatorMatrix::from_class_ids(&[0, 0, 5, 0, 5]).unwrap();
        let t5 = time_decay_attribution::<f64>(&shifted).t[(4, 5)];
        assert!((t5 - 1.25 / 1.9375).abs() < 1e-12);
        assert!((t5 - 0.645).abs() < 5e-3, "shifted t(5) = {t5}, expected ~0.645");
    });
}

#[test]
fn acceptance_2_parameter_count() {
    criterion("2 (parameter count 15,246)", || {
        assert_eq!(parameter_count(&ModelConfig::default()), 15_246);
    });
}

#[test]
fn acceptance_3_gradient_check() {
    criterion("3 (analytic vs finite-difference gradients)", || {
        let config = ModelConfig {
            hit_dim: 3,
            session_dim: 11,
            user_dim: 5,
            hidden: 4,
            fc_hidden: 6,
        };
        let eps = 1e-5;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = funnelcast::model::init_params::<f64>(config, seed.wrapping_add(1000));
            // 3 sessions, 1..=3 hits each
            let journey = EncodedJourney {
                user_vec: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                session_vecs: (0..3)
                    .map(|_| (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
                hit_vecs: (0..3)
                    .map(|_| {
                        let n_hits = rng.gen_range(1..=3);
                        (0..n_hits)
                            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                            .collect()
                    })
                    .collect(),
                class_ids: (0..3).map(|_| rng.gen_range(0..NUM_CLASSES)).collect(),
            };
            let labels: Array2<f64> =
                build_labels::<f64>(&journey.class_ids, AttributionModel::Linear).unwrap().t;

            let (_, trace) = forward(&params, &journey).unwrap();
            let analytic = backward(&params, &trace, &labels).unwrap().to_flat();

            let flat = params.to_flat();
            let loss_at = |theta: &[f64]| -> f64 {
                let p = ModelParams::from_flat(config, theta);
                let (preds, _) = forward(&p, &journey).unwrap();
                mse_loss(&preds, &labels).unwrap()
            };
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += eps;
                let mut minus = flat.clone();
                minus[i] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                let abs_err = (analytic[i] - numeric).abs();
                let denom = analytic[i].abs().max(numeric.abs());
                assert!(
                    abs_err < 1e-8 || abs_err / denom < 1e-4,
                    "seed {seed} param {i}: analytic {} vs numeric {numeric}",
                    analytic[i]
                );
            }
        }
    });
}

#[test]
fn acceptance_4_learnability() {
    criterion("4 (learnability on synthetic corpus)", || {
        let ctx = &*TRAINED;
        let report =
            evaluate(&ctx.params, &ctx.val_set, AttributionModel::Linear).unwrap();
        let (_, baseline_mse) =
            prevalence_baseline(&ctx.train_set, &ctx.val_set, AttributionModel::Linear).unwrap();
        assert!(
            report.mse <= 0.9 * baseline_mse,
            "model mse {} not >=10% better than baseline {baseline_mse}",
            report.mse
        );
        assert!(
            report.acc_wide > report.acc_tight,
            "wide accuracy {} not above tight accuracy {}",
            report.acc_wide,
            report.acc_tight
        );
    });
}

#[test]
fn acceptance_5_targeting_properties() {
    criterion("5 (targeting experiment properties)", || {
        let ctx = &*TRAINED;
        let trials = 200;

        let run = |method: &ScoringMethod<'_>, seed: u64| {
            let scores = score_users(method, &ctx.val_set, seed).unwrap();
            simulate_targeting(&scores, &ctx.bought_last, &ctx.revenue_last, trials, seed).unwrap()
        };
        let (random_outcome, random_trials) = run(&ScoringMethod::Random, 91);
        let (model_outcome, model_trials) = run(
            &ScoringMethod::Model { params: &ctx.params, attribution: AttributionModel::Linear },
            92,
        );

        // (a) profit at the breaking point is zero per trial
        for t in random_trials.iter().chain(model_trials.iter()) {
            if t.tp + t.fp == 0 {
                continue;
            }
            let bp = t.tp_revenue / (t.tp + t.fp) as f64;
            assert!(t.profit(bp).abs() < 1e-9, "profit at bp = {}", t.profit(bp));
        }

        // (b) percentage denominators are the buyer / non-buyer counts
        let buyers = ctx.bought_last.iter().filter(|&&b| b).count();
        let non_buyers = ctx.bought_last.len() - buyers;
        assert!((random_outcome.tp_pct - random_outcome.tp_mean / buyers as f64).abs() < 1e-12);
        assert!(
            (random_outcome.fp_pct - random_outcome.fp_mean / non_buyers as f64).abs() < 1e-12
        );
        // published consistency relations: tp 22.46 of 32 buyers, fp 2133 of
        // 5315 non-buyers
        assert!((22.46f64 / 32.0 - 0.701875).abs() < 1e-12);
        assert!((2133f64 / 5315.0 - 0.4013170272812794).abs() < 1e-12);

        // (c) model scorer beats random on mean breaking point, one-sided
        // bootstrap at 95%
        let bps = |ts: &[TrialResult]| -> Vec<f64> {
            ts.iter()
                .map(|t| if t.tp + t.fp > 0 { t.tp_revenue / (t.tp + t.fp) as f64 } else { 0.0 })
                .collect()
        };
        let random_bp = bps(&random_trials);
        let model_bp = bps(&model_trials);
        assert!(model_outcome.bp_mean > random_outcome.bp_mean);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let resample_mean = |rng: &mut ChaCha8Rng, xs: &[f64]| -> f64 {
            (0..xs.len()).map(|_| xs[rng.gen_range(0..xs.len())]).sum::<f64>() / xs.len() as f64
        };
        let wins = (0..2000)
            .filter(|_| resample_mean(&mut rng, &model_bp) > resample_mean(&mut rng, &random_bp))
            .count();
        assert!(wins >= 1900, "model > random in only {wins}/2000 bootstrap resamples");
    });
}

#[test]
fn acceptance_6_pipeline_determinism() {
    criterion("6 (pipeline determinism)", || {
        let run_pipeline = |root: &std::path::Path| {
            let data = root.join("data");
            let model = root.join("model");
            let target = root.join("target");
            let argv = |parts: &[&str]| {
                std::iter::once("funnelcast".to_string())
                    .chain(parts.iter().map(|s| s.to_string()))
                    .collect::<Vec<_>>()
            };
            assert_eq!(
                funnelcast::cli::run(argv(&[
                    "synth", "--users", "60", "--seed", "5", "--out",
                    data.to_str().unwrap()
                ])),
                0
            );
            assert_eq!(
                funnelcast::cli::run(argv(&[
                    "train", "--data", data.to_str().unwrap(), "--attribution", "linear",
                    "--norm", "minmax", "--epochs", "3", "--seed", "5", "--out",
                    model.to_str().unwrap()
                ])),
                0
            );
            assert_eq!(
                funnelcast::cli::run(argv(&[
                    "target", "--data", data.to_str().unwrap(), "--model",
                    model.to_str().unwrap(), "--trials", "30", "--seed", "5", "--out",
                    target.to_str().unwrap()
                ])),
                0
            );
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_pipeline(a.path());
        run_pipeline(b.path());

        // every artifact byte-identical; the manifest echoes absolute paths so
        // it is excluded, as are no other files
        for sub in ["data", "model", "target"] {
            let dir_a = a.path().join(sub);
            let mut names: Vec<String> = std::fs::read_dir(&dir_a)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .filter(|n| n != "run_manifest.json")
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                let bytes_a = std::fs::read(dir_a.join(&name)).unwrap();
                let bytes_b = std::fs::read(b.path().join(sub).join(&name)).unwrap();
                assert_eq!(bytes_a, bytes_b, "{sub}/{name} differs between runs");
            }
        }
    });
}

#[test]
fn acceptance_7_invariant_suites() {
    criterion("7 (invariant suites)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        // label rows sum to 1 under both attributions
        for _ in 0..200 {
            let n = rng.gen_range(1..10);
            let class_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
            for attribution in [AttributionModel::Linear, AttributionModel::TimeDecay] {
                let labels = build_labels::<f64>(&class_ids, attribution).unwrap();
                for row in 0..n {
                    let sum: f64 = (0..NUM_CLASSES).map(|c| labels.t[(row, c)]).sum();
                    assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
                }
            }
        }

        // map_shopping_stage agrees with a brute-force oracle on all 31
        // non-empty stage subsets
        let all = [
            ShoppingStage::AllVisits,
            ShoppingStage::ProductView,
            ShoppingStage::AddToCart,
            ShoppingStage::Checkout,
            ShoppingStage::Transaction,
        ];
        for mask in 1u32..32 {
            let stages: std::collections::BTreeSet<ShoppingStage> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &s)| s)
                .collect();
            let has = |s: ShoppingStage| stages.contains(&s);
            let expected = if has(ShoppingStage::Transaction) {
                5
            } else if has(ShoppingStage::ProductView)
                && has(ShoppingStage::Checkout)
                && !has(ShoppingStage::AddToCart)
            {
                4
            } else if has(ShoppingStage::ProductView)
                && has(ShoppingStage::AddToCart)
                && has(ShoppingStage::Checkout)
            {
                3
            } else if has(ShoppingStage::ProductView) && has(ShoppingStage::AddToCart) {
                2
            } else if has(ShoppingStage::ProductView) {
                1
            } else {
                0
            };
            assert_eq!(map_shopping_stage(&stages).unwrap(), expected, "mask {mask:05b}");
        }

        // Pearson matrix symmetric with unit diagonal
        let rows: Vec<Vec<f64>> =
            (0..50).map(|_| (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let corr = pearson_correlation_matrix(&rows).unwrap();
        for i in 0..7 {
            assert!((corr[(i, i)] - 1.0).abs() < 1e-9);
            for j in 0..7 {
                assert!((corr[(i, j)] - corr[(j, i)]).abs() < 1e-12);
            }
        }

        // MinMax normalization maps the fitting set into [0,1]
        let journeys: Vec<EncodedJourney<f64>> = (0..20)
            .map(|_| EncodedJourney {
                user_vec: (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                session_vecs: (0..3)
                    .map(|_| (0..11).map(|_| rng.gen_range(-5.0..5.0)).collect())
                    .collect(),
                hit_vecs: (0..3)
                    .map(|_| vec![(0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()])
                    .collect(),
                class_ids: vec![0; 3],
            })
            .collect();
        let normalizer = fit_normalizer(&journeys, NormMethod::MinMax).unwrap();
        let mut normalized = journeys;
        apply_normalizer(&normalizer, &mut normalized);
        for j in &normalized {
            let all_vals = j
                .user_vec
                .iter()
                .chain(j.session_vecs.iter().flatten())
                .chain(j.hit_vecs.iter().flatten().flatten());
            for &v in all_vals {
                assert!((0.0..=1.0).contains(&v), "normalized value {v} outside [0,1]");
            }
        }
    });
}
