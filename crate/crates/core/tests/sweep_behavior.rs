//! Sweep contracts at small scale: singleton-grid consistency, no
//! retraining along a c sweep, grid validation, and gap handling.

use mscan_core::data::{generate_synthetic, SyntheticConfig};
use mscan_core::eval::{evaluate, sweep, SweepHyper};
use mscan_core::model::{InferenceConfig, ModelConfig, MScanModel, VocabSizes};
use mscan_core::train::{train, TrainConfig};

fn setup() -> (Vec<mscan_core::data::Example>, Vec<mscan_core::data::Example>, ModelConfig, TrainConfig) {
    let syn = SyntheticConfig {
        num_users: 60,
        num_items: 40,
        num_scenarios: 3,
        latent_dim: 4,
        bias_strength: 2.0,
        scenario_interest_shift: 1.0,
        events_per_user: 25,
        seed: 5,
    };
    let (train_set, test_set) = generate_synthetic(&syn, (10, 5)).unwrap();
    let model_cfg = ModelConfig {
        embed_dim: 4,
        gru_hidden: 4,
        attn_ffn_layers: vec![4, 1],
        interest_ffn_layers: vec![8, 1],
        scenario_ffn_layers: vec![4, 1],
        caps: (10, 5),
        init_seed: 1,
        init_scale: 0.1,
        saca: true,
        sbe: true,
    };
    let tc = TrainConfig { epochs: 1, batch_size: 64, ..TrainConfig::default() };
    (train_set, test_set, model_cfg, tc)
}

fn vocab() -> VocabSizes {
    VocabSizes { users: 60, items: 40, scenarios: 3 }
}

#[test]
fn singleton_c_grid_matches_direct_evaluation() {
    let (train_set, test_set, model_cfg, tc) = setup();
    let curve = sweep(
        SweepHyper::C,
        &[0.7],
        &train_set,
        &test_set,
        &model_cfg,
        vocab(),
        &tc,
        &InferenceConfig::default(),
        &[1],
    )
    .unwrap();

    // Reproduce the same training outside the sweep.
    let cfg = ModelConfig { init_seed: 1, ..model_cfg };
    let mut model = MScanModel::new(cfg, vocab()).unwrap();
    let tc1 = TrainConfig { seed: 1, ..tc };
    train(&mut model, &train_set, &tc1).unwrap();
    let report = evaluate(&model, &InferenceConfig { c: 0.7 }, &test_set, false).unwrap();

    assert_eq!(curve.grid, vec![0.7]);
    let a = curve.mean_auc[0].unwrap();
    let b = report.overall_auc().unwrap();
    assert!((a - b).abs() < 1e-15, "{a} vs {b}");
}

#[test]
fn c_sweep_never_retrains() {
    let (train_set, test_set, model_cfg, tc) = setup();
    let curve = sweep(
        SweepHyper::C,
        &[0.0, 0.5, 1.0, 2.0],
        &train_set,
        &test_set,
        &model_cfg,
        vocab(),
        &tc,
        &InferenceConfig::default(),
        &[1, 2],
    )
    .unwrap();
    for seed_curve in &curve.seeds {
        let sums: Vec<&String> = seed_curve.checksums.iter().map(|c| c.as_ref().unwrap()).collect();
        assert!(sums.windows(2).all(|w| w[0] == w[1]), "same checkpoint everywhere");
        assert!(seed_curve.auc.iter().all(|a| a.is_some()));
    }
    // Different seeds train different models.
    assert_ne!(curve.seeds[0].checksums[0], curve.seeds[1].checksums[0]);
}

#[test]
fn alpha_sweep_retrains_each_point() {
    let (train_set, test_set, model_cfg, tc) = setup();
    let curve = sweep(
        SweepHyper::Alpha,
        &[0.0, 1.0],
        &train_set,
        &test_set,
        &model_cfg,
        vocab(),
        &tc,
        &InferenceConfig::default(),
        &[1],
    )
    .unwrap();
    let sums = &curve.seeds[0].checksums;
    assert_ne!(sums[0], sums[1], "different alphas train different models");
}

#[test]
fn invalid_grids_are_rejected() {
    let (train_set, test_set, model_cfg, tc) = setup();
    for grid in [vec![], vec![1.0, 1.0], vec![2.0, 1.0]] {
        assert!(sweep(
            SweepHyper::C,
            &grid,
            &train_set,
            &test_set,
            &model_cfg,
            vocab(),
            &tc,
            &InferenceConfig::default(),
            &[1],
        )
        .is_err());
    }
}

#[test]
fn sweep_csv_shape_matches_grid() {
    let (train_set, test_set, model_cfg, tc) = setup();
    let curve = sweep(
        SweepHyper::C,
        &[0.0, 0.5, 1.0],
        &train_set,
        &test_set,
        &model_cfg,
        vocab(),
        &tc,
        &InferenceConfig::default(),
        &[1],
    )
    .unwrap();
    let csv = curve.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,mean_auc");
    assert_eq!(lines.len(), 1 + curve.grid.len());
}
