//! End-to-end training properties on small synthetic datasets.

use mscan_core::data::{generate_synthetic, Example, SyntheticConfig};
use mscan_core::model::{ModelConfig, MScanModel, VocabSizes};
use mscan_core::train::{
    check_model_gradients, epoch_permutation, gradcheck_fixture, train, ModelBatchLoss, TrainConfig,
};
use mscan_core::autodiff::DifferentiableLoss;

fn small_data() -> (Vec<Example>, Vec<Example>) {
    let cfg = SyntheticConfig {
        num_users: 50,
        num_items: 30,
        num_scenarios: 3,
        latent_dim: 4,
        bias_strength: 2.0,
        scenario_interest_shift: 1.0,
        events_per_user: 24,
        seed: 7,
    };
    generate_synthetic(&cfg, (10, 5)).unwrap()
}

fn small_model(init_seed: u64) -> MScanModel {
    let cfg = ModelConfig {
        embed_dim: 4,
        gru_hidden: 4,
        attn_ffn_layers: vec![4, 1],
        interest_ffn_layers: vec![8, 1],
        scenario_ffn_layers: vec![4, 1],
        caps: (10, 5),
        init_seed,
        init_scale: 0.1,
        saca: true,
        sbe: true,
    };
    MScanModel::new(cfg, VocabSizes { users: 50, items: 30, scenarios: 3 }).unwrap()
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 64,
        epochs: 2,
        alpha: 0.5,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_reproduces_the_final_checksum() {
    let (train_set, _) = small_data();
    let subset = &train_set[..64];
    let mut a = small_model(3);
    let mut b = small_model(3);
    let ra = train(&mut a, subset, &train_cfg(9)).unwrap();
    let rb = train(&mut b, subset, &train_cfg(9)).unwrap();
    assert_eq!(ra.checksum, rb.checksum);
    for (ea, eb) in ra.epochs.iter().zip(&rb.epochs) {
        assert_eq!(ea.l_final.to_bits(), eb.l_final.to_bits());
    }
}

#[test]
fn parallel_and_sequential_runs_are_bit_identical() {
    let (train_set, _) = small_data();
    let subset = &train_set[..200];
    let mut par = small_model(5);
    let mut seq = small_model(5);
    let mut cfg = train_cfg(11);
    cfg.parallel = true;
    let rp = train(&mut par, subset, &cfg).unwrap();
    cfg.parallel = false;
    let rs = train(&mut seq, subset, &cfg).unwrap();
    assert_eq!(rp.checksum, rs.checksum);
    for (a, b) in rp.epochs.iter().zip(&rs.epochs) {
        assert_eq!(a.l_uis.to_bits(), b.l_uis.to_bits());
        assert_eq!(a.l_s.to_bits(), b.l_s.to_bits());
    }
}

#[test]
fn reported_final_loss_is_the_weighted_sum() {
    let (train_set, _) = small_data();
    let mut model = small_model(3);
    let mut cfg = train_cfg(4);
    cfg.alpha = 0.7;
    cfg.epochs = 3;
    let report = train(&mut model, &train_set[..300], &cfg).unwrap();
    for epoch in &report.epochs {
        assert!(
            (epoch.l_final - (epoch.l_uis + cfg.alpha * epoch.l_s)).abs() < 1e-9,
            "{epoch:?}"
        );
    }
}

#[test]
fn shuffle_is_a_pure_function_of_seed_and_epoch() {
    for epoch in 0..3 {
        let mut a: Vec<usize> = (0..100).collect();
        let mut b: Vec<usize> = (0..100).collect();
        epoch_permutation(21, epoch).shuffle(&mut a);
        epoch_permutation(21, epoch).shuffle(&mut b);
        assert_eq!(a, b);
        let mut c: Vec<usize> = (0..100).collect();
        epoch_permutation(21, epoch + 1).shuffle(&mut c);
        assert_ne!(a, c);
    }
}

#[test]
fn scenario_head_gets_gradient_even_with_alpha_zero() {
    let (train_set, _) = small_data();
    let batch: Vec<Example> = train_set[..16].to_vec();
    let mut model = small_model(8);
    let mut target = ModelBatchLoss::new(&mut model, &batch, 0.0);
    let (_, grads) = target.loss_and_gradients().unwrap();
    // The fused loss multiplies by sigmoid(y_s), so the scenario head
    // is reachable through the interest branch alone.
    let names: Vec<&str> = grads.names().collect();
    assert!(names.iter().any(|n| n.starts_with("scenario_ffn")), "{names:?}");
    let g = grads.dense("scenario_ffn.1.b", &[1]);
    assert!(g.data()[0] != 0.0);
}

#[test]
fn loss_decreases_over_five_epochs_for_every_seed() {
    let (train_set, _) = small_data();
    for seed in 1..=5u64 {
        let mut model = small_model(seed);
        let mut cfg = train_cfg(seed);
        cfg.epochs = 5;
        cfg.learning_rate = 3e-3;
        let report = train(&mut model, &train_set, &cfg).unwrap();
        let first = report.epochs.first().unwrap().l_final;
        let last = report.epochs.last().unwrap().l_final;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn gradients_match_finite_differences_on_a_tiny_model() {
    let (mut model, batch) = gradcheck_fixture(3);
    let report = check_model_gradients(&mut model, &batch, 0.5, 1e-5, 1e-4).unwrap();
    assert!(
        report.pass,
        "max rel err {} at {:?}",
        report.max_rel_err, report.worst
    );
}

#[test]
fn zero_initialized_scenario_ffn_still_passes_the_gradient_check() {
    let (mut model, batch) = gradcheck_fixture(13);
    if let Some(ffn) = model.params.scenario_ffn.as_mut() {
        for layer in &mut ffn.layers {
            layer.w.value.data_mut().fill(0.0);
            layer.b.value.data_mut().fill(0.0);
        }
    }
    let report = check_model_gradients(&mut model, &batch, 0.5, 1e-5, 1e-4).unwrap();
    assert!(report.pass, "max rel err {}", report.max_rel_err);
}

#[test]
fn empty_batch_is_rejected() {
    let mut model = small_model(1);
    assert!(check_model_gradients(&mut model, &[], 0.5, 1e-5, 1e-4).is_err());
}

#[test]
fn training_on_an_empty_dataset_is_rejected() {
    let mut model = small_model(1);
    assert!(train(&mut model, &[], &train_cfg(1)).is_err());
}

#[test]
fn train_report_serializes_with_the_documented_shape() {
    let (train_set, _) = small_data();
    let mut model = small_model(2);
    let report = train(&mut model, &train_set[..64], &train_cfg(5)).unwrap();
    let json: serde_json::Value = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert!(json["epochs"].is_array());
    assert!(json["epochs"][0]["l_uis"].is_number());
    assert!(json["epochs"][0]["l_s"].is_number());
    assert!(json["epochs"][0]["l_final"].is_number());
    assert_eq!(json["seed"], serde_json::json!(5));
    assert!(json["checksum"].is_string());
}

#[test]
fn non_finite_loss_aborts_training() {
    let (train_set, _) = small_data();
    let mut model = small_model(1);
    model.params.user_table.value.data_mut()[0] = f64::NAN;
    let err = train(&mut model, &train_set[..64], &train_cfg(1)).unwrap_err();
    assert!(matches!(err, mscan_core::train::TrainError::NonFiniteLoss { .. }));
}
