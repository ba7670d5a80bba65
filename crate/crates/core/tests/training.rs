use aidr_core::data::{generate_synthetic, Sequence, SyntheticSpec};
use aidr_core::train::{batch_loss, Trainer};
use aidr_core::{run_training, FilterConfig, LearnableSet, TrainConfig};

fn loop_sequence(side: f64, speed: f64, radius: f64, seed: u64) -> Sequence {
    let mut spec = SyntheticSpec::urban_loop(side, speed, 1, radius).with_realistic_noise();
    spec.sideslip = 0.05;
    generate_synthetic(&spec, seed).unwrap()
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-2,
        epochs: 2,
        batch_size: 2,
        subsequence_seconds: 30.0,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_return_the_initial_parameters() {
    let train = vec![loop_sequence(60.0, 8.0, 10.0, 1)];
    let base = FilterConfig::default();
    let initial = LearnableSet::initial(0, &base, &train);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 0, ..quick_config(0) };
    let out = run_training(&train, &[], initial.clone(), &base, &cfg, Some(dir.path())).unwrap();
    assert_eq!(out.best, initial);
    assert_eq!(out.final_params, initial);
    assert!(out.history.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    assert_eq!(csv, "epoch,train_loss,val_loss\n");
}

#[test]
fn empty_dataset_is_rejected() {
    let base = FilterConfig::default();
    let initial = LearnableSet::initial(0, &base, &[]);
    assert!(run_training(&[], &[], initial, &base, &quick_config(0), None).is_err());
}

#[test]
fn same_seed_gives_identical_runs_and_checkpoints() {
    let train = vec![loop_sequence(60.0, 8.0, 10.0, 1), loop_sequence(80.0, 10.0, 12.0, 2)];
    let val = vec![loop_sequence(70.0, 9.0, 10.0, 3)];
    let base = FilterConfig::default();
    let initial = LearnableSet::initial(7, &base, &train);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run_training(&train, &val, initial.clone(), &base, &quick_config(4), Some(d1.path())).unwrap();
    let b = run_training(&train, &val, initial, &base, &quick_config(4), Some(d2.path())).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.final_params, b.final_params);
    for name in ["epoch_001.ckpt", "epoch_002.ckpt", "best.ckpt", "loss_history.csv"] {
        let x = std::fs::read(d1.path().join(name)).unwrap();
        let y = std::fs::read(d2.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    assert_eq!(LearnableSet::load(d1.path().join("epoch_002.ckpt")).unwrap(), a.final_params);
    assert!(a.final_params.sigmas().iter().all(|s| *s > 0.0));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let train = vec![loop_sequence(60.0, 8.0, 10.0, 1)];
    let base = FilterConfig::default();
    let mut params = LearnableSet::initial(0, &base, &train);
    let before = params.clone();
    let cfg = TrainConfig { learning_rate: 0.0, ..quick_config(0) };
    let mut trainer = Trainer::new(cfg, base, params.len()).unwrap();
    let batch = trainer.sample_batch(&train);
    let rep = trainer.training_step(&mut params, &batch);
    assert!(!rep.rejected);
    assert_eq!(params, before);
}

#[test]
fn one_step_from_a_poor_static_noise_does_not_hurt_on_average() {
    let train = vec![loop_sequence(80.0, 10.0, 12.0, 1), loop_sequence(60.0, 8.0, 10.0, 2)];
    // pseudo-measurements ten times less trusted than the default
    let base = FilterConfig {
        sigma_lat: 10.0,
        sigma_up: 30.0,
        ..FilterConfig::default()
    };
    let mut deltas = Vec::new();
    for seed in 0..10 {
        let mut params = LearnableSet::initial(seed, &base, &train);
        let mut trainer = Trainer::new(quick_config(100 + seed), base, params.len()).unwrap();
        let batch = trainer.sample_batch(&train);
        let before = batch_loss(&params, &base, &batch).unwrap();
        trainer.training_step(&mut params, &batch);
        let after = batch_loss(&params, &base, &batch).unwrap();
        deltas.push(after - before);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    println!("loss changes {deltas:?}, mean {mean}");
    assert!(mean <= 0.0, "mean loss change {mean}");
}
