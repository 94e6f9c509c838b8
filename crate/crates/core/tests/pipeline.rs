use diveoff_core::diveoff::{train, train_baseline, Baseline, TrainConfig};
use diveoff_core::env::{dataset_read, dataset_write, default_styles, generate_dataset, normalize_states, EnvConfig};
use diveoff_core::eval::{evaluate, few_shot_adapt, EvalOptions};
use diveoff_core::models::{checkpoint_read, checkpoint_write, Checkpoint, ModelConfig};

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        total_steps: 40,
        pretrain_steps: 20,
        batch_size: 32,
        log_interval: 10,
        model: ModelConfig {
            hidden: 16,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn generate_train_save_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvConfig::default();
    let ds = normalize_states(generate_dataset(&env, &default_styles(), 5, 11).unwrap()).unwrap();
    let data_path = dir.path().join("d.bin");
    dataset_write(&ds, &data_path).unwrap();
    let ds = dataset_read(&data_path).unwrap();

    let out = train(&ds, &small_config(11), &mut |_| {}).unwrap();
    assert!(out.divergence.is_none());
    assert_eq!(out.step, 40);
    assert_eq!(out.metrics.len(), 4);

    let ckpt = Checkpoint::new(
        out.models.clone(),
        "diveoff",
        ds.norm.clone(),
        env.clone(),
        small_config(11).hash(),
        "0".repeat(64),
        out.step,
    );
    let path = dir.path().join("c.bin");
    checkpoint_write(&ckpt, &path).unwrap();
    let back = checkpoint_read(&path).unwrap();
    assert_eq!(back.models, out.models);

    let opts = EvalOptions {
        episodes: 2,
        grid: 2,
        ..Default::default()
    };
    let a = evaluate(&out.models, &ds.norm, &env, &opts).unwrap();
    let b = evaluate(&back.models, &back.header.norm, &back.header.env, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 4);
    assert_eq!(a.reaggregate().unwrap(), a.summary);

    let adapt = few_shot_adapt(&back.models, &back.header.norm, &env, 3, 0).unwrap();
    assert_eq!(adapt.probes.len(), 3);
}

#[test]
fn training_is_reproducible_per_seed() {
    let ds = normalize_states(generate_dataset(&EnvConfig::default(), &default_styles(), 3, 2).unwrap()).unwrap();
    let a = train(&ds, &small_config(5), &mut |_| {}).unwrap();
    let b = train(&ds, &small_config(5), &mut |_| {}).unwrap();
    let c = train(&ds, &small_config(6), &mut |_| {}).unwrap();
    assert_eq!(a.models, b.models);
    assert_eq!(a.metrics, b.metrics);
    assert_ne!(a.models, c.models);

    let base = train_baseline(&ds, &small_config(5), Baseline::AwaclVae, &mut |_| {}).unwrap();
    let again = train_baseline(&ds, &small_config(5), Baseline::AwaclVae, &mut |_| {}).unwrap();
    assert_eq!(base.models, again.models);
}
