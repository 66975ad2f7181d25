use csifb::channel::generate_samples;
use csifb::config::ExperimentConfig;
use csifb::cqi::CqiReport;
use csifb::dataset::{read_dataset, write_dataset, Dataset, Split};
use csifb::model::{Checkpoint, Model};
use csifb::rng::{purpose, substream};
use csifb::train::{
    evaluate, input_scale_for, reports_for, train, EvalConfig, TrainConfig, TrainState,
};
use csifb::Execution;
use std::path::PathBuf;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_seed7.smc1")
}

fn golden_dataset() -> Dataset {
    let mut scenario = ExperimentConfig::toy().scenario;
    scenario.seed = 7;
    let samples = generate_samples(&scenario, 16, Execution::Sequential).unwrap();
    let mut ds = Dataset::new(scenario.n_t, scenario.n_c, samples).unwrap();
    ds.scenario = Some(scenario);
    ds.assign_splits(0.5, 0.25).unwrap();
    ds
}

/// Set `UPDATE_GOLDEN=1` to rewrite the reference file.
#[test]
fn generation_matches_golden_file() {
    let bytes = golden_dataset().to_bytes().unwrap();
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden file missing; run with UPDATE_GOLDEN=1");
    assert_eq!(bytes, golden);
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.smc1");
    let ds = golden_dataset();
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.indices(Split::Train).len(), 8);
    assert_eq!(back.indices(Split::Val).len(), 4);
    assert_eq!(back.indices(Split::Test).len(), 4);
}

#[test]
fn generation_is_policy_independent() {
    let scenario = ExperimentConfig::default().scenario;
    let a = generate_samples(&scenario, 24, Execution::Sequential).unwrap();
    let b = generate_samples(&scenario, 24, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

fn tiny_run(exec: Execution) -> (Checkpoint, Vec<f64>) {
    let cfg = ExperimentConfig::toy();
    let tc = TrainConfig {
        steps: 40,
        batch_size: 8,
        ..cfg.train.clone()
    };
    let ds = golden_dataset();
    let train_set = ds.subset(Split::Train);
    let test_set = ds.subset(Split::Test);
    let mut model = Model::new(cfg.model.clone(), &mut substream(tc.seed, &[purpose::INIT])).unwrap();
    model.set_input_scale(input_scale_for(&train_set).unwrap()).unwrap();
    let reports = reports_for(&train_set, &cfg.cqi, cfg.model.cqi_mode).unwrap();
    let mut state = TrainState::new(model, &tc);
    let mut losses = Vec::new();
    train(&mut state, &train_set, &reports, &tc, exec, |log, _| {
        losses.push(log.loss);
        Ok(())
    })
    .unwrap();
    assert_eq!(losses.len(), 40);
    assert!(losses.iter().all(|l| l.is_finite()));

    let ck = state.to_checkpoint(&tc, &cfg.cqi).unwrap();
    let restored = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
    let test_reports: Vec<CqiReport> = reports_for(&test_set, &cfg.cqi, cfg.model.cqi_mode).unwrap();
    let rows = evaluate(&restored, &test_set, &test_reports, &EvalConfig::default(), exec).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.nmse_db.is_finite());
        assert!((0.0..=1.0 + 1e-12).contains(&r.sgcs));
    }
    (ck, rows.iter().map(|r| r.nmse_db).collect())
}

#[test]
fn train_checkpoint_eval_end_to_end() {
    let (seq_ck, seq_nmse) = tiny_run(Execution::Sequential);
    let (par_ck, par_nmse) = tiny_run(Execution::Parallel);
    assert_eq!(seq_ck.to_bytes().unwrap(), par_ck.to_bytes().unwrap());
    assert_eq!(seq_nmse, par_nmse);
}

#[test]
fn checkpoint_file_round_trip() {
    let cfg = ExperimentConfig::toy();
    let model = Model::new(cfg.model.clone(), &mut substream(4, &[purpose::INIT])).unwrap();
    let ck = TrainState::new(model.clone(), &cfg.train)
        .to_checkpoint(&cfg.train, &cfg.cqi)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.smck");
    ck.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();
    assert_eq!(back, ck);
    let m = Model::from_checkpoint(&back).unwrap();
    assert_eq!(m.params(), model.params());
}
