use nrx_harness::checkpoint::Checkpoint;
use nrx_harness::config::{ExperimentConfig, Preset};
use nrx_harness::train::{batch_draw, simulate_batch, train_step, TrainState, Trainer};
use nrx_harness::HarnessError;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Toy);
    cfg.train.batch_size = 4;
    cfg.train.steps = 20;
    cfg.train.validation_every = 5;
    cfg.train.validation_ttis = 4;
    cfg
}

fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn untrained_validation_loss_is_chance_level() {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.train.validation_ttis = 16;
    let trainer = Trainer::new(&cfg, None).unwrap();
    let state = TrainState::new(&cfg).unwrap();
    let v = trainer.validate(&state).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 0.1, "step-0 BCE {v}");
}

#[test]
fn short_run_reduces_loss() {
    let mut cfg = tiny();
    cfg.train.steps = 60;
    cfg.train.validation_every = 60;
    let trainer = Trainer::new(&cfg, None).unwrap();
    let mut state = TrainState::new(&cfg).unwrap();
    trainer.run(&mut state, cfg.train.steps, |_, _| {}).unwrap();
    let vals: Vec<f64> = state.trace.iter().filter_map(|r| r.val_loss).collect();
    assert_eq!(vals.len(), 2);
    assert!(vals[1] < vals[0] - 0.05, "{vals:?}");
    assert_eq!(state.best_val, vals[1]);
}

#[test]
fn resumed_training_is_bit_exact() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.nrxc");
    let (full, resumed) = single_thread(|| {
        let trainer = Trainer::new(&cfg, None).unwrap();
        let mut full = TrainState::new(&cfg).unwrap();
        trainer.run(&mut full, 20, |_, _| {}).unwrap();

        let mut first = TrainState::new(&cfg).unwrap();
        trainer.run(&mut first, 10, |_, _| {}).unwrap();
        Checkpoint::from_state(&cfg, &first).save(&path).unwrap();
        drop(first);
        let ck = Checkpoint::load(&path).unwrap();
        ck.check_compatible(&cfg, false).unwrap();
        let mut resumed = TrainState::from_checkpoint(&cfg, ck).unwrap();
        trainer.run(&mut resumed, 20, |_, _| {}).unwrap();
        (full, resumed)
    });
    assert_eq!(full.trace.len(), resumed.trace.len());
    for (a, b) in full.trace.iter().zip(&resumed.trace) {
        assert_eq!(a.step, b.step);
        assert_eq!(
            a.train_loss.to_bits(),
            b.train_loss.to_bits(),
            "step {}",
            a.step
        );
        assert_eq!(a.val_loss.map(f64::to_bits), b.val_loss.map(f64::to_bits));
    }
    for (a, b) in full
        .net
        .params()
        .tensors()
        .iter()
        .zip(resumed.net.params().tensors())
    {
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn training_is_independent_of_thread_count() {
    let cfg = tiny();
    let run = || {
        let trainer = Trainer::new(&cfg, None).unwrap();
        let mut s = TrainState::new(&cfg).unwrap();
        trainer.run(&mut s, 6, |_, _| {}).unwrap();
        s.trace
            .iter()
            .map(|r| r.train_loss.to_bits())
            .collect::<Vec<_>>()
    };
    let one = single_thread(run);
    let many = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(run);
    assert_eq!(one, many);
}

#[test]
fn checkpoint_round_trips_and_refuses_other_models() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    Trainer::new(&cfg, None)
        .unwrap()
        .run(&mut state, 3, |_, _| {})
        .unwrap();
    let ck = Checkpoint::from_state(&cfg, &state);
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(bytes, again);
    assert_eq!(back.step, 3);
    assert_eq!(back.config, cfg);

    let mut other = cfg.clone();
    other.network.filters = 16;
    assert!(matches!(
        back.check_compatible(&other, false),
        Err(HarnessError::HashMismatch { .. })
    ));
    assert!(back.check_compatible(&other, true).is_ok());
    // training hyperparameters do not change the model hash
    let mut lr = cfg.clone();
    lr.train.learning_rate = 0.5;
    assert!(back.check_compatible(&lr, false).is_ok());

    assert!(matches!(
        Checkpoint::read_from(&mut &bytes[..40]),
        Err(HarnessError::Format(_))
    ));
}

#[test]
fn non_finite_loss_aborts_without_touching_parameters() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    for t in state.net.params_mut().tensors_mut() {
        t.data_mut()[0] = f32::NAN;
    }
    let before: Vec<Vec<u32>> = state
        .net
        .params()
        .tensors()
        .iter()
        .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
        .collect();
    let draws: Vec<_> = (0..2).map(|i| batch_draw(&cfg, None, 0, i)).collect();
    let sims = simulate_batch(&cfg, &draws).unwrap();
    let err = train_step(&mut state, &sims).unwrap_err();
    assert!(
        matches!(err, HarnessError::Diverged { step: 0, .. }),
        "{err}"
    );
    assert_eq!(state.step, 0);
    let after: Vec<Vec<u32>> = state
        .net
        .params()
        .tensors()
        .iter()
        .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn batches_depend_only_on_seed_step_and_index() {
    let cfg = tiny();
    assert_eq!(batch_draw(&cfg, None, 7, 2), batch_draw(&cfg, None, 7, 2));
    assert_ne!(
        batch_draw(&cfg, None, 7, 2).seed,
        batch_draw(&cfg, None, 8, 2).seed
    );
    assert_ne!(
        batch_draw(&cfg, None, 7, 2).seed,
        batch_draw(&cfg, None, 7, 3).seed
    );
}
