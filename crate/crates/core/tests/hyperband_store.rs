use xmap::domains::{registered, DomainPair};
use xmap::hyperband::{
    hyperband_search, run_then_return_val_loss, schedule, HyperConfig, HyperSpace, HyperbandSettings, ModelStore,
};
use xmap::training::TrainConfig;
use xmap::Error;

fn base() -> TrainConfig {
    TrainConfig {
        n_train: 64,
        n_div: 64,
        n_eval: 256,
        lambda: 0.01,
        ..TrainConfig::default()
    }
}

fn pair() -> DomainPair {
    registered("twin-moons-rotation").unwrap()
}

fn omega() -> HyperConfig {
    HyperConfig {
        depth: 2,
        width: 8,
        batch_size: 32,
        learning_rate: 5e-4,
    }
}

#[test]
fn store_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let store = ModelStore::open(dir.path()).unwrap();
    let (pair, base, omega) = (pair(), base(), omega());
    assert_eq!(store.epochs(&omega.key()).unwrap(), 0);

    let untrained = run_then_return_val_loss(&omega, 0, &pair, &base, &store).unwrap();
    assert!(untrained.is_finite());
    assert_eq!(store.epochs(&omega.key()).unwrap(), 0);
    assert!(dir.path().join(omega.key()).join("h1.model").is_file());

    let at_10 = run_then_return_val_loss(&omega, 10, &pair, &base, &store).unwrap();
    let h1_at_10 = store.load_h1(&omega).unwrap();
    // Same T again trains nothing and reproduces the value.
    assert_eq!(run_then_return_val_loss(&omega, 10, &pair, &base, &store).unwrap(), at_10);
    assert_eq!(store.load_h1(&omega).unwrap(), h1_at_10);

    run_then_return_val_loss(&omega, 30, &pair, &base, &store).unwrap();
    assert_eq!(store.epochs(&omega.key()).unwrap(), 30);
    let err = run_then_return_val_loss(&omega, 20, &pair, &base, &store).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn resuming_matches_a_fresh_store_with_the_same_history() {
    let (pair, base, omega) = (pair(), base(), omega());
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let store = ModelStore::open(dir.path()).unwrap();
        run_then_return_val_loss(&omega, 4, &pair, &base, &store).unwrap();
        let v = run_then_return_val_loss(&omega, 9, &pair, &base, &store).unwrap();
        (v, store.load_h1(&omega).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn schedule_for_r81() {
    let b = schedule(81, 3).unwrap();
    assert_eq!(b.len(), 5);
    assert_eq!((b[0].s, b[0].configs, b[0].resource), (4, 81, 1.0));
    assert_eq!((b[4].s, b[4].configs, b[4].resource), (0, 5, 81.0));
    let rungs = b[0].rungs(3);
    assert_eq!(rungs.iter().map(|r| r.0).collect::<Vec<_>>(), [81, 27, 9, 3, 1]);
    assert_eq!(rungs.last().unwrap().1, 81.0);
}

fn small_settings(space: HyperSpace) -> HyperbandSettings {
    HyperbandSettings {
        max_resource: 9,
        eta: 3,
        epochs_per_unit: 1,
        space,
        jobs: 1,
    }
}

#[test]
fn single_config_space_returns_that_config() {
    let dir = tempfile::tempdir().unwrap();
    let store = ModelStore::open(dir.path()).unwrap();
    let settings = small_settings(HyperSpace::single(&omega()));
    let result = hyperband_search(&settings, &pair(), &base(), &store).unwrap();
    assert_eq!(result.ranking.len(), 1);
    assert_eq!(result.best().config, omega());
    assert_eq!(result.best().final_t, 9);
    assert_eq!(store.epochs(&omega().key()).unwrap(), 9);
}

#[test]
fn search_is_deterministic_and_accounts_epochs() {
    let space = HyperSpace {
        depth: (1, 3),
        widths: vec![8],
        batch_sizes: vec![32, 64],
        learning_rate: (2e-4, 1e-3),
    };
    let run = |jobs: usize| {
        let dir = tempfile::tempdir().unwrap();
        let store = ModelStore::open(dir.path()).unwrap();
        let settings = HyperbandSettings {
            jobs,
            ..small_settings(space.clone())
        };
        let result = hyperband_search(&settings, &pair(), &base(), &store).unwrap();
        for e in &result.ranking {
            assert_eq!(store.epochs(&e.config.key()).unwrap(), e.final_t, "{}", e.config.key());
        }
        result
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(2));
    let best = a.best().loss;
    assert!(a.ranking.iter().all(|e| best <= e.loss));
    assert_eq!(a.brackets, schedule(9, 3).unwrap());
}
