mod common;

use common::{linear_panel, random_panel, separable_panel};
use dmn_learn::panel::{split, Panel, Split};
use dmn_learn::trainer::{random_search, train_model, HyperParams, SearchSpace, TrainConfig};
use dmn_learn::{Architecture, LearnError, LossKind, Objective};

fn config(arch: Architecture, kind: LossKind, epochs: usize, patience: usize) -> TrainConfig {
    let mut c = TrainConfig::new(arch, Objective::new(kind, 0.0).unwrap(), 11);
    c.trajectory_len = 16;
    c.max_epochs = epochs;
    c.patience = patience;
    c
}

fn hp(lr: f64, batch: usize) -> HyperParams {
    HyperParams {
        dropout_rate: 0.0,
        hidden_size: 1,
        minibatch_size: batch,
        learning_rate: lr,
        max_grad_norm: 10.0,
        l1_alpha: Some(1e-5),
    }
}

fn full_split(panel: &Panel, arch: Architecture) -> Split {
    split(panel, arch, None, 0.1, 16).unwrap()
}

fn single_point(lr: f64, batch: usize) -> SearchSpace {
    SearchSpace {
        dropout_rate: vec![0.2],
        hidden_size: vec![5],
        minibatch_size: vec![batch],
        learning_rate: vec![lr],
        max_grad_norm: vec![1.0],
        l1_alpha: vec![1e-4],
    }
}

#[test]
fn binary_model_learns_a_separable_sign() {
    let panel = separable_panel(3, 700, 5);
    let s = full_split(&panel, Architecture::Linear);
    let cfg = config(Architecture::Linear, LossKind::Binary, 40, 10);
    let fit = train_model(&panel, &s, &hp(1e-2, 128), &cfg, 3).unwrap();
    let ends: Vec<(usize, usize)> = s.validation.iter().map(|u| (u.asset, u.t)).collect();
    let z = fit.model.predict_windows(panel.windows(&ends, 6), ends.len()).unwrap();
    let hits = ends
        .iter()
        .zip(&z)
        .filter(|((a, t), p)| (**p > 0.5) == (panel.assets[*a].next_return[*t].unwrap() > 0.0))
        .count();
    let accuracy = hits as f64 / ends.len() as f64;
    assert!(accuracy > 0.95, "accuracy {accuracy}");
}

#[test]
fn steady_improvement_runs_every_epoch() {
    let panel = linear_panel(2, 600, 8);
    let s = full_split(&panel, Architecture::Linear);
    let cfg = config(Architecture::Linear, LossKind::Mse, 100, 25);
    let fit = train_model(&panel, &s, &hp(1e-4, 4096), &cfg, 1).unwrap();
    assert_eq!(fit.epochs_run, 100);
    assert_eq!(fit.best_epoch, 99);
    assert_eq!(fit.best_val_loss, *fit.val_curve.last().unwrap());
}

#[test]
fn best_checkpoint_has_the_lowest_validation_loss() {
    let panel = random_panel(2, 400, 9);
    for arch in [Architecture::Mlp, Architecture::Lstm] {
        let s = full_split(&panel, arch);
        let cfg = config(arch, LossKind::Sharpe, 12, 3);
        let mut h = hp(0.05, 64);
        h.hidden_size = 5;
        h.dropout_rate = 0.2;
        let fit = train_model(&panel, &s, &h, &cfg, 4).unwrap();
        let min = fit.val_curve.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(fit.best_val_loss, min);
        assert_eq!(fit.val_curve[fit.best_epoch], min);
        assert!(fit.epochs_run <= 12);
        let stopped_early = fit.epochs_run < 12;
        assert!(!stopped_early || fit.epochs_run - 1 - fit.best_epoch == 3);
    }
}

#[test]
fn training_is_deterministic() {
    let panel = random_panel(2, 300, 10);
    for arch in [Architecture::WaveNet, Architecture::Lstm] {
        let s = full_split(&panel, arch);
        let cfg = config(arch, LossKind::SharpeCost, 3, 1);
        let cfg = TrainConfig {
            objective: Objective::new(LossKind::SharpeCost, 0.001).unwrap(),
            ..cfg
        };
        let mut h = hp(1e-2, 64);
        h.hidden_size = 5;
        h.dropout_rate = 0.3;
        let a = train_model(&panel, &s, &h, &cfg, 21).unwrap();
        let b = train_model(&panel, &s, &h, &cfg, 21).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn empty_validation_set_is_an_error() {
    let panel = random_panel(1, 40, 1);
    let s = full_split(&panel, Architecture::Lstm);
    assert!(s.validation.is_empty());
    let cfg = config(Architecture::Lstm, LossKind::Mse, 3, 1);
    let err = train_model(&panel, &s, &hp(1e-3, 16), &cfg, 0).unwrap_err();
    assert!(matches!(err, LearnError::EmptyDataset(_)));
}

#[test]
fn single_point_grid_reproduces_train_model() {
    let panel = random_panel(2, 300, 12);
    let s = full_split(&panel, Architecture::Mlp);
    let mut cfg = config(Architecture::Mlp, LossKind::Sharpe, 4, 2);
    cfg.search_iters = 5;
    cfg.space = single_point(1e-2, 128);
    let res = random_search(&panel, &s, &cfg).unwrap();
    assert!(res.candidates.iter().all(|c| c.hyper == res.hyper));
    let direct = train_model(&panel, &s, &res.hyper, &cfg, cfg.seed ^ res.best_index as u64).unwrap();
    assert_eq!(direct, res.best);
}

#[test]
fn small_learning_rate_wins_on_a_convex_task() {
    let panel = linear_panel(2, 500, 13);
    let s = full_split(&panel, Architecture::Linear);
    let mut wins = 0;
    for seed in 0..10 {
        let mut cfg = config(Architecture::Linear, LossKind::Mse, 15, 5);
        cfg.seed = seed;
        cfg.search_iters = 6;
        cfg.space = SearchSpace {
            learning_rate: vec![1e-3, 1e0],
            ..single_point(1e-3, 256)
        };
        let res = random_search(&panel, &s, &cfg).unwrap();
        if res.hyper.learning_rate == 1e-3 {
            wins += 1;
        }
    }
    assert!(wins >= 9, "1e-3 won {wins} of 10 searches");
}

#[test]
fn search_is_reproducible_and_worker_invariant() {
    let panel = random_panel(2, 300, 14);
    let s = full_split(&panel, Architecture::Mlp);
    let mut cfg = config(Architecture::Mlp, LossKind::Returns, 3, 1);
    cfg.search_iters = 6;
    cfg.space.minibatch_size = vec![64, 128];
    let a = random_search(&panel, &s, &cfg).unwrap();
    let b = random_search(&panel, &s, &cfg).unwrap();
    cfg.workers = 3;
    let c = random_search(&panel, &s, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let draws: Vec<_> = a.candidates.iter().map(|c| c.hyper).collect();
    assert!(draws.windows(2).any(|w| w[0] != w[1]));
    for c in &a.candidates {
        assert!(cfg.space.learning_rate.contains(&c.hyper.learning_rate));
        assert!(cfg.space.hidden_size.contains(&c.hyper.hidden_size));
        assert!(cfg.space.dropout_rate.contains(&c.hyper.dropout_rate));
        assert_eq!(c.seed, cfg.seed ^ c.index as u64);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let panel = random_panel(1, 100, 1);
    let s = full_split(&panel, Architecture::Linear);
    let cfg = config(Architecture::Linear, LossKind::Mse, 10, 10);
    assert!(train_model(&panel, &s, &hp(1e-3, 16), &cfg, 0).is_err());
    let mut cfg = config(Architecture::Linear, LossKind::Mse, 10, 2);
    cfg.space.learning_rate.clear();
    assert!(random_search(&panel, &s, &cfg).is_err());
}
