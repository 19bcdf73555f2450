//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured values and runtime; the process fails if any criterion does.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use dmn_autodiff::{Graph, Tensor};
use dmn_cli::pipeline::{backtest, classical_positions, evaluate, Evaluation};
use dmn_cli::{RunConfig, Strategy};
use dmn_core::backtest::{
    apply_costs, cost_sweep, rescale_to_target, tsmom_returns, turnover, RescaleMode, DEFAULT_COST_GRID_BPS,
};
use dmn_core::market_data::{ewm_std, AssetSeries, MarketData, VOL_TARGET};
use dmn_core::metrics::{annualised_sharpe, max_drawdown, sample_std};
use dmn_core::rules::{macd_half_life, phi, PositionFrame};
use dmn_core::synth::{business_days, generate, SynthConfig};
use dmn_learn::gradcheck::check_gradients;
use dmn_learn::objectives::sharpe_loss;
use dmn_learn::panel::{Panel, PanelAsset, Targets, Unit};
use dmn_learn::trainer::SearchSpace;
use dmn_learn::walk_forward::walk_forward;
use dmn_learn::{Architecture, LossKind, Model, ModelSpec, Objective, WalkForwardConfig, WalkForwardResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let pass = out.pass && in_time;
    let budget = budget.map(|b| format!(" < {}s", b.as_secs())).unwrap_or_default();
    println!(
        "[{}] criterion {id}: {name}: {} ({:.1}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn synth(config: SynthConfig) -> MarketData {
    MarketData::build(generate(&config).unwrap().0).unwrap()
}

fn trend_data() -> MarketData {
    synth(SynthConfig::default())
}

fn noise_data() -> MarketData {
    synth(SynthConfig {
        trend_fraction: 0.0,
        ..SynthConfig::default()
    })
}

fn random_panel(seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 90;
    let dates = business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), n);
    let assets = (0..2)
        .map(|a| {
            let rows = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5))).collect();
            let next = (0..n).map(|_| Some(rng.random_range(-0.03..0.03))).collect();
            let sigma = (0..n).map(|_| Some(rng.random_range(0.08..0.3))).collect();
            PanelAsset::new(format!("A{a}"), dates.clone(), rows, vec![true; n], next, sigma).unwrap()
        })
        .collect();
    Panel { assets }
}

fn gradient_correctness() -> Outcome {
    let panel = random_panel(31);
    let mut worst = (0.0f64, String::new());
    let mut pairs = 0;
    for arch in Architecture::ALL {
        let (units, steps) = if arch.is_recurrent() {
            let starts = [(0, 0), (0, 30), (1, 11), (1, 70)];
            (starts.map(|(asset, t)| Unit { asset, t }).to_vec(), 8)
        } else {
            let ends = [(0, 64), (0, 85), (1, 62), (1, 89)];
            (ends.map(|(asset, t)| Unit { asset, t }).to_vec(), 1)
        };
        for kind in LossKind::ALL {
            let cost = if kind == LossKind::SharpeCost { 0.001 } else { 0.0 };
            let objective = Objective::new(kind, cost).unwrap();
            let spec = ModelSpec::new(arch, 5, kind.head(), 0.0).unwrap();
            let model = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(pairs));
            let alpha = (arch == Architecture::Linear).then_some(1e-3);
            let g = check_gradients(&model, &panel, &units, steps, &objective, alpha, 1e-5, 5).unwrap();
            if g.max_rel_error >= worst.0 {
                worst = (g.max_rel_error, format!("{arch}/{kind}"));
            }
            pairs += 1;
        }
    }
    Outcome {
        pass: worst.0 < 1e-4 && pairs == 20,
        detail: format!("{pairs} pairs, max relative error {:.2e} ({}) vs 1e-4", worst.0, worst.1),
    }
}

fn ewm_oracle(xs: &[f64], span: usize, t: usize) -> f64 {
    let a = 2.0 / (span as f64 + 1.0);
    let w: Vec<f64> = (0..=t).map(|k| (1.0 - a).powi((t - k) as i32)).collect();
    let total: f64 = w.iter().sum();
    let mean = (0..=t).map(|k| w[k] * xs[k]).sum::<f64>() / total;
    ((0..=t).map(|k| w[k] * (xs[k] - mean).powi(2)).sum::<f64>() / total).sqrt()
}

fn oracle_equivalences() -> Outcome {
    let data = synth(SynthConfig {
        n_assets: 6,
        n_days: 900,
        ..SynthConfig::default()
    });
    let pos = classical_positions(Strategy::Macd, &data, false).unwrap();

    let strat = tsmom_returns(&pos, &data.returns, &data.vols, VOL_TARGET).unwrap();
    let mut by_date: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (i, a) in data.assets.iter().enumerate() {
        let p = a.prices();
        for t in 0..a.len().saturating_sub(1) {
            if let (Some(x), Some(s)) = (pos.assets[i].positions[t], data.vols.assets[i].sigma[t]) {
                let e = by_date.entry(a.dates()[t]).or_default();
                e.0 += x * VOL_TARGET / s * (p[t + 1] / p[t] - 1.0);
                e.1 += 1;
            }
        }
    }
    let mut port_err = if by_date.len() == strat.portfolio.len() { 0.0f64 } else { f64::INFINITY };
    for ((d, r), (od, (sum, n))) in strat.portfolio.dates.iter().zip(&strat.portfolio.returns).zip(&by_date) {
        port_err = port_err.max(if d == od { (r - sum / *n as f64).abs() } else { f64::INFINITY });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..800).map(|_| rng.random_range(-0.05..0.05)).collect();
    let mut ewm_err = 0.0f64;
    for (t, v) in ewm_std(&xs, 60).unwrap().iter().enumerate() {
        if let Some(v) = v {
            let o = ewm_oracle(&xs, 60, t);
            ewm_err = ewm_err.max((v - o).abs() / o);
        }
    }

    let mut mdd_mismatch = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..80);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let mut w = vec![1.0];
        for x in &r {
            w.push(w.last().unwrap() * (1.0 + x));
        }
        let mut dd = 0.0f64;
        for i in 0..w.len() {
            for j in i..w.len() {
                dd = dd.max((w[i] - w[j]) / w[i]);
            }
        }
        if max_drawdown(&r).unwrap() != dd {
            mdd_mismatch += 1;
        }
    }

    let z = turnover(&pos, &data.vols, VOL_TARGET).unwrap();
    let mut zeta_err = 0.0f64;
    for (i, a) in z.assets.iter().enumerate() {
        let x = &pos.assets[i].positions;
        let s = &data.vols.assets[i].sigma;
        for t in 0..a.zeta.len() {
            let prev = if t > 0 { x[t - 1].zip(s[t - 1]).map(|(x, s)| x / s) } else { None };
            let hand = x[t].zip(s[t]).map(|(x, s)| VOL_TARGET * (x / s - prev.unwrap_or(0.0)).abs());
            zeta_err = zeta_err.max(match (a.zeta[t], hand) {
                (Some(g), Some(h)) => (g - h).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            });
        }
    }
    Outcome {
        pass: port_err <= 1e-12 && ewm_err <= 1e-10 && mdd_mismatch == 0 && zeta_err <= 1e-12,
        detail: format!(
            "portfolio {port_err:.1e} (<=1e-12), EWM std {ewm_err:.1e} (<=1e-10), MDD mismatches {mdd_mismatch}/500, turnover {zeta_err:.1e} (<=1e-12)"
        ),
    }
}

fn formula_spot_values() -> Outcome {
    let peak = phi(2f64.sqrt());
    let grid_max = (-6000..=6000).map(|k| phi(k as f64 * 1e-3)).fold(f64::NEG_INFINITY, f64::max);
    let hl = macd_half_life(8);
    let mut g = Graph::new();
    let x = g.param(Tensor::column(vec![1.0; 3]));
    let t = Targets {
        rows: 3,
        cols: 1,
        next_return: vec![0.01, 0.02, -0.01],
        sigma: vec![VOL_TARGET; 3],
        prev_scale: vec![0.0; 3],
    };
    let loss = sharpe_loss(&mut g, x, &t).unwrap();
    let sharpe = g.value(loss).item().unwrap();
    Outcome {
        pass: (peak - 0.96378).abs() <= 1e-5
            && grid_max <= peak + 1e-12
            && (hl - 5.191).abs() <= 1e-3
            && (sharpe + 8.4852).abs() <= 1e-3,
        detail: format!("phi(sqrt 2) = {peak:.6}, grid max {grid_max:.6}, half-life(8) = {hl:.4}, Sharpe loss = {sharpe:.4}"),
    }
}

fn annual_vol(xs: &[f64]) -> f64 {
    sample_std(xs).unwrap_or(0.0) * 252f64.sqrt()
}

fn volatility_targeting() -> Outcome {
    let data = synth(SynthConfig {
        n_days: 2000,
        ..SynthConfig::default()
    });
    let mut vols = Vec::new();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut note = |v: f64, what: String, vols: &mut Vec<f64>| {
        let gap = (v - VOL_TARGET).abs();
        if gap >= worst.0 {
            worst = (gap, format!("{what} {v:.3}"));
        }
        vols.push(v);
    };
    for strategy in [Strategy::LongOnly, Strategy::Sgn, Strategy::Macd] {
        let pos = classical_positions(strategy, &data, false).unwrap();
        let strat = tsmom_returns(&pos, &data.returns, &data.vols, VOL_TARGET).unwrap();
        if strategy != Strategy::Macd {
            for a in &strat.assets {
                let r: Vec<f64> = a.captured.iter().flatten().copied().collect();
                note(annual_vol(&r), format!("{strategy}/{}", a.asset_id), &mut vols);
            }
        }
        let rescaled = rescale_to_target(&strat.portfolio, VOL_TARGET, RescaleMode::Causal).unwrap();
        note(annual_vol(&rescaled.returns), format!("{strategy} rescaled portfolio"), &mut vols);
    }
    Outcome {
        pass: vols.iter().all(|v| (0.10..=0.20).contains(v)),
        detail: format!("{} series in [0.10, 0.20]; furthest from 0.15: {}", vols.len(), worst.1),
    }
}

fn config(strategy: Strategy, seed: u64) -> RunConfig {
    RunConfig {
        strategy,
        seed,
        workers: 4,
        ..RunConfig::default()
    }
}

fn run_strategy(cfg: &RunConfig, data: &MarketData) -> Evaluation {
    match backtest(cfg, data) {
        Ok(o) => o.evaluation,
        Err((e, _)) => panic!("{}: {e}", cfg.label()),
    }
}

fn directional_learning(learned: &mut Vec<(String, PositionFrame)>) -> Outcome {
    let trend = trend_data();
    let mut linear = config(Strategy::Linear, 7);
    linear.loss = Some(LossKind::Sharpe);
    let dmn = run_strategy(&linear, &trend);
    let sgn = run_strategy(&config(Strategy::Sgn, 7), &trend);
    let (d, s) = (dmn.perf_raw.sharpe.unwrap_or(f64::NAN), sgn.perf_raw.sharpe.unwrap_or(f64::NAN));
    learned.push(("linear_sharpe on trend data".into(), dmn.positions.clone()));
    let trend_ok = d >= s - 0.1 && d > 0.0 && s > 0.0;

    let noise = noise_data();
    let mut noise_ok = true;
    let mut noise_detail = Vec::new();
    let mut band = 0.0;
    for strategy in [Strategy::LongOnly, Strategy::Sgn, Strategy::Macd, Strategy::Linear] {
        let mut cfg = config(strategy, 7);
        if strategy == Strategy::Linear {
            cfg.loss = Some(LossKind::Sharpe);
        }
        let e = run_strategy(&cfg, &noise);
        band = 1.96 * (252.0 / e.perf_raw.n_days as f64).sqrt();
        let sharpe = e.perf_raw.sharpe.unwrap_or(0.0);
        noise_ok &= sharpe.abs() <= band;
        noise_detail.push(format!("{strategy} {sharpe:.2}"));
        if strategy == Strategy::Linear {
            learned.push(("linear_sharpe on noise data".into(), e.positions.clone()));
        }
    }
    Outcome {
        pass: trend_ok && noise_ok,
        detail: format!(
            "trend: linear DMN Sharpe {d:.3} vs sgn {s:.3} (need >= sgn - 0.1, both > 0); noise: {} within +/-{band:.2}",
            noise_detail.join(", ")
        ),
    }
}

/// Paired training seeds, fixed in advance, and a reduced search space.
const REGULARISATION_SEEDS: [u64; 5] = [7, 8, 9, 10, 11];

fn regularised(cost_bps: f64, seed: u64) -> RunConfig {
    let mut cfg = config(Strategy::Lstm, seed);
    cfg.loss = Some(LossKind::SharpeCost);
    cfg.cost_bps = cost_bps;
    cfg.train.search_iters = Some(16);
    cfg.train.max_epochs = Some(60);
    cfg.train.patience = Some(15);
    cfg.train.space = Some(SearchSpace {
        hidden_size: vec![5, 10, 20],
        ..SearchSpace::default()
    });
    cfg
}

fn turnover_regularisation() -> Outcome {
    let data = trend_data();
    let cost = 10e-4;
    let mut rows = Vec::new();
    for seed in REGULARISATION_SEEDS {
        let pair: Vec<(f64, f64)> = [0.0, 10.0]
            .iter()
            .map(|&bps| {
                let e = run_strategy(&regularised(bps, seed), &data);
                let net = apply_costs(&e.strategy, &e.turnover, cost).unwrap();
                (e.mean_turnover, annualised_sharpe(&net.portfolio.returns).unwrap_or(f64::NAN))
            })
            .collect();
        rows.push((pair[0], pair[1]));
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&((f64, f64), (f64, f64))) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (z0, z10) = (mean(&|r| r.0 .0), mean(&|r| r.1 .0));
    let (s0, s10) = (mean(&|r| r.0 .1), mean(&|r| r.1 .1));
    let per_seed: Vec<String> = rows
        .iter()
        .zip(REGULARISATION_SEEDS)
        .map(|(((za, sa), (zb, sb)), seed)| format!("seed {seed}: {za:.3}/{sa:.2} -> {zb:.3}/{sb:.2}"))
        .collect();
    Outcome {
        pass: z10 < z0 && s10 >= s0,
        detail: format!(
            "mean over {} paired seeds: turnover {z0:.4} -> {z10:.4}, Sharpe net of 10 bps {s0:.3} -> {s10:.3} [{}]",
            rows.len(),
            per_seed.join("; ")
        ),
    }
}

fn mutate_after(assets: &[AssetSeries], from: NaiveDate) -> Vec<AssetSeries> {
    assets
        .iter()
        .map(|a| {
            let prices = a
                .dates()
                .iter()
                .zip(a.prices())
                .enumerate()
                .map(|(t, (d, p))| if *d >= from { p * (1.5 + 0.3 * (t as f64).sin()) } else { *p })
                .collect();
            AssetSeries::new(a.asset_id(), a.dates().to_vec(), prices).unwrap()
        })
        .collect()
}

fn predictions_before(r: &WalkForwardResult, cutoff: NaiveDate) -> Vec<Option<f64>> {
    r.predictions
        .iter()
        .flat_map(|p| p.dates.iter().zip(&p.z).filter(move |(d, _)| **d < cutoff).map(|(_, z)| *z))
        .collect()
}

fn models(r: &WalkForwardResult) -> Vec<&Model> {
    r.fits.iter().map(|f| &f.search.best.model).collect()
}

fn out_of_sample_purity() -> Outcome {
    let assets = generate(&SynthConfig {
        n_assets: 3,
        n_days: 3915,
        ..SynthConfig::default()
    })
    .unwrap()
    .0;
    let mut checks = Vec::new();
    for arch in [Architecture::Mlp, Architecture::Lstm] {
        let mut cfg = config(Strategy::Mlp, 3).walk_forward_config().unwrap();
        cfg.train.architecture = arch;
        cfg.train.max_epochs = 3;
        cfg.train.patience = 1;
        cfg.train.search_iters = 2;
        cfg.train.space.hidden_size = vec![5, 10];
        let wf = |assets: Vec<AssetSeries>, cfg: &WalkForwardConfig| {
            walk_forward(&MarketData::build(assets).unwrap(), cfg).unwrap()
        };
        let base = wf(assets.clone(), &cfg);
        let [b1, b2] = base.boundaries[..] else {
            return Outcome {
                pass: false,
                detail: format!("expected two boundaries, got {:?}", base.boundaries),
            };
        };
        let late = wf(mutate_after(&assets, b2), &cfg);
        let mid = wf(mutate_after(&assets, b1), &cfg);
        let causal = base.predictions.iter().all(|p| {
            p.dates.iter().zip(&p.z).all(|(d, z)| z.is_none() || *d >= b1)
        });
        checks.push((
            arch,
            predictions_before(&base, b2) == predictions_before(&late, b2),
            models(&base) == models(&late),
            models(&base)[0] == models(&mid)[0],
            base.predictions != late.predictions && models(&base)[1] != models(&mid)[1],
            causal,
        ));
    }
    let pass = checks.iter().all(|c| c.1 && c.2 && c.3 && c.4 && c.5);
    let detail = checks
        .iter()
        .map(|(a, p, m, e, sens, c)| {
            format!("{a}: earlier predictions unchanged {p}, fitted models unchanged {m}, earlier block fit unchanged {e}, mutation detected downstream {sens}, no prediction before first boundary {c}")
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn cost_monotonicity(learned: &[(String, PositionFrame)]) -> Outcome {
    let mut series = Vec::new();
    for (label, data) in [("trend", trend_data()), ("noise", noise_data())] {
        let bounds = dmn_cli::pipeline::boundaries(&data, 5).unwrap();
        for strategy in [Strategy::LongOnly, Strategy::Sgn, Strategy::Macd] {
            let pos = classical_positions(strategy, &data, false).unwrap();
            let e = evaluate(strategy.name(), &pos, &data, &bounds, 0.0).unwrap();
            series.push((format!("{strategy} on {label} data"), e.cost_sweep));
        }
        for (name, pos) in learned.iter().filter(|(n, _)| n.ends_with(&format!("{label} data"))) {
            let strat = tsmom_returns(pos, &data.returns, &data.vols, VOL_TARGET).unwrap();
            let z = turnover(pos, &data.vols, VOL_TARGET).unwrap();
            series.push((name.clone(), cost_sweep(&strat, &z, &DEFAULT_COST_GRID_BPS, (None, None)).unwrap()));
        }
    }
    let bad: Vec<&String> = series
        .iter()
        .filter(|(_, pts)| {
            pts.windows(2)
                .any(|w| !matches!((w[0].sharpe, w[1].sharpe), (Some(a), Some(b)) if b <= a))
        })
        .map(|(n, _)| n)
        .collect();
    Outcome {
        pass: bad.is_empty() && series.len() >= 8,
        detail: format!(
            "{} strategies swept over {:?} bps; violations: {}",
            series.len(),
            DEFAULT_COST_GRID_BPS,
            if bad.is_empty() { "none".to_string() } else { format!("{bad:?}") }
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut learned = Vec::new();
    let results = [
        run(1, "gradient correctness", Some(secs(120)), gradient_correctness),
        run(2, "oracle equivalences", Some(secs(60)), oracle_equivalences),
        run(3, "formula spot values", None, formula_spot_values),
        run(4, "volatility targeting", Some(secs(60)), volatility_targeting),
        run(5, "directional learning", Some(secs(600)), || directional_learning(&mut learned)),
        run(6, "turnover regularisation", Some(secs(900)), turnover_regularisation),
        run(7, "out-of-sample purity", Some(secs(60)), out_of_sample_purity),
        run(8, "cost monotonicity", None, || cost_monotonicity(&learned)),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
