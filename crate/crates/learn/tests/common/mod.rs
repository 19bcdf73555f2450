#![allow(dead_code)]

use chrono::NaiveDate;
use dmn_core::synth::business_days;
use dmn_learn::panel::{Panel, PanelAsset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap()
}

pub fn random_panel(n_assets: usize, n_days: usize, seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = business_days(start(), n_days);
    let assets = (0..n_assets)
        .map(|a| {
            let rows = (0..n_days).map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5))).collect();
            let next = (0..n_days).map(|_| Some(rng.random_range(-0.03..0.03))).collect();
            let sigma = (0..n_days).map(|_| Some(rng.random_range(0.08..0.3))).collect();
            PanelAsset::new(format!("A{a}"), dates.clone(), rows, vec![true; n_days], next, sigma).unwrap()
        })
        .collect();
    Panel { assets }
}

/// Next return shares the sign of the first feature of the current row.
pub fn separable_panel(n_assets: usize, n_days: usize, seed: u64) -> Panel {
    let mut panel = random_panel(n_assets, n_days, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for asset in &mut panel.assets {
        let next = asset
            .rows
            .iter()
            .map(|r| Some(r[0].signum() * rng.random_range(0.002..0.02)))
            .collect();
        *asset = PanelAsset::new(
            asset.asset_id.clone(),
            asset.dates.clone(),
            asset.rows.clone(),
            asset.valid.clone(),
            next,
            asset.sigma.clone(),
        )
        .unwrap();
    }
    panel
}

/// Next return is a noisy linear function of the current row.
pub fn linear_panel(n_assets: usize, n_days: usize, seed: u64) -> Panel {
    let mut panel = random_panel(n_assets, n_days, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    for asset in &mut panel.assets {
        let next = asset
            .rows
            .iter()
            .map(|r| Some(0.004 * (r[0] - 0.5 * r[3]) + rng.random_range(-0.004..0.004)))
            .collect();
        let sigma = vec![Some(0.16); asset.len()];
        *asset = PanelAsset::new(
            asset.asset_id.clone(),
            asset.dates.clone(),
            asset.rows.clone(),
            asset.valid.clone(),
            next,
            sigma,
        )
        .unwrap();
    }
    panel
}
