//! Engine-level structural properties: mode domination, composition
//! consistency, padding sufficiency, worker independence, and grid
//! refinement stability.

use riskprice::analytics::{bachelier_butterfly, Payoff};
use riskprice::engine::{
    convergence_table, iterate_ask, padded_grid, run_ask_steps, EngineConfig, Grid1D,
    IterationMode,
};
use riskprice::models::{make_binomial, make_uncertain_binomial};
use riskprice::risk::RiskProfile;

const STRIKES: (f64, f64, f64) = (0.9, 1.0, 1.1);
const MU: f64 = 0.05;

fn butterfly() -> Payoff {
    Payoff::butterfly(STRIKES.0, STRIKES.1, STRIKES.2).unwrap()
}

fn profile() -> RiskProfile {
    RiskProfile::unconstrained(1.0).unwrap()
}

fn small_config(n: usize, maturity: f64) -> EngineConfig {
    let mut config = EngineConfig::new(0.9, 1.1, n, maturity);
    config.dx = 1e-3;
    config.workers = 1;
    config
}

/// Interpolated-optimizer mode evaluates the risk functional at feasible but
/// suboptimal hedges, so it can only raise the ask, never lower it.
#[test]
fn optinterp_never_undercuts_direct_mode() {
    let pay = butterfly();
    let model = make_uncertain_binomial(0.2, 0.03, 3).unwrap();
    let prof = profile();
    let direct = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &small_config(5, 0.05)).unwrap();
    for stride in [2, 8] {
        let mut config = small_config(5, 0.05);
        config.mode = IterationMode::OptInterp {
            coarse_stride: stride,
        };
        let coarse = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &config).unwrap();
        let mut max_onesided = f64::NEG_INFINITY;
        for (c, d) in coarse.values.iter().zip(&direct.values) {
            assert!(
                c >= &(d - 1e-10),
                "stride {stride} produced an ask {c} below the direct ask {d}"
            );
            max_onesided = max_onesided.max(c - d);
        }
        assert!(
            max_onesided < 1e-3,
            "stride {stride} ask drifted {max_onesided:.3e} above direct mode"
        );
    }
}

/// Running 2k steps equals running k steps, re-tabulating the intermediate
/// curve as a payoff, and running k more, up to interpolation error.
#[test]
fn composition_of_half_runs_matches_the_full_run() {
    let pay = butterfly();
    let model = make_uncertain_binomial(0.2, 0.03, 3).unwrap();
    let prof = profile();

    // First leg on a wider target so the second leg reads interior values only.
    let mut leg1 = EngineConfig::new(0.85, 1.15, 5, 0.05);
    leg1.dx = 1e-3;
    let first = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &leg1).unwrap();

    let second = iterate_ask(
        |x| first.full.eval(x),
        &model,
        &prof,
        MU,
        &small_config(5, 0.05),
    )
    .unwrap();
    let full = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &small_config(10, 0.1)).unwrap();

    assert_eq!(second.xs.len(), full.xs.len());
    let mut sup = 0.0f64;
    for (a, b) in second.values.iter().zip(&full.values) {
        sup = sup.max((a - b).abs());
    }
    assert!(sup <= 1e-6, "composition differs from the full run by {sup:.3e}");
}

/// The padding formula already covers the reachable cone: growing the grid
/// by another half pad on each side must not move target values.
#[test]
fn inflated_padding_leaves_target_values_unchanged() {
    let pay = butterfly();
    let model = make_uncertain_binomial(0.2, 0.03, 3).unwrap();
    let prof = profile();
    let config = small_config(5, 0.05);
    let h = config.step();

    let base = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &config).unwrap();

    let pad = MU.abs() * config.maturity
        + model.support_radius() * (config.n as f64 * config.maturity).sqrt();
    let extra = (0.5 * pad / config.dx).ceil() * config.dx;
    let grid = padded_grid(
        config.target_lo,
        config.target_hi,
        config.n,
        config.maturity,
        MU,
        model.support_radius(),
        config.dx,
    )
    .unwrap();
    let inflated = Grid1D::new(grid.lo() - extra, grid.hi() + extra, config.dx).unwrap();
    let initial: Vec<f64> = inflated.xs().iter().map(|&x| pay.eval(x)).collect();
    let wide = run_ask_steps(
        &inflated,
        initial,
        &model,
        &prof,
        MU,
        h,
        config.n,
        IterationMode::Direct,
        1,
    )
    .unwrap();

    let mut sup = 0.0f64;
    for (i, &x) in base.xs.iter().enumerate() {
        sup = sup.max((wide.eval(x) - base.values[i]).abs());
    }
    assert!(
        sup <= 1e-10,
        "inflating the padding moved target values by {sup:.3e}"
    );
}

/// Chunked parallel sweeps only change warm-start seeds, which the optimizer
/// tolerance makes invisible at the price level.
#[test]
fn worker_count_does_not_change_prices() {
    let pay = butterfly();
    let model = make_uncertain_binomial(0.2, 0.03, 5).unwrap();
    let prof = profile();
    let single = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &small_config(4, 0.04)).unwrap();
    for workers in [2, 3] {
        let mut config = small_config(4, 0.04);
        config.workers = workers;
        let multi = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &config).unwrap();
        let mut sup = 0.0f64;
        for (a, b) in multi.values.iter().zip(&single.values) {
            sup = sup.max((a - b).abs());
        }
        assert!(
            sup <= 1e-8,
            "{workers} workers moved prices by {sup:.3e} against a single worker"
        );
    }
}

/// Halving dx in the reference configuration barely moves the ask curve.
#[test]
fn grid_refinement_is_stable() {
    let pay = butterfly();
    let model = make_binomial(0.2).unwrap();
    let prof = profile();
    let mut coarse_cfg = EngineConfig::new(0.8, 1.2, 200, 0.5);
    coarse_cfg.dx = 1e-3;
    let mut fine_cfg = coarse_cfg.clone();
    fine_cfg.dx = 5e-4;

    let coarse = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &coarse_cfg).unwrap();
    let fine = iterate_ask(|x| pay.eval(x), &model, &prof, MU, &fine_cfg).unwrap();

    // Every coarse target node is also a fine target node (even indices).
    let mut sup = 0.0f64;
    for (i, &x) in coarse.xs.iter().enumerate() {
        let j = 2 * i;
        assert!((fine.xs[j] - x).abs() < 1e-9);
        sup = sup.max((fine.values[j] - coarse.values[i]).abs());
    }
    assert!(sup <= 5e-3, "halving dx moved the ask curve by {sup:.3e}");
}

/// More steps bring the single-scenario ask closer to the closed form.
#[test]
fn step_refinement_approaches_the_closed_form() {
    let pay = butterfly();
    let model = make_binomial(0.2).unwrap();
    let prof = profile();
    let rows = convergence_table(
        |x| pay.eval(x),
        &model,
        &prof,
        MU,
        1.0,
        0.5,
        &[25, 50, 100, 200],
        1e-3,
        1,
    )
    .unwrap();
    let oracle = bachelier_butterfly(1.0, STRIKES, 0.2, 0.5).unwrap();
    let first = (rows[0].1 - oracle).abs();
    let last = (rows[3].1 - oracle).abs();
    assert!(
        last < first,
        "n=200 error {last:.3e} is not below the n=25 error {first:.3e}"
    );
}
