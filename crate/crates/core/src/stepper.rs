//! One-step pricing operators built on the trading-adjusted risk functional.
//!
//! For a time step `h`, drift `mu` and continuation function `f`, the seller's
//! (ask) operator charges the hedged risk of the continuation, normalized so
//! that pricing the zero claim costs nothing:
//!
//! ```text
//!     ask(f)(x) = inf_theta rho[f(x + D) - theta*D] - c(h),
//!     c(h)      = inf_theta rho[-theta*D],          D = h*mu + sqrt(h)*z.
//! ```
//!
//! The buyer's (bid) operator is the algebraic dual `-ask(-f)`, implemented
//! literally that way so the duality holds bit-for-bit. The worst-case
//! operator drops risk aversion and hedging entirely and takes the upper
//! expectation of `f(x + sqrt(h)*z)` (no drift).
//!
//! `c(h)` does not depend on the state, so a [`StepContext`] computes it once
//! and caches it together with the flattened atom table; grid sweeps then pay
//! only one inner minimization per node.

use crate::error::{PricingError, Result};
use crate::models::{expect_1d, SublinearModel};
use crate::risk::{
    annotate_divergence, validate_step_inputs, FactorTable, HedgeResult, MinimizeOutcome,
    RiskProfile, DEFAULT_MAX_ITER, DEFAULT_THETA_TOL,
};

/// Per-step cache: model, risk profile, step geometry, the normalization
/// constant `c(h)`, and the flattened atom table used by the inner
/// optimization. Immutable once built; safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct StepContext {
    model: SublinearModel,
    profile: RiskProfile,
    h: f64,
    mu: f64,
    c_h: f64,
    table: FactorTable,
}

impl StepContext {
    pub fn new(model: &SublinearModel, profile: &RiskProfile, h: f64, mu: f64) -> Result<Self> {
        validate_step_inputs(model, h, mu, 0.0)?;
        let c_h = step_constant(model, profile, mu, h)?;
        let table = FactorTable::build(model, profile.alpha(), h, mu);
        Ok(StepContext {
            model: model.clone(),
            profile: *profile,
            h,
            mu,
            c_h,
            table,
        })
    }

    pub fn model(&self) -> &SublinearModel {
        &self.model
    }

    pub fn profile(&self) -> &RiskProfile {
        &self.profile
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Cached normalization constant `c(h)`; exactly 0 when `h = 0` or `mu = 0`.
    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    /// State displacements `h*mu + sqrt(h)*z` per flattened atom.
    pub(crate) fn displacements(&self) -> &[f64] {
        &self.table.disp
    }

    pub(crate) fn atom_count(&self) -> usize {
        self.table.disp.len()
    }

    /// Inner minimization over hedge positions given pre-scaled continuation
    /// values `alpha * f(x + displacement)` per atom.
    pub(crate) fn minimize_scaled(&self, scaled_f: &[f64], start: f64) -> Result<MinimizeOutcome> {
        self.table.minimize(
            scaled_f,
            self.profile.constraint(),
            start,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
    }

    /// Hedged-risk objective at a fixed position (no optimization); used by
    /// the engine's interpolated-optimizer mode.
    pub(crate) fn objective_scaled(&self, scaled_f: &[f64], theta: f64) -> f64 {
        self.table.objective(scaled_f, theta)
    }
}

/// State-independent normalization constant `c(h) = inf_theta rho[-theta*D]`
/// with `D = h*mu + sqrt(h)*z`; the risk premium of the best pure position in
/// the traded factor. Exactly 0 when `h = 0` (no movement) or `mu = 0`
/// (symmetric factor, optimum at `theta = 0`).
pub fn step_constant(
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    h: f64,
) -> Result<f64> {
    validate_step_inputs(model, h, mu, 0.0)?;
    if h == 0.0 || mu == 0.0 {
        return Ok(0.0);
    }
    let table = FactorTable::build(model, profile.alpha(), h, mu);
    let scaled_f = vec![0.0; table.disp.len()];
    let out = table
        .minimize(
            &scaled_f,
            profile.constraint(),
            0.0,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .map_err(|e| annotate_divergence(e, 0.0, h))?;
    Ok(out.value)
}

/// Seller's one-step price of the continuation `f` at state `x`: minimized
/// hedged risk minus the cached `c(h)`. Pricing the zero claim gives exactly
/// 0 and constants pass through unchanged.
pub fn one_step_ask<F>(ctx: &StepContext, f: F, x: f64) -> Result<HedgeResult>
where
    F: Fn(f64) -> f64,
{
    if !x.is_finite() {
        return Err(PricingError::invalid(format!("state must be finite, got {x}")));
    }
    if ctx.h == 0.0 {
        let fx = f(x);
        if !fx.is_finite() {
            return Err(PricingError::evaluation(format!(
                "continuation value is {fx} at x = {x}"
            )));
        }
        return Ok(HedgeResult {
            value: fx,
            theta: 0.0,
            iterations: 0,
            bracket: (0.0, 0.0),
        });
    }
    let alpha = ctx.profile.alpha();
    let mut scaled_f = Vec::with_capacity(ctx.atom_count());
    for (i, d) in ctx.table.disp.iter().enumerate() {
        let y = f(x + d);
        if !y.is_finite() {
            return Err(PricingError::evaluation(format!(
                "continuation value is {y} at x + displacement = {} (atom {i})",
                x + d
            )));
        }
        scaled_f.push(alpha * y);
    }
    let out = ctx
        .minimize_scaled(&scaled_f, 0.0)
        .map_err(|e| annotate_divergence(e, x, ctx.h))?;
    Ok(HedgeResult {
        value: out.value - ctx.c_h,
        theta: out.theta,
        iterations: out.iterations,
        bracket: out.bracket,
    })
}

/// Buyer's one-step price: the exact algebraic dual `-ask(-f)`. The returned
/// hedge position is the optimizer of the mirrored seller problem.
pub fn one_step_bid<F>(ctx: &StepContext, f: F, x: f64) -> Result<HedgeResult>
where
    F: Fn(f64) -> f64,
{
    let r = one_step_ask(ctx, |y| -f(y), x)?;
    Ok(HedgeResult {
        value: -r.value,
        ..r
    })
}

/// Risk-neutral worst-case one-step price: the upper expectation of
/// `f(x + sqrt(h)*z)` over the scenario family. No drift and no hedging
/// enter this operator.
pub fn one_step_worst_case<F>(model: &SublinearModel, h: f64, f: F, x: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    validate_step_inputs(model, h, 0.0, x)?;
    let vol = h.sqrt();
    Ok(expect_1d(model, |z| f(x + vol * z))?.value)
}
