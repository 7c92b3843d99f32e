//! Entropic risk evaluation and one-dimensional hedge optimization.
//!
//! The risk of a random loss `Y` under risk aversion `alpha` is
//!
//! ```text
//!     rho[Y] = (1/alpha) * log E[exp(alpha * Y)]
//! ```
//!
//! with `E` the model's upper expectation. Each scenario contributes a
//! log-sum-exp that is shifted by its largest exponent before exponentiating,
//! so the evaluation cannot overflow however large `alpha * Y` gets.
//!
//! The trading-adjusted risk of a continuation function `f` at state `x`
//! over a time step `h` with drift `mu` is the infimum over hedge positions
//! `theta` of the risk of the hedged loss
//!
//! ```text
//!     f(x + h*mu + sqrt(h)*z) - theta * (h*mu + sqrt(h)*z),
//! ```
//!
//! a convex function of `theta` minimized by bracketing plus golden-section
//! search ([`minimize_convex_1d`]). Derivative-free search is deliberate: the
//! objective is an exact max over scenarios and has kinks where the attaining
//! scenario switches.

use crate::error::{PricingError, Result};
use crate::models::SublinearModel;

/// Default golden-section bracket width at which the hedge search stops.
pub const DEFAULT_THETA_TOL: f64 = 1e-9;
/// Default cap on golden-section iterations.
pub const DEFAULT_MAX_ITER: usize = 200;
/// Hard cap on |theta| for unconstrained searches; reaching it with the
/// objective still decreasing is reported as divergence.
pub const UNCONSTRAINED_THETA_CAP: f64 = 1e8;

const INITIAL_PROBE: f64 = 1e-2;
const INV_GOLDEN: f64 = 0.618_033_988_749_894_9; // (sqrt(5) - 1) / 2

/// Admissible set for the hedge position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HedgeConstraint {
    /// Any real position (subject to the internal divergence cap).
    Unconstrained,
    /// Positions with |theta| <= bound.
    VolumeBound(f64),
}

impl HedgeConstraint {
    fn domain(self) -> (f64, f64) {
        match self {
            HedgeConstraint::Unconstrained => (-UNCONSTRAINED_THETA_CAP, UNCONSTRAINED_THETA_CAP),
            HedgeConstraint::VolumeBound(r) => (-r, r),
        }
    }

    fn is_hard_bound(self) -> bool {
        matches!(self, HedgeConstraint::VolumeBound(_))
    }
}

/// Risk attitude of the pricing agent: exponential risk aversion plus the
/// admissible hedge set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskProfile {
    alpha: f64,
    constraint: HedgeConstraint,
}

impl RiskProfile {
    pub fn new(alpha: f64, constraint: HedgeConstraint) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(PricingError::invalid(format!(
                "risk aversion must be positive and finite, got {alpha}"
            )));
        }
        if let HedgeConstraint::VolumeBound(r) = constraint {
            if !(r.is_finite() && r >= 0.0) {
                return Err(PricingError::invalid(format!(
                    "volume bound must be non-negative and finite, got {r}"
                )));
            }
        }
        Ok(RiskProfile { alpha, constraint })
    }

    /// Unconstrained hedging at the given risk aversion.
    pub fn unconstrained(alpha: f64) -> Result<Self> {
        RiskProfile::new(alpha, HedgeConstraint::Unconstrained)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn constraint(&self) -> HedgeConstraint {
        self.constraint
    }
}

/// Outcome of a one-dimensional convex minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOutcome {
    /// Minimizer (or constraint boundary point when the minimum is outside).
    pub theta: f64,
    /// Objective value at `theta`.
    pub value: f64,
    /// Number of objective evaluations spent.
    pub iterations: usize,
    /// Final bracket around the minimizer.
    pub bracket: (f64, f64),
}

/// Minimized trading-adjusted risk together with the optimal hedge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeResult {
    /// Risk level after optimal hedging.
    pub value: f64,
    /// Optimal hedge position.
    pub theta: f64,
    /// Objective evaluations spent by the search.
    pub iterations: usize,
    /// Final search bracket.
    pub bracket: (f64, f64),
}

impl From<MinimizeOutcome> for HedgeResult {
    fn from(m: MinimizeOutcome) -> Self {
        HedgeResult {
            value: m.value,
            theta: m.theta,
            iterations: m.iterations,
            bracket: m.bracket,
        }
    }
}

/// Entropic risk `(1/alpha) log E[exp(alpha * loss)]` of a scalar loss.
///
/// Errors if `alpha <= 0` or the loss is non-finite at a support atom.
pub fn entropic_risk<F>(model: &SublinearModel, alpha: f64, loss: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(PricingError::invalid(format!(
            "risk aversion must be positive and finite, got {alpha}"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for (s_idx, scenario) in model.scenarios().iter().enumerate() {
        // shift by the largest exponent so every exp argument is <= 0
        let mut shift = f64::NEG_INFINITY;
        for i in 0..scenario.len() {
            let y = loss(scenario.point(i));
            if !y.is_finite() {
                return Err(PricingError::evaluation(format!(
                    "loss is {y} at scenario {s_idx}, atom {i} (z = {:?})",
                    scenario.point(i)
                )));
            }
            shift = shift.max(alpha * y);
        }
        let mut sum = 0.0;
        for (i, w) in scenario.weights().iter().enumerate() {
            sum += w * (alpha * loss(scenario.point(i)) - shift).exp();
        }
        best = best.max((shift + sum.ln()) / alpha);
    }
    Ok(best)
}

/// Minimizes a finite convex function of one variable.
///
/// From the (clamped) start a bracket is found by probing both directions and
/// doubling the step downhill until the objective rises or the constraint
/// boundary is reached; golden-section search then shrinks the bracket to
/// width `tol_theta`. A minimum sitting on a [`HedgeConstraint::VolumeBound`]
/// boundary is returned as that boundary point. Reaching the internal
/// unconstrained cap with the objective still falling is a divergence error.
pub fn minimize_convex_1d<F>(
    phi: F,
    start: f64,
    constraint: HedgeConstraint,
    tol_theta: f64,
    max_iter: usize,
) -> Result<MinimizeOutcome>
where
    F: Fn(f64) -> f64,
{
    if !(tol_theta.is_finite() && tol_theta > 0.0) {
        return Err(PricingError::invalid(format!(
            "tolerance must be positive, got {tol_theta}"
        )));
    }
    let (lo_dom, hi_dom) = constraint.domain();
    let mut evals = 0usize;
    let mut eval = |t: f64| -> Result<f64> {
        evals += 1;
        let v = phi(t);
        if !v.is_finite() {
            return Err(PricingError::evaluation(format!(
                "objective is {v} at theta = {t}"
            )));
        }
        Ok(v)
    };

    if lo_dom >= hi_dom {
        // zero-width domain (VolumeBound(0)): the only admissible position
        let value = eval(lo_dom)?;
        return Ok(MinimizeOutcome {
            theta: lo_dom,
            value,
            iterations: evals,
            bracket: (lo_dom, hi_dom),
        });
    }

    let start = start.clamp(lo_dom, hi_dom);
    let probe = INITIAL_PROBE.min((hi_dom - lo_dom) / 2.0);
    let f0 = eval(start)?;
    let right = (start + probe).min(hi_dom);
    let left = (start - probe).max(lo_dom);
    let fr = if right > start { eval(right)? } else { f0 };
    let fl = if left < start { eval(left)? } else { f0 };

    let (mut lo, mut hi) = if f0 <= fr && f0 <= fl {
        // already bracketed by the probes
        (left, right)
    } else {
        // expand downhill with doubling steps
        let dir = if fr < fl { 1.0 } else { -1.0 };
        let mut prev = start;
        let mut cur = if dir > 0.0 { right } else { left };
        let mut f_cur = if dir > 0.0 { fr } else { fl };
        let mut step = probe;
        loop {
            step *= 2.0;
            let next = (cur + dir * step).clamp(lo_dom, hi_dom);
            let f_next = eval(next)?;
            if f_next >= f_cur {
                break if dir > 0.0 { (prev, next) } else { (next, prev) };
            }
            if next <= lo_dom || next >= hi_dom {
                // still decreasing at the edge of the domain
                if constraint.is_hard_bound() {
                    return Ok(MinimizeOutcome {
                        theta: next,
                        value: f_next,
                        iterations: evals,
                        bracket: (next, next),
                    });
                }
                return Err(PricingError::Divergence {
                    message: format!(
                        "objective still decreasing at theta = {next} \
                         (cap {UNCONSTRAINED_THETA_CAP:e})"
                    ),
                });
            }
            prev = cur;
            cur = next;
            f_cur = f_next;
        }
    };

    // golden-section: keep two interior points, drop the worse side
    let mut c = hi - INV_GOLDEN * (hi - lo);
    let mut d = lo + INV_GOLDEN * (hi - lo);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    let mut iters = 0usize;
    while hi - lo > tol_theta && iters < max_iter {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_GOLDEN * (hi - lo);
            fc = eval(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_GOLDEN * (hi - lo);
            fd = eval(d)?;
        }
        iters += 1;
    }
    let (theta, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(MinimizeOutcome {
        theta,
        value,
        iterations: evals,
        bracket: (lo, hi),
    })
}

/// Flattened per-atom data for one `(model, alpha, h, mu)` combination:
/// everything the hedged-risk objective needs except the continuation values.
/// Shared by the one-shot API and by the grid engine's per-step hot loop.
#[derive(Debug, Clone)]
pub(crate) struct FactorTable {
    /// Scenario `s` owns atoms `offsets[s]..offsets[s+1]`.
    pub offsets: Vec<usize>,
    /// Atom weights, flattened across scenarios.
    pub weights: Vec<f64>,
    /// State displacement `h*mu + sqrt(h)*z` per atom.
    pub disp: Vec<f64>,
    /// `alpha * disp` per atom (pre-scaled for the exponent).
    pub scaled_disp: Vec<f64>,
    pub alpha: f64,
}

impl FactorTable {
    pub fn build(model: &SublinearModel, alpha: f64, h: f64, mu: f64) -> FactorTable {
        debug_assert_eq!(model.dim(), 1);
        let drift = h * mu;
        let vol = h.sqrt();
        let mut offsets = Vec::with_capacity(model.scenarios().len() + 1);
        let mut weights = Vec::new();
        let mut disp = Vec::new();
        offsets.push(0);
        for scenario in model.scenarios() {
            weights.extend_from_slice(scenario.weights());
            disp.extend(scenario.points_1d().iter().map(|z| drift + vol * z));
            offsets.push(weights.len());
        }
        let scaled_disp = disp.iter().map(|d| alpha * d).collect();
        FactorTable {
            offsets,
            weights,
            disp,
            scaled_disp,
            alpha,
        }
    }

    /// Hedged entropic risk at position `theta`, given `alpha * f(x + disp)`
    /// per atom in `scaled_f`.
    pub fn objective(&self, scaled_f: &[f64], theta: f64) -> f64 {
        debug_assert_eq!(scaled_f.len(), self.weights.len());
        let mut best = f64::NEG_INFINITY;
        for s in 0..self.offsets.len() - 1 {
            let (a, b) = (self.offsets[s], self.offsets[s + 1]);
            let mut shift = f64::NEG_INFINITY;
            for i in a..b {
                shift = shift.max(scaled_f[i] - theta * self.scaled_disp[i]);
            }
            let mut sum = 0.0;
            for i in a..b {
                sum += self.weights[i] * (scaled_f[i] - theta * self.scaled_disp[i] - shift).exp();
            }
            best = best.max((shift + sum.ln()) / self.alpha);
        }
        best
    }

    /// Minimizes [`FactorTable::objective`] over the admissible positions.
    pub fn minimize(
        &self,
        scaled_f: &[f64],
        constraint: HedgeConstraint,
        start: f64,
        tol_theta: f64,
        max_iter: usize,
    ) -> Result<MinimizeOutcome> {
        minimize_convex_1d(
            |theta| self.objective(scaled_f, theta),
            start,
            constraint,
            tol_theta,
            max_iter,
        )
    }
}

/// Infimum over hedge positions of the entropic risk of the hedged
/// continuation loss `f(x + h*mu + sqrt(h)*z) - theta*(h*mu + sqrt(h)*z)`.
///
/// For `h = 0` the loss is `f(x)` regardless of `theta` and the result is
/// `(f(x), theta = 0)` exactly. `warm_start` seeds the search (default 0).
/// A divergence of the search is reported with the offending `(x, h)`.
pub fn trading_adjusted_risk<F>(
    model: &SublinearModel,
    profile: &RiskProfile,
    h: f64,
    mu: f64,
    f: F,
    x: f64,
    warm_start: Option<f64>,
) -> Result<HedgeResult>
where
    F: Fn(f64) -> f64,
{
    validate_step_inputs(model, h, mu, x)?;
    if h == 0.0 {
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
    let table = FactorTable::build(model, profile.alpha(), h, mu);
    let mut scaled_f = Vec::with_capacity(table.disp.len());
    for (i, d) in table.disp.iter().enumerate() {
        let y = f(x + d);
        if !y.is_finite() {
            return Err(PricingError::evaluation(format!(
                "continuation value is {y} at x + displacement = {} (atom {i})",
                x + d
            )));
        }
        scaled_f.push(profile.alpha() * y);
    }
    table
        .minimize(
            &scaled_f,
            profile.constraint(),
            warm_start.unwrap_or(0.0),
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .map(HedgeResult::from)
        .map_err(|e| annotate_divergence(e, x, h))
}

pub(crate) fn validate_step_inputs(
    model: &SublinearModel,
    h: f64,
    mu: f64,
    x: f64,
) -> Result<()> {
    if model.dim() != 1 {
        return Err(PricingError::invalid(format!(
            "pricing steps require a one-dimensional model, got dimension {}",
            model.dim()
        )));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(PricingError::invalid(format!(
            "step size must be non-negative and finite, got {h}"
        )));
    }
    if !mu.is_finite() {
        return Err(PricingError::invalid(format!("drift must be finite, got {mu}")));
    }
    if !x.is_finite() {
        return Err(PricingError::invalid(format!("state must be finite, got {x}")));
    }
    Ok(())
}

pub(crate) fn annotate_divergence(e: PricingError, x: f64, h: f64) -> PricingError {
    match e {
        PricingError::Divergence { message } => PricingError::Divergence {
            message: format!("{message} (at x = {x}, h = {h})"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{expect_1d, make_binomial, make_uncertain_binomial, make_uniform};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_loss(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
        let terms: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        move |z: f64| terms.iter().map(|(a, b, c)| a * (b * z + c).cos()).sum()
    }

    fn risk_1d(model: &SublinearModel, alpha: f64, loss: impl Fn(f64) -> f64) -> f64 {
        entropic_risk(model, alpha, |z| loss(z[0])).unwrap()
    }

    #[test]
    fn entropic_risk_closed_forms() {
        let bin = make_binomial(0.2).unwrap();
        // log((exp(0.2) + exp(-0.2))/2) = log(cosh(0.2))
        assert_abs_diff_eq!(
            risk_1d(&bin, 1.0, |z| z),
            0.019868071840007314,
            epsilon = 1e-16
        );
        // constants pass through for any aversion
        assert_abs_diff_eq!(risk_1d(&bin, 3.7, |_| 0.5), 0.5, epsilon = 1e-15);

        // the sup over the volatility grid sits at the largest sigma
        let unc = make_uncertain_binomial(0.2, 0.03, 21).unwrap();
        assert_abs_diff_eq!(
            risk_1d(&unc, 1.0, |z| z),
            0.026220036914331992, // log(cosh(0.23))
            epsilon = 1e-16
        );
    }

    #[test]
    fn entropic_risk_survives_huge_exponents() {
        let bin = make_binomial(0.2).unwrap();
        // alpha*loss reaches 1e4; the shifted log-sum-exp must not overflow
        let got = risk_1d(&bin, 100.0, |z| 500.0 * z);
        let expected = 100.0 + 0.5f64.ln() / 100.0;
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn entropic_risk_dominates_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let models = [
            make_binomial(0.2).unwrap(),
            make_uncertain_binomial(0.2, 0.03, 5).unwrap(),
            make_uniform(0.3, 12).unwrap(),
        ];
        for model in &models {
            for _ in 0..30 {
                let loss = random_loss(&mut rng);
                let e = expect_1d(model, &loss).unwrap().value;
                for alpha in [0.5, 1.0, 2.0, 8.0] {
                    assert!(risk_1d(model, alpha, &loss) >= e - 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropic_risk_monotone_in_aversion_and_cash_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = make_uncertain_binomial(0.25, 0.05, 5).unwrap();
        for _ in 0..30 {
            let loss = random_loss(&mut rng);
            let c: f64 = rng.gen_range(-3.0..3.0);
            let levels: Vec<f64> = [0.5, 1.0, 2.0, 8.0]
                .iter()
                .map(|&a| risk_1d(&model, a, &loss))
                .collect();
            for pair in levels.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12);
            }
            assert_abs_diff_eq!(
                risk_1d(&model, 1.0, |z| loss(z) + c),
                risk_1d(&model, 1.0, &loss) + c,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn entropic_risk_rejects_bad_inputs() {
        let bin = make_binomial(0.2).unwrap();
        assert!(entropic_risk(&bin, 0.0, |_| 0.0).is_err());
        assert!(entropic_risk(&bin, 1.0, |_| f64::NAN).is_err());
    }

    #[test]
    fn minimizer_finds_quadratic_minimum() {
        let out = minimize_convex_1d(
            |t| (t - 2.0) * (t - 2.0),
            0.0,
            HedgeConstraint::Unconstrained,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_abs_diff_eq!(out.theta, 2.0, epsilon = 1e-8);
        assert!(out.value < 1e-15);
        assert!(out.bracket.0 <= out.theta && out.theta <= out.bracket.1);

        // far-away start still brackets
        let far = minimize_convex_1d(
            |t| (t - 2.0) * (t - 2.0),
            -300.0,
            HedgeConstraint::Unconstrained,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_abs_diff_eq!(far.theta, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn minimizer_respects_volume_bound() {
        let out = minimize_convex_1d(
            |t| (t - 2.0) * (t - 2.0),
            0.0,
            HedgeConstraint::VolumeBound(1.0),
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_abs_diff_eq!(out.theta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.value, 1.0, epsilon = 1e-12);

        // zero-width domain pins theta at 0
        let pinned = minimize_convex_1d(
            |t| (t - 2.0) * (t - 2.0),
            5.0,
            HedgeConstraint::VolumeBound(0.0),
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_eq!(pinned.theta, 0.0);
        assert_eq!(pinned.value, 4.0);
    }

    #[test]
    fn minimizer_matches_first_order_condition() {
        // d/dt [log(cosh t) - 0.1 t] = tanh(t) - 0.1 = 0 at t = atanh(0.1)
        let phi = |t: f64| t.cosh().ln() - 0.1 * t;
        let out = minimize_convex_1d(
            phi,
            0.0,
            HedgeConstraint::Unconstrained,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        // argmin accuracy is limited by objective flatness near the minimum
        // (value comparisons lose meaning below ~sqrt(eps)); the value itself
        // is quadratically accurate
        let t_star = 0.10033534773107558;
        assert_abs_diff_eq!(out.theta, t_star, epsilon = 2e-7);
        assert_abs_diff_eq!(out.value, phi(t_star), epsilon = 1e-12);
    }

    #[test]
    fn minimizer_reports_divergence_on_unbounded_descent() {
        let err = minimize_convex_1d(
            |t| -t,
            0.0,
            HedgeConstraint::Unconstrained,
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap_err();
        assert!(matches!(err, PricingError::Divergence { .. }), "got: {err}");

        // the same objective under a volume bound ends at the boundary
        let out = minimize_convex_1d(
            |t| -t,
            0.0,
            HedgeConstraint::VolumeBound(5.0),
            DEFAULT_THETA_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_eq!(out.theta, 5.0);
        assert_eq!(out.value, -5.0);
    }

    fn butterfly(y: f64) -> f64 {
        (0.1 - (y - 1.0).abs()).max(0.0)
    }

    #[test]
    fn trading_adjusted_risk_zero_step_is_exact() {
        let bin = make_binomial(0.2).unwrap();
        let profile = RiskProfile::unconstrained(1.0).unwrap();
        let r = trading_adjusted_risk(&bin, &profile, 0.0, 0.05, butterfly, 0.97, None).unwrap();
        assert_eq!(r.value, butterfly(0.97));
        assert_eq!(r.theta, 0.0);
    }

    #[test]
    fn trading_adjusted_risk_never_exceeds_unhedged_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = make_uncertain_binomial(0.2, 0.03, 5).unwrap();
        let profile = RiskProfile::unconstrained(2.0).unwrap();
        let (h, mu) = (0.01, 0.1);
        for _ in 0..30 {
            let f = random_loss(&mut rng);
            let x: f64 = rng.gen_range(-1.0..1.0);
            let hedged = trading_adjusted_risk(&model, &profile, h, mu, &f, x, None)
                .unwrap()
                .value;
            let unhedged = risk_1d(&model, 2.0, |z| f(x + h * mu + h.sqrt() * z));
            assert!(hedged <= unhedged + 1e-12);
        }
    }

    #[test]
    fn hedged_objective_is_convex_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = make_uncertain_binomial(0.2, 0.05, 5).unwrap();
        let table = FactorTable::build(&model, 2.0, 0.01, 0.1);
        for _ in 0..100 {
            let f = random_loss(&mut rng);
            let x: f64 = rng.gen_range(-1.0..1.0);
            let scaled_f: Vec<f64> = table.disp.iter().map(|d| 2.0 * f(x + d)).collect();
            let t1: f64 = rng.gen_range(-5.0..5.0);
            let t2: f64 = rng.gen_range(-5.0..5.0);
            let mid = 0.5 * (t1 + t2);
            let lhs = table.objective(&scaled_f, mid);
            let rhs = 0.5 * table.objective(&scaled_f, t1) + 0.5 * table.objective(&scaled_f, t2);
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let model = make_uncertain_binomial(0.2, 0.03, 5).unwrap();
        let profile = RiskProfile::unconstrained(1.0).unwrap();
        let cold =
            trading_adjusted_risk(&model, &profile, 0.01, 0.1, butterfly, 1.0, None).unwrap();
        let warm =
            trading_adjusted_risk(&model, &profile, 0.01, 0.1, butterfly, 1.0, Some(cold.theta))
                .unwrap();
        assert_abs_diff_eq!(warm.value, cold.value, epsilon = 1e-12);
        assert_abs_diff_eq!(warm.theta, cold.theta, epsilon = 1e-6);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn huge_volume_bound_matches_unconstrained() {
        let model = make_binomial(0.2).unwrap();
        let free = RiskProfile::unconstrained(1.0).unwrap();
        let bounded = RiskProfile::new(1.0, HedgeConstraint::VolumeBound(1e6)).unwrap();
        let a = trading_adjusted_risk(&model, &free, 0.01, 0.1, butterfly, 1.0, None).unwrap();
        let b = trading_adjusted_risk(&model, &bounded, 0.01, 0.1, butterfly, 1.0, None).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-12);
    }

    #[test]
    fn profile_validation() {
        assert!(RiskProfile::unconstrained(0.0).is_err());
        assert!(RiskProfile::unconstrained(f64::NAN).is_err());
        assert!(RiskProfile::new(1.0, HedgeConstraint::VolumeBound(-1.0)).is_err());
        assert!(RiskProfile::new(1.0, HedgeConstraint::VolumeBound(0.0)).is_ok());
    }
}
