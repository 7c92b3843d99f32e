//! Closed-form references and small-step rate evaluators.
//!
//! Two independent yardsticks for the grid iteration live here:
//!
//! - Bachelier (arithmetic Brownian) option prices. In the fine-step,
//!   single-volatility limit the iterated prices approach the linear heat
//!   semigroup, so the Bachelier formulas are exact targets for convergence
//!   tests. [`implied_bachelier_vol`] inverts the butterfly price back to a
//!   volatility per spot, which is how model curves are compared on a common
//!   scale.
//! - Infinitesimal generators. For a smooth test function, the risk-based
//!   one-step operator has expansion `I(h)f = f + h*Af + o(h)`; [`generator_ask`]
//!   evaluates `Af` directly from two static hedge minimizations, and
//!   [`generator_worst_case`] evaluates the analogous rate for the
//!   worst-case operator. [`generator_consistency_check`] measures how fast
//!   the finite-difference quotient of the actual operator approaches these
//!   rates as the step shrinks.
//!
//! Everything here is pure and stateless.

use std::fmt;

use crate::error::{PricingError, Result};
use crate::models::{covariance_g, SublinearModel};
use crate::risk::{minimize_convex_1d, RiskProfile, DEFAULT_MAX_ITER, DEFAULT_THETA_TOL};
use crate::stepper::{one_step_ask, one_step_worst_case, StepContext};

/// Lower end of the implied-volatility search interval.
pub const SIGMA_MIN: f64 = 1e-6;
/// Upper end of the implied-volatility search interval.
pub const SIGMA_MAX: f64 = 5.0;
/// Default tolerance on the implied volatility itself.
pub const DEFAULT_VOL_TOL: f64 = 1e-8;

const PEAK_SLACK: f64 = 1e-12;

/// European payoff evaluated on the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    /// `(x-k_lo)^+ - 2(x-k_mid)^+ + (x-k_hi)^+`: a tent peaking at `k_mid`.
    Butterfly { k_lo: f64, k_mid: f64, k_hi: f64 },
    Call { strike: f64 },
    Put { strike: f64 },
    /// Piecewise-linear table, flat beyond the first and last point.
    Tabulated { points: Vec<(f64, f64)> },
}

impl Payoff {
    /// Butterfly with strikes `k_lo < k_mid < k_hi`.
    pub fn butterfly(k_lo: f64, k_mid: f64, k_hi: f64) -> Result<Payoff> {
        validate_strikes(k_lo, k_mid, k_hi)?;
        Ok(Payoff::Butterfly { k_lo, k_mid, k_hi })
    }

    pub fn call(strike: f64) -> Result<Payoff> {
        if !strike.is_finite() {
            return Err(PricingError::invalid(format!(
                "strike must be finite, got {strike}"
            )));
        }
        Ok(Payoff::Call { strike })
    }

    pub fn put(strike: f64) -> Result<Payoff> {
        if !strike.is_finite() {
            return Err(PricingError::invalid(format!(
                "strike must be finite, got {strike}"
            )));
        }
        Ok(Payoff::Put { strike })
    }

    /// Piecewise-linear payoff through `points`, which must be finite with
    /// strictly increasing abscissae (at least two points).
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Payoff> {
        if points.len() < 2 {
            return Err(PricingError::invalid(format!(
                "tabulated payoff needs at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, (x, v)) in points.iter().enumerate() {
            if !(x.is_finite() && v.is_finite()) {
                return Err(PricingError::invalid(format!(
                    "tabulated payoff point {i} is not finite: ({x}, {v})"
                )));
            }
            if i > 0 && points[i - 1].0 >= *x {
                return Err(PricingError::invalid(format!(
                    "tabulated payoff abscissae must be strictly increasing, \
                     got {} then {x} at point {i}",
                    points[i - 1].0
                )));
            }
        }
        Ok(Payoff::Tabulated { points })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Payoff::Butterfly { k_lo, k_mid, k_hi } => {
                (x - k_lo).max(0.0) - 2.0 * (x - k_mid).max(0.0) + (x - k_hi).max(0.0)
            }
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::Tabulated { points } => {
                if x <= points[0].0 {
                    return points[0].1;
                }
                let last = points.len() - 1;
                if x >= points[last].0 {
                    return points[last].1;
                }
                let i = points.partition_point(|(px, _)| *px <= x) - 1;
                let (x0, v0) = points[i];
                let (x1, v1) = points[i + 1];
                v0 + (x - x0) / (x1 - x0) * (v1 - v0)
            }
        }
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Butterfly { k_lo, k_mid, k_hi } => {
                write!(f, "butterfly({k_lo}, {k_mid}, {k_hi})")
            }
            Payoff::Call { strike } => write!(f, "call({strike})"),
            Payoff::Put { strike } => write!(f, "put({strike})"),
            Payoff::Tabulated { points } => write!(f, "tabulated({} points)", points.len()),
        }
    }
}

/// Twice-differentiable test function carried together with its first two
/// derivatives, for generator evaluation and small-step expansions.
pub struct SmoothTestFunction {
    label: String,
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl SmoothTestFunction {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SmoothTestFunction {
            label: label.into(),
            f: Box::new(f),
            d1: Box::new(d1),
            d2: Box::new(d2),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// First derivative at `x`.
    pub fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    /// Second derivative at `x`.
    pub fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }

    pub fn constant(c: f64) -> Self {
        SmoothTestFunction::new(format!("constant({c})"), move |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn sine() -> Self {
        SmoothTestFunction::new("sin", f64::sin, f64::cos, |x| -x.sin())
    }

    /// `a*cos(b*x + c)`.
    pub fn cosine(a: f64, b: f64, c: f64) -> Self {
        SmoothTestFunction::new(
            format!("{a}*cos({b}x+{c})"),
            move |x| a * (b * x + c).cos(),
            move |x| -a * b * (b * x + c).sin(),
            move |x| -a * b * b * (b * x + c).cos(),
        )
    }

    /// `exp(-x^2)`.
    pub fn gaussian() -> Self {
        SmoothTestFunction::new(
            "exp(-x^2)",
            |x| (-x * x).exp(),
            |x| -2.0 * x * (-x * x).exp(),
            |x| (4.0 * x * x - 2.0) * (-x * x).exp(),
        )
    }

    /// `1 / (1 + exp(-x))`.
    pub fn logistic() -> Self {
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        SmoothTestFunction::new(
            "logistic",
            s,
            move |x| {
                let v = s(x);
                v * (1.0 - v)
            },
            move |x| {
                let v = s(x);
                v * (1.0 - v) * (1.0 - 2.0 * v)
            },
        )
    }
}

impl fmt::Debug for SmoothTestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothTestFunction")
            .field("label", &self.label)
            .finish()
    }
}

fn validate_strikes(k_lo: f64, k_mid: f64, k_hi: f64) -> Result<()> {
    if !(k_lo.is_finite() && k_mid.is_finite() && k_hi.is_finite()) {
        return Err(PricingError::invalid(format!(
            "strikes must be finite, got ({k_lo}, {k_mid}, {k_hi})"
        )));
    }
    if !(k_lo < k_mid && k_mid < k_hi) {
        return Err(PricingError::invalid(format!(
            "strikes must satisfy k_lo < k_mid < k_hi, got ({k_lo}, {k_mid}, {k_hi})"
        )));
    }
    Ok(())
}

fn validate_vol_horizon(sigma: f64, maturity: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PricingError::invalid(format!(
            "volatility must be positive, got {sigma}"
        )));
    }
    if !(maturity.is_finite() && maturity > 0.0) {
        return Err(PricingError::invalid(format!(
            "maturity must be positive, got {maturity}"
        )));
    }
    Ok(())
}

fn norm_pdf(d: f64) -> f64 {
    (-0.5 * d * d).exp() / std::f64::consts::TAU.sqrt()
}

fn norm_cdf(d: f64) -> f64 {
    0.5 * libm::erfc(-d * std::f64::consts::FRAC_1_SQRT_2)
}

fn bachelier_call_unchecked(x: f64, strike: f64, sigma: f64, maturity: f64) -> f64 {
    let sv = sigma * maturity.sqrt();
    let d = (x - strike) / sv;
    (x - strike) * norm_cdf(d) + sv * norm_pdf(d)
}

/// Driftless arithmetic-Brownian call price
/// `C = (x-K) Phi(d) + sigma*sqrt(T) phi(d)` with `d = (x-K)/(sigma*sqrt(T))`.
pub fn bachelier_call(x: f64, strike: f64, sigma: f64, maturity: f64) -> Result<f64> {
    validate_vol_horizon(sigma, maturity)?;
    if !(x.is_finite() && strike.is_finite()) {
        return Err(PricingError::invalid(format!(
            "spot and strike must be finite, got x = {x}, strike = {strike}"
        )));
    }
    Ok(bachelier_call_unchecked(x, strike, sigma, maturity))
}

fn bachelier_butterfly_unchecked(
    x: f64,
    (k_lo, k_mid, k_hi): (f64, f64, f64),
    sigma: f64,
    maturity: f64,
) -> f64 {
    bachelier_call_unchecked(x, k_lo, sigma, maturity)
        - 2.0 * bachelier_call_unchecked(x, k_mid, sigma, maturity)
        + bachelier_call_unchecked(x, k_hi, sigma, maturity)
}

/// Butterfly price `C(k_lo) - 2 C(k_mid) + C(k_hi)` in the Bachelier model;
/// lies in `[0, k_mid - k_lo]`.
pub fn bachelier_butterfly(
    x: f64,
    strikes: (f64, f64, f64),
    sigma: f64,
    maturity: f64,
) -> Result<f64> {
    validate_strikes(strikes.0, strikes.1, strikes.2)?;
    validate_vol_horizon(sigma, maturity)?;
    if !x.is_finite() {
        return Err(PricingError::invalid(format!("spot must be finite, got {x}")));
    }
    Ok(bachelier_butterfly_unchecked(x, strikes, sigma, maturity))
}

/// Golden-section maximum of a quasi-concave function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_GOLDEN * (hi - lo);
    let mut d = lo + INV_GOLDEN * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_GOLDEN * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_GOLDEN * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Bisection for `f(s) = target` on `[lo, hi]` where `f` is monotone
/// (direction given by `increasing`).
fn bisect_monotone(
    f: impl Fn(f64) -> f64,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    increasing: bool,
    tol: f64,
) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        let go_right = if increasing { v < target } else { v > target };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Volatility `sigma` in `[1e-6, 5]` with `bachelier_butterfly(x, strikes,
/// sigma, maturity) = price`, to tolerance `tol` on `sigma`.
///
/// Away from `k_mid` the butterfly price is hump-shaped in volatility: it
/// rises from the payoff value to a peak, then decays to zero. When a price
/// is attained on both flanks this routine returns the root on the
/// *descending* (high-volatility) flank; the rising flank is used only for
/// prices too small for the descending one. Prices above the peak or below
/// both flanks yield [`PricingError::PriceOutOfRange`] carrying the
/// attainable range.
pub fn implied_bachelier_vol(
    price: f64,
    x: f64,
    strikes: (f64, f64, f64),
    maturity: f64,
    tol: f64,
) -> Result<f64> {
    validate_strikes(strikes.0, strikes.1, strikes.2)?;
    if !(maturity.is_finite() && maturity > 0.0) {
        return Err(PricingError::invalid(format!(
            "maturity must be positive, got {maturity}"
        )));
    }
    if !x.is_finite() || !price.is_finite() {
        return Err(PricingError::invalid(format!(
            "spot and price must be finite, got x = {x}, price = {price}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(PricingError::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let p = |s: f64| bachelier_butterfly_unchecked(x, strikes, s, maturity);
    let p_rise_bottom = p(SIGMA_MIN);
    let p_fall_bottom = p(SIGMA_MAX);
    let (s_peak, p_mid) = golden_max(p, SIGMA_MIN, SIGMA_MAX, 1e-10);
    // a monotone price never beats its endpoint, so fold the endpoints in
    let p_peak = p_mid.max(p_rise_bottom).max(p_fall_bottom);
    let attainable_min = p_rise_bottom.min(p_fall_bottom);
    if price > p_peak + PEAK_SLACK || price < attainable_min {
        return Err(PricingError::PriceOutOfRange {
            price,
            attainable_min,
            attainable_max: p_peak,
        });
    }
    if price >= p_fall_bottom {
        Ok(bisect_monotone(p, price, s_peak, SIGMA_MAX, false, tol))
    } else {
        Ok(bisect_monotone(p, price, SIGMA_MIN, s_peak, true, tol))
    }
}

/// Small-step rate of the risk-based ask operator at `x`:
/// with `a = f''(x)`, `b = f'(x)`, and `G` the model's covariance bound,
///
/// `Af(x) = inf_theta [G(a + alpha (b-theta)^2) + (b-theta) mu]
///          - inf_theta [G(alpha theta^2) - theta mu]`.
///
/// Both infima run over the profile's hedge constraint. With an unbounded
/// constraint and `mu != 0` the minimization diverges exactly when the model
/// is degenerate (zero upper variance); the risk module's divergence error
/// is propagated.
pub fn generator_ask(
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    tf: &SmoothTestFunction,
    x: f64,
) -> Result<f64> {
    if !x.is_finite() || !mu.is_finite() {
        return Err(PricingError::invalid(format!(
            "state and drift must be finite, got x = {x}, mu = {mu}"
        )));
    }
    let a = tf.d2(x);
    let b = tf.d1(x);
    if !a.is_finite() || !b.is_finite() {
        return Err(PricingError::evaluation(format!(
            "test function '{}' has non-finite derivatives at x = {x}: f' = {b}, f'' = {a}",
            tf.label()
        )));
    }
    let alpha = profile.alpha();
    let hedged = |theta: f64| {
        let gap = b - theta;
        covariance_g(model, a + alpha * gap * gap) + gap * mu
    };
    let baseline = |theta: f64| covariance_g(model, alpha * theta * theta) - theta * mu;
    let m_hedged = minimize_convex_1d(
        hedged,
        b,
        profile.constraint(),
        DEFAULT_THETA_TOL,
        DEFAULT_MAX_ITER,
    )?;
    let m_baseline = minimize_convex_1d(
        baseline,
        0.0,
        profile.constraint(),
        DEFAULT_THETA_TOL,
        DEFAULT_MAX_ITER,
    )?;
    Ok(m_hedged.value - m_baseline.value)
}

/// Small-step rate of the worst-case operator at `x`: the covariance bound
/// applied to the curvature, `G(f''(x))`.
pub fn generator_worst_case(
    model: &SublinearModel,
    tf: &SmoothTestFunction,
    x: f64,
) -> Result<f64> {
    if !x.is_finite() {
        return Err(PricingError::invalid(format!("state must be finite, got {x}")));
    }
    let a = tf.d2(x);
    if !a.is_finite() {
        return Err(PricingError::evaluation(format!(
            "test function '{}' has non-finite second derivative {a} at x = {x}",
            tf.label()
        )));
    }
    Ok(covariance_g(model, a))
}

fn validate_h_list(h_list: &[f64]) -> Result<()> {
    for &h in h_list {
        if !(h.is_finite() && h > 0.0) {
            return Err(PricingError::invalid(format!(
                "step sizes must be positive, got {h}"
            )));
        }
    }
    Ok(())
}

/// For each step size `h`, the defect `|(I(h)f - f)/h - Af|` between the
/// finite-difference quotient of the one-step ask operator and
/// [`generator_ask`]. The defect shrinks with `h` for smooth `tf`.
pub fn generator_consistency_check(
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    tf: &SmoothTestFunction,
    x: f64,
    h_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate_h_list(h_list)?;
    let rate = generator_ask(model, profile, mu, tf, x)?;
    let fx = tf.value(x);
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let ctx = StepContext::new(model, profile, h, mu)?;
        let stepped = one_step_ask(&ctx, |y| tf.value(y), x)?.value;
        rows.push((h, ((stepped - fx) / h - rate).abs()));
    }
    Ok(rows)
}

/// Worst-case counterpart of [`generator_consistency_check`], comparing the
/// one-step worst-case operator against [`generator_worst_case`].
pub fn worst_case_consistency_check(
    model: &SublinearModel,
    tf: &SmoothTestFunction,
    x: f64,
    h_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate_h_list(h_list)?;
    let rate = generator_worst_case(model, tf, x)?;
    let fx = tf.value(x);
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let stepped = one_step_worst_case(model, h, |y| tf.value(y), x)?;
        rows.push((h, ((stepped - fx) / h - rate).abs()));
    }
    Ok(rows)
}
