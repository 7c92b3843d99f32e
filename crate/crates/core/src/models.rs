//! Scenario-based sublinear expectation models for the one-period random
//! factor.
//!
//! The uncertain distribution of the factor `z` is represented as a finite
//! family of discrete probability measures ("scenarios"). The model's
//! expectation operator is the upper expectation over that family:
//!
//! ```text
//!     E[g] = max over scenarios Q of  sum_i w_i * g(z_i)
//! ```
//!
//! Every scenario is centered (`E_Q[z] = 0` in each scenario), so the model
//! carries volatility uncertainty but no mean uncertainty. Constructors
//! produce atoms in mirrored +/- pairs stored adjacently, which makes the
//! weighted sum of any odd integrand cancel term-by-term in floating point:
//! the centering holds exactly, not just to rounding error.
//!
//! Available families:
//! - `binomial`: one scenario, two atoms at +/-sigma;
//! - `trinomial`: one scenario, atoms at 0 and +/-sqrt(3/2)*sigma;
//! - `uniform`: one scenario, Gauss-Legendre discretization of the uniform
//!   density on [-sigma*sqrt(3), sigma*sqrt(3)];
//! - `uncertain_binomial`: one binomial scenario per volatility on a uniform
//!   grid over [sigma0 - u, sigma0 + u];
//! - `normal_family`: one truncated-Gaussian quadrature scenario per listed
//!   volatility.
//!
//! All families share second moment sigma^2 per scenario (up to quadrature
//! truncation error for the normal family).

use crate::error::{PricingError, Result};

/// Default number of volatility grid points for [`make_uncertain_binomial`].
pub const DEFAULT_SIGMA_GRID: usize = 21;
/// Default quadrature node count for continuous scenario families.
pub const DEFAULT_QUAD_NODES: usize = 32;
/// Default truncation radius (in standard deviations) for [`make_normal_family`].
pub const DEFAULT_TRUNC: f64 = 6.0;
/// Default floor below which a variance bound counts as degenerate.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-12;

/// One probability measure inside the uncertainty set: a finite discrete
/// distribution of the factor with positive weights summing to one and mean
/// exactly zero after centering.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Atom weights, all positive, summing to 1 within 1e-12.
    weights: Vec<f64>,
    /// Atom coordinates, row-major: atom `i` occupies `points[i*dim..(i+1)*dim]`.
    points: Vec<f64>,
    dim: usize,
    /// Largest Euclidean norm over atoms.
    support_radius: f64,
}

impl Scenario {
    /// Builds a scenario from `(weight, point)` atoms, shifting all points by
    /// the empirical mean so the zero-mean invariant holds.
    ///
    /// Errors if the atom list is empty, weights are not positive or do not
    /// sum to 1 within 1e-12, dimensions are inconsistent, or the mean cannot
    /// be centered to within 1e-12.
    pub fn new(atoms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(PricingError::invalid("scenario needs at least one atom"));
        };
        let dim = first.1.len();
        if dim == 0 {
            return Err(PricingError::invalid("scenario atoms need dimension >= 1"));
        }
        let mut weights = Vec::with_capacity(atoms.len());
        let mut points = Vec::with_capacity(atoms.len() * dim);
        for (i, (w, p)) in atoms.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(PricingError::invalid(format!(
                    "scenario atom {i} has non-positive weight {w}"
                )));
            }
            if p.len() != dim {
                return Err(PricingError::invalid(format!(
                    "scenario atom {i} has dimension {} but atom 0 has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(PricingError::invalid(format!(
                    "scenario atom {i} has a non-finite coordinate"
                )));
            }
            weights.push(*w);
            points.extend_from_slice(p);
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(PricingError::invalid(format!(
                "scenario weights sum to {wsum}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        let mut scenario = Scenario {
            weights,
            points,
            dim,
            support_radius: 0.0,
        };
        scenario.center();
        let worst = scenario.mean_abs_max();
        if worst > MEAN_TOL {
            return Err(PricingError::invalid(format!(
                "scenario mean has magnitude {worst:e} after centering, expected <= {MEAN_TOL:e}"
            )));
        }
        scenario.support_radius = scenario.compute_support_radius();
        Ok(scenario)
    }

    /// Internal constructor for atoms already arranged in exactly-centered
    /// mirrored pairs; skips the centering shift but keeps the validation.
    fn from_centered(weights: Vec<f64>, points: Vec<f64>, dim: usize) -> Self {
        let mut scenario = Scenario {
            weights,
            points,
            dim,
            support_radius: 0.0,
        };
        debug_assert!(scenario.mean_abs_max() == 0.0);
        debug_assert!((scenario.weights.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
        scenario.support_radius = scenario.compute_support_radius();
        scenario
    }

    fn center(&mut self) {
        for k in 0..self.dim {
            let mean: f64 = self
                .weights
                .iter()
                .zip(self.points.chunks_exact(self.dim))
                .map(|(w, p)| w * p[k])
                .sum();
            if mean != 0.0 {
                for p in self.points.chunks_exact_mut(self.dim) {
                    p[k] -= mean;
                }
            }
        }
    }

    fn mean_abs_max(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                self.weights
                    .iter()
                    .zip(self.points.chunks_exact(self.dim))
                    .map(|(w, p)| w * p[k])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    fn compute_support_radius(&self) -> f64 {
        self.points
            .chunks_exact(self.dim)
            .map(|p| p.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// One-dimensional atom coordinates; only valid when `dim() == 1`.
    pub fn points_1d(&self) -> &[f64] {
        debug_assert_eq!(self.dim, 1, "points_1d requires a one-dimensional scenario");
        &self.points
    }
}

/// Upper expectation over a finite scenario family, together with the model's
/// construction metadata.
#[derive(Debug, Clone)]
pub struct SublinearModel {
    scenarios: Vec<Scenario>,
    label: String,
    dim: usize,
    support_radius: f64,
    warnings: Vec<String>,
}

/// Value of an upper expectation together with the index of the scenario
/// attaining the maximum (lowest index on ties).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub scenario: usize,
}

/// Variance bounds of a model: the largest and smallest scenario variance.
/// `inf_variance > 0` is the strict-ellipticity condition needed for the
/// large-risk-aversion limit experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonDegeneracy {
    pub sup_variance: f64,
    pub inf_variance: f64,
}

impl NonDegeneracy {
    /// True when both variance bounds clear the floor.
    pub fn passes(&self, floor: f64) -> bool {
        self.sup_variance >= floor && self.inf_variance >= floor
    }
}

impl SublinearModel {
    /// Builds a model from explicit scenarios. All scenarios must share one
    /// dimension.
    pub fn from_scenarios(scenarios: Vec<Scenario>, label: impl Into<String>) -> Result<Self> {
        let Some(first) = scenarios.first() else {
            return Err(PricingError::invalid("model needs at least one scenario"));
        };
        let dim = first.dim();
        if let Some(bad) = scenarios.iter().position(|s| s.dim() != dim) {
            return Err(PricingError::invalid(format!(
                "scenario {bad} has dimension {}, expected {dim}",
                scenarios[bad].dim()
            )));
        }
        let support_radius = scenarios
            .iter()
            .map(Scenario::support_radius)
            .fold(0.0, f64::max);
        Ok(SublinearModel {
            scenarios,
            label: label.into(),
            dim,
            support_radius,
            warnings: Vec::new(),
        })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest atom norm over all scenarios; the one-step reachable set is
    /// contained in `[x + h*mu - sqrt(h)*r, x + h*mu + sqrt(h)*r]` with this `r`.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Non-fatal construction diagnostics (e.g. a zero-volatility scenario).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Upper expectation `max_Q sum_i w_i g(z_i)` of a scalar integrand, with the
/// argmax scenario index (lowest index on ties).
///
/// Errors if `g` returns a non-finite value at any support atom; the message
/// names the scenario and atom.
pub fn expect<F>(model: &SublinearModel, g: F) -> Result<Expectation>
where
    F: Fn(&[f64]) -> f64,
{
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for (s_idx, scenario) in model.scenarios.iter().enumerate() {
        let mut sum = 0.0;
        for (a_idx, w) in scenario.weights.iter().enumerate() {
            let z = scenario.point(a_idx);
            let gz = g(z);
            if !gz.is_finite() {
                return Err(PricingError::evaluation(format!(
                    "integrand is {gz} at scenario {s_idx}, atom {a_idx} (z = {z:?})"
                )));
            }
            sum += w * gz;
        }
        if sum > best {
            best = sum;
            best_idx = s_idx;
        }
    }
    Ok(Expectation {
        value: best,
        scenario: best_idx,
    })
}

/// One-dimensional convenience wrapper around [`expect`].
pub fn expect_1d<F>(model: &SublinearModel, g: F) -> Result<Expectation>
where
    F: Fn(f64) -> f64,
{
    if model.dim != 1 {
        return Err(PricingError::invalid(format!(
            "expect_1d requires a one-dimensional model, got dimension {}",
            model.dim
        )));
    }
    expect(model, |z| g(z[0]))
}

/// Covariance functional `G(a) = (1/2) E[a * z^2]` for one-dimensional
/// models. For `a >= 0` this picks the largest scenario variance, for
/// `a < 0` the smallest.
pub fn covariance_g(model: &SublinearModel, a: f64) -> f64 {
    debug_assert_eq!(model.dim, 1, "covariance_g is defined for d = 1");
    let mut best = f64::NEG_INFINITY;
    for scenario in &model.scenarios {
        let mut sum = 0.0;
        for (i, w) in scenario.weights.iter().enumerate() {
            let z = scenario.points[i];
            sum += w * (a * (z * z));
        }
        best = best.max(sum);
    }
    0.5 * best
}

/// Largest and smallest scenario variance of a one-dimensional model,
/// computed as `E[z^2]` and `-E[-z^2]`.
pub fn check_nondegeneracy(model: &SublinearModel) -> NonDegeneracy {
    NonDegeneracy {
        sup_variance: 2.0 * covariance_g(model, 1.0),
        inf_variance: -2.0 * covariance_g(model, -1.0),
    }
}

fn validate_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PricingError::invalid(format!(
            "volatility must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Two-point scenario at +/-sigma with equal weights.
fn binomial_scenario(sigma: f64) -> Scenario {
    Scenario::from_centered(vec![0.5, 0.5], vec![sigma, -sigma], 1)
}

/// Symmetric two-point model: atoms at +/-sigma, second moment sigma^2.
pub fn make_binomial(sigma: f64) -> Result<SublinearModel> {
    validate_sigma(sigma)?;
    SublinearModel::from_scenarios(
        vec![binomial_scenario(sigma)],
        format!("binomial(sigma={sigma})"),
    )
}

/// Symmetric three-point model: atoms at 0 and +/-sqrt(3/2)*sigma with equal
/// weights, second moment sigma^2.
pub fn make_trinomial(sigma: f64) -> Result<SublinearModel> {
    validate_sigma(sigma)?;
    let v = (1.5f64).sqrt() * sigma;
    let third = 1.0 / 3.0;
    let scenario = Scenario::from_centered(vec![third, third, third], vec![0.0, v, -v], 1);
    SublinearModel::from_scenarios(vec![scenario], format!("trinomial(sigma={sigma})"))
}

/// Uniform distribution on [-sigma*sqrt(3), sigma*sqrt(3)] discretized by a
/// `quad_nodes`-point Gauss-Legendre rule; second moment sigma^2 exactly
/// (the rule integrates quadratics exactly for quad_nodes >= 2).
pub fn make_uniform(sigma: f64, quad_nodes: usize) -> Result<SublinearModel> {
    validate_sigma(sigma)?;
    validate_quad_nodes(quad_nodes)?;
    let a = sigma * 3.0f64.sqrt();
    let mut weights = Vec::with_capacity(quad_nodes);
    let mut points = Vec::with_capacity(quad_nodes);
    // Probability weight of node r is (GL weight)/2 because the uniform
    // density on the mapped interval is 1/(2a) and the map has Jacobian a.
    for &(r, w) in &gauss_legendre_half(quad_nodes) {
        if r == 0.0 {
            weights.push(w / 2.0);
            points.push(0.0);
        } else {
            weights.push(w / 2.0);
            points.push(a * r);
            weights.push(w / 2.0);
            points.push(-(a * r));
        }
    }
    let scenario = Scenario::from_centered(weights, points, 1);
    SublinearModel::from_scenarios(
        vec![scenario],
        format!("uniform(sigma={sigma}, quad_nodes={quad_nodes})"),
    )
}

/// Binomial model with uncertain volatility: one two-point scenario per
/// volatility on the uniform `m`-point grid over [sigma0 - u, sigma0 + u],
/// endpoints included.
///
/// Requires `0 <= u <= sigma0` and `m >= 2`. At `u = sigma0` the lower
/// endpoint is the zero-volatility scenario; the model is still built but a
/// warning is recorded because the smallest-variance bound degenerates to 0.
pub fn make_uncertain_binomial(sigma0: f64, u: f64, m: usize) -> Result<SublinearModel> {
    validate_sigma(sigma0)?;
    if !(u.is_finite() && u >= 0.0) {
        return Err(PricingError::invalid(format!(
            "uncertainty level must be non-negative and finite, got {u}"
        )));
    }
    if u > sigma0 {
        return Err(PricingError::invalid(format!(
            "uncertain binomial requires u <= sigma0, got u = {u}, sigma0 = {sigma0}"
        )));
    }
    if m < 2 {
        return Err(PricingError::invalid(format!(
            "volatility grid needs m >= 2 points, got {m}"
        )));
    }
    let mut scenarios = Vec::with_capacity(m);
    for j in 0..m {
        // Hit both endpoints exactly rather than accumulating rounding from
        // the interior formula.
        let sigma = if j == 0 {
            sigma0 - u
        } else if j == m - 1 {
            sigma0 + u
        } else {
            sigma0 - u + (2.0 * u) * (j as f64) / ((m - 1) as f64)
        };
        scenarios.push(binomial_scenario(sigma));
    }
    let mut model = SublinearModel::from_scenarios(
        scenarios,
        format!("uncertain_binomial(sigma0={sigma0}, u={u}, m={m})"),
    )?;
    if u == sigma0 {
        model.warnings.push(format!(
            "u = sigma0 = {sigma0}: the volatility grid includes the zero-volatility \
             scenario, so the smallest-variance bound is 0 and large-risk-aversion \
             limits are not available"
        ));
    }
    Ok(model)
}

/// One truncated-Gaussian scenario per listed volatility: N(0, sigma^2)
/// restricted to [-trunc*sigma, trunc*sigma], discretized by Gauss-Legendre
/// quadrature against the Gaussian density, renormalized; mirrored node pairs
/// keep the scenario mean exactly zero.
pub fn make_normal_family(sigmas: &[f64], trunc: f64, quad_nodes: usize) -> Result<SublinearModel> {
    if sigmas.is_empty() {
        return Err(PricingError::invalid(
            "normal family needs at least one volatility",
        ));
    }
    if !(trunc.is_finite() && trunc > 0.0) {
        return Err(PricingError::invalid(format!(
            "truncation radius must be positive, got {trunc}"
        )));
    }
    validate_quad_nodes(quad_nodes)?;
    let half_rule = gauss_legendre_half(quad_nodes);
    let mut scenarios = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        validate_sigma(sigma)?;
        let a = trunc * sigma;
        // Unnormalized weight of node z is (GL weight) * exp(-z^2/(2 sigma^2));
        // constant density factors cancel in the normalization.
        let mut unnorm = Vec::with_capacity(half_rule.len());
        let mut total = 0.0;
        for &(r, w) in &half_rule {
            let z = a * r;
            let q = w * (-(z * z) / (2.0 * sigma * sigma)).exp();
            unnorm.push(q);
            total += if r == 0.0 { q } else { 2.0 * q };
        }
        let mut weights = Vec::with_capacity(quad_nodes);
        let mut points = Vec::with_capacity(quad_nodes);
        for (&(r, _), &q) in half_rule.iter().zip(&unnorm) {
            let w = q / total;
            if r == 0.0 {
                weights.push(w);
                points.push(0.0);
            } else {
                weights.push(w);
                points.push(a * r);
                weights.push(w);
                points.push(-(a * r));
            }
        }
        scenarios.push(Scenario::from_centered(weights, points, 1));
    }
    let sigma_list = sigmas
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    SublinearModel::from_scenarios(
        scenarios,
        format!("normal_family(sigmas=[{sigma_list}], trunc={trunc}, quad_nodes={quad_nodes})"),
    )
}

fn validate_quad_nodes(quad_nodes: usize) -> Result<()> {
    if quad_nodes < 2 {
        return Err(PricingError::invalid(format!(
            "quadrature needs at least 2 nodes, got {quad_nodes}"
        )));
    }
    Ok(())
}

/// Non-negative half of the n-point Gauss-Legendre rule on [-1, 1] as
/// `(node, weight)` pairs, smallest node first; for odd n the first entry is
/// the node at exactly 0. The full rule is this half mirrored.
///
/// Roots of the Legendre polynomial are found by Newton iteration from the
/// standard Chebyshev-angle initial guesses; weights use
/// `w = 2 / ((1 - x^2) P_n'(x)^2)`.
fn gauss_legendre_half(n: usize) -> Vec<(f64, f64)> {
    debug_assert!(n >= 2);
    let mut half = Vec::with_capacity(n / 2 + 1);
    if n % 2 == 1 {
        let (_, dp) = legendre_value_derivative(n, 0.0);
        half.push((0.0, 2.0 / (dp * dp)));
    }
    // k-th largest root, k = 1..=n/2, all strictly positive.
    for k in (1..=n / 2).rev() {
        let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_value_derivative(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_value_derivative(n, x);
        half.push((x, 2.0 / ((1.0 - x * x) * (dp * dp))));
    }
    half
}

/// Value and derivative of the degree-n Legendre polynomial via the
/// three-term recurrence; valid for |x| < 1.
fn legendre_value_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for j in 2..=n {
        let jf = j as f64;
        let p_next = ((2.0 * jf - 1.0) * x * p - (jf - 1.0) * p_prev) / jf;
        p_prev = p;
        p = p_next;
    }
    let dp = (n as f64) * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_families() -> Vec<SublinearModel> {
        vec![
            make_binomial(0.2).unwrap(),
            make_trinomial(0.2).unwrap(),
            make_uniform(0.2, 16).unwrap(),
            make_uncertain_binomial(0.2, 0.03, 5).unwrap(),
            make_normal_family(&[0.15, 0.25], 6.0, 24).unwrap(),
        ]
    }

    /// Random bounded integrand: a short cosine sum with coefficients drawn
    /// from the given generator.
    fn random_integrand(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
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

    #[test]
    fn binomial_expectations() {
        let model = make_binomial(0.2).unwrap();
        // odd integrand cancels exactly across the mirrored pair
        assert_eq!(expect_1d(&model, |z| z).unwrap().value, 0.0);
        // (0.2^2 + 0.2^2)/2
        assert_abs_diff_eq!(
            expect_1d(&model, |z| z * z).unwrap().value,
            0.04,
            epsilon = 1e-16
        );
        assert_eq!(model.support_radius(), 0.2);
        assert_eq!(model.dim(), 1);
    }

    #[test]
    fn uncertain_binomial_expectations() {
        let model = make_uncertain_binomial(0.2, 0.03, 2).unwrap();
        // sup over sigma in {0.17, 0.23} of sigma^2, attained at the top
        let up = expect_1d(&model, |z| z * z).unwrap();
        assert_abs_diff_eq!(up.value, 0.0529, epsilon = 1e-15);
        assert_eq!(up.scenario, 1);
        // sup of -sigma^2, attained at the bottom
        let down = expect_1d(&model, |z| -(z * z)).unwrap();
        assert_abs_diff_eq!(down.value, -0.0289, epsilon = 1e-15);
        assert_eq!(down.scenario, 0);
    }

    #[test]
    fn uncertain_binomial_interior_grid() {
        let model = make_uncertain_binomial(0.2, 0.03, 3).unwrap();
        // max over sigma in {0.17, 0.20, 0.23} of cos(5 sigma); cos is
        // decreasing on [0.85, 1.15], so the smallest sigma wins
        let got = expect_1d(&model, |z| (5.0 * z).cos()).unwrap();
        // cos(0.85)
        assert_abs_diff_eq!(got.value, 0.65998314588498217, epsilon = 1e-15);
        assert_eq!(got.scenario, 0);
    }

    #[test]
    fn trinomial_and_uniform_second_moment() {
        let tri = make_trinomial(0.2).unwrap();
        // (1/3) * 2 * (3/2) * 0.04
        assert_abs_diff_eq!(
            expect_1d(&tri, |z| z * z).unwrap().value,
            0.04,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(tri.support_radius(), 0.24494897427831781, epsilon = 1e-16);

        let uni = make_uniform(0.2, 32).unwrap();
        // integral of z^2 over the uniform density: exactly sigma^2 for a
        // quadrature rule of degree >= 2
        assert_abs_diff_eq!(
            expect_1d(&uni, |z| z * z).unwrap().value,
            0.04,
            epsilon = 1e-14
        );
        assert!(uni.support_radius() < 0.2 * 3.0f64.sqrt());
        assert_eq!(uni.scenarios()[0].len(), 32);
    }

    #[test]
    fn uniform_fourth_moment_matches_quadrature_exactness() {
        // E[z^4] of the uniform density on [-a, a] is a^4/5
        let uni = make_uniform(0.2, 8).unwrap();
        let a = 0.2 * 3.0f64.sqrt();
        assert_abs_diff_eq!(
            expect_1d(&uni, |z| z.powi(4)).unwrap().value,
            a.powi(4) / 5.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn normal_family_moments() {
        let model = make_normal_family(&[0.2], 6.0, 32).unwrap();
        assert_eq!(expect_1d(&model, |z| z).unwrap().value, 0.0);
        // quadrature second moment vs the analytic sigma^2; the residual is
        // the mass truncated beyond 6 standard deviations (~3e-9)
        assert_abs_diff_eq!(
            expect_1d(&model, |z| z * z).unwrap().value,
            0.04,
            epsilon = 1e-6
        );

        let two = make_normal_family(&[0.17, 0.23], 6.0, 32).unwrap();
        assert_abs_diff_eq!(
            expect_1d(&two, |z| z * z).unwrap().value,
            0.0529,
            epsilon = 1e-6
        );
    }

    #[test]
    fn mean_zero_is_exact_for_every_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in all_families() {
            for _ in 0..25 {
                let a: f64 = rng.gen_range(-5.0..5.0);
                assert_eq!(
                    expect_1d(&model, |z| a * z).unwrap().value,
                    0.0,
                    "linear integrand must vanish exactly on {}",
                    model.label()
                );
            }
        }
    }

    #[test]
    fn uncertain_with_zero_uncertainty_matches_binomial() {
        let unc = make_uncertain_binomial(0.2, 0.0, 5).unwrap();
        let bin = make_binomial(0.2).unwrap();
        assert_eq!(unc.scenarios().len(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let g = random_integrand(&mut rng);
            let a = expect_1d(&unc, &g).unwrap().value;
            let b = expect_1d(&bin, &g).unwrap().value;
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn sublinearity_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for model in all_families() {
            for _ in 0..40 {
                let g = random_integrand(&mut rng);
                let h = random_integrand(&mut rng);
                let lambda: f64 = rng.gen_range(0.0..3.0);
                let c: f64 = rng.gen_range(-2.0..2.0);
                let eg = expect_1d(&model, &g).unwrap().value;
                let eh = expect_1d(&model, &h).unwrap().value;
                let scale = 1.0f64.max(eg.abs()).max(eh.abs());
                let tol = 1e-12 * scale;

                // subadditivity
                let e_sum = expect_1d(&model, |z| g(z) + h(z)).unwrap().value;
                assert!(e_sum <= eg + eh + tol);
                // positive homogeneity
                let e_scaled = expect_1d(&model, |z| lambda * g(z)).unwrap().value;
                assert_abs_diff_eq!(e_scaled, lambda * eg, epsilon = tol);
                // cash invariance
                let e_shift = expect_1d(&model, |z| g(z) + c).unwrap().value;
                assert_abs_diff_eq!(e_shift, eg + c, epsilon = tol);
                // absolute-value bound
                let e_abs = expect_1d(&model, |z| g(z).abs()).unwrap().value;
                assert!(eg.abs() <= e_abs + tol);
                // difference bound
                let e_diff = expect_1d(&model, |z| g(z) - h(z)).unwrap().value;
                assert!(eg - eh <= e_diff + tol);
                // monotonicity: h + |g| dominates h pointwise
                let e_dom = expect_1d(&model, |z| h(z) + g(z).abs()).unwrap().value;
                assert!(eh <= e_dom + tol);
            }
        }
    }

    #[test]
    fn single_scenario_models_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in [
            make_binomial(0.2).unwrap(),
            make_trinomial(0.3).unwrap(),
            make_uniform(0.25, 12).unwrap(),
        ] {
            for _ in 0..30 {
                let g = random_integrand(&mut rng);
                let h = random_integrand(&mut rng);
                let lhs = expect_1d(&model, |z| g(z) + h(z)).unwrap().value;
                let rhs = expect_1d(&model, &g).unwrap().value + expect_1d(&model, &h).unwrap().value;
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_functional_values() {
        let bin = make_binomial(0.2).unwrap();
        assert_abs_diff_eq!(covariance_g(&bin, 1.0), 0.02, epsilon = 1e-16);
        assert_eq!(covariance_g(&bin, 0.0), 0.0);

        let unc = make_uncertain_binomial(0.2, 0.03, 2).unwrap();
        // (1/2) * (-0.17^2): a negative curvature picks the smallest variance
        assert_abs_diff_eq!(covariance_g(&unc, -1.0), -0.01445, epsilon = 1e-15);
    }

    #[test]
    fn nondegeneracy_bounds() {
        let bin = check_nondegeneracy(&make_binomial(0.2).unwrap());
        assert_abs_diff_eq!(bin.sup_variance, 0.04, epsilon = 1e-16);
        assert_abs_diff_eq!(bin.inf_variance, 0.04, epsilon = 1e-16);
        assert!(bin.passes(DEFAULT_VARIANCE_FLOOR));

        let unc = check_nondegeneracy(&make_uncertain_binomial(0.2, 0.03, 2).unwrap());
        assert_abs_diff_eq!(unc.sup_variance, 0.0529, epsilon = 1e-15);
        assert_abs_diff_eq!(unc.inf_variance, 0.0289, epsilon = 1e-15);

        // single atom at 0, written as a mirrored +/-0 pair
        let degenerate = SublinearModel::from_scenarios(
            vec![Scenario::new(vec![(0.5, vec![0.0]), (0.5, vec![-0.0])]).unwrap()],
            "degenerate",
        )
        .unwrap();
        let nd = check_nondegeneracy(&degenerate);
        assert_eq!(nd.sup_variance, 0.0);
        assert_eq!(nd.inf_variance, 0.0);
        assert!(!nd.passes(DEFAULT_VARIANCE_FLOOR));
    }

    #[test]
    fn argmax_ties_resolve_to_lowest_index() {
        let s = || binomial_scenario(0.2);
        let model = SublinearModel::from_scenarios(vec![s(), s(), s()], "tie").unwrap();
        assert_eq!(expect_1d(&model, |z| z * z).unwrap().scenario, 0);
    }

    #[test]
    fn scenario_centering_and_validation() {
        // off-center atoms are shifted by the empirical mean
        let s = Scenario::new(vec![(0.5, vec![1.0]), (0.5, vec![2.0])]).unwrap();
        assert!(s.points_1d().iter().sum::<f64>().abs() <= 1e-12);
        assert_abs_diff_eq!(s.support_radius(), 0.5, epsilon = 1e-15);

        assert!(Scenario::new(vec![]).is_err());
        assert!(Scenario::new(vec![(0.0, vec![1.0]), (1.0, vec![-1.0])]).is_err());
        assert!(Scenario::new(vec![(0.6, vec![1.0]), (0.6, vec![-1.0])]).is_err());
        assert!(Scenario::new(vec![(0.5, vec![1.0]), (0.5, vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn constructor_parameter_errors() {
        assert!(make_binomial(0.0).is_err());
        assert!(make_binomial(-0.1).is_err());
        assert!(make_uniform(0.2, 1).is_err());
        assert!(make_uncertain_binomial(0.2, -0.01, 5).is_err());
        assert!(make_uncertain_binomial(0.2, 0.03, 1).is_err());
        assert!(make_normal_family(&[], 6.0, 32).is_err());
        assert!(make_normal_family(&[0.2], 0.0, 32).is_err());

        let err = make_uncertain_binomial(0.2, 0.25, 5).unwrap_err();
        assert!(err.to_string().contains("u <= sigma0"), "got: {err}");
    }

    #[test]
    fn full_uncertainty_records_warning() {
        let model = make_uncertain_binomial(0.2, 0.2, 3).unwrap();
        assert!(!model.warnings().is_empty());
        assert_eq!(check_nondegeneracy(&model).inf_variance, 0.0);
        // the regular case stays silent
        assert!(make_uncertain_binomial(0.2, 0.03, 3)
            .unwrap()
            .warnings()
            .is_empty());
    }

    #[test]
    fn non_finite_integrand_names_the_atom() {
        let model = make_binomial(0.2).unwrap();
        let err = expect_1d(&model, |z| if z > 0.0 { f64::NAN } else { 0.0 }).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scenario 0"), "got: {msg}");
        assert!(msg.contains("atom 0"), "got: {msg}");
    }

    #[test]
    fn gauss_legendre_rule_integrates_polynomials() {
        // degree-2n-1 exactness, checked on x^2 and x^6 for n = 4
        let half = gauss_legendre_half(4);
        let full: Vec<(f64, f64)> = half
            .iter()
            .flat_map(|&(r, w)| {
                if r == 0.0 {
                    vec![(0.0, w)]
                } else {
                    vec![(r, w), (-r, w)]
                }
            })
            .collect();
        let total: f64 = full.iter().map(|&(_, w)| w).sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-14);
        let m2: f64 = full.iter().map(|&(r, w)| w * r * r).sum();
        assert_abs_diff_eq!(m2, 2.0 / 3.0, epsilon = 1e-14);
        let m6: f64 = full.iter().map(|&(r, w)| w * r.powi(6)).sum();
        assert_abs_diff_eq!(m6, 2.0 / 7.0, epsilon = 1e-14);
    }
}
