//! Risk-based bid/ask pricing of bounded European claims under volatility
//! uncertainty.
//!
//! The engine iterates a one-period pricing operator backward on a uniform
//! state grid. One period combines three ingredients:
//!
//! * a sublinear expectation over finitely many volatility scenarios
//!   ([`models`]),
//! * an entropic (exponential-utility) risk measure with risk aversion
//!   `alpha` ([`risk`]),
//! * an optimal one-period hedge position in the underlying, found by
//!   golden-section search ([`risk::minimize_convex_1d`]).
//!
//! One application of the operator ([`stepper`]) turns a continuation payoff
//! into its one-period indifference ask price; composing `n` steps of size
//! `T/n` ([`engine`]) approximates the asymptotic risk-based ask curve. The
//! buyer's bid is the exact dual `-ask(-f)`. As the risk aversion grows the
//! prices approach the worst-case (upper-expectation) curves, which the
//! engine computes alongside. Closed-form Bachelier references, implied-vol
//! inversion, and generator-level diagnostics live in [`analytics`];
//! [`cli`] drives reproducible experiment runs from plain config files.
//!
//! ```
//! use riskprice::analytics::Payoff;
//! use riskprice::engine::{price_curve, EngineConfig};
//! use riskprice::models::make_uncertain_binomial;
//! use riskprice::risk::RiskProfile;
//!
//! let pay = Payoff::butterfly(0.9, 1.0, 1.1)?;
//! let model = make_uncertain_binomial(0.2, 0.03, 3)?;
//! let profile = RiskProfile::unconstrained(1.0)?;
//! let mut config = EngineConfig::new(0.95, 1.05, 4, 0.04);
//! config.dx = 5e-3;
//! let curve = price_curve(|x| pay.eval(x), &model, &profile, 0.05, &config)?;
//! // the seller's curve dominates the buyer's, and the worst-case curve
//! // brackets both from outside
//! for i in 0..curve.xs.len() {
//!     assert!(curve.bid[i] <= curve.ask[i]);
//!     assert!(curve.worst_bid[i] <= curve.worst_ask[i]);
//! }
//! # Ok::<(), riskprice::error::PricingError>(())
//! ```

pub mod analytics;
pub mod cli;
pub mod engine;
pub mod error;
pub mod models;
pub mod risk;
pub mod stepper;
