//! Backward grid iteration of the one-step pricing operators.
//!
//! Prices over a horizon `T` are approximated by composing the one-step
//! operator `n` times with step `h = T/n` on a uniform spatial grid. The
//! grid covers the target interval plus a pad of `|mu|*T + r*sqrt(n*T)`
//! (`r` the model's support radius) on each side, so that values inside the
//! target interval never depend on the flat extrapolation applied beyond the
//! grid. Continuation values at off-lattice points are piecewise-linear
//! interpolations of the previous step; linear interpolation preserves the
//! monotonicity and convexity that the operator-level invariants rely on.
//!
//! Two sweep strategies are available per step:
//! - [`IterationMode::Direct`]: solve the hedge minimization at every node,
//!   warm-starting each solve from the neighboring node's optimizer;
//! - [`IterationMode::OptInterp`]: solve only at every `coarse_stride`-th
//!   node, interpolate the optimizers linearly to all nodes, and evaluate the
//!   risk objective at the interpolated (feasible, hence suboptimal)
//!   position. Values in this mode are never below the Direct values.
//!
//! Within one step, nodes are independent: the sweep can fan out over worker
//! threads in contiguous chunks (each chunk cold-starts its first node).
//! Steps are strictly sequential. With one worker the iteration order is
//! deterministic, making outputs byte-reproducible.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::ops::Range;
use std::path::Path;

use crate::error::{PricingError, Result};
use crate::models::SublinearModel;
use crate::risk::{FactorTable, RiskProfile};
use crate::stepper::StepContext;

/// Hard cap on grid nodes; construction fails above it.
pub const MAX_GRID_NODES: usize = 20_000_000;
/// Default spatial resolution on price scale ~1.
pub const DEFAULT_DX: f64 = 1e-3;
/// Default coarse stride for [`IterationMode::OptInterp`].
pub const DEFAULT_COARSE_STRIDE: usize = 4;

const TARGET_EPS: f64 = 1e-9;
const ORDERING_SLACK: f64 = 1e-10;

/// Uniform one-dimensional grid with both endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    dx: f64,
    nodes: usize,
}

impl Grid1D {
    /// Builds a grid over `[lo, hi]` with spacing `dx`; the span must be an
    /// integer multiple of `dx` (within 1e-12) and the node count must stay
    /// under [`MAX_GRID_NODES`].
    pub fn new(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(PricingError::invalid(format!(
                "grid bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(PricingError::invalid(format!(
                "grid spacing must be positive, got {dx}"
            )));
        }
        let steps = ((hi - lo) / dx).round();
        if steps < 1.0 || steps > MAX_GRID_NODES as f64 {
            return Err(PricingError::Resource {
                message: format!(
                    "grid over [{lo}, {hi}] with dx = {dx} needs {steps} intervals \
                     (cap {MAX_GRID_NODES}); increase dx"
                ),
            });
        }
        let nodes = steps as usize + 1;
        let reconstructed = lo + (nodes - 1) as f64 * dx;
        if (reconstructed - hi).abs() > 1e-12 {
            return Err(PricingError::invalid(format!(
                "grid span [{lo}, {hi}] is not an integer multiple of dx = {dx} \
                 (mismatch {:e})",
                (reconstructed - hi).abs()
            )));
        }
        Ok(Grid1D { lo, hi, dx, nodes })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Coordinate of node `i`.
    pub fn x(&self, i: usize) -> f64 {
        debug_assert!(i < self.nodes);
        self.lo + i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.x(i)).collect()
    }

    /// Piecewise-linear interpolation of per-node `values` at `x`, constant
    /// (flat) beyond the grid ends.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.nodes);
        if x <= self.lo {
            return values[0];
        }
        if x >= self.hi {
            return values[self.nodes - 1];
        }
        let t = (x - self.lo) / self.dx;
        let i = (t as usize).min(self.nodes - 2);
        let frac = t - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    }

    /// Indices of the nodes lying inside `[lo, hi]` (inclusive, with a small
    /// guard against rounding at the endpoints).
    fn node_range(&self, lo: f64, hi: f64) -> Range<usize> {
        let first = (((lo - self.lo) / self.dx) - TARGET_EPS).ceil().max(0.0) as usize;
        let last = ((((hi - self.lo) / self.dx) + TARGET_EPS).floor() as usize)
            .min(self.nodes - 1);
        first..last + 1
    }
}

/// Function sampled on a grid, with the hedge optimizers of the final step
/// when the producing sweep computed them.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub thetas: Option<Vec<f64>>,
}

impl GridFunction {
    /// Piecewise-linear evaluation with flat extrapolation.
    pub fn eval(&self, x: f64) -> f64 {
        self.grid.interp(&self.values, x)
    }
}

/// Node-sweep strategy within one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationMode {
    /// Optimize the hedge at every node (warm-started along the sweep).
    Direct,
    /// Optimize at every `coarse_stride`-th node plus the last, interpolate
    /// the optimizers linearly, and evaluate at the interpolated positions.
    OptInterp { coarse_stride: usize },
}

impl fmt::Display for IterationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IterationMode::Direct => write!(f, "direct"),
            IterationMode::OptInterp { coarse_stride } => {
                write!(f, "optinterp(stride={coarse_stride})")
            }
        }
    }
}

/// Horizon, resolution, and sweep parameters for a pricing run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Target interval: prices are reported on grid nodes inside it.
    pub target_lo: f64,
    pub target_hi: f64,
    /// Number of composition steps.
    pub n: usize,
    /// Horizon; the step size is `maturity / n`.
    pub maturity: f64,
    /// Grid spacing.
    pub dx: f64,
    pub mode: IterationMode,
    /// Worker threads for the node sweeps (1 = fully deterministic).
    pub workers: usize,
}

impl EngineConfig {
    /// Config with default resolution (`dx` 1e-3), Direct mode, one worker.
    pub fn new(target_lo: f64, target_hi: f64, n: usize, maturity: f64) -> Self {
        EngineConfig {
            target_lo,
            target_hi,
            n,
            maturity,
            dx: DEFAULT_DX,
            mode: IterationMode::Direct,
            workers: 1,
        }
    }

    /// Step size `maturity / n`.
    pub fn step(&self) -> f64 {
        self.maturity / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_lo.is_finite()
            && self.target_hi.is_finite()
            && self.target_lo <= self.target_hi)
        {
            return Err(PricingError::invalid(format!(
                "target interval must be finite with lo <= hi, got [{}, {}]",
                self.target_lo, self.target_hi
            )));
        }
        if self.n == 0 {
            return Err(PricingError::invalid("step count must be at least 1"));
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(PricingError::invalid(format!(
                "maturity must be positive, got {}",
                self.maturity
            )));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(PricingError::invalid(format!(
                "grid spacing must be positive, got {}",
                self.dx
            )));
        }
        if let IterationMode::OptInterp { coarse_stride } = self.mode {
            if coarse_stride < 2 {
                return Err(PricingError::invalid(format!(
                    "optimizer-interpolation stride must be at least 2, got {coarse_stride}"
                )));
            }
        }
        if self.workers == 0 {
            return Err(PricingError::invalid("worker count must be at least 1"));
        }
        Ok(())
    }
}

/// Grid covering the target interval plus the reachability pad
/// `|mu|*maturity + support_radius*sqrt(n*maturity)` on each side, with the
/// pad rounded outward to the `dx` lattice anchored at `target_lo`.
pub fn padded_grid(
    target_lo: f64,
    target_hi: f64,
    n: usize,
    maturity: f64,
    mu: f64,
    support_radius: f64,
    dx: f64,
) -> Result<Grid1D> {
    if !(target_lo.is_finite() && target_hi.is_finite() && target_lo <= target_hi) {
        return Err(PricingError::invalid(format!(
            "target interval must be finite with lo <= hi, got [{target_lo}, {target_hi}]"
        )));
    }
    if n == 0 {
        return Err(PricingError::invalid("step count must be at least 1"));
    }
    if !(maturity.is_finite() && maturity > 0.0) {
        return Err(PricingError::invalid(format!(
            "maturity must be positive, got {maturity}"
        )));
    }
    if !mu.is_finite() {
        return Err(PricingError::invalid(format!("drift must be finite, got {mu}")));
    }
    if !(support_radius.is_finite() && support_radius >= 0.0) {
        return Err(PricingError::invalid(format!(
            "support radius must be non-negative, got {support_radius}"
        )));
    }
    if !(dx.is_finite() && dx > 0.0) {
        return Err(PricingError::invalid(format!(
            "grid spacing must be positive, got {dx}"
        )));
    }
    let pad = mu.abs() * maturity + support_radius * (n as f64 * maturity).sqrt();
    let k_lo = (pad / dx - TARGET_EPS).ceil().max(0.0);
    let k_hi = ((target_hi - target_lo + pad) / dx - TARGET_EPS).ceil().max(1.0);
    let total = k_lo + k_hi + 1.0;
    if total > MAX_GRID_NODES as f64 {
        return Err(PricingError::Resource {
            message: format!(
                "padded grid would need {total} nodes (cap {MAX_GRID_NODES}); increase dx"
            ),
        });
    }
    let lo = target_lo - k_lo * dx;
    let hi = target_lo + k_hi * dx;
    Grid1D::new(lo, hi, dx)
}

/// Prices restricted to the target nodes, plus the final full grid function.
#[derive(Debug, Clone)]
pub struct IterateResult {
    /// Grid nodes inside the target interval.
    pub xs: Vec<f64>,
    /// Prices at `xs`.
    pub values: Vec<f64>,
    /// Final step on the full padded grid (with hedge optimizers when the
    /// risk-based sweep produced them).
    pub full: GridFunction,
}

fn sample_payoff<F>(grid: &Grid1D, payoff: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    let mut values = Vec::with_capacity(grid.nodes());
    for i in 0..grid.nodes() {
        let x = grid.x(i);
        let v = payoff(x);
        if !v.is_finite() {
            return Err(PricingError::evaluation(format!(
                "payoff is {v} at x = {x}"
            )));
        }
        values.push(v);
    }
    Ok(values)
}

/// Contiguous `(start, end)` chunk bounds splitting `len` items over at most
/// `workers` chunks as evenly as possible.
fn chunk_bounds(len: usize, workers: usize) -> Vec<(usize, usize)> {
    let w = workers.max(1).min(len.max(1));
    let base = len / w;
    let extra = len % w;
    let mut bounds = Vec::with_capacity(w);
    let mut start = 0;
    for k in 0..w {
        let size = base + usize::from(k < extra);
        bounds.push((start, start + size));
        start += size;
    }
    bounds
}

/// Splits a slice into mutable chunks matching `bounds`.
fn split_by_bounds<'a>(mut slice: &'a mut [f64], bounds: &[(usize, usize)]) -> Vec<&'a mut [f64]> {
    let mut chunks = Vec::with_capacity(bounds.len());
    for (s, e) in bounds {
        let (head, tail) = slice.split_at_mut(e - s);
        chunks.push(head);
        slice = tail;
    }
    chunks
}

fn locate(err: PricingError, step: usize, node: usize, x: f64) -> PricingError {
    match err {
        PricingError::Divergence { message } => PricingError::Divergence {
            message: format!("{message} (step {step}, node {node}, x = {x})"),
        },
        PricingError::Evaluation { message } => PricingError::Iteration {
            step,
            node,
            message,
        },
        other => other,
    }
}

/// One Direct-mode chunk: optimize every node, warm-starting from the
/// previous node in the chunk (first node starts cold at 0).
fn direct_chunk(
    ctx: &StepContext,
    grid: &Grid1D,
    prev: &[f64],
    step: usize,
    start_node: usize,
    values: &mut [f64],
    thetas: &mut [f64],
) -> Result<()> {
    let alpha = ctx.profile().alpha();
    let disp = ctx.displacements();
    let mut buf = vec![0.0; disp.len()];
    let mut warm = 0.0;
    for (k, slot) in values.iter_mut().enumerate() {
        let node = start_node + k;
        let x = grid.x(node);
        for (j, d) in disp.iter().enumerate() {
            buf[j] = alpha * grid.interp(prev, x + d);
        }
        let out = ctx
            .minimize_scaled(&buf, warm)
            .map_err(|e| locate(e, step, node, x))?;
        let v = out.value - ctx.c_h();
        if !v.is_finite() {
            return Err(PricingError::Iteration {
                step,
                node,
                message: format!("price value is {v} at x = {x}"),
            });
        }
        *slot = v;
        thetas[k] = out.theta;
        warm = out.theta;
    }
    Ok(())
}

fn direct_step(
    ctx: &StepContext,
    grid: &Grid1D,
    prev: &[f64],
    step: usize,
    workers: usize,
    values: &mut [f64],
    thetas: &mut [f64],
) -> Result<()> {
    let bounds = chunk_bounds(grid.nodes(), workers);
    if bounds.len() == 1 {
        return direct_chunk(ctx, grid, prev, step, 0, values, thetas);
    }
    let val_chunks = split_by_bounds(values, &bounds);
    let theta_chunks = split_by_bounds(thetas, &bounds);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .zip(val_chunks)
            .zip(theta_chunks)
            .map(|((&(s, _), vc), tc)| {
                scope.spawn(move || direct_chunk(ctx, grid, prev, step, s, vc, tc))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    results.into_iter().collect()
}

/// Node indices optimized in OptInterp mode: every `stride`-th plus the last.
fn coarse_indices(nodes: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..nodes).step_by(stride).collect();
    if *idx.last().unwrap() != nodes - 1 {
        idx.push(nodes - 1);
    }
    idx
}

/// Linear interpolation of coarse-node optimizers onto all nodes.
fn fill_interpolated_thetas(coarse: &[usize], coarse_thetas: &[f64], thetas: &mut [f64]) {
    for (iw, tw) in coarse.windows(2).zip(coarse_thetas.windows(2)) {
        let (i0, i1) = (iw[0], iw[1]);
        let (t0, t1) = (tw[0], tw[1]);
        let span = (i1 - i0) as f64;
        for i in i0..=i1 {
            let frac = (i - i0) as f64 / span;
            thetas[i] = t0 + frac * (t1 - t0);
        }
    }
}

fn optinterp_step(
    ctx: &StepContext,
    grid: &Grid1D,
    prev: &[f64],
    step: usize,
    stride: usize,
    workers: usize,
    values: &mut [f64],
    thetas: &mut [f64],
) -> Result<()> {
    let coarse = coarse_indices(grid.nodes(), stride);
    let mut coarse_thetas = vec![0.0; coarse.len()];

    // phase 1: optimize at the coarse nodes
    let bounds = chunk_bounds(coarse.len(), workers);
    let solve_chunk = |range: Range<usize>, out: &mut [f64]| -> Result<()> {
        let alpha = ctx.profile().alpha();
        let disp = ctx.displacements();
        let mut buf = vec![0.0; disp.len()];
        let mut warm = 0.0;
        for (slot, &node) in out.iter_mut().zip(&coarse[range]) {
            let x = grid.x(node);
            for (j, d) in disp.iter().enumerate() {
                buf[j] = alpha * grid.interp(prev, x + d);
            }
            let outm = ctx
                .minimize_scaled(&buf, warm)
                .map_err(|e| locate(e, step, node, x))?;
            *slot = outm.theta;
            warm = outm.theta;
        }
        Ok(())
    };
    if bounds.len() == 1 {
        solve_chunk(0..coarse.len(), &mut coarse_thetas)?;
    } else {
        let chunks = split_by_bounds(&mut coarse_thetas, &bounds);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .zip(chunks)
                .map(|(&(s, e), chunk)| scope.spawn(move || solve_chunk(s..e, chunk)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        results.into_iter().collect::<Result<()>>()?;
    }

    fill_interpolated_thetas(&coarse, &coarse_thetas, thetas);

    // phase 2: evaluate the objective at the interpolated positions
    let bounds = chunk_bounds(grid.nodes(), workers);
    let eval_chunk = |start_node: usize, out: &mut [f64]| -> Result<()> {
        let alpha = ctx.profile().alpha();
        let disp = ctx.displacements();
        let mut buf = vec![0.0; disp.len()];
        for (k, slot) in out.iter_mut().enumerate() {
            let node = start_node + k;
            let x = grid.x(node);
            for (j, d) in disp.iter().enumerate() {
                buf[j] = alpha * grid.interp(prev, x + d);
            }
            let v = ctx.objective_scaled(&buf, thetas[node]) - ctx.c_h();
            if !v.is_finite() {
                return Err(PricingError::Iteration {
                    step,
                    node,
                    message: format!("price value is {v} at x = {x}"),
                });
            }
            *slot = v;
        }
        Ok(())
    };
    if bounds.len() == 1 {
        return eval_chunk(0, values);
    }
    let chunks = split_by_bounds(values, &bounds);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .zip(chunks)
            .map(|(&(s, _), chunk)| scope.spawn(move || eval_chunk(s, chunk)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    results.into_iter().collect()
}

/// Worst-case sweep: upper expectation of the interpolated continuation,
/// no hedging and no drift.
fn worst_chunk(
    table: &FactorTable,
    grid: &Grid1D,
    prev: &[f64],
    step: usize,
    start_node: usize,
    values: &mut [f64],
) -> Result<()> {
    for (k, slot) in values.iter_mut().enumerate() {
        let node = start_node + k;
        let x = grid.x(node);
        let mut best = f64::NEG_INFINITY;
        for s in 0..table.offsets.len() - 1 {
            let mut sum = 0.0;
            for i in table.offsets[s]..table.offsets[s + 1] {
                sum += table.weights[i] * grid.interp(prev, x + table.disp[i]);
            }
            best = best.max(sum);
        }
        if !best.is_finite() {
            return Err(PricingError::Iteration {
                step,
                node,
                message: format!("price value is {best} at x = {x}"),
            });
        }
        *slot = best;
    }
    Ok(())
}

fn worst_step(
    table: &FactorTable,
    grid: &Grid1D,
    prev: &[f64],
    step: usize,
    workers: usize,
    values: &mut [f64],
) -> Result<()> {
    let bounds = chunk_bounds(grid.nodes(), workers);
    if bounds.len() == 1 {
        return worst_chunk(table, grid, prev, step, 0, values);
    }
    let chunks = split_by_bounds(values, &bounds);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .zip(chunks)
            .map(|(&(s, _), chunk)| scope.spawn(move || worst_chunk(table, grid, prev, step, s, chunk)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    results.into_iter().collect()
}

/// Runs `steps` risk-based ask steps of size `h` on an explicit grid,
/// starting from `initial` (values per grid node). Building block for
/// [`iterate_ask`] and for composition tests; most callers want
/// [`iterate_ask`] instead.
pub fn run_ask_steps(
    grid: &Grid1D,
    initial: Vec<f64>,
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    h: f64,
    steps: usize,
    mode: IterationMode,
    workers: usize,
) -> Result<GridFunction> {
    if initial.len() != grid.nodes() {
        return Err(PricingError::invalid(format!(
            "initial values have {} entries for a {}-node grid",
            initial.len(),
            grid.nodes()
        )));
    }
    let ctx = StepContext::new(model, profile, h, mu)?;
    let mut prev = initial;
    let mut next = vec![0.0; grid.nodes()];
    let mut thetas = vec![0.0; grid.nodes()];
    for step in 0..steps {
        match mode {
            IterationMode::Direct => {
                direct_step(&ctx, grid, &prev, step, workers, &mut next, &mut thetas)?
            }
            IterationMode::OptInterp { coarse_stride } => optinterp_step(
                &ctx,
                grid,
                &prev,
                step,
                coarse_stride,
                workers,
                &mut next,
                &mut thetas,
            )?,
        }
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(GridFunction {
        grid: *grid,
        values: prev,
        thetas: if steps > 0 { Some(thetas) } else { None },
    })
}

/// Runs `steps` worst-case steps of size `h` on an explicit grid.
pub fn run_worst_case_steps(
    grid: &Grid1D,
    initial: Vec<f64>,
    model: &SublinearModel,
    h: f64,
    steps: usize,
    workers: usize,
) -> Result<GridFunction> {
    if initial.len() != grid.nodes() {
        return Err(PricingError::invalid(format!(
            "initial values have {} entries for a {}-node grid",
            initial.len(),
            grid.nodes()
        )));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(PricingError::invalid(format!(
            "step size must be non-negative and finite, got {h}"
        )));
    }
    // drift never enters the worst-case operator
    let table = FactorTable::build(model, 1.0, h, 0.0);
    let mut prev = initial;
    let mut next = vec![0.0; grid.nodes()];
    for step in 0..steps {
        worst_step(&table, grid, &prev, step, workers, &mut next)?;
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(GridFunction {
        grid: *grid,
        values: prev,
        thetas: None,
    })
}

fn restrict(gf: &GridFunction, target_lo: f64, target_hi: f64) -> (Vec<f64>, Vec<f64>) {
    let range = gf.grid.node_range(target_lo, target_hi);
    let xs = range.clone().map(|i| gf.grid.x(i)).collect();
    let values = gf.values[range].to_vec();
    (xs, values)
}

/// Risk-based ask curve: `n` backward steps of the one-step ask operator on
/// the padded grid, reported on the target nodes.
pub fn iterate_ask<F>(
    payoff: F,
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    config: &EngineConfig,
) -> Result<IterateResult>
where
    F: Fn(f64) -> f64,
{
    config.validate()?;
    let grid = padded_grid(
        config.target_lo,
        config.target_hi,
        config.n,
        config.maturity,
        mu,
        model.support_radius(),
        config.dx,
    )?;
    let initial = sample_payoff(&grid, &payoff)?;
    let full = run_ask_steps(
        &grid,
        initial,
        model,
        profile,
        mu,
        config.step(),
        config.n,
        config.mode,
        config.workers,
    )?;
    let (xs, values) = restrict(&full, config.target_lo, config.target_hi);
    Ok(IterateResult { xs, values, full })
}

/// Risk-based bid curve: the exact algebraic dual `-ask(-payoff)`. The
/// returned optimizers belong to the mirrored seller problem.
pub fn iterate_bid<F>(
    payoff: F,
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    config: &EngineConfig,
) -> Result<IterateResult>
where
    F: Fn(f64) -> f64,
{
    let mut res = iterate_ask(|x| -payoff(x), model, profile, mu, config)?;
    for v in &mut res.values {
        *v = -*v;
    }
    for v in &mut res.full.values {
        *v = -*v;
    }
    Ok(res)
}

/// Worst-case (upper-expectation) ask curve; drift does not enter the
/// operator, so the grid is padded for the driftless reachable set. Target
/// nodes coincide with the risk-based curves because the lattice is anchored
/// at `target_lo` either way.
pub fn iterate_worst_case<F>(
    payoff: F,
    model: &SublinearModel,
    config: &EngineConfig,
) -> Result<IterateResult>
where
    F: Fn(f64) -> f64,
{
    config.validate()?;
    let grid = padded_grid(
        config.target_lo,
        config.target_hi,
        config.n,
        config.maturity,
        0.0,
        model.support_radius(),
        config.dx,
    )?;
    let initial = sample_payoff(&grid, &payoff)?;
    let full = run_worst_case_steps(
        &grid,
        initial,
        model,
        config.step(),
        config.n,
        config.workers,
    )?;
    let (xs, values) = restrict(&full, config.target_lo, config.target_hi);
    Ok(IterateResult { xs, values, full })
}

/// Curve metadata serialized into the CSV header.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveMeta {
    pub model_label: String,
    pub alpha: f64,
    pub mu: f64,
    pub n: usize,
    pub maturity: f64,
    pub dx: f64,
    pub mode_label: String,
}

/// Aligned ask/bid and worst-case curves on the target nodes.
#[derive(Debug, Clone)]
pub struct PriceCurve {
    pub xs: Vec<f64>,
    pub ask: Vec<f64>,
    pub bid: Vec<f64>,
    pub worst_ask: Vec<f64>,
    pub worst_bid: Vec<f64>,
    pub meta: CurveMeta,
}

impl PriceCurve {
    /// Checks array alignment, finiteness, and the bid/ask orderings
    /// (`bid <= ask` and `worst_bid <= worst_ask` within 1e-10 per node).
    pub fn validate(&self) -> Result<()> {
        let n = self.xs.len();
        if n == 0 {
            return Err(PricingError::Invariant {
                message: "price curve has no nodes".into(),
            });
        }
        for (name, col) in [
            ("ask", &self.ask),
            ("bid", &self.bid),
            ("worst_ask", &self.worst_ask),
            ("worst_bid", &self.worst_bid),
        ] {
            if col.len() != n {
                return Err(PricingError::Invariant {
                    message: format!(
                        "column {name} has {} entries but xs has {n}",
                        col.len()
                    ),
                });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(PricingError::Invariant {
                    message: format!("column {name} is non-finite at x = {}", self.xs[i]),
                });
            }
        }
        for i in 0..n {
            if self.bid[i] > self.ask[i] + ORDERING_SLACK {
                return Err(PricingError::Invariant {
                    message: format!(
                        "bid {} exceeds ask {} at x = {}",
                        self.bid[i], self.ask[i], self.xs[i]
                    ),
                });
            }
            if self.worst_bid[i] > self.worst_ask[i] + ORDERING_SLACK {
                return Err(PricingError::Invariant {
                    message: format!(
                        "worst-case bid {} exceeds worst-case ask {} at x = {}",
                        self.worst_bid[i], self.worst_ask[i], self.xs[i]
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Runs all four curves (ask, bid, worst-case ask/bid) for one payoff and
/// assembles the validated [`PriceCurve`].
pub fn price_curve<F>(
    payoff: F,
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    config: &EngineConfig,
) -> Result<PriceCurve>
where
    F: Fn(f64) -> f64,
{
    let ask = iterate_ask(&payoff, model, profile, mu, config)?;
    let bid = iterate_bid(&payoff, model, profile, mu, config)?;
    let worst_ask = iterate_worst_case(&payoff, model, config)?;
    let mut worst_bid = iterate_worst_case(|x| -payoff(x), model, config)?;
    for v in &mut worst_bid.values {
        *v = -*v;
    }
    if bid.xs.len() != ask.xs.len() || worst_ask.xs.len() != ask.xs.len() {
        return Err(PricingError::Invariant {
            message: format!(
                "curve alignment failure: {} ask, {} bid, {} worst-case nodes",
                ask.xs.len(),
                bid.xs.len(),
                worst_ask.xs.len()
            ),
        });
    }
    let curve = PriceCurve {
        xs: ask.xs,
        ask: ask.values,
        bid: bid.values,
        worst_ask: worst_ask.values,
        worst_bid: worst_bid.values,
        meta: CurveMeta {
            model_label: model.label().to_string(),
            alpha: profile.alpha(),
            mu,
            n: config.n,
            maturity: config.maturity,
            dx: config.dx,
            mode_label: config.mode.to_string(),
        },
    };
    curve.validate()?;
    Ok(curve)
}

/// Ask price at one state for each step count in `n_list`, using Direct mode.
pub fn convergence_table<F>(
    payoff: F,
    model: &SublinearModel,
    profile: &RiskProfile,
    mu: f64,
    target_x: f64,
    maturity: f64,
    n_list: &[usize],
    dx: f64,
    workers: usize,
) -> Result<Vec<(usize, f64)>>
where
    F: Fn(f64) -> f64,
{
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut config = EngineConfig::new(target_x, target_x, n, maturity);
        config.dx = dx;
        config.workers = workers;
        let res = iterate_ask(&payoff, model, profile, mu, &config)?;
        rows.push((n, res.values[0]));
    }
    Ok(rows)
}

const CSV_HEADER: &str = "x,ask,bid,worst_ask,worst_bid";

/// 17-significant-digit decimal, enough to reproduce any f64 exactly.
pub(crate) fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the curve in the stable CSV format: `#`-prefixed metadata lines,
/// a fixed header row, then one 17-significant-digit row per node.
pub fn write_curve_csv(curve: &PriceCurve, out: &mut dyn IoWrite) -> Result<()> {
    let m = &curve.meta;
    writeln!(out, "# model = {}", m.model_label)?;
    writeln!(out, "# alpha = {}", m.alpha)?;
    writeln!(out, "# mu = {}", m.mu)?;
    writeln!(out, "# n = {}", m.n)?;
    writeln!(out, "# T = {}", m.maturity)?;
    writeln!(out, "# dx = {}", m.dx)?;
    writeln!(out, "# mode = {}", m.mode_label)?;
    writeln!(out, "{CSV_HEADER}")?;
    for i in 0..curve.xs.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_full(curve.xs[i]),
            fmt_full(curve.ask[i]),
            fmt_full(curve.bid[i]),
            fmt_full(curve.worst_ask[i]),
            fmt_full(curve.worst_bid[i]),
        )?;
    }
    Ok(())
}

pub fn save_curve_csv(curve: &PriceCurve, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_curve_csv(curve, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses a curve written by [`write_curve_csv`]; values round-trip exactly.
pub fn read_curve_csv(reader: impl BufRead) -> Result<PriceCurve> {
    let mut meta: Vec<(String, String)> = Vec::new();
    let mut xs = Vec::new();
    let mut ask = Vec::new();
    let mut bid = Vec::new();
    let mut worst_ask = Vec::new();
    let mut worst_bid = Vec::new();
    let mut saw_header = false;
    let mut header_line = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else {
                return Err(PricingError::Parse {
                    line: lineno,
                    message: format!("metadata line without '=': {line:?}"),
                });
            };
            meta.push((key.trim().to_string(), value.trim().to_string()));
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(PricingError::Parse {
                    line: lineno,
                    message: format!("expected header {CSV_HEADER:?}, got {line:?}"),
                });
            }
            saw_header = true;
            header_line = lineno;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(PricingError::Parse {
                line: lineno,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let mut parsed = [0.0f64; 5];
        for (k, field) in fields.iter().enumerate() {
            parsed[k] = field.parse().map_err(|_| PricingError::Parse {
                line: lineno,
                message: format!("not a number: {field:?}"),
            })?;
        }
        xs.push(parsed[0]);
        ask.push(parsed[1]);
        bid.push(parsed[2]);
        worst_ask.push(parsed[3]);
        worst_bid.push(parsed[4]);
    }
    if !saw_header {
        return Err(PricingError::Parse {
            line: 0,
            message: format!("missing header {CSV_HEADER:?}"),
        });
    }
    let get = |key: &str| -> Result<&str> {
        meta.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| PricingError::Parse {
                line: header_line,
                message: format!("missing metadata key {key:?}"),
            })
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| PricingError::Parse {
            line: header_line,
            message: format!("metadata {key:?} is not a number"),
        })
    };
    let meta = CurveMeta {
        model_label: get("model")?.to_string(),
        alpha: num("alpha")?,
        mu: num("mu")?,
        n: num("n")? as usize,
        maturity: num("T")?,
        dx: num("dx")?,
        mode_label: get("mode")?.to_string(),
    };
    let curve = PriceCurve {
        xs,
        ask,
        bid,
        worst_ask,
        worst_bid,
        meta,
    };
    curve.validate()?;
    Ok(curve)
}

pub fn load_curve_csv(path: &Path) -> Result<PriceCurve> {
    read_curve_csv(BufReader::new(File::open(path)?))
}
