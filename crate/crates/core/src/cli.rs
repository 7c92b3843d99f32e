//! Configuration-driven experiment runner.
//!
//! The binary front end reads a plain-text config (`[section]` headers with
//! `key = value` lines), runs one of seven canned pricing experiments, and
//! writes deterministic CSV files plus a standalone Python plot script per
//! run. All numeric output goes through the engine's 17-significant-digit
//! serialization, so identical configs (at worker count 1) reproduce
//! byte-identical files.
//!
//! Config errors — unknown sections or keys, missing keys, malformed
//! numbers — are reported with the offending line number before any
//! computation starts. Model or pricing failures are reported verbatim and
//! exit non-zero.

use std::cell::Cell;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::analytics::{implied_bachelier_vol, Payoff, DEFAULT_VOL_TOL};
use crate::engine::{
    self, convergence_table, iterate_ask, iterate_worst_case, price_curve, save_curve_csv,
    EngineConfig, IterationMode, DEFAULT_COARSE_STRIDE, DEFAULT_DX,
};
use crate::error::{PricingError, Result};
use crate::models::{
    make_binomial, make_normal_family, make_trinomial, make_uncertain_binomial, make_uniform,
    SublinearModel, DEFAULT_QUAD_NODES, DEFAULT_SIGMA_GRID, DEFAULT_TRUNC,
};
use crate::risk::{HedgeConstraint, RiskProfile};

/// Command-line interface: `run <config>` and `list`.
#[derive(Debug, Parser)]
#[command(
    name = "riskprice",
    about = "Risk-based bid/ask pricing of European claims under volatility uncertainty",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file
    Run {
        /// Path to the experiment config
        config: PathBuf,
        /// Output directory (overrides the config's [output] dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for grid sweeps (overrides the config)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the available experiment kinds
    List,
}

/// Entry point for the binary; returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", list_experiments());
            0
        }
        Command::Run {
            config,
            out,
            workers,
        } => match execute(&config, out.as_deref(), workers) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

const LIST_TEXT: &str = "\
price_curve        ask/bid and worst-case price curves for one factor model (Fig 1)
model_comparison   ask curves and implied vols across binomial/trinomial/uniform factors (Fig 2)
uncertainty_sweep  ask curves for widening volatility-uncertainty bands (Fig 3)
alpha_sweep        ask curves for growing risk aversion against the worst-case curve (Fig 4)
bid_ask            bid/ask interval inside the worst-case interval for one model (Fig 5)
convergence_table  ask price at a single spot for increasing step counts (Fig 1)
implied_vol_curve  implied volatility of the ask curve per spot (Fig 2)
";

/// Stable one-line-per-experiment catalog, naming the result figure each
/// experiment reproduces.
pub fn list_experiments() -> &'static str {
    LIST_TEXT
}

// ---------------------------------------------------------------------------
// config file parsing
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Entry {
    line: usize,
    value: String,
    used: Cell<bool>,
}

#[derive(Debug)]
struct SectionData {
    name: String,
    line: usize,
    entries: Vec<(String, Entry)>,
}

impl SectionData {
    fn find(&self, key: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, e)| e)
    }

    /// Optional string value; marks the key as consumed.
    fn get(&self, key: &str) -> Option<&str> {
        self.find(key).map(|e| {
            e.used.set(true);
            e.value.as_str()
        })
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| PricingError::Config {
            line: self.line,
            message: format!("missing key '{key}' in [{}]", self.name),
        })
    }

    fn key_line(&self, key: &str) -> usize {
        self.find(key).map_or(self.line, |e| e.line)
    }

    fn parse_value<T: FromStr>(&self, key: &str, raw: &str, what: &str) -> Result<T> {
        raw.trim().parse().map_err(|_| PricingError::Config {
            line: self.key_line(key),
            message: format!("key '{key}' in [{}]: invalid {what} '{}'", self.name, raw.trim()),
        })
    }

    fn parse_f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        self.parse_value(key, raw, "number")
    }

    fn parse_f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            Some(raw) => Ok(Some(self.parse_value(key, raw, "number")?)),
            None => Ok(None),
        }
    }

    fn parse_usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        self.parse_value(key, raw, "integer")
    }

    fn parse_usize_opt(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            Some(raw) => Ok(Some(self.parse_value(key, raw, "integer")?)),
            None => Ok(None),
        }
    }

    fn parse_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?.to_owned();
        raw.split(',')
            .map(|tok| self.parse_value(key, tok, "number"))
            .collect()
    }

    fn parse_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.require(key)?.to_owned();
        raw.split(',')
            .map(|tok| self.parse_value(key, tok, "integer"))
            .collect()
    }

    /// Error at this key's line (for semantic rejections of present keys).
    fn reject(&self, key: &str, message: impl fmt::Display) -> PricingError {
        PricingError::Config {
            line: self.key_line(key),
            message: format!("key '{key}' in [{}]: {message}", self.name),
        }
    }
}

#[derive(Debug)]
struct ConfigDoc {
    sections: Vec<SectionData>,
}

impl ConfigDoc {
    fn section(&self, name: &str) -> Option<&SectionData> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn require_section(&self, name: &str) -> Result<&SectionData> {
        self.section(name).ok_or_else(|| PricingError::Config {
            line: 0,
            message: format!("missing section [{name}]"),
        })
    }

    /// Every key must have been read by the chosen experiment; leftovers are
    /// reported with their line so typos never pass silently.
    fn check_fully_consumed(&self, experiment: &str) -> Result<()> {
        for sec in &self.sections {
            for (key, entry) in &sec.entries {
                if !entry.used.get() {
                    return Err(PricingError::Config {
                        line: entry.line,
                        message: format!(
                            "unused key '{key}' in [{}] (not recognized by experiment '{experiment}')",
                            sec.name
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

fn parse_config(text: &str) -> Result<ConfigDoc> {
    let mut sections: Vec<SectionData> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(body) = s.strip_prefix('[') {
            let Some(name) = body.strip_suffix(']') else {
                return Err(PricingError::Config {
                    line,
                    message: format!("unterminated section header '{s}'"),
                });
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(PricingError::Config {
                    line,
                    message: "empty section name".into(),
                });
            }
            if sections.iter().any(|sec| sec.name == name) {
                return Err(PricingError::Config {
                    line,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.push(SectionData {
                name: name.to_owned(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = s.split_once('=') else {
            return Err(PricingError::Config {
                line,
                message: format!("expected 'key = value' or '[section]', got '{s}'"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(PricingError::Config {
                line,
                message: "empty key".into(),
            });
        }
        let Some(current) = sections.last_mut() else {
            return Err(PricingError::Config {
                line,
                message: format!("key '{key}' appears before any [section] header"),
            });
        };
        if current.entries.iter().any(|(k, _)| k == key) {
            return Err(PricingError::Config {
                line,
                message: format!("duplicate key '{key}' in [{}]", current.name),
            });
        }
        current.entries.push((
            key.to_owned(),
            Entry {
                line,
                value: value.to_owned(),
                used: Cell::new(false),
            },
        ));
    }
    Ok(ConfigDoc { sections })
}

// ---------------------------------------------------------------------------
// experiment dispatch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExperimentKind {
    PriceCurve,
    ModelComparison,
    UncertaintySweep,
    AlphaSweep,
    BidAsk,
    ConvergenceTable,
    ImpliedVolCurve,
}

impl ExperimentKind {
    fn parse(raw: &str, line: usize) -> Result<Self> {
        match raw {
            "price_curve" => Ok(ExperimentKind::PriceCurve),
            "model_comparison" => Ok(ExperimentKind::ModelComparison),
            "uncertainty_sweep" => Ok(ExperimentKind::UncertaintySweep),
            "alpha_sweep" => Ok(ExperimentKind::AlphaSweep),
            "bid_ask" => Ok(ExperimentKind::BidAsk),
            "convergence_table" => Ok(ExperimentKind::ConvergenceTable),
            "implied_vol_curve" => Ok(ExperimentKind::ImpliedVolCurve),
            other => Err(PricingError::Config {
                line,
                message: format!(
                    "unknown experiment '{other}'; expected one of price_curve, \
                     model_comparison, uncertainty_sweep, alpha_sweep, bid_ask, \
                     convergence_table, implied_vol_curve"
                ),
            }),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::PriceCurve => "price_curve",
            ExperimentKind::ModelComparison => "model_comparison",
            ExperimentKind::UncertaintySweep => "uncertainty_sweep",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::BidAsk => "bid_ask",
            ExperimentKind::ConvergenceTable => "convergence_table",
            ExperimentKind::ImpliedVolCurve => "implied_vol_curve",
        }
    }
}

type Plan = Box<dyn FnOnce() -> Result<Vec<PathBuf>>>;

/// Loads and validates the config, runs the selected experiment, and returns
/// the paths of all files written. `out_override` and `workers_override`
/// mirror the `--out` and `--workers` flags.
pub fn execute(
    config_path: &Path,
    out_override: Option<&Path>,
    workers_override: Option<usize>,
) -> Result<Vec<PathBuf>> {
    if workers_override == Some(0) {
        return Err(PricingError::invalid("worker count must be at least 1"));
    }
    let text = std::fs::read_to_string(config_path)?;
    let doc = parse_config(&text)?;

    let exp = doc.require_section("experiment")?;
    let kind_raw = exp.require("kind")?.to_owned();
    let kind = ExperimentKind::parse(&kind_raw, exp.key_line("kind"))?;
    let name = exp
        .get("name")
        .map(str::to_owned)
        .unwrap_or_else(|| kind.as_str().to_owned());
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(exp.reject(
            "name",
            "output name must be non-empty ASCII letters, digits, '_' or '-'",
        ));
    }

    // consume [output] dir even when --out overrides it
    let cfg_dir = doc
        .section("output")
        .and_then(|s| s.get("dir"))
        .map(str::to_owned);
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or(cfg_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    // parse everything (consuming keys) before computing or writing anything
    let plan = match kind {
        ExperimentKind::PriceCurve => {
            plan_price_and_spread(&doc, &name, &out_dir, workers_override, false)?
        }
        ExperimentKind::BidAsk => {
            plan_price_and_spread(&doc, &name, &out_dir, workers_override, true)?
        }
        ExperimentKind::ModelComparison => {
            plan_model_comparison(&doc, &name, &out_dir, workers_override)?
        }
        ExperimentKind::UncertaintySweep => {
            plan_uncertainty_sweep(&doc, &name, &out_dir, workers_override)?
        }
        ExperimentKind::AlphaSweep => plan_alpha_sweep(&doc, &name, &out_dir, workers_override)?,
        ExperimentKind::ConvergenceTable => {
            plan_convergence_table(&doc, &name, &out_dir, workers_override)?
        }
        ExperimentKind::ImpliedVolCurve => {
            plan_implied_vol_curve(&doc, &name, &out_dir, workers_override)?
        }
    };
    doc.check_fully_consumed(kind.as_str())?;

    std::fs::create_dir_all(&out_dir)?;
    plan()
}

// ---------------------------------------------------------------------------
// config block parsers
// ---------------------------------------------------------------------------

fn parse_model(sec: &SectionData) -> Result<SublinearModel> {
    let kind = sec.require("kind")?.to_owned();
    let sigma = sec.parse_f64("sigma")?;
    match kind.as_str() {
        "binomial" => make_binomial(sigma),
        "trinomial" => make_trinomial(sigma),
        "uniform" => {
            let nodes = sec.parse_usize_opt("quad_nodes")?.unwrap_or(DEFAULT_QUAD_NODES);
            make_uniform(sigma, nodes)
        }
        "uncertain_binomial" => {
            let u = sec.parse_f64("uncertainty")?;
            let m = sec.parse_usize_opt("scenarios")?.unwrap_or(DEFAULT_SIGMA_GRID);
            make_uncertain_binomial(sigma, u, m)
        }
        "normal_family" => {
            let u = sec.parse_f64("uncertainty")?;
            let m = sec.parse_usize_opt("scenarios")?.unwrap_or(DEFAULT_SIGMA_GRID);
            let nodes = sec.parse_usize_opt("quad_nodes")?.unwrap_or(DEFAULT_QUAD_NODES);
            let trunc = sec.parse_f64_opt("trunc")?.unwrap_or(DEFAULT_TRUNC);
            make_normal_family(&sigma_grid(sigma, u, m)?, trunc, nodes)
        }
        other => Err(sec.reject(
            "kind",
            format!(
                "unknown model '{other}'; expected binomial, trinomial, uniform, \
                 uncertain_binomial, or normal_family"
            ),
        )),
    }
}

/// Uniform volatility grid `[sigma - u, sigma + u]` with `m` points, exact at
/// the endpoints.
fn sigma_grid(sigma: f64, u: f64, m: usize) -> Result<Vec<f64>> {
    if !(u.is_finite() && u >= 0.0) {
        return Err(PricingError::invalid(format!(
            "volatility uncertainty must be non-negative, got {u}"
        )));
    }
    if u >= sigma {
        return Err(PricingError::invalid(format!(
            "normal family requires u < sigma0, got u = {u}, sigma0 = {sigma}"
        )));
    }
    if m == 0 {
        return Err(PricingError::invalid("scenario count must be at least 1"));
    }
    if m == 1 || u == 0.0 {
        return Ok(vec![sigma]);
    }
    let mut grid = Vec::with_capacity(m);
    grid.push(sigma - u);
    for j in 1..m - 1 {
        grid.push(sigma - u + (2.0 * u * j as f64) / (m - 1) as f64);
    }
    grid.push(sigma + u);
    Ok(grid)
}

fn parse_payoff(sec: &SectionData) -> Result<Payoff> {
    let kind = sec.require("kind")?.to_owned();
    match kind.as_str() {
        "butterfly" => Payoff::butterfly(
            sec.parse_f64("k_lo")?,
            sec.parse_f64("k_mid")?,
            sec.parse_f64("k_hi")?,
        ),
        "call" => Payoff::call(sec.parse_f64("strike")?),
        "put" => Payoff::put(sec.parse_f64("strike")?),
        other => Err(sec.reject(
            "kind",
            format!("unknown payoff '{other}'; expected butterfly, call, or put"),
        )),
    }
}

fn parse_profile(sec: &SectionData) -> Result<RiskProfile> {
    let alpha = sec.parse_f64("alpha")?;
    let constraint = match sec.parse_f64_opt("volume_bound")? {
        Some(r) => HedgeConstraint::VolumeBound(r),
        None => HedgeConstraint::Unconstrained,
    };
    RiskProfile::new(alpha, constraint)
}

struct MarketBlock {
    mu: f64,
    maturity: f64,
    steps: usize,
}

fn parse_market(sec: &SectionData, with_steps: bool) -> Result<MarketBlock> {
    Ok(MarketBlock {
        mu: sec.parse_f64("mu")?,
        maturity: sec.parse_f64("maturity")?,
        steps: if with_steps { sec.parse_usize("steps")? } else { 0 },
    })
}

fn parse_mode(sec: &SectionData) -> Result<IterationMode> {
    let mode = sec.get("mode").unwrap_or("direct").to_owned();
    let stride = sec.parse_usize_opt("stride")?;
    match mode.as_str() {
        "direct" => {
            if stride.is_some() {
                return Err(sec.reject("stride", "stride requires mode = optinterp"));
            }
            Ok(IterationMode::Direct)
        }
        "optinterp" => Ok(IterationMode::OptInterp {
            coarse_stride: stride.unwrap_or(DEFAULT_COARSE_STRIDE),
        }),
        other => Err(sec.reject(
            "mode",
            format!("unknown mode '{other}'; expected direct or optinterp"),
        )),
    }
}

fn resolve_workers(sec: &SectionData, workers_override: Option<usize>) -> Result<usize> {
    let cfg = sec.parse_usize_opt("workers")?;
    Ok(workers_override.or(cfg).unwrap_or(1))
}

/// Interval-target engine block shared by the curve experiments.
fn parse_engine_interval(
    sec: &SectionData,
    market: &MarketBlock,
    workers_override: Option<usize>,
) -> Result<EngineConfig> {
    let mut config = EngineConfig::new(
        sec.parse_f64("target_lo")?,
        sec.parse_f64("target_hi")?,
        market.steps,
        market.maturity,
    );
    config.dx = sec.parse_f64_opt("dx")?.unwrap_or(DEFAULT_DX);
    config.mode = parse_mode(sec)?;
    config.workers = resolve_workers(sec, workers_override)?;
    config.validate()?;
    Ok(config)
}

fn require_butterfly(payoff: &Payoff, sec: &SectionData) -> Result<(f64, f64, f64)> {
    match payoff {
        Payoff::Butterfly { k_lo, k_mid, k_hi } => Ok((*k_lo, *k_mid, *k_hi)),
        other => Err(PricingError::Config {
            line: sec.line,
            message: format!(
                "implied volatilities need a butterfly payoff, got {other} in [{}]",
                sec.name
            ),
        }),
    }
}

// ---------------------------------------------------------------------------
// experiments
// ---------------------------------------------------------------------------

/// `price_curve` and `bid_ask`: one model, all four curves in one CSV. The
/// two experiments differ only in the emphasis of the companion plot.
fn plan_price_and_spread(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
    spread_plot: bool,
) -> Result<Plan> {
    let model = parse_model(doc.require_section("model")?)?;
    let payoff = parse_payoff(doc.require_section("payoff")?)?;
    let profile = parse_profile(doc.require_section("profile")?)?;
    let market = parse_market(doc.require_section("market")?, true)?;
    let config = parse_engine_interval(doc.require_section("engine")?, &market, workers_override)?;

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let curve = price_curve(|x| payoff.eval(x), &model, &profile, market.mu, &config)?;
        let csv = out_dir.join(format!("{name}.csv"));
        save_curve_csv(&curve, &csv)?;
        let script = out_dir.join(format!("{name}_plot.py"));
        let body = if spread_plot {
            spread_plot_body(&name)
        } else {
            curve_plot_body(&name)
        };
        write_plot_script(&script, &format!("{name} price curves"), &body)?;
        Ok(vec![csv, script])
    }))
}

/// `model_comparison`: binomial, trinomial, and uniform factors at equal
/// variance; one curve CSV per family plus an implied-volatility table.
fn plan_model_comparison(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
) -> Result<Plan> {
    let model_sec = doc.require_section("model")?;
    let sigma = model_sec.parse_f64("sigma")?;
    let quad_nodes = model_sec
        .parse_usize_opt("quad_nodes")?
        .unwrap_or(DEFAULT_QUAD_NODES);
    let payoff_sec = doc.require_section("payoff")?;
    let payoff = parse_payoff(payoff_sec)?;
    let strikes = require_butterfly(&payoff, payoff_sec)?;
    let profile = parse_profile(doc.require_section("profile")?)?;
    let market = parse_market(doc.require_section("market")?, true)?;
    let config = parse_engine_interval(doc.require_section("engine")?, &market, workers_override)?;
    let vol_tol = doc
        .require_section("experiment")?
        .parse_f64_opt("vol_tol")?
        .unwrap_or(DEFAULT_VOL_TOL);

    let models = vec![
        ("binomial", make_binomial(sigma)?),
        ("trinomial", make_trinomial(sigma)?),
        ("uniform", make_uniform(sigma, quad_nodes)?),
    ];

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let mut files = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        let mut vol_columns: Vec<Vec<f64>> = Vec::new();
        for (family, model) in &models {
            let curve = price_curve(|x| payoff.eval(x), model, &profile, market.mu, &config)?;
            let vols = implied_vol_column(&curve.xs, &curve.ask, strikes, market.maturity, vol_tol)?;
            xs = curve.xs.clone();
            vol_columns.push(vols);
            let csv = out_dir.join(format!("{name}_{family}.csv"));
            save_curve_csv(&curve, &csv)?;
            files.push(csv);
        }
        let vol_csv = out_dir.join(format!("{name}_implied_vol.csv"));
        let meta = vec![
            ("sigma".to_owned(), display(sigma)),
            ("alpha".to_owned(), display(profile.alpha())),
            ("mu".to_owned(), display(market.mu)),
            ("n".to_owned(), market.steps.to_string()),
            ("T".to_owned(), display(market.maturity)),
            ("dx".to_owned(), display(config.dx)),
            ("mode".to_owned(), config.mode.to_string()),
        ];
        let header: Vec<String> = ["x", "binomial", "trinomial", "uniform"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut columns = vec![xs];
        columns.extend(vol_columns);
        write_table_csv(&vol_csv, &meta, &header, &columns)?;
        files.push(vol_csv);

        let script = out_dir.join(format!("{name}_plot.py"));
        write_plot_script(
            &script,
            &format!("{name} model comparison"),
            &comparison_plot_body(&name),
        )?;
        files.push(script);
        Ok(files)
    }))
}

/// `uncertainty_sweep`: uncertain-binomial ask curves for each uncertainty
/// width in `u_list`, in one combined CSV.
fn plan_uncertainty_sweep(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
) -> Result<Plan> {
    let model_sec = doc.require_section("model")?;
    let sigma = model_sec.parse_f64("sigma")?;
    let scenarios = model_sec
        .parse_usize_opt("scenarios")?
        .unwrap_or(DEFAULT_SIGMA_GRID);
    let u_list = doc.require_section("experiment")?.parse_f64_list("u_list")?;
    if u_list.is_empty() {
        return Err(PricingError::invalid("u_list must not be empty"));
    }
    let payoff = parse_payoff(doc.require_section("payoff")?)?;
    let profile = parse_profile(doc.require_section("profile")?)?;
    let market = parse_market(doc.require_section("market")?, true)?;
    let config = parse_engine_interval(doc.require_section("engine")?, &market, workers_override)?;

    // build every model up front so a bad u fails before any pricing
    let models = u_list
        .iter()
        .map(|&u| Ok((u, make_uncertain_binomial(sigma, u, scenarios)?)))
        .collect::<Result<Vec<_>>>()?;

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let mut xs = Vec::new();
        let mut header = vec!["x".to_owned()];
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (u, model) in &models {
            let res = iterate_ask(|x| payoff.eval(x), model, &profile, market.mu, &config)?;
            xs = res.xs;
            header.push(format!("ask_u{u}"));
            columns.push(res.values);
        }
        let mut all = vec![xs];
        all.extend(columns);
        let meta = vec![
            ("sigma".to_owned(), display(sigma)),
            ("scenarios".to_owned(), scenarios.to_string()),
            ("alpha".to_owned(), display(profile.alpha())),
            ("mu".to_owned(), display(market.mu)),
            ("n".to_owned(), market.steps.to_string()),
            ("T".to_owned(), display(market.maturity)),
            ("dx".to_owned(), display(config.dx)),
            ("mode".to_owned(), config.mode.to_string()),
        ];
        let csv = out_dir.join(format!("{name}.csv"));
        write_table_csv(&csv, &meta, &header, &all)?;
        let script = out_dir.join(format!("{name}_plot.py"));
        let cols: Vec<String> = header[1..].to_vec();
        write_plot_script(
            &script,
            &format!("{name} uncertainty sweep"),
            &multi_column_plot_body(&name, &cols, None),
        )?;
        Ok(vec![csv, script])
    }))
}

/// `alpha_sweep`: ask curves for each risk-aversion level in `alpha_list`,
/// with the worst-case ask as the limiting reference column.
fn plan_alpha_sweep(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
) -> Result<Plan> {
    let model = parse_model(doc.require_section("model")?)?;
    let alpha_list = doc
        .require_section("experiment")?
        .parse_f64_list("alpha_list")?;
    if alpha_list.is_empty() {
        return Err(PricingError::invalid("alpha_list must not be empty"));
    }
    let profiles = alpha_list
        .iter()
        .map(|&a| Ok((a, RiskProfile::unconstrained(a)?)))
        .collect::<Result<Vec<_>>>()?;
    let payoff = parse_payoff(doc.require_section("payoff")?)?;
    let market = parse_market(doc.require_section("market")?, true)?;
    let config = parse_engine_interval(doc.require_section("engine")?, &market, workers_override)?;

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let mut header = vec!["x".to_owned()];
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut xs = Vec::new();
        for (alpha, profile) in &profiles {
            let res = iterate_ask(|x| payoff.eval(x), &model, profile, market.mu, &config)?;
            xs = res.xs;
            header.push(format!("ask_a{alpha}"));
            columns.push(res.values);
        }
        let worst = iterate_worst_case(|x| payoff.eval(x), &model, &config)?;
        header.push("worst_ask".to_owned());
        columns.push(worst.values);

        let mut all = vec![xs];
        all.extend(columns);
        let meta = vec![
            ("model".to_owned(), model.label().to_owned()),
            ("mu".to_owned(), display(market.mu)),
            ("n".to_owned(), market.steps.to_string()),
            ("T".to_owned(), display(market.maturity)),
            ("dx".to_owned(), display(config.dx)),
            ("mode".to_owned(), config.mode.to_string()),
        ];
        let csv = out_dir.join(format!("{name}.csv"));
        write_table_csv(&csv, &meta, &header, &all)?;
        let script = out_dir.join(format!("{name}_plot.py"));
        let ask_cols: Vec<String> = header[1..header.len() - 1].to_vec();
        write_plot_script(
            &script,
            &format!("{name} risk-aversion sweep"),
            &multi_column_plot_body(&name, &ask_cols, Some("worst_ask")),
        )?;
        Ok(vec![csv, script])
    }))
}

/// `convergence_table`: ask price at one spot for each step count in
/// `n_list`.
fn plan_convergence_table(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
) -> Result<Plan> {
    let model = parse_model(doc.require_section("model")?)?;
    let payoff = parse_payoff(doc.require_section("payoff")?)?;
    let profile = parse_profile(doc.require_section("profile")?)?;
    let market = parse_market(doc.require_section("market")?, false)?;
    let n_list = doc.require_section("experiment")?.parse_usize_list("n_list")?;
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(PricingError::invalid(
            "n_list must be non-empty with positive step counts",
        ));
    }
    let engine_sec = doc.require_section("engine")?;
    let target_x = engine_sec.parse_f64("target_x")?;
    let dx = engine_sec.parse_f64_opt("dx")?.unwrap_or(DEFAULT_DX);
    let workers = resolve_workers(engine_sec, workers_override)?;

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let rows = convergence_table(
            |x| payoff.eval(x),
            &model,
            &profile,
            market.mu,
            target_x,
            market.maturity,
            &n_list,
            dx,
            workers,
        )?;
        let csv = out_dir.join(format!("{name}.csv"));
        let mut w = BufWriter::new(File::create(&csv)?);
        writeln!(w, "# model = {}", model.label())?;
        writeln!(w, "# alpha = {}", profile.alpha())?;
        writeln!(w, "# mu = {}", market.mu)?;
        writeln!(w, "# T = {}", market.maturity)?;
        writeln!(w, "# dx = {dx}")?;
        writeln!(w, "# target_x = {target_x}")?;
        writeln!(w, "n,ask")?;
        for (n, ask) in &rows {
            writeln!(w, "{n},{}", engine::fmt_full(*ask))?;
        }
        w.flush()?;
        let script = out_dir.join(format!("{name}_plot.py"));
        write_plot_script(
            &script,
            &format!("{name} step-count convergence"),
            &convergence_plot_body(&name),
        )?;
        Ok(vec![csv, script])
    }))
}

/// `implied_vol_curve`: implied Bachelier volatility of the ask curve per
/// spot.
fn plan_implied_vol_curve(
    doc: &ConfigDoc,
    name: &str,
    out_dir: &Path,
    workers_override: Option<usize>,
) -> Result<Plan> {
    let model = parse_model(doc.require_section("model")?)?;
    let payoff_sec = doc.require_section("payoff")?;
    let payoff = parse_payoff(payoff_sec)?;
    let strikes = require_butterfly(&payoff, payoff_sec)?;
    let profile = parse_profile(doc.require_section("profile")?)?;
    let market = parse_market(doc.require_section("market")?, true)?;
    let config = parse_engine_interval(doc.require_section("engine")?, &market, workers_override)?;
    let vol_tol = doc
        .require_section("experiment")?
        .parse_f64_opt("vol_tol")?
        .unwrap_or(DEFAULT_VOL_TOL);

    let name = name.to_owned();
    let out_dir = out_dir.to_owned();
    Ok(Box::new(move || {
        let res = iterate_ask(|x| payoff.eval(x), &model, &profile, market.mu, &config)?;
        let vols = implied_vol_column(&res.xs, &res.values, strikes, market.maturity, vol_tol)?;
        let meta = vec![
            ("model".to_owned(), model.label().to_owned()),
            ("alpha".to_owned(), display(profile.alpha())),
            ("mu".to_owned(), display(market.mu)),
            ("n".to_owned(), market.steps.to_string()),
            ("T".to_owned(), display(market.maturity)),
            ("dx".to_owned(), display(config.dx)),
            ("mode".to_owned(), config.mode.to_string()),
        ];
        let header = vec!["x".to_owned(), "ask".to_owned(), "implied_vol".to_owned()];
        let columns = vec![res.xs, res.values, vols];
        let csv = out_dir.join(format!("{name}.csv"));
        write_table_csv(&csv, &meta, &header, &columns)?;
        let script = out_dir.join(format!("{name}_plot.py"));
        write_plot_script(
            &script,
            &format!("{name} implied volatility"),
            &implied_vol_plot_body(&name),
        )?;
        Ok(vec![csv, script])
    }))
}

/// Per-node implied volatility of an ask curve; spots whose price falls
/// outside the attainable Bachelier range yield NaN, other failures abort.
fn implied_vol_column(
    xs: &[f64],
    asks: &[f64],
    strikes: (f64, f64, f64),
    maturity: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    xs.iter()
        .zip(asks)
        .map(|(&x, &price)| match implied_bachelier_vol(price, x, strikes, maturity, tol) {
            Ok(v) => Ok(v),
            Err(PricingError::PriceOutOfRange { .. }) => Ok(f64::NAN),
            Err(e) => Err(e),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// file writers
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal for metadata values.
fn display(v: f64) -> String {
    format!("{v}")
}

/// Writes a generic aligned-column CSV in the engine's format: `#` metadata,
/// one header row, 17-significant-digit values.
fn write_table_csv(
    path: &Path,
    meta: &[(String, String)],
    header: &[String],
    columns: &[Vec<f64>],
) -> Result<()> {
    debug_assert_eq!(header.len(), columns.len());
    let rows = columns.first().map_or(0, Vec::len);
    for col in columns {
        debug_assert_eq!(col.len(), rows);
    }
    let mut w = BufWriter::new(File::create(path)?);
    for (key, value) in meta {
        writeln!(w, "# {key} = {value}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..rows {
        let row: Vec<String> = columns.iter().map(|c| engine::fmt_full(c[i])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

const PY_PRELUDE: &str = r##"import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    """Parse a result CSV: '#' metadata lines, a header row, float columns."""
    meta = {}
    header = None
    rows = []
    with open(os.path.join(HERE, name)) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(tok) for tok in line.split(",")])
    cols = {h: [r[i] for r in rows] for i, h in enumerate(header)}
    return meta, cols
"##;

fn write_plot_script(path: &Path, title: &str, body: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "#!/usr/bin/env python3")?;
    writeln!(w, "\"\"\"Render {title} from the CSV files beside this script.\"\"\"")?;
    writeln!(w, "{PY_PRELUDE}")?;
    writeln!(w, "{body}")?;
    w.flush()?;
    Ok(())
}

fn curve_plot_body(name: &str) -> String {
    format!(
        r#"meta, cols = load("{name}.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
ax.plot(cols["x"], cols["ask"], label="risk-based ask")
ax.plot(cols["x"], cols["bid"], label="risk-based bid")
ax.plot(cols["x"], cols["worst_ask"], "--", label="worst-case ask")
ax.plot(cols["x"], cols["worst_bid"], "--", label="worst-case bid")
ax.set_xlabel("initial value x")
ax.set_ylabel("price")
ax.set_title("model " + meta["model"] + ", alpha=" + meta["alpha"] + ", mu=" + meta["mu"])
ax.legend()
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    )
}

fn spread_plot_body(name: &str) -> String {
    format!(
        r#"meta, cols = load("{name}.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
ax.fill_between(cols["x"], cols["worst_bid"], cols["worst_ask"], alpha=0.2, label="worst-case interval")
ax.fill_between(cols["x"], cols["bid"], cols["ask"], alpha=0.4, label="risk-based interval")
ax.plot(cols["x"], cols["ask"], lw=1.0)
ax.plot(cols["x"], cols["bid"], lw=1.0)
ax.set_xlabel("initial value x")
ax.set_ylabel("price")
ax.set_title("bid/ask intervals, model " + meta["model"] + ", alpha=" + meta["alpha"])
ax.legend()
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    )
}

fn comparison_plot_body(name: &str) -> String {
    format!(
        r#"fig, (ax_price, ax_vol) = plt.subplots(1, 2, figsize=(11.0, 4.5))
for family in ["binomial", "trinomial", "uniform"]:
    meta, cols = load("{name}_" + family + ".csv")
    ax_price.plot(cols["x"], cols["ask"], label=family)
vol_meta, vol_cols = load("{name}_implied_vol.csv")
for family in ["binomial", "trinomial", "uniform"]:
    ax_vol.plot(vol_cols["x"], vol_cols[family], label=family)
ax_price.set_xlabel("initial value x")
ax_price.set_ylabel("ask price")
ax_price.set_title("risk-based ask by factor family")
ax_price.legend()
ax_vol.set_xlabel("initial value x")
ax_vol.set_ylabel("implied Bachelier volatility")
ax_vol.set_title("implied volatility, sigma=" + vol_meta["sigma"])
ax_vol.legend()
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    )
}

fn multi_column_plot_body(name: &str, columns: &[String], dashed: Option<&str>) -> String {
    let mut body = format!(
        r#"meta, cols = load("{name}.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
"#
    );
    for col in columns {
        body.push_str(&format!(
            "ax.plot(cols[\"x\"], cols[\"{col}\"], label=\"{col}\")\n"
        ));
    }
    if let Some(col) = dashed {
        body.push_str(&format!(
            "ax.plot(cols[\"x\"], cols[\"{col}\"], \"k--\", label=\"{col}\")\n"
        ));
    }
    body.push_str(&format!(
        r#"ax.set_xlabel("initial value x")
ax.set_ylabel("ask price")
ax.set_title("{name}")
ax.legend()
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    ));
    body
}

fn convergence_plot_body(name: &str) -> String {
    format!(
        r#"meta, cols = load("{name}.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
ax.semilogx(cols["n"], cols["ask"], "o-")
ax.set_xlabel("number of steps n")
ax.set_ylabel("ask price at x = " + meta["target_x"])
ax.set_title("step-count convergence, model " + meta["model"])
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    )
}

fn implied_vol_plot_body(name: &str) -> String {
    format!(
        r#"meta, cols = load("{name}.csv")
fig, (ax_price, ax_vol) = plt.subplots(1, 2, figsize=(11.0, 4.5))
ax_price.plot(cols["x"], cols["ask"])
ax_price.set_xlabel("initial value x")
ax_price.set_ylabel("ask price")
ax_vol.plot(cols["x"], cols["implied_vol"])
ax_vol.set_xlabel("initial value x")
ax_vol.set_ylabel("implied Bachelier volatility")
fig.suptitle("model " + meta["model"] + ", alpha=" + meta["alpha"])
fig.tight_layout()
out_path = os.path.join(HERE, "{name}.png")
fig.savefig(out_path, dpi=150)
print("saved " + out_path)
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parser_reads_sections_and_keys() {
        let text = "\
# comment
[experiment]
kind = price_curve
name = fig1

[market]
mu = 0.05
maturity = 0.5
steps = 200
";
        let doc = parse_config(text).unwrap();
        let exp = doc.section("experiment").unwrap();
        assert_eq!(exp.require("kind").unwrap(), "price_curve");
        assert_eq!(exp.get("name"), Some("fig1"));
        let market = doc.section("market").unwrap();
        assert_eq!(market.parse_f64("mu").unwrap(), 0.05);
        assert_eq!(market.parse_usize("steps").unwrap(), 200);
        assert_eq!(market.parse_f64("maturity").unwrap(), 0.5);
        doc.check_fully_consumed("price_curve").unwrap();
    }

    fn config_error_line(text: &str) -> (usize, String) {
        match parse_config(text).unwrap_err() {
            PricingError::Config { line, message } => (line, message),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn config_parser_reports_line_numbers() {
        let (line, msg) = config_error_line("[a]\nnot a pair\n");
        assert_eq!(line, 2);
        assert!(msg.contains("key = value"), "got: {msg}");

        let (line, msg) = config_error_line("orphan = 1\n");
        assert_eq!(line, 1);
        assert!(msg.contains("before any [section]"), "got: {msg}");

        let (line, msg) = config_error_line("[a]\nx = 1\nx = 2\n");
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate key"), "got: {msg}");

        let (line, msg) = config_error_line("[a]\n[a]\n");
        assert_eq!(line, 2);
        assert!(msg.contains("duplicate section"), "got: {msg}");

        let (line, msg) = config_error_line("[broken\n");
        assert_eq!(line, 1);
        assert!(msg.contains("unterminated"), "got: {msg}");
    }

    #[test]
    fn unused_keys_are_rejected_with_their_line() {
        let doc = parse_config("[experiment]\nkind = price_curve\nbogus = 3\n").unwrap();
        doc.section("experiment").unwrap().get("kind");
        let err = doc.check_fully_consumed("price_curve").unwrap_err();
        match err {
            PricingError::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"), "got: {message}");
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn malformed_numbers_name_key_and_line() {
        let doc = parse_config("[market]\nmu = fast\n").unwrap();
        let err = doc.section("market").unwrap().parse_f64("mu").unwrap_err();
        match err {
            PricingError::Config { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("'mu'"), "got: {message}");
                assert!(message.contains("fast"), "got: {message}");
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn experiment_kind_names_round_trip() {
        for raw in [
            "price_curve",
            "model_comparison",
            "uncertainty_sweep",
            "alpha_sweep",
            "bid_ask",
            "convergence_table",
            "implied_vol_curve",
        ] {
            assert_eq!(ExperimentKind::parse(raw, 1).unwrap().as_str(), raw);
        }
        assert!(ExperimentKind::parse("fancy", 1).is_err());
    }

    #[test]
    fn experiment_catalog_is_stable() {
        let text = list_experiments();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        for line in &lines {
            assert!(line.contains("(Fig "), "no figure reference in: {line}");
        }
        // identical across calls
        assert_eq!(text, list_experiments());
    }

    #[test]
    fn sigma_grids_hit_the_endpoints_exactly() {
        let grid = sigma_grid(0.2, 0.03, 5).unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid[0], 0.2 - 0.03);
        assert_eq!(grid[4], 0.2 + 0.03);
        assert_eq!(sigma_grid(0.2, 0.0, 7).unwrap(), vec![0.2]);
        assert!(sigma_grid(0.2, 0.25, 5).is_err());
    }

    #[test]
    fn model_block_parses_every_family() {
        for (kind, extra) in [
            ("binomial", ""),
            ("trinomial", ""),
            ("uniform", ""),
            ("uncertain_binomial", "uncertainty = 0.03\n"),
            ("normal_family", "uncertainty = 0.03\nscenarios = 3\nquad_nodes = 16\n"),
        ] {
            let text = format!("[model]\nkind = {kind}\nsigma = 0.2\n{extra}");
            let doc = parse_config(&text).unwrap();
            let model = parse_model(doc.section("model").unwrap()).unwrap();
            assert_eq!(model.dim(), 1);
            doc.check_fully_consumed("test").unwrap();
        }

        let doc = parse_config("[model]\nkind = heston\nsigma = 0.2\n").unwrap();
        let err = parse_model(doc.section("model").unwrap()).unwrap_err();
        assert!(err.to_string().contains("heston"), "got: {err}");
    }

    #[test]
    fn stride_requires_interpolation_mode() {
        let doc = parse_config("[engine]\nmode = direct\nstride = 4\n").unwrap();
        let err = parse_mode(doc.section("engine").unwrap()).unwrap_err();
        assert!(err.to_string().contains("optinterp"), "got: {err}");

        let doc = parse_config("[engine]\nmode = optinterp\n").unwrap();
        let mode = parse_mode(doc.section("engine").unwrap()).unwrap();
        assert_eq!(
            mode,
            IterationMode::OptInterp {
                coarse_stride: DEFAULT_COARSE_STRIDE
            }
        );
    }
}
