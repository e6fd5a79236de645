//! The `aoi` command-line front end.
//!
//! Configuration is a flat `key = value` file, overridden by `--set key=value`
//! flags in order. Every output starts with the fully resolved configuration,
//! which parses back to the same [`RunConfig`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bounds::{alpha_relaxed, minimize_psi_over_s, SystemConfig};
use crate::dist::ServiceDistribution;
use crate::error::Error;
use crate::numeric::snapped_floor;
use crate::optimize::{solve_alpha_ubmp, solve_chernoff_ubmp, RateSolution, DEFAULT_GRID_STEP};
use crate::par::{self, derive_seed};
use crate::sim::{simulate_replicated, Policy, SimEstimate, DEFAULT_WARMUP_FRACTION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "aoi",
    version,
    about = "AoI violation bounds, rate optimization and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Write results here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps and replications.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Chernoff and alpha-relaxed bounds over the sweep.
    Bound,
    /// Rates minimizing each bound.
    Optimize,
    /// Simulated violation probability over the sweep.
    Simulate,
    /// Simulated violation probability for every buffer policy.
    Compare,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Optimize => "optimize",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::param(
                "format",
                format!("expected csv or json, got `{other}`"),
            )),
        }
    }
}

/// Which parameter varies across output rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sweep {
    None,
    Rate { min: f64, max: f64, step: f64 },
    AgeLimit { min: f64, max: f64, step: f64 },
}

impl Sweep {
    fn name(&self) -> &'static str {
        match self {
            Sweep::None => "none",
            Sweep::Rate { .. } => "rate",
            Sweep::AgeLimit { .. } => "age_limit",
        }
    }

    /// `min + i·step` for `i = 0..=⌊(max-min)/step⌋`, snapping round-off in the count.
    pub fn points(&self) -> Vec<f64> {
        match *self {
            Sweep::None => Vec::new(),
            Sweep::Rate { min, max, step } | Sweep::AgeLimit { min, max, step } => {
                let n = snapped_floor((max - min) / step) as u64 + 1;
                (0..n).map(|i| min + i as f64 * step).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hops: Vec<ServiceDistribution>,
    pub rate: f64,
    pub age_limit: f64,
    pub sweep: Sweep,
    pub k: u32,
    pub cap_at_one: bool,
    pub grid_step: f64,
    /// Simulated length in arrival periods.
    pub horizon: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub replications: u64,
    /// `None` lets the command choose.
    pub policies: Option<Vec<Policy>>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "hops",
    "service",
    "rate",
    "age_limit",
    "sweep",
    "sweep.min",
    "sweep.max",
    "sweep.step",
    "k",
    "cap_at_one",
    "grid_step",
    "horizon",
    "warmup_fraction",
    "seed",
    "replications",
    "policies",
    "format",
    "output",
];

/// Service law of hop `index` (0-based) when only the kind is given.
pub fn default_hop(kind: &str, index: usize) -> Result<ServiceDistribution, Error> {
    match kind {
        "geometric" | "geo" => {
            ServiceDistribution::geometric(if index == 0 { 0.85 } else { 0.9 }, 1.0)
        }
        other => other.parse(),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.trim()
        .parse()
        .map_err(|_| Error::param(key, format!("cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, Error> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::param(
            key,
            format!("expected a boolean, got `{other}`"),
        )),
    }
}

impl RunConfig {
    /// Build from `(key, value)` pairs; later pairs override earlier ones.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, Error>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.as_ref().trim().to_ascii_lowercase();
            let is_hop = k
                .strip_prefix("hop")
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()));
            if !KEYS.contains(&k.as_str()) && !is_hop {
                return Err(Error::param(k, "unknown configuration key"));
            }
            map.insert(k, v.as_ref().trim().to_string());
        }
        let get = |k: &str| map.get(k).map(String::as_str);

        let n: usize = get("hops")
            .map(|v| parse_num("hops", v))
            .transpose()?
            .unwrap_or(1);
        if n == 0 {
            return Err(Error::param("hops", "must be at least 1"));
        }
        for key in map.keys().filter(|k| k.starts_with("hop") && *k != "hops") {
            let idx: usize = parse_num(key, &key[3..])?;
            if idx == 0 || idx > n {
                return Err(Error::param(
                    key.clone(),
                    format!("hop index outside 1..={n}"),
                ));
            }
        }
        let kind = get("service").unwrap_or("exponential").to_ascii_lowercase();
        let hops = (0..n)
            .map(|i| match get(&format!("hop{}", i + 1)) {
                Some(text) => text.parse(),
                None => default_hop(&kind, i),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mu = hops
            .iter()
            .map(ServiceDistribution::capacity)
            .fold(f64::INFINITY, f64::min);

        let rate: f64 = get("rate")
            .map(|v| parse_num("rate", v))
            .transpose()?
            .unwrap_or(0.4);
        let age_limit: f64 = get("age_limit")
            .map(|v| parse_num("age_limit", v))
            .transpose()?
            .unwrap_or(10.0);
        let sweep_kind = get("sweep").unwrap_or("rate");
        let bound = |key: &str, default: Option<f64>| -> Result<f64, Error> {
            match get(key) {
                Some(v) => parse_num(key, v),
                None => default.ok_or_else(|| Error::param(key, "no default; set it explicitly")),
            }
        };
        let sweep = match sweep_kind {
            "none" => Sweep::None,
            "rate" => Sweep::Rate {
                min: bound("sweep.min", Some(0.2))?,
                max: bound("sweep.max", mu.is_finite().then_some(0.75 * mu))?,
                step: bound("sweep.step", Some(0.025))?,
            },
            "age_limit" => Sweep::AgeLimit {
                min: bound("sweep.min", Some(5.0))?,
                max: bound("sweep.max", Some(15.0))?,
                step: bound("sweep.step", Some(1.0))?,
            },
            other => {
                return Err(Error::param(
                    "sweep",
                    format!("expected rate, age_limit or none, got `{other}`"),
                ))
            }
        };
        if let Sweep::Rate { min, max, step } | Sweep::AgeLimit { min, max, step } = sweep {
            if !(min.is_finite() && max.is_finite() && min < max) {
                return Err(Error::param(
                    "sweep",
                    format!("need min < max, got [{min}, {max}]"),
                ));
            }
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::param(
                    "sweep.step",
                    format!("must be positive, got {step}"),
                ));
            }
            if min <= 0.0 {
                return Err(Error::param(
                    "sweep.min",
                    format!("must be positive, got {min}"),
                ));
            }
        }
        let has_hyper = hops
            .iter()
            .any(|h| matches!(h, ServiceDistribution::HyperExponential { .. }));
        let k: u32 = get("k")
            .map(|v| parse_num("k", v))
            .transpose()?
            .unwrap_or(if has_hyper { 6 } else { 30 });
        if k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        let cap_at_one = get("cap_at_one")
            .map(|v| parse_bool("cap_at_one", v))
            .transpose()?
            .unwrap_or(false);
        let grid_step: f64 = get("grid_step")
            .map(|v| parse_num("grid_step", v))
            .transpose()?
            .unwrap_or(DEFAULT_GRID_STEP);
        let horizon: f64 = get("horizon")
            .map(|v| parse_num("horizon", v))
            .transpose()?
            .unwrap_or(1e7);
        let warmup_fraction: f64 = get("warmup_fraction")
            .map(|v| parse_num("warmup_fraction", v))
            .transpose()?
            .unwrap_or(DEFAULT_WARMUP_FRACTION);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive"));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::param("warmup_fraction", "must lie in [0, 1)"));
        }
        let seed = get("seed")
            .map(|v| parse_num("seed", v))
            .transpose()?
            .unwrap_or(1);
        let replications = get("replications")
            .map(|v| parse_num("replications", v))
            .transpose()?
            .unwrap_or(1);
        if replications == 0 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        let policies = get("policies")
            .map(|v| {
                v.split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<Policy>, _>>()
            })
            .transpose()?;
        if policies.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::param("policies", "list is empty"));
        }
        let format = get("format")
            .map(str::parse)
            .transpose()?
            .unwrap_or(Format::Csv);
        let output = get("output").filter(|s| !s.is_empty()).map(PathBuf::from);
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::param("rate", "must be positive"));
        }
        if !(age_limit > 0.0 && age_limit.is_finite()) {
            return Err(Error::param("age_limit", "must be positive"));
        }
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(Error::param("grid_step", "must be positive"));
        }
        Ok(RunConfig {
            hops,
            rate,
            age_limit,
            sweep,
            k,
            cap_at_one,
            grid_step,
            horizon,
            warmup_fraction,
            seed,
            replications,
            policies,
            format,
            output,
        })
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::param("config", format!("line {}: expected key = value", i + 1))
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Every setting as explicit `(key, value)` pairs, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("hops".to_string(), self.hops.len().to_string())];
        for (i, h) in self.hops.iter().enumerate() {
            out.push((format!("hop{}", i + 1), h.to_string()));
        }
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("rate", self.rate.to_string());
        push("age_limit", self.age_limit.to_string());
        push("sweep", self.sweep.name().to_string());
        if let Sweep::Rate { min, max, step } | Sweep::AgeLimit { min, max, step } = self.sweep {
            push("sweep.min", min.to_string());
            push("sweep.max", max.to_string());
            push("sweep.step", step.to_string());
        }
        push("k", self.k.to_string());
        push("cap_at_one", self.cap_at_one.to_string());
        push("grid_step", self.grid_step.to_string());
        push("horizon", self.horizon.to_string());
        push("warmup_fraction", self.warmup_fraction.to_string());
        push("seed", self.seed.to_string());
        push("replications", self.replications.to_string());
        if let Some(p) = &self.policies {
            push(
                "policies",
                p.iter().map(Policy::name).collect::<Vec<_>>().join(","),
            );
        }
        push("format", self.format.to_string());
        if let Some(o) = &self.output {
            push("output", o.display().to_string());
        }
        out
    }

    fn system(&self, rate: f64, age_limit: f64) -> Result<SystemConfig, Error> {
        SystemConfig::new(self.hops.clone(), rate, age_limit)
    }

    /// `(rate, age_limit)` at every sweep point.
    fn operating_points(&self) -> Vec<(f64, f64)> {
        match self.sweep {
            Sweep::None => vec![(self.rate, self.age_limit)],
            Sweep::Rate { .. } => self
                .sweep
                .points()
                .into_iter()
                .map(|r| (r, self.age_limit))
                .collect(),
            Sweep::AgeLimit { .. } => self
                .sweep
                .points()
                .into_iter()
                .map(|d| (self.rate, d))
                .collect(),
        }
    }

    fn sweep_value(&self, point: (f64, f64)) -> f64 {
        match self.sweep {
            Sweep::AgeLimit { .. } => point.1,
            _ => point.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Empty, Cell::Num)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) | Cell::Empty => Value::Null,
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
    /// Free-form `key: value` notes appended after the rows.
    notes: Vec<(String, String)>,
}

fn render(cmd: Command, run: &RunConfig, table: &Table) -> String {
    let pairs = run.to_pairs();
    match run.format {
        Format::Csv => {
            let mut s = format!("# aoi {}\n", cmd.name());
            for (k, v) in &pairs {
                s.push_str(&format!("# {k}={v}\n"));
            }
            s.push_str(&table.columns.join(","));
            s.push('\n');
            for r in &table.rows {
                s.push_str(&r.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            for (k, v) in &table.notes {
                s.push_str(&format!("# {k}: {v}\n"));
            }
            s
        }
        Format::Json => {
            let config: serde_json::Map<String, Value> = pairs
                .into_iter()
                .map(|(k, v)| (k, Value::String(v)))
                .collect();
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    Value::Object(
                        table
                            .columns
                            .iter()
                            .zip(r)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect(),
                    )
                })
                .collect();
            let notes: serde_json::Map<String, Value> = table
                .notes
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            let doc = json!({
                "command": cmd.name(),
                "config": config,
                "rows": rows,
                "notes": notes,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            s
        }
    }
}

/// Extract the resolved-configuration block from a CSV output.
pub fn config_from_csv(text: &str) -> Result<RunConfig, Error> {
    let pairs: Vec<(String, String)> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    RunConfig::from_pairs(pairs)
}

/// Extract the resolved-configuration block from a JSON output.
pub fn config_from_json(text: &str) -> Result<RunConfig, Error> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::param("json", e.to_string()))?;
    let cfg = doc
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::param("json", "missing config object"))?;
    RunConfig::from_pairs(
        cfg.iter()
            .map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string())),
    )
}

enum Outcome {
    Table(Table),
    Infeasible(Table, String),
}

fn cap(run: &RunConfig, v: f64) -> f64 {
    if run.cap_at_one {
        v.min(1.0)
    } else {
        v
    }
}

fn cmd_bound(run: &RunConfig) -> Result<Outcome, Error> {
    let points = run.operating_points();
    let rows = par::map_indexed(points.len(), |i| -> Result<Vec<Cell>, Error> {
        let (r, d) = points[i];
        let cfg = run.system(r, d)?;
        let mut row = vec![
            Cell::Num(run.sweep_value(points[i])),
            Cell::Num(r),
            Cell::Num(d),
        ];
        if !cfg.is_feasible() {
            row.extend([
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
            ]);
            row.push(Cell::Text("infeasible".into()));
            return Ok(row);
        }
        let ch = minimize_psi_over_s(&cfg)?;
        let (alpha_value, alpha, s_alpha, status) = match alpha_relaxed(&cfg, run.k) {
            Ok(a) => (Some(cap(run, a.value)), a.alpha, a.s_star, "ok"),
            Err(Error::Unsupported(_)) => (None, None, None, "alpha_unsupported"),
            Err(Error::BudgetExceeded { .. }) => (None, None, None, "alpha_budget_exceeded"),
            Err(e) => return Err(e),
        };
        row.extend([
            Cell::Num(cap(run, ch.value)),
            Cell::opt(alpha_value),
            Cell::opt(alpha),
            Cell::opt(ch.s_star),
            Cell::opt(s_alpha),
            Cell::Text(status.into()),
        ]);
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let feasible = rows
        .iter()
        .filter(|r| !matches!(r.last(), Some(Cell::Text(s)) if s == "infeasible"))
        .count();
    let table = Table {
        columns: vec![
            "sweep_value",
            "rate",
            "age_limit",
            "chernoff",
            "alpha_relaxed",
            "alpha",
            "s_star_chernoff",
            "s_star_alpha",
            "status",
        ],
        rows,
        notes: Vec::new(),
    };
    if feasible == 0 {
        return Ok(Outcome::Infeasible(
            table,
            "no sweep point satisfies 1/d <= R < mu".into(),
        ));
    }
    Ok(Outcome::Table(table))
}

fn solution_row(d: f64, s: &RateSolution) -> Vec<Cell> {
    let method = match s.method {
        crate::optimize::Method::ChernoffUbmp => "chernoff_ubmp",
        crate::optimize::Method::AlphaUbmp => "alpha_ubmp",
    };
    vec![
        Cell::Num(d),
        Cell::Text(method.into()),
        Cell::Num(s.rate),
        Cell::Num(s.utilization()),
        Cell::Num(s.objective),
        Cell::opt(s.s_star),
        Cell::opt(s.alpha),
        Cell::opt(s.grid_resolution),
        Cell::Text("ok".into()),
    ]
}

fn marker_row(d: f64, method: &str, status: &str) -> Vec<Cell> {
    let mut r = vec![Cell::Num(d), Cell::Text(method.into())];
    r.extend(std::iter::repeat_n(Cell::Empty, 6));
    r.push(Cell::Text(status.into()));
    r
}

fn cmd_optimize(run: &RunConfig) -> Result<Outcome, Error> {
    let limits: Vec<f64> = match run.sweep {
        Sweep::AgeLimit { .. } => run.sweep.points(),
        _ => vec![run.age_limit],
    };
    let per_d = par::map_indexed(limits.len(), |i| -> Result<Vec<Vec<Cell>>, Error> {
        let d = limits[i];
        let mut rows = Vec::with_capacity(2);
        match solve_chernoff_ubmp(&run.hops, d, None) {
            Ok(s) => rows.push(solution_row(d, &s)),
            Err(Error::Infeasible(_)) => rows.push(marker_row(d, "chernoff_ubmp", "infeasible")),
            Err(e) => return Err(e),
        }
        match solve_alpha_ubmp(&run.hops, d, run.k, run.grid_step) {
            Ok(s) => rows.push(solution_row(d, &s)),
            Err(Error::Infeasible(_)) => rows.push(marker_row(d, "alpha_ubmp", "infeasible")),
            Err(Error::Unsupported(_)) => {
                rows.push(marker_row(d, "alpha_ubmp", "alpha_unsupported"))
            }
            Err(Error::BudgetExceeded { .. }) => {
                rows.push(marker_row(d, "alpha_ubmp", "alpha_budget_exceeded"))
            }
            Err(e) => return Err(e),
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_d {
        rows.extend(r?);
    }
    let any_ok = rows
        .iter()
        .any(|r| matches!(r.last(), Some(Cell::Text(s)) if s == "ok"));
    let table = Table {
        columns: vec![
            "age_limit",
            "method",
            "rate",
            "utilization",
            "objective",
            "s_star",
            "alpha",
            "grid_resolution",
            "status",
        ],
        rows,
        notes: Vec::new(),
    };
    if !any_ok {
        return Ok(Outcome::Infeasible(
            table,
            "1/d >= mu for every age limit".into(),
        ));
    }
    Ok(Outcome::Table(table))
}

/// `(sweep value, rate, age limit, seed, estimate)`.
type SimRow = (f64, f64, f64, u64, SimEstimate);

fn simulate_rows(run: &RunConfig, policies: &[Policy]) -> Result<Vec<SimRow>, Error> {
    let points = run.operating_points();
    let np = policies.len();
    let results = par::map_indexed(points.len() * np, |i| -> Result<_, Error> {
        let (pi, qi) = (i / np, i % np);
        let (r, d) = points[pi];
        let cfg = run.system(r, d)?;
        let horizon = run.horizon / r;
        let warmup = run.warmup_fraction * horizon;
        // every policy at a point sees the same service draws
        let seed = derive_seed(run.seed, &[pi as u64]);
        let est = simulate_replicated(&cfg, policies[qi], horizon, warmup, seed, run.replications)?;
        Ok((run.sweep_value(points[pi]), r, d, seed, est))
    });
    results.into_iter().collect()
}

fn sim_table(run: &RunConfig, policies: &[Policy]) -> Result<Table, Error> {
    let rows = simulate_rows(run, policies)?
        .into_iter()
        .map(|(x, r, d, seed, e)| {
            vec![
                Cell::Num(x),
                Cell::Num(r),
                Cell::Num(d),
                Cell::Text(e.policy.name().into()),
                Cell::Num(e.violation_prob),
                Cell::Num(e.half_width),
                Cell::Int(e.deliveries),
                Cell::Bool(e.unstable),
                Cell::Int(seed),
            ]
        })
        .collect();
    Ok(Table {
        columns: vec![
            "sweep_value",
            "rate",
            "age_limit",
            "policy",
            "violation_prob",
            "half_width",
            "deliveries",
            "unstable",
            "seed",
        ],
        rows,
        notes: Vec::new(),
    })
}

fn cmd_simulate(run: &RunConfig) -> Result<Outcome, Error> {
    let policies = run
        .policies
        .clone()
        .unwrap_or_else(|| vec![Policy::FcfsInfinite]);
    Ok(Outcome::Table(sim_table(run, &policies)?))
}

fn cmd_compare(run: &RunConfig) -> Result<Outcome, Error> {
    let policies = run.policies.clone().unwrap_or_else(|| Policy::ALL.to_vec());
    let mut table = sim_table(run, &policies)?;
    for p in &policies {
        let best = table
            .rows
            .iter()
            .filter(|r| r[3] == Cell::Text(p.name().into()))
            .filter_map(|r| match (&r[0], &r[4]) {
                (Cell::Num(x), Cell::Num(v)) => Some((*x, *v)),
                _ => None,
            })
            .fold(None, |acc: Option<(f64, f64)>, (x, v)| match acc {
                Some((_, bv)) if bv <= v => acc,
                _ => Some((x, v)),
            });
        if let Some((x, v)) = best {
            table.notes.push((
                format!("min {}", p.name()),
                format!("{v:.16e} at {}={x}", run.sweep.name()),
            ));
        }
    }
    Ok(Outcome::Table(table))
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut pairs = Vec::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::param("config", format!("{}: {e}", path.display())))?;
        pairs.extend(RunConfig::parse_text(&text)?);
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::param("set", format!("expected key=value, got `{o}`")))?;
        pairs.push((k.to_string(), v.to_string()));
    }
    if let Some(seed) = cli.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(f) = cli.format {
        pairs.push(("format".into(), f.to_string()));
    }
    if let Some(o) = &cli.output {
        pairs.push(("output".into(), o.display().to_string()));
    }
    RunConfig::from_pairs(pairs)
}

fn execute(cmd: Command, run: &RunConfig) -> Result<Outcome, Error> {
    match cmd {
        Command::Bound => cmd_bound(run),
        Command::Optimize => cmd_optimize(run),
        Command::Simulate => cmd_simulate(run),
        Command::Compare => cmd_compare(run),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::InvalidParameter { .. } | Error::Domain { .. } | Error::Degenerate(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Run the CLI on explicit arguments (the first is the program name) and
/// return the exit status.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    let run = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "aoi: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match cli.jobs {
        Some(j) => par::with_threads(j, || execute(cli.command, &run)),
        None => execute(cli.command, &run),
    };
    let (table, code) = match outcome {
        Ok(Outcome::Table(t)) => (t, EXIT_OK),
        Ok(Outcome::Infeasible(t, why)) => {
            let _ = writeln!(stderr, "aoi: infeasible: {why}");
            (t, EXIT_INFEASIBLE)
        }
        Err(e) => {
            let _ = writeln!(stderr, "aoi: {e}");
            return exit_code(&e);
        }
    };
    let text = render(cli.command, &run, &table);
    let written = match &run.output {
        Some(path) => fs::write(path, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "aoi: cannot write output: {e}");
        return EXIT_FAILURE;
    }
    code
}

/// Entry point used by the `aoi` binary.
pub fn main_from_env() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
