//! Sampling-rate selection by minimizing the upper bounds over `1/d ≤ R < μ`.

use serde::{Deserialize, Serialize};

use crate::bounds::{alpha_relaxed, minimize_psi_over_s, BoundResult, SystemConfig};
use crate::dist::ServiceDistribution;
use crate::error::{Error, Result};
use crate::numeric::golden_section;
use crate::par;

/// Default rate resolution of the alpha-UBMP grid.
pub const DEFAULT_GRID_STEP: f64 = 0.025;

const T_XTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ChernoffUbmp,
    AlphaUbmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSolution {
    pub rate: f64,
    pub objective: f64,
    pub s_star: Option<f64>,
    pub method: Method,
    /// Rate step of the grid search; absent for the continuous solver.
    pub grid_resolution: Option<f64>,
    pub alpha: Option<f64>,
    /// Bottleneck mean rate `μ`.
    pub bottleneck_rate: f64,
}

impl RateSolution {
    /// `R / μ`.
    pub fn utilization(&self) -> f64 {
        self.rate / self.bottleneck_rate
    }
}

/// `(1/d, μ)`, or an infeasibility error when `1/d ≥ μ`.
pub fn feasible_region(hops: &[ServiceDistribution], age_limit: f64) -> Result<(f64, f64)> {
    // validate through SystemConfig with a placeholder rate
    let probe = SystemConfig::new(hops.to_vec(), 1.0, age_limit)?;
    let mu = probe.bottleneck_rate();
    let lo = 1.0 / age_limit;
    if lo >= mu {
        return Err(Error::Infeasible(format!(
            "no rate satisfies 1/d = {lo} <= R < mu = {mu}"
        )));
    }
    Ok((lo, mu))
}

/// Joint minimization of `Ψ(s, R)`: golden section on `T = 1/R` outside, the
/// stability-window search on `s` inside. `rate_bounds` narrows the region.
pub fn solve_chernoff_ubmp(
    hops: &[ServiceDistribution],
    age_limit: f64,
    rate_bounds: Option<(f64, f64)>,
) -> Result<RateSolution> {
    let (lo, mu) = feasible_region(hops, age_limit)?;
    let (r_lo, r_hi) = match rate_bounds {
        Some((a, b)) => (a.max(lo), b.min(mu)),
        None => (lo, mu),
    };
    if !(r_lo < r_hi) {
        return Err(Error::Infeasible(format!(
            "rate bounds leave an empty region [{r_lo}, {r_hi})"
        )));
    }
    let base = SystemConfig::new(hops.to_vec(), r_lo, age_limit)?;
    let eval = |t: f64| -> f64 {
        let Ok(c) = base.with_rate(1.0 / t) else {
            return f64::INFINITY;
        };
        match minimize_psi_over_s(&c) {
            Ok(b) => b.value.ln(),
            Err(_) => f64::INFINITY,
        }
    };
    let (t_lo, t_hi) = (1.0 / r_hi, 1.0 / r_lo);
    let m = golden_section(eval, t_lo, t_hi, T_XTOL * age_limit);
    let rate = (1.0 / m.x).clamp(r_lo, r_hi);
    let cfg = base.with_rate(rate)?;
    let b = minimize_psi_over_s(&cfg)?;
    Ok(RateSolution {
        rate,
        objective: b.value,
        s_star: b.s_star,
        method: Method::ChernoffUbmp,
        grid_resolution: None,
        alpha: None,
        bottleneck_rate: mu,
    })
}

/// `start, start + step, …` strictly below `end`.
pub fn rate_grid(start: f64, step: f64, end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(step > 0.0) {
        return out;
    }
    let mut i = 0u64;
    loop {
        let r = start + i as f64 * step;
        if !(r < end) {
            break;
        }
        out.push(r);
        i += 1;
    }
    out
}

/// Index of the smallest finite value; ties keep the earliest index.
fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Exhaustive alpha-UBMP search on the grid `{1/d + i·step} ∩ [1/d, μ)`.
pub fn solve_alpha_ubmp(
    hops: &[ServiceDistribution],
    age_limit: f64,
    k: u32,
    grid_step: f64,
) -> Result<RateSolution> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::param(
            "grid_step",
            format!("must be positive, got {grid_step}"),
        ));
    }
    let (lo, mu) = feasible_region(hops, age_limit)?;
    let grid = rate_grid(lo, grid_step, mu);
    let mut sol = solve_alpha_ubmp_on_grid(hops, age_limit, k, &grid)?;
    sol.grid_resolution = Some(grid_step);
    Ok(sol)
}

/// Alpha-UBMP restricted to the given rates; infeasible rates are skipped.
pub fn solve_alpha_ubmp_on_grid(
    hops: &[ServiceDistribution],
    age_limit: f64,
    k: u32,
    rates: &[f64],
) -> Result<RateSolution> {
    let (lo, mu) = feasible_region(hops, age_limit)?;
    let base = SystemConfig::new(hops.to_vec(), lo, age_limit)?;
    let evals: Vec<Result<Option<BoundResult>>> = par::map_indexed(rates.len(), |i| {
        let r = rates[i];
        if !(r >= lo && r < mu) {
            return Ok(None);
        }
        match alpha_relaxed(&base.with_rate(r)?, k) {
            Ok(b) => Ok(Some(b)),
            Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut results = Vec::with_capacity(evals.len());
    for e in evals {
        results.push(e?);
    }
    let values: Vec<f64> = results
        .iter()
        .map(|b| b.map_or(f64::INFINITY, |b| b.value))
        .collect();
    let best = argmin_first(&values)
        .ok_or_else(|| Error::Infeasible("no feasible rate on the grid".into()))?;
    let b = results[best].expect("finite value implies a result");
    Ok(RateSolution {
        rate: rates[best],
        objective: b.value,
        s_star: b.s_star,
        method: Method::AlphaUbmp,
        grid_resolution: None,
        alpha: b.alpha,
        bottleneck_rate: mu,
    })
}
