//! Upper bounds on the steady-state AoI violation probability `P{Δ > d}`.
//!
//! All quantities are built from the per-hop ratio `β_k(s) = M_k(s) e^{-s/R}`.
//! Bounds are reported uncapped; values above one are legitimate outputs.

use serde::{Deserialize, Serialize};

use crate::dist::{cross_sum_tail, ServiceDistribution};
use crate::error::{Error, Result};
use crate::numeric::{bisect_boundary, golden_section, Minimum};
use crate::par;

const WINDOW_RTOL: f64 = 1e-10;
const S_XTOL: f64 = 1e-8;

/// Hop laws, sampling rate `R` and age limit `d` of a tandem of FCFS queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub hops: Vec<ServiceDistribution>,
    pub rate: f64,
    pub age_limit: f64,
}

impl SystemConfig {
    pub fn new(hops: Vec<ServiceDistribution>, rate: f64, age_limit: f64) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::param("hops", "at least one hop is required"));
        }
        for h in &hops {
            h.validated()?;
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::param(
                "rate",
                format!("must be positive and finite, got {rate}"),
            ));
        }
        if !(age_limit > 0.0 && age_limit.is_finite()) {
            return Err(Error::param(
                "age_limit",
                format!("must be positive and finite, got {age_limit}"),
            ));
        }
        Ok(SystemConfig {
            hops,
            rate,
            age_limit,
        })
    }

    pub fn single(hop: ServiceDistribution, rate: f64, age_limit: f64) -> Result<Self> {
        Self::new(vec![hop], rate, age_limit)
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(self.hops.clone(), rate, self.age_limit)
    }

    pub fn with_age_limit(&self, age_limit: f64) -> Result<Self> {
        Self::new(self.hops.clone(), self.rate, age_limit)
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// `μ = min_k μ_k`; pass-through hops do not constrain it.
    pub fn bottleneck_rate(&self) -> f64 {
        self.hops
            .iter()
            .map(ServiceDistribution::capacity)
            .fold(f64::INFINITY, f64::min)
    }

    /// `1/d ≤ R < μ`.
    pub fn is_feasible(&self) -> bool {
        self.rate * self.age_limit >= 1.0 && self.rate < self.bottleneck_rate()
    }
}

/// The interval `(s_low, s_high)` on which every `β_k(s) < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityWindow {
    pub s_low: f64,
    pub s_high: f64,
    pub empty: bool,
}

impl StabilityWindow {
    pub fn contains(&self, s: f64) -> bool {
        !self.empty && s > self.s_low && s < self.s_high
    }

    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.s_high - self.s_low
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Chernoff,
    AlphaRelaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    pub s_star: Option<f64>,
    pub kind: BoundKind,
    pub alpha: Option<f64>,
    pub k: Option<u32>,
}

fn ln_beta(dist: &ServiceDistribution, s: f64, rate: f64) -> f64 {
    dist.ln_mgf(s) - s / rate
}

/// `β(s) = M(s) e^{-s/R}`, infinite outside the MGF domain.
pub fn beta(dist: &ServiceDistribution, s: f64, rate: f64) -> f64 {
    ln_beta(dist, s, rate).exp()
}

/// Largest `s` with `β(s) < 1` for one hop, or `None` when no such `s > 0` exists.
fn hop_window_end(dist: &ServiceDistribution, rate: f64) -> Option<f64> {
    // ln β is convex with ln β(0) = 0; it dips below zero iff E[X] < 1/R
    if dist.mean() * rate >= 1.0 {
        return None;
    }
    let negative = |s: f64| ln_beta(dist, s, rate) < 0.0;
    let dom = dist.mgf_domain();
    let hi = if dom.is_finite() {
        dom
    } else {
        let mut hi = 1.0;
        while negative(hi) {
            hi *= 2.0;
            if hi > 1e300 {
                return Some(f64::INFINITY);
            }
        }
        hi
    };
    Some(bisect_boundary(negative, 0.0, hi, WINDOW_RTOL))
}

pub fn stability_window(cfg: &SystemConfig) -> StabilityWindow {
    let mut s_high = f64::INFINITY;
    for h in &cfg.hops {
        match hop_window_end(h, cfg.rate) {
            Some(end) => s_high = s_high.min(end),
            None => {
                return StabilityWindow {
                    s_low: 0.0,
                    s_high: 0.0,
                    empty: true,
                }
            }
        }
    }
    StabilityWindow {
        s_low: 0.0,
        s_high,
        empty: !(s_high > 0.0),
    }
}

/// `Φ(v) = P{X_0 + … + X_v > d + (v-1)/R}`.
pub fn phi_single(dist: &ServiceDistribution, v: u32, rate: f64, age_limit: f64) -> Result<f64> {
    dist.sum_tail(v + 1, age_limit + (v as f64 - 1.0) / rate)
}

/// `Φ(v0, v1) = P{Y_1 + Y_2 > d + (v0+v1-1)/R}` with `v1+1` draws from the first
/// hop in `Y_1` and `v0+1` draws from the second hop in `Y_2`.
pub fn phi_two(
    d1: &ServiceDistribution,
    d2: &ServiceDistribution,
    v0: u32,
    v1: u32,
    rate: f64,
    age_limit: f64,
) -> Result<f64> {
    let kappa = age_limit + (v0 as f64 + v1 as f64 - 1.0) / rate;
    cross_sum_tail(d1, v1 + 1, d2, v0 + 1, kappa)
}

/// `ln[e^{-s(d-1/R)} Π_k M_k(s)]` and the per-hop `ln β_k(s)` in one pass.
fn ln_prefactor(cfg: &SystemConfig, s: f64, ln_betas: &mut Vec<f64>) -> f64 {
    ln_betas.clear();
    let mut acc = -s * (cfg.age_limit - 1.0 / cfg.rate);
    for h in &cfg.hops {
        let lm = h.ln_mgf(s);
        acc += lm;
        ln_betas.push(lm - s / cfg.rate);
    }
    acc
}

/// `ln(1 - e^{x})` for `x < 0`.
fn ln_one_minus_exp(x: f64) -> f64 {
    (-x.exp_m1()).ln()
}

/// `ln Ψ(s)`, `+inf` where some `β_k(s) ≥ 1`.
fn ln_psi(cfg: &SystemConfig, s: f64) -> f64 {
    let mut lb = Vec::with_capacity(cfg.hops.len());
    let pre = ln_prefactor(cfg, s, &mut lb);
    if lb.iter().any(|&b| !(b < 0.0)) {
        return f64::INFINITY;
    }
    pre - lb.iter().map(|&b| ln_one_minus_exp(b)).sum::<f64>()
}

/// `Ψ(s) = e^{-s(d-1/R)} Π_k M_k(s) / (1 - β_k(s))`.
pub fn psi_chernoff(cfg: &SystemConfig, s: f64) -> f64 {
    if !(s > 0.0) {
        return f64::INFINITY;
    }
    ln_psi(cfg, s).exp()
}

/// Minimize a unimodal `ln`-objective over the window.
fn minimize_in_window<F: Fn(f64) -> f64>(window: &StabilityWindow, f: F) -> Minimum {
    if window.s_high.is_finite() {
        return golden_section(&f, window.s_low, window.s_high, S_XTOL * window.width());
    }
    // unbounded window: expand until the objective stops decreasing
    let mut hi = 1.0;
    let mut f_hi = f(hi);
    loop {
        if f_hi < -745.0 {
            // exp underflows; the bound is numerically zero here
            return Minimum { x: hi, value: f_hi };
        }
        let f_next = f(2.0 * hi);
        if !(f_next < f_hi) || hi > 1e300 {
            break;
        }
        hi *= 2.0;
        f_hi = f_next;
    }
    let top = 2.0 * hi;
    golden_section(&f, 0.0, top, S_XTOL * top)
}

fn require_window(cfg: &SystemConfig) -> Result<StabilityWindow> {
    let w = stability_window(cfg);
    if w.empty {
        return Err(Error::Infeasible(format!(
            "stability window is empty at R = {} (bottleneck mean rate {})",
            cfg.rate,
            cfg.bottleneck_rate()
        )));
    }
    Ok(w)
}

/// `min_s Ψ(s)` over the stability window.
pub fn minimize_psi_over_s(cfg: &SystemConfig) -> Result<BoundResult> {
    let w = require_window(cfg)?;
    let m = minimize_in_window(&w, |s| ln_psi(cfg, s));
    Ok(BoundResult {
        value: m.value.exp(),
        s_star: Some(m.x),
        kind: BoundKind::Chernoff,
        alpha: None,
        k: None,
    })
}

fn alpha_result(partial: f64, tail: Minimum, k: u32) -> BoundResult {
    let tail_value = tail.value.exp();
    BoundResult {
        value: partial + tail_value,
        s_star: Some(tail.x),
        kind: BoundKind::AlphaRelaxed,
        alpha: (partial > 0.0).then(|| 1.0 + tail_value / partial),
        k: Some(k),
    }
}

/// `Σ_{v<K} Φ(v) + min_s Ψ(s) β(s)^K` for a single hop.
pub fn alpha_relaxed_single(cfg: &SystemConfig, k: u32) -> Result<BoundResult> {
    if cfg.hop_count() != 1 {
        return Err(Error::Unsupported(format!(
            "single-hop bound needs one hop, got {}",
            cfg.hop_count()
        )));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let w = require_window(cfg)?;
    let dist = &cfg.hops[0];
    let mut partial = 0.0;
    for v in 0..k {
        partial += phi_single(dist, v, cfg.rate, cfg.age_limit)?;
    }
    let kf = k as f64;
    let tail = minimize_in_window(&w, |s| ln_psi(cfg, s) + kf * ln_beta(dist, s, cfg.rate));
    Ok(alpha_result(partial, tail, k))
}

/// `Σ_{v0,v1<K} Φ(v0,v1) + min_s e^{-s(d-1/R)} M_1 M_2 (β_1^K + β_2^K - β_1^K β_2^K) / ((1-β_1)(1-β_2))`.
pub fn alpha_relaxed_two(cfg: &SystemConfig, k: u32) -> Result<BoundResult> {
    if cfg.hop_count() != 2 {
        return Err(Error::Unsupported(format!(
            "two-hop bound needs two hops, got {}",
            cfg.hop_count()
        )));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let w = require_window(cfg)?;
    let (d1, d2) = (&cfg.hops[0], &cfg.hops[1]);
    let rows = par::map_indexed(k as usize, |v0| -> Result<f64> {
        let mut row = 0.0;
        for v1 in 0..k {
            row += phi_two(d1, d2, v0 as u32, v1, cfg.rate, cfg.age_limit)?;
        }
        Ok(row)
    });
    let mut partial = 0.0;
    for r in rows {
        partial += r?;
    }
    let kf = k as f64;
    let tail = minimize_in_window(&w, |s| {
        let mut lb = Vec::with_capacity(2);
        let pre = ln_prefactor(cfg, s, &mut lb);
        if !(lb[0] < 0.0 && lb[1] < 0.0) {
            return f64::INFINITY;
        }
        // β_1^K + β_2^K - β_1^K β_2^K = 1 - (1 - β_1^K)(1 - β_2^K)
        let num = 1.0 - (kf * lb[0]).exp_m1() * (kf * lb[1]).exp_m1();
        pre + num.ln() - ln_one_minus_exp(lb[0]) - ln_one_minus_exp(lb[1])
    });
    Ok(alpha_result(partial, tail, k))
}

/// Dispatch on hop count: single- or two-hop alpha-relaxed bound.
pub fn alpha_relaxed(cfg: &SystemConfig, k: u32) -> Result<BoundResult> {
    match cfg.hop_count() {
        1 => alpha_relaxed_single(cfg, k),
        2 => alpha_relaxed_two(cfg, k),
        n => Err(Error::Unsupported(format!(
            "alpha-relaxed bound is implemented for one or two hops, got {n}"
        ))),
    }
}

fn check_unit(name: &'static str, b: f64) -> Result<()> {
    if (0.0..1.0).contains(&b) {
        Ok(())
    } else {
        Err(Error::domain(
            name,
            format!("argument must lie in [0, 1), got {b}"),
        ))
    }
}

/// `Σ_{v0} Σ_{v1} β_1^{v1} β_2^{v0}` over the infinite triangle, `1/((1-β_1)(1-β_2))`.
pub fn phi_closed_form(beta1: f64, beta2: f64) -> Result<f64> {
    check_unit("phi_closed_form", beta1)?;
    check_unit("phi_closed_form", beta2)?;
    Ok(1.0 / ((1.0 - beta1) * (1.0 - beta2)))
}

/// Part of the triangle sum with `v0 ≥ K` or `v1 ≥ K`:
/// `(β_1^K + β_2^K - β_1^K β_2^K) / ((1-β_1)(1-β_2))`.
pub fn two_hop_tail_factor(beta1: f64, beta2: f64, k: u32) -> Result<f64> {
    check_unit("two_hop_tail_factor", beta1)?;
    check_unit("two_hop_tail_factor", beta2)?;
    let (a, b) = (beta1.powi(k as i32), beta2.powi(k as i32));
    Ok((a + b - a * b) / ((1.0 - beta1) * (1.0 - beta2)))
}

/// Rate `(N+1)/d` at which the violation probability is zero, when every hop's
/// service time is at most `b` and `d ≥ (N+1) b`. `None` otherwise, including
/// when some hop's support is not bounded by `b`.
pub fn bounded_support_zero_rate(cfg: &SystemConfig, b: f64) -> Option<f64> {
    if !(b > 0.0) {
        return None;
    }
    let supported = cfg
        .hops
        .iter()
        .all(|h| matches!(h.max_support(), Some(m) if m <= b));
    let n1 = cfg.hop_count() as f64 + 1.0;
    (supported && cfg.age_limit >= n1 * b).then(|| n1 / cfg.age_limit)
}
