//! Service-time distributions.
//!
//! Each kind exposes its MGF, mean rate, random sampling and the survival
//! function of an `n`-fold i.i.d. sum. Sums of two independent such sums are
//! handled by [`cross_sum_tail`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{integrate, snapped_floor};
use crate::specfun::{beta_i, gamma_q, ln_gamma};

/// Largest `n` for which hyper-exponential `n`-fold sums are convolved numerically.
pub const DEFAULT_CONVOLUTION_BUDGET: u32 = 8;

/// Slot duration used by geometric service when none is given (one time unit).
pub const DEFAULT_SLOT: f64 = 1.0;

const QUAD_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceDistribution {
    /// Number of slots until the first success, times the slot length.
    Geometric {
        p: f64,
        slot: f64,
    },
    Exponential {
        mu: f64,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    /// With probability `p` an Exp(`rate1`) draw, otherwise Exp(`rate2`).
    HyperExponential {
        p: f64,
        rate1: f64,
        rate2: f64,
    },
    Deterministic {
        value: f64,
    },
}

impl ServiceDistribution {
    pub fn geometric(p: f64, slot: f64) -> Result<Self> {
        ServiceDistribution::Geometric { p, slot }.validated()
    }

    pub fn exponential(mu: f64) -> Result<Self> {
        ServiceDistribution::Exponential { mu }.validated()
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        ServiceDistribution::Erlang { shape, rate }.validated()
    }

    pub fn hyper_exponential(p: f64, rate1: f64, rate2: f64) -> Result<Self> {
        ServiceDistribution::HyperExponential { p, rate1, rate2 }.validated()
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        ServiceDistribution::Deterministic { value }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        }
        match self {
            ServiceDistribution::Geometric { p, slot } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::param("p", format!("must lie in (0, 1], got {p}")));
                }
                positive("slot", slot)?;
            }
            ServiceDistribution::Exponential { mu } => positive("mu", mu)?,
            ServiceDistribution::Erlang { shape, rate } => {
                if shape == 0 {
                    return Err(Error::param("shape", "must be at least 1"));
                }
                positive("rate", rate)?;
            }
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::param("p", format!("must lie in [0, 1], got {p}")));
                }
                positive("rate1", rate1)?;
                positive("rate2", rate2)?;
            }
            ServiceDistribution::Deterministic { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::param(
                        "value",
                        format!("must be nonnegative and finite, got {value}"),
                    ));
                }
            }
        }
        Ok(self)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ServiceDistribution::Geometric { .. } => "geometric",
            ServiceDistribution::Exponential { .. } => "exponential",
            ServiceDistribution::Erlang { .. } => "erlang",
            ServiceDistribution::HyperExponential { .. } => "hyperexponential",
            ServiceDistribution::Deterministic { .. } => "deterministic",
        }
    }

    /// Supremum of the set where the MGF is finite.
    pub fn mgf_domain(&self) -> f64 {
        match *self {
            ServiceDistribution::Geometric { p, slot } => {
                if p >= 1.0 {
                    f64::INFINITY
                } else {
                    -(-p).ln_1p() / slot
                }
            }
            ServiceDistribution::Exponential { mu } => mu,
            ServiceDistribution::Erlang { rate, .. } => rate,
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
                // a zero-weight branch does not constrain the domain
                if p == 0.0 {
                    rate2
                } else if p == 1.0 {
                    rate1
                } else {
                    rate1.min(rate2)
                }
            }
            ServiceDistribution::Deterministic { .. } => f64::INFINITY,
        }
    }

    /// `ln E[exp(sX)]`, `+inf` outside the MGF domain.
    pub fn ln_mgf(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        if s >= self.mgf_domain() {
            return f64::INFINITY;
        }
        match *self {
            ServiceDistribution::Geometric { p, slot } => {
                let st = s * slot;
                // ln p + st - ln(1 - (1-p) e^{st})
                let q = (1.0 - p) * st.exp();
                p.ln() + st - (-q).ln_1p()
            }
            ServiceDistribution::Exponential { mu } => -(-s / mu).ln_1p(),
            ServiceDistribution::Erlang { shape, rate } => -(shape as f64) * (-s / rate).ln_1p(),
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
                let m = p * rate1 / (rate1 - s) + (1.0 - p) * rate2 / (rate2 - s);
                m.ln()
            }
            ServiceDistribution::Deterministic { value } => s * value,
        }
    }

    /// `E[exp(sX)]`, `+inf` outside the MGF domain.
    pub fn mgf(&self, s: f64) -> f64 {
        self.ln_mgf(s).exp()
    }

    /// Mean service time.
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDistribution::Geometric { p, slot } => slot / p,
            ServiceDistribution::Exponential { mu } => 1.0 / mu,
            ServiceDistribution::Erlang { shape, rate } => shape as f64 / rate,
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
                p / rate1 + (1.0 - p) / rate2
            }
            ServiceDistribution::Deterministic { value } => value,
        }
    }

    /// Mean service rate `1 / E[X]`; undefined for a zero-time server.
    pub fn mean_rate(&self) -> Result<f64> {
        let m = self.mean();
        if m > 0.0 {
            Ok(1.0 / m)
        } else {
            Err(Error::Degenerate(
                "deterministic(0) is a pass-through server with no finite mean rate".into(),
            ))
        }
    }

    /// Mean rate, with a zero-time server treated as infinitely fast.
    pub fn capacity(&self) -> f64 {
        self.mean_rate().unwrap_or(f64::INFINITY)
    }

    /// Smallest value in the support.
    pub fn min_support(&self) -> f64 {
        match *self {
            ServiceDistribution::Geometric { slot, .. } => slot,
            ServiceDistribution::Deterministic { value } => value,
            _ => 0.0,
        }
    }

    /// Largest value in the support, if bounded.
    pub fn max_support(&self) -> Option<f64> {
        match *self {
            ServiceDistribution::Geometric { p, slot } if p >= 1.0 => Some(slot),
            ServiceDistribution::Deterministic { value } => Some(value),
            _ => None,
        }
    }

    fn is_lattice(&self) -> bool {
        matches!(
            self,
            ServiceDistribution::Geometric { .. } | ServiceDistribution::Deterministic { .. }
        )
    }

    /// `P{X_1 + … + X_n > x}` with the default convolution budget.
    pub fn sum_tail(&self, n: u32, x: f64) -> Result<f64> {
        self.sum_tail_with_budget(n, x, DEFAULT_CONVOLUTION_BUDGET)
    }

    pub fn sum_tail_with_budget(&self, n: u32, x: f64, budget: u32) -> Result<f64> {
        if n == 0 {
            return Err(Error::param("n", "number of summands must be at least 1"));
        }
        if x.is_nan() {
            return Err(Error::param("x", "threshold is NaN"));
        }
        let nf = n as f64;
        let tail = match *self {
            ServiceDistribution::Geometric { p, slot } => {
                let m = snapped_floor(x / slot);
                if m < nf {
                    1.0
                } else if p >= 1.0 {
                    0.0
                } else {
                    // P{NegBin(n, p) > m} = P{Bin(m, p) < n} = I_{1-p}(m - n + 1, n)
                    beta_i(1.0 - p, m - nf + 1.0, nf)
                }
            }
            ServiceDistribution::Exponential { mu } => gamma_q(nf, mu * x),
            ServiceDistribution::Erlang { shape, rate } => gamma_q(nf * shape as f64, rate * x),
            ServiceDistribution::HyperExponential { .. } => {
                if x < 0.0 {
                    1.0
                } else {
                    mixture_tail(&continuous_mixture(self, n, budget)?, x)
                }
            }
            ServiceDistribution::Deterministic { value } => {
                if nf * value > x {
                    1.0
                } else {
                    0.0
                }
            }
        };
        Ok(tail.clamp(0.0, 1.0))
    }

    /// Whether `P{X_1 + … + X_n > x} = 1` holds by support alone.
    fn sum_tail_is_certain(&self, n: u32, x: f64) -> bool {
        match *self {
            ServiceDistribution::Geometric { slot, .. } => snapped_floor(x / slot) < n as f64,
            ServiceDistribution::Deterministic { value } => n as f64 * value > x,
            _ => x < 0.0,
        }
    }

    /// Probability mass at `j` slots of an `n`-fold lattice sum.
    fn lattice_pmf(&self, n: u32, j: u64) -> f64 {
        match *self {
            ServiceDistribution::Geometric { p, .. } => {
                let n = n as u64;
                if j < n {
                    return 0.0;
                }
                if p >= 1.0 {
                    return if j == n { 1.0 } else { 0.0 };
                }
                let (jf, nf) = (j as f64, n as f64);
                let ln_binom = ln_gamma(jf) - ln_gamma(nf) - ln_gamma(jf - nf + 1.0);
                (ln_binom + nf * p.ln() + (jf - nf) * (-p).ln_1p()).exp()
            }
            _ => unreachable!("lattice_pmf is only used for geometric service"),
        }
    }

    pub fn sampler(&self) -> ServiceSampler {
        let inner = match *self {
            ServiceDistribution::Geometric { p, slot } => {
                SamplerKind::Geometric(Geometric::new(p).expect("validated p"), slot)
            }
            ServiceDistribution::Exponential { mu } => {
                SamplerKind::Exp(Exp::new(mu).expect("validated rate"))
            }
            ServiceDistribution::Erlang { shape, rate } => {
                SamplerKind::Erlang(Exp::new(rate).expect("validated rate"), shape)
            }
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => SamplerKind::Hyper(
                p,
                Exp::new(rate1).expect("validated rate"),
                Exp::new(rate2).expect("validated rate"),
            ),
            ServiceDistribution::Deterministic { value } => SamplerKind::Constant(value),
        };
        ServiceSampler(inner)
    }

    /// One i.i.d. draw; builds a sampler per call, so prefer [`Self::sampler`] in loops.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }
}

/// Pre-built sampler for a [`ServiceDistribution`].
#[derive(Debug, Clone)]
pub struct ServiceSampler(SamplerKind);

#[derive(Debug, Clone)]
enum SamplerKind {
    Geometric(Geometric, f64),
    Exp(Exp<f64>),
    Erlang(Exp<f64>, u32),
    Hyper(f64, Exp<f64>, Exp<f64>),
    Constant(f64),
}

impl ServiceSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            // rand_distr counts failures before the first success
            SamplerKind::Geometric(g, slot) => (g.sample(rng) + 1) as f64 * slot,
            SamplerKind::Exp(e) => e.sample(rng),
            SamplerKind::Erlang(e, k) => (0..*k).map(|_| e.sample(rng)).sum(),
            SamplerKind::Hyper(p, e1, e2) => {
                if rng.random::<f64>() < *p {
                    e1.sample(rng)
                } else {
                    e2.sample(rng)
                }
            }
            SamplerKind::Constant(v) => *v,
        }
    }
}

/// `P{Y_1 + Y_2 > x}` where `Y_1` is an `n1`-fold sum from `d1` and `Y_2` an
/// independent `n2`-fold sum from `d2`.
pub fn cross_sum_tail(
    d1: &ServiceDistribution,
    n1: u32,
    d2: &ServiceDistribution,
    n2: u32,
    x: f64,
) -> Result<f64> {
    cross_sum_tail_with_budget(d1, n1, d2, n2, x, DEFAULT_CONVOLUTION_BUDGET)
}

pub fn cross_sum_tail_with_budget(
    d1: &ServiceDistribution,
    n1: u32,
    d2: &ServiceDistribution,
    n2: u32,
    x: f64,
    budget: u32,
) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::param("n", "number of summands must be at least 1"));
    }
    if x.is_nan() {
        return Err(Error::param("x", "threshold is NaN"));
    }
    use ServiceDistribution::Deterministic;
    // a point mass just shifts the threshold
    if let Deterministic { value } = *d2 {
        return d1.sum_tail_with_budget(n1, x - n2 as f64 * value, budget);
    }
    if let Deterministic { value } = *d1 {
        return d2.sum_tail_with_budget(n2, x - n1 as f64 * value, budget);
    }
    if d1.is_lattice() || d2.is_lattice() {
        // condition on the lattice-valued sum
        let (cont, nc, lat, nl) = if d2.is_lattice() {
            (d1, n1, d2, n2)
        } else {
            (d2, n2, d1, n1)
        };
        return lattice_conditioning(cont, nc, lat, nl, x, budget);
    }
    if x < 0.0 {
        return Ok(1.0);
    }
    let a = continuous_mixture(d1, n1, budget)?;
    let b = continuous_mixture(d2, n2, budget)?;
    Ok(mixture_tail(&convolve(&a, &b), x).clamp(0.0, 1.0))
}

/// `Σ_j P{Y_l = j·slot} P{Y_c > x - j·slot} + P{Y_l ≥ j*}` where `j*` is the first
/// lattice point past which `Y_c` exceeds the remainder surely.
fn lattice_conditioning(
    cont: &ServiceDistribution,
    nc: u32,
    lat: &ServiceDistribution,
    nl: u32,
    x: f64,
    budget: u32,
) -> Result<f64> {
    let slot = match *lat {
        ServiceDistribution::Geometric { slot, .. } => slot,
        _ => unreachable!("deterministic handled by caller"),
    };
    let mut acc = 0.0;
    let mut j = nl as u64;
    loop {
        let rest = x - j as f64 * slot;
        if cont.sum_tail_is_certain(nc, rest) {
            let remaining = if j == nl as u64 {
                1.0
            } else {
                lat.sum_tail_with_budget(nl, (j - 1) as f64 * slot, budget)?
            };
            acc += remaining;
            break;
        }
        let w = lat.lattice_pmf(nl, j);
        if w > 0.0 {
            acc += w * cont.sum_tail_with_budget(nc, rest, budget)?;
        }
        j += 1;
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Independent gamma variables with distinct rates, summed. `(shape, rate)`.
type GammaSum = Vec<(u32, f64)>;

/// Finite mixture of gamma sums; weights sum to one.
type Mixture = Vec<(f64, GammaSum)>;

fn continuous_mixture(d: &ServiceDistribution, n: u32, budget: u32) -> Result<Mixture> {
    match *d {
        ServiceDistribution::Exponential { mu } => Ok(vec![(1.0, vec![(n, mu)])]),
        ServiceDistribution::Erlang { shape, rate } => Ok(vec![(1.0, vec![(n * shape, rate)])]),
        ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
            if n > budget {
                return Err(Error::BudgetExceeded { terms: n, budget });
            }
            let nf = n as f64;
            let mut out = Vec::with_capacity(n as usize + 1);
            for j in 0..=n {
                let jf = j as f64;
                let ln_w = ln_gamma(nf + 1.0) - ln_gamma(jf + 1.0) - ln_gamma(nf - jf + 1.0);
                let w = ln_w.exp() * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32);
                if w == 0.0 {
                    continue;
                }
                out.push((w, normalize(vec![(j, rate1), (n - j, rate2)])));
            }
            Ok(merge(out))
        }
        _ => Err(Error::Unsupported(format!(
            "{} service has no continuous mixture form",
            d.kind_name()
        ))),
    }
}

fn normalize(mut terms: GammaSum) -> GammaSum {
    terms.retain(|t| t.0 > 0);
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut out: GammaSum = Vec::with_capacity(terms.len());
    for (k, r) in terms {
        match out.last_mut() {
            Some(last) if last.1 == r => last.0 += k,
            _ => out.push((k, r)),
        }
    }
    out
}

fn merge(mut m: Mixture) -> Mixture {
    m.sort_by(|a, b| {
        a.1.len().cmp(&b.1.len()).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut out: Mixture = Vec::with_capacity(m.len());
    for (w, g) in m {
        match out.last_mut() {
            Some(last) if last.1 == g => last.0 += w,
            _ => out.push((w, g)),
        }
    }
    out
}

fn convolve(a: &Mixture, b: &Mixture) -> Mixture {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for (wa, ga) in a {
        for (wb, gb) in b {
            let mut g = ga.clone();
            g.extend_from_slice(gb);
            out.push((wa * wb, normalize(g)));
        }
    }
    merge(out)
}

fn mixture_tail(m: &Mixture, x: f64) -> f64 {
    m.iter().map(|(w, g)| w * gamma_sum_tail(g, x)).sum()
}

fn gamma_pdf(shape: u32, rate: f64, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if shape == 1 {
        return rate * (-rate * y).exp();
    }
    if y == 0.0 {
        return 0.0;
    }
    let k = shape as f64;
    (k * rate.ln() + (k - 1.0) * y.ln() - rate * y - ln_gamma(k)).exp()
}

/// Survival function of a sum of independent gammas with distinct rates.
fn gamma_sum_tail(terms: &[(u32, f64)], x: f64) -> f64 {
    match terms {
        [] => {
            if x < 0.0 {
                1.0
            } else {
                0.0
            }
        }
        [(k, r)] => gamma_q(*k as f64, r * x.max(0.0)),
        [(k, r), rest @ ..] => {
            if x <= 0.0 {
                return 1.0;
            }
            // P{G > x} + ∫_0^x f_G(y) P{rest > x - y} dy
            let head = gamma_q(*k as f64, r * x);
            let body = integrate(
                &|y: f64| gamma_pdf(*k, *r, y) * gamma_sum_tail(rest, x - y),
                0.0,
                x,
                QUAD_TOL,
            );
            head + body
        }
    }
}

impl fmt::Display for ServiceDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ServiceDistribution::Geometric { p, slot } => write!(f, "geometric p={p} slot={slot}"),
            ServiceDistribution::Exponential { mu } => write!(f, "exponential mu={mu}"),
            ServiceDistribution::Erlang { shape, rate } => {
                write!(f, "erlang shape={shape} rate={rate}")
            }
            ServiceDistribution::HyperExponential { p, rate1, rate2 } => {
                write!(f, "hyperexponential p={p} rate1={rate1} rate2={rate2}")
            }
            ServiceDistribution::Deterministic { value } => {
                write!(f, "deterministic value={value}")
            }
        }
    }
}

/// Parses `"<kind> key=value ..."`, e.g. `"geometric p=0.85 slot=1"`.
/// Parameters left out take the defaults of the first hop in the reference setup.
impl FromStr for ServiceDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words
            .next()
            .ok_or_else(|| Error::param("distribution", "empty distribution string"))?
            .to_ascii_lowercase();
        let mut params: Vec<(String, f64)> = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| {
                Error::param("distribution", format!("expected key=value, got `{w}`"))
            })?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::param(k, format!("not a number: `{v}`")))?;
            params.push((k.to_ascii_lowercase(), v));
        }
        let take = |name: &str, default: f64| -> f64 {
            params
                .iter()
                .rev()
                .find(|(k, _)| k == name)
                .map(|(_, v)| *v)
                .unwrap_or(default)
        };
        let allowed: &[&str] = match kind.as_str() {
            "geometric" | "geo" => &["p", "slot"],
            "exponential" | "exp" => &["mu"],
            "erlang" => &["shape", "rate"],
            "hyperexponential" | "hyper" => &["p", "rate1", "rate2"],
            "deterministic" | "det" => &["value"],
            other => {
                return Err(Error::param(
                    "distribution",
                    format!("unknown kind `{other}`"),
                ))
            }
        };
        if let Some((bad, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::param(
                bad.clone(),
                format!("not a parameter of {kind} service"),
            ));
        }
        match kind.as_str() {
            "geometric" | "geo" => Self::geometric(take("p", 0.85), take("slot", DEFAULT_SLOT)),
            "exponential" | "exp" => Self::exponential(take("mu", 1.0)),
            "erlang" => {
                let shape = take("shape", 3.0);
                if shape.fract() != 0.0 || shape < 1.0 || shape > u32::MAX as f64 {
                    return Err(Error::param(
                        "shape",
                        format!("must be a positive integer, got {shape}"),
                    ));
                }
                Self::erlang(shape as u32, take("rate", 3.0))
            }
            "hyperexponential" | "hyper" => {
                Self::hyper_exponential(take("p", 0.91), take("rate1", 0.95), take("rate2", 2.0))
            }
            _ => Self::deterministic(take("value", 1.0)),
        }
    }
}
