//! Discrete-event simulation of a periodic source feeding a line of queues.
//!
//! Packet `n` is generated at `n/R` and traverses hops `1..=N` in order. Each
//! hop is a single non-preemptive server. Service times at hop `k` come from a
//! generator derived from `(seed, replication, k)`, so the draws at a hop do not
//! depend on how many hops follow it.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::SystemConfig;
use crate::dist::ServiceSampler;
use crate::error::{Error, Result};
use crate::par::{self, derive_seed};

/// Number of batches used for the batch-means confidence interval.
pub const BATCHES: usize = 20;

/// Default warmup as a fraction of the horizon.
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// FCFS with an unbounded buffer.
    FcfsInfinite,
    /// One waiting slot; arrivals finding it occupied are dropped.
    FcfsUnitBuffer,
    /// One waiting slot; a new arrival replaces the waiting packet.
    LgfsUnitBuffer,
}

impl Policy {
    pub const ALL: [Policy; 3] = [
        Policy::FcfsInfinite,
        Policy::FcfsUnitBuffer,
        Policy::LgfsUnitBuffer,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::FcfsInfinite => "fcfs_infinite",
            Policy::FcfsUnitBuffer => "fcfs_unit_buffer",
            Policy::LgfsUnitBuffer => "lgfs_unit_buffer",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fcfs" | "fcfs_infinite" => Ok(Policy::FcfsInfinite),
            "fcfs_ub" | "fcfs_unit_buffer" => Ok(Policy::FcfsUnitBuffer),
            "lgfs_ub" | "lgfs_unit_buffer" => Ok(Policy::LgfsUnitBuffer),
            other => Err(Error::param("policy", format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub violation_prob: f64,
    /// Half-width of the 95% confidence interval.
    pub half_width: f64,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub policy: Policy,
    /// Packets delivered before the horizon.
    pub deliveries: u64,
    /// Set when `R ≥ μ` under FCFS with an unbounded buffer.
    pub unstable: bool,
    /// Batch or replication means behind `half_width`.
    pub means: usize,
}

impl SimEstimate {
    /// Standard error implied by the half-width.
    pub fn std_error(&self) -> f64 {
        self.half_width / t_quantile_975(self.means.max(2) - 1)
    }
}

/// Monte-Carlo probability estimate from independent replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub replications: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrive,
    Start,
    Depart,
    Drop,
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Arrive => "arrive",
            EventKind::Start => "start",
            EventKind::Depart => "depart",
            EventKind::Drop => "drop",
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arrive" => Ok(EventKind::Arrive),
            "start" => Ok(EventKind::Start),
            "depart" => Ok(EventKind::Depart),
            "drop" => Ok(EventKind::Drop),
            other => Err(Error::param("event", format!("unknown kind `{other}`"))),
        }
    }
}

/// One log record; `node` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub node: usize,
    pub packet: u64,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.17e} {} {} {}",
            self.time,
            self.node,
            self.packet,
            self.kind.name()
        )
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::param("event", format!("malformed line `{line}`"));
        let mut it = line.split_whitespace();
        let time = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let node = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let packet = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let kind = it.next().ok_or_else(bad)?.parse()?;
        Ok(Event {
            time,
            node,
            packet,
            kind,
        })
    }
}

/// Write the log as `time node packet kind` lines.
pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

pub fn read_event_log(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Two-sided 97.5% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
        2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
        2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        1..=30 => TABLE[dof - 1],
        _ => {
            // Cornish-Fisher expansion around the normal quantile
            let z: f64 = 1.959_963_984_540_054;
            let v = dof as f64;
            z + (z.powi(3) + z) / (4.0 * v)
                + (5.0 * z.powi(5) + 16.0 * z.powi(3) + 3.0 * z) / (96.0 * v * v)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pkt {
    id: u64,
    gen: f64,
    /// Arrival time at the current node, departure time on output.
    t: f64,
}

type Log = Option<Rc<RefCell<Vec<Event>>>>;

fn record(log: &Log, time: f64, node: usize, packet: u64, kind: EventKind) {
    if let Some(l) = log {
        l.borrow_mut().push(Event {
            time,
            node,
            packet,
            kind,
        });
    }
}

struct HopService {
    sampler: ServiceSampler,
    rng: ChaCha8Rng,
}

impl HopService {
    #[inline]
    fn draw(&mut self) -> f64 {
        self.sampler.sample(&mut self.rng)
    }
}

fn hop_services(cfg: &SystemConfig, seed: u64, replication: u64) -> Vec<HopService> {
    cfg.hops
        .iter()
        .enumerate()
        .map(|(k, h)| HopService {
            sampler: h.sampler(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[replication, k as u64])),
        })
        .collect()
}

struct Source {
    next: u64,
    rate: f64,
    last_time: f64,
}

impl Iterator for Source {
    type Item = Pkt;

    fn next(&mut self) -> Option<Pkt> {
        let t = self.next as f64 / self.rate;
        if t > self.last_time {
            return None;
        }
        let p = Pkt {
            id: self.next,
            gen: t,
            t,
        };
        self.next += 1;
        Some(p)
    }
}

/// FCFS with an unbounded buffer: `D(n) = max(D(n-1), A(n)) + X(n)`.
struct FcfsNode<I> {
    up: I,
    node: usize,
    last_departure: f64,
    service: HopService,
    log: Log,
}

impl<I: Iterator<Item = Pkt>> Iterator for FcfsNode<I> {
    type Item = Pkt;

    #[inline]
    fn next(&mut self) -> Option<Pkt> {
        let p = self.up.next()?;
        let start = self.last_departure.max(p.t);
        let dep = start + self.service.draw();
        self.last_departure = dep;
        if self.log.is_some() {
            record(&self.log, p.t, self.node, p.id, EventKind::Arrive);
            record(&self.log, start, self.node, p.id, EventKind::Start);
            record(&self.log, dep, self.node, p.id, EventKind::Depart);
        }
        Some(Pkt { t: dep, ..p })
    }
}

/// One server plus one waiting slot.
struct UnitBufferNode<I> {
    up: Option<I>,
    node: usize,
    replace: bool,
    in_service: Option<(Pkt, f64)>,
    waiting: Option<Pkt>,
    ready: VecDeque<Pkt>,
    service: HopService,
    log: Log,
}

impl<I: Iterator<Item = Pkt>> UnitBufferNode<I> {
    fn start(&mut self, p: Pkt, at: f64) {
        let done = at + self.service.draw();
        record(&self.log, at, self.node, p.id, EventKind::Start);
        self.in_service = Some((p, done));
    }

    /// Finish every service completing at or before `t`; a waiting packet
    /// takes the server before a simultaneous arrival is considered.
    fn complete_until(&mut self, t: f64) {
        while let Some((p, done)) = self.in_service {
            if done > t {
                break;
            }
            record(&self.log, done, self.node, p.id, EventKind::Depart);
            self.ready.push_back(Pkt { t: done, ..p });
            self.in_service = None;
            if let Some(w) = self.waiting.take() {
                self.start(w, done);
            }
        }
    }

    fn admit(&mut self, p: Pkt) {
        record(&self.log, p.t, self.node, p.id, EventKind::Arrive);
        self.complete_until(p.t);
        if self.in_service.is_none() {
            debug_assert!(self.waiting.is_none());
            self.start(p, p.t);
            return;
        }
        match self.waiting {
            None => self.waiting = Some(p),
            Some(old) if self.replace => {
                assert!(
                    p.gen > old.gen,
                    "replacement must bring a fresher packet ({} after {})",
                    p.gen,
                    old.gen
                );
                record(&self.log, p.t, self.node, old.id, EventKind::Drop);
                self.waiting = Some(p);
            }
            Some(_) => record(&self.log, p.t, self.node, p.id, EventKind::Drop),
        }
    }
}

impl<I: Iterator<Item = Pkt>> Iterator for UnitBufferNode<I> {
    type Item = Pkt;

    fn next(&mut self) -> Option<Pkt> {
        loop {
            if let Some(p) = self.ready.pop_front() {
                return Some(p);
            }
            match self.up.as_mut().and_then(Iterator::next) {
                Some(p) => self.admit(p),
                None => {
                    self.up = None;
                    self.complete_until(f64::INFINITY);
                    if self.ready.is_empty() {
                        return None;
                    }
                }
            }
        }
    }
}

fn build_pipeline<'a>(
    cfg: &SystemConfig,
    policy: Policy,
    seed: u64,
    replication: u64,
    last_arrival: f64,
    log: Log,
) -> Box<dyn Iterator<Item = Pkt> + 'a> {
    let mut stream: Box<dyn Iterator<Item = Pkt> + 'a> = Box::new(Source {
        next: 0,
        rate: cfg.rate,
        last_time: last_arrival,
    });
    for (k, service) in hop_services(cfg, seed, replication).into_iter().enumerate() {
        let node = k + 1;
        stream = match policy {
            Policy::FcfsInfinite => Box::new(FcfsNode {
                up: stream,
                node,
                last_departure: f64::NEG_INFINITY,
                service,
                log: log.clone(),
            }),
            Policy::FcfsUnitBuffer | Policy::LgfsUnitBuffer => Box::new(UnitBufferNode {
                up: Some(stream),
                node,
                replace: policy == Policy::LgfsUnitBuffer,
                in_service: None,
                waiting: None,
                ready: VecDeque::new(),
                service,
                log: log.clone(),
            }),
        };
    }
    stream
}

/// Time spent above the age limit, bucketed into equal batches over `[warmup, horizon)`.
struct ViolationMeter {
    warmup: f64,
    horizon: f64,
    batch_len: f64,
    batches: [f64; BATCHES],
}

impl ViolationMeter {
    fn new(warmup: f64, horizon: f64) -> Self {
        ViolationMeter {
            warmup,
            horizon,
            batch_len: (horizon - warmup) / BATCHES as f64,
            batches: [0.0; BATCHES],
        }
    }

    fn batch_start(&self, i: usize) -> f64 {
        self.warmup + i as f64 * self.batch_len
    }

    /// Add the measure of `[a, b) ∩ [warmup, horizon)`.
    fn add(&mut self, a: f64, b: f64) {
        let a = a.max(self.warmup);
        let b = b.min(self.horizon);
        if !(b > a) {
            return;
        }
        let mut i = (((a - self.warmup) / self.batch_len) as usize).min(BATCHES - 1);
        let mut lo = a;
        while lo < b {
            let end = if i + 1 == BATCHES {
                self.horizon
            } else {
                self.batch_start(i + 1)
            };
            let hi = b.min(end);
            if hi > lo {
                self.batches[i] += hi - lo;
            }
            lo = hi;
            if i + 1 == BATCHES {
                break;
            }
            i += 1;
        }
    }

    fn estimate(&self) -> (f64, f64) {
        let span = self.horizon - self.warmup;
        let total: f64 = self.batches.iter().sum();
        let means: Vec<f64> = (0..BATCHES)
            .map(|i| {
                let end = if i + 1 == BATCHES {
                    self.horizon
                } else {
                    self.batch_start(i + 1)
                };
                self.batches[i] / (end - self.batch_start(i))
            })
            .collect();
        let p = (total / span).clamp(0.0, 1.0);
        (p, half_width(&means))
    }
}

fn half_width(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    t_quantile_975(n - 1) * (var / n as f64).sqrt()
}

fn check_horizon(horizon: f64, warmup: f64) -> Result<()> {
    if !(horizon.is_finite() && warmup >= 0.0 && horizon > warmup) {
        return Err(Error::param(
            "horizon",
            format!("need horizon > warmup >= 0, got horizon {horizon}, warmup {warmup}"),
        ));
    }
    Ok(())
}

fn run(
    cfg: &SystemConfig,
    policy: Policy,
    horizon: f64,
    warmup: f64,
    seed: u64,
    replication: u64,
    log: Log,
) -> SimEstimate {
    let d = cfg.age_limit;
    let mut meter = ViolationMeter::new(warmup, horizon);
    // freshest delivered generation time; before the first delivery the age is unbounded
    let mut freshest = f64::NEG_INFINITY;
    let mut since = 0.0;
    let mut deliveries = 0u64;
    for p in build_pipeline(cfg, policy, seed, replication, horizon, log) {
        if p.t >= horizon {
            break;
        }
        meter.add((freshest + d).max(since), p.t);
        since = p.t;
        if p.gen > freshest {
            freshest = p.gen;
        }
        deliveries += 1;
    }
    meter.add((freshest + d).max(since), horizon);
    let (violation_prob, half_width) = meter.estimate();
    SimEstimate {
        violation_prob,
        half_width,
        horizon,
        warmup,
        seed,
        policy,
        deliveries,
        unstable: policy == Policy::FcfsInfinite && cfg.rate >= cfg.bottleneck_rate(),
        means: BATCHES,
    }
}

/// Long-run fraction of `[warmup, horizon)` during which `Δ(t) > d`, with a
/// batch-means confidence interval.
pub fn simulate_violation(
    cfg: &SystemConfig,
    policy: Policy,
    horizon: f64,
    warmup: f64,
    seed: u64,
) -> Result<SimEstimate> {
    check_horizon(horizon, warmup)?;
    Ok(run(cfg, policy, horizon, warmup, seed, 0, None))
}

/// [`simulate_violation`] that also returns every arrival, start, departure and drop.
pub fn simulate_with_log(
    cfg: &SystemConfig,
    policy: Policy,
    horizon: f64,
    warmup: f64,
    seed: u64,
) -> Result<(SimEstimate, Vec<Event>)> {
    check_horizon(horizon, warmup)?;
    let log = Rc::new(RefCell::new(Vec::new()));
    let est = run(cfg, policy, horizon, warmup, seed, 0, Some(log.clone()));
    let events = Rc::try_unwrap(log)
        .map(RefCell::into_inner)
        .unwrap_or_else(|rc| rc.borrow().clone());
    Ok((est, events))
}

/// Independent runs pooled into one estimate; the confidence interval comes
/// from the spread of the run means. One replication falls back to batch means.
pub fn simulate_replicated(
    cfg: &SystemConfig,
    policy: Policy,
    horizon: f64,
    warmup: f64,
    seed: u64,
    replications: u64,
) -> Result<SimEstimate> {
    check_horizon(horizon, warmup)?;
    if replications <= 1 {
        return Ok(run(cfg, policy, horizon, warmup, seed, 0, None));
    }
    let runs = par::map_indexed(replications as usize, |r| {
        run(cfg, policy, horizon, warmup, seed, r as u64, None)
    });
    let means: Vec<f64> = runs.iter().map(|e| e.violation_prob).collect();
    let mut est = runs[0];
    est.violation_prob = means.iter().sum::<f64>() / means.len() as f64;
    est.half_width = half_width(&means);
    est.means = means.len();
    est.deliveries = runs.iter().map(|e| e.deliveries).sum();
    Ok(est)
}

fn check_replications(t: f64, replications: u64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    if replications == 0 {
        return Err(Error::param("replications", "must be at least 1"));
    }
    Ok(())
}

/// Departure times at the last hop of packets `0..=last` in an FCFS tandem started empty.
fn fcfs_departures(cfg: &SystemConfig, seed: u64, replication: u64, last: u64, out: &mut Vec<f64>) {
    out.clear();
    let mut services = hop_services(cfg, seed, replication);
    let mut prev = vec![f64::NEG_INFINITY; services.len()];
    for n in 0..=last {
        let mut t = n as f64 / cfg.rate;
        for (k, s) in services.iter_mut().enumerate() {
            t = prev[k].max(t) + s.draw();
            prev[k] = t;
        }
        out.push(t);
    }
}

fn proportion(hits: u64, n: u64) -> ReplicationEstimate {
    let p = hits as f64 / n as f64;
    ReplicationEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        replications: n,
    }
}

fn count_parallel(replications: u64, hit: impl Fn(u64, &mut Vec<f64>) -> bool + Sync) -> u64 {
    const CHUNK: u64 = 1024;
    let chunks = replications.div_ceil(CHUNK);
    par::map_indexed(chunks as usize, |c| {
        let mut buf = Vec::new();
        let lo = c as u64 * CHUNK;
        let hi = (lo + CHUNK).min(replications);
        (lo..hi).filter(|&r| hit(r, &mut buf)).count() as u64
    })
    .into_iter()
    .sum()
}

/// `P{Δ(t) > d}` at the fixed instant `t` for an FCFS tandem started empty.
/// The age counts as unbounded until the first delivery.
pub fn transient_violation(
    cfg: &SystemConfig,
    t: f64,
    replications: u64,
    seed: u64,
) -> Result<ReplicationEstimate> {
    check_replications(t, replications)?;
    let last = (t * cfg.rate).floor() as u64;
    let hits = count_parallel(replications, |r, deps| {
        fcfs_departures(cfg, seed, r, last, deps);
        // FCFS keeps order, so the freshest delivered packet is the last one done by t
        match deps.iter().rposition(|&dep| dep <= t) {
            Some(n) => t - n as f64 / cfg.rate > cfg.age_limit,
            None => true,
        }
    });
    Ok(proportion(hits, replications))
}

/// `P{D(n̂) > t}` for the tagged packet `n̂ = ⌈R(t-d)⌉` (clamped at 0).
pub fn tagged_departure_violation(
    cfg: &SystemConfig,
    t: f64,
    replications: u64,
    seed: u64,
) -> Result<ReplicationEstimate> {
    check_replications(t, replications)?;
    let hits = count_parallel(replications, |r, deps| tagged_hit(cfg, t, seed, r, deps));
    Ok(proportion(hits, replications))
}

fn tagged_hit(cfg: &SystemConfig, t: f64, seed: u64, r: u64, deps: &mut Vec<f64>) -> bool {
    let tagged = (cfg.rate * (t - cfg.age_limit)).ceil().max(0.0) as u64;
    fcfs_departures(cfg, seed, r, tagged, deps);
    deps[tagged as usize] > t
}

/// Tagged-packet estimate with the observation instant spread uniformly over
/// one arrival period, `t + U/R`. The steady-state `P{D(n̂) > t}` depends on
/// the phase of `t` against the arrival grid; averaging over the phase gives
/// the quantity the time-average estimator measures.
pub fn tagged_departure_violation_phase_averaged(
    cfg: &SystemConfig,
    t: f64,
    replications: u64,
    seed: u64,
) -> Result<ReplicationEstimate> {
    check_replications(t, replications)?;
    let hits = count_parallel(replications, |r, deps| {
        let mut phase_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r, u64::MAX]));
        let u: f64 = phase_rng.random();
        tagged_hit(cfg, t + u / cfg.rate, seed, r, deps)
    });
    Ok(proportion(hits, replications))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEstimate {
    pub rate: f64,
    pub estimate: SimEstimate,
}

/// Estimates for every `(rate, policy)` pair, rate-major. All policies at a
/// rate share the seed, so they see the same service draws per hop.
pub fn compare_policies(
    cfg: &SystemConfig,
    rates: &[f64],
    policies: &[Policy],
    horizon: f64,
    warmup: f64,
    seed: u64,
) -> Result<Vec<PolicyEstimate>> {
    if rates.is_empty() || policies.is_empty() {
        return Err(Error::param(
            "rate_grid",
            "needs at least one rate and one policy",
        ));
    }
    check_horizon(horizon, warmup)?;
    let configs = rates
        .iter()
        .map(|&r| cfg.with_rate(r))
        .collect::<Result<Vec<_>>>()?;
    let np = policies.len();
    Ok(par::map_indexed(rates.len() * np, |i| {
        let (ri, pi) = (i / np, i % np);
        let c = &configs[ri];
        PolicyEstimate {
            rate: c.rate,
            estimate: run(
                c,
                policies[pi],
                horizon,
                warmup,
                derive_seed(seed, &[ri as u64]),
                0,
                None,
            ),
        }
    }))
}
