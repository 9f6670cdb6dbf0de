//! Monte-Carlo simulation of the teleportation protocols, independent of the
//! analytic event sums, and an exact density-matrix model of the
//! teleportation circuit.
//!
//! Attempt counts are drawn from the geometric distribution by inverse CDF,
//! so a round costs a handful of logarithms however small the attempt
//! probabilities are. When a round succeeds only rarely, [`run_batches`]
//! switches to conditional sampling: the number of failed rounds is drawn
//! from a geometric law whose parameter is estimated by a pilot run, the
//! successful round is drawn from the exact conditional law by rejection,
//! and failed rounds are drawn one by one until the data qubit has fully
//! decayed, after which their remaining total duration is drawn from its
//! normal approximation.

use nalgebra::{Complex, Matrix2, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intercity_analytic::IntercityScenario;
use crate::metro::MetroScenario;
use crate::par;
use crate::params::Mode;

/// Decay exponent past which `exp(-x)` is below 1e-300 and is treated as 0.
pub const LN_UNDERFLOW: f64 = 690.775_527_898_213_7;

/// Success probability below which [`run_batches`] samples conditionally.
pub const DIRECT_MIN_P: f64 = 1e-3;

/// Metro-pair proposals drawn by the pilot that estimates the success
/// probability.
pub const PILOT_PAIRS: usize = 2_000_000;

/// Failed rounds drawn by the pilot that estimates their duration moments.
pub const PILOT_FAILS: usize = 200_000;

/// Failed rounds always drawn individually before the normal approximation
/// may take over.
pub const MIN_EXACT_FAILS: u64 = 64;

/// Cap on individually drawn failed rounds per run.
pub const MAX_EXACT_FAILS: u64 = 100_000;

/// Draws `M >= 1` with `P(M = m) = p (1 - p)^(m - 1)`, given `ln(1 - p)`.
pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, ln_q: f64) -> i64 {
    let u = 1.0 - rng.gen::<f64>();
    let m = (u.ln() / ln_q).ceil();
    if m.is_nan() || m < 1.0 {
        1
    } else {
        m.min(4.0e18) as i64
    }
}

/// Draws `M` in `[lo, hi]` with probability proportional to `(1 - p)^M`.
fn sample_truncated_geometric<R: Rng + ?Sized>(rng: &mut R, ln_q: f64, lo: i64, hi: i64) -> i64 {
    if ln_q == f64::NEG_INFINITY || lo == hi {
        return lo;
    }
    let span = ((hi - lo + 1) as f64 * ln_q).exp_m1();
    let u = rng.gen::<f64>();
    let off = ((u * span).ln_1p() / ln_q).floor();
    (lo + off.max(0.0) as i64).min(hi)
}

/// `(1 - p)^j` for `j >= 0`, given `ln(1 - p)`.
fn q_pow(ln_q: f64, j: i64) -> f64 {
    if j == 0 {
        1.0
    } else {
        (j as f64 * ln_q).exp()
    }
}

/// Outcome of one intercity round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    pub y: bool,
    /// Round duration, us.
    pub z: i64,
    /// Werner parameter of the end-to-end link; 0 for a failed round.
    pub w_e2e: f64,
    pub x_max: i64,
    pub x_min: i64,
    /// Completion times of the two metro links and of the backbone link.
    pub x: [i64; 3],
}

/// Per-scenario constants used by the round samplers.
#[derive(Debug, Clone, Copy)]
struct RoundSampler {
    scn: IntercityScenario,
    ln_qm: f64,
    ln_qb: f64,
    tp: i64,
}

impl RoundSampler {
    fn new(scn: &IntercityScenario) -> Result<Self> {
        scn.validate()?;
        Ok(RoundSampler { scn: *scn, ln_qm: (-scn.p_m).ln_1p(), ln_qb: (-scn.p_b).ln_1p(), tp: scn.t_cut - 1 })
    }

    fn outcome(&self, x: [i64; 3]) -> RoundOutcome {
        let s = &self.scn;
        let x_max = x[0].max(x[1]).max(x[2]);
        let x_min = x[0].min(x[1]).min(x[2]);
        if x_max - x_min <= self.tp {
            let x_diff = if x[0] == x_max || x[1] == x_max { x_max - x_min } else { 2 * x[2] - x[0] - x[1] };
            let w = s.w_m * s.w_m * s.w_b * (-s.k() * (x_diff + s.timing.t_msg) as f64).exp();
            RoundOutcome { y: true, z: x_max + s.timing.t_msg, w_e2e: w, x_max, x_min, x }
        } else {
            RoundOutcome { y: false, z: x_min + s.t_cut, w_e2e: 0.0, x_max, x_min, x }
        }
    }

    fn round<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundOutcome {
        let t = &self.scn.timing;
        let x1 = t.t_m * sample_geometric(rng, self.ln_qm);
        let x2 = t.t_m * sample_geometric(rng, self.ln_qm);
        let xb = t.t_b * sample_geometric(rng, self.ln_qb);
        self.outcome([x1, x2, xb])
    }

    /// Backbone index window compatible with success given the metro
    /// completion times, with its probability.
    fn backbone_window(&self, x1: i64, x2: i64) -> Option<(i64, i64, f64)> {
        if (x1 - x2).abs() > self.tp {
            return None;
        }
        let t_b = self.scn.timing.t_b;
        let lo = (x1.max(x2) - self.tp).max(1);
        let hi = x1.min(x2) + self.tp;
        let j_lo = (lo + t_b - 1) / t_b;
        let j_hi = hi / t_b;
        if j_hi < j_lo {
            return None;
        }
        let q = q_pow(self.ln_qb, j_lo - 1) * -((j_hi - j_lo + 1) as f64 * self.ln_qb).exp_m1();
        Some((j_lo, j_hi, q))
    }

    /// Upper bound of the backbone window probability over all metro pairs.
    fn window_bound(&self) -> f64 {
        let n = 2 * self.tp / self.scn.timing.t_b + 1;
        -(n as f64 * self.ln_qb).exp_m1()
    }

    /// Draws a round conditioned on success.
    fn success_round<R: Rng + ?Sized>(&self, rng: &mut R, bound: f64) -> RoundOutcome {
        let t_m = self.scn.timing.t_m;
        loop {
            let x1 = t_m * sample_geometric(rng, self.ln_qm);
            let x2 = t_m * sample_geometric(rng, self.ln_qm);
            let Some((j_lo, j_hi, q)) = self.backbone_window(x1, x2) else { continue };
            if rng.gen::<f64>() * bound < q {
                let jb = sample_truncated_geometric(rng, self.ln_qb, j_lo, j_hi);
                let out = self.outcome([x1, x2, jb * self.scn.timing.t_b]);
                debug_assert!(out.y);
                return out;
            }
        }
    }

    /// Draws the duration of a round conditioned on failure.
    fn failure_z<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        loop {
            let r = self.round(rng);
            if !r.y {
                return r.z;
            }
        }
    }
}

/// Samples one round of the intercity protocol.
pub fn sample_round<R: Rng + ?Sized>(rng: &mut R, scn: &IntercityScenario) -> Result<RoundOutcome> {
    Ok(RoundSampler::new(scn)?.round(rng))
}

/// End-to-end Werner parameter of a successful round obtained by decaying
/// each stored link and swapping at each border node in time order, then
/// decaying the end-to-end link while the swap outcomes travel.
pub fn werner_stepwise(x: [i64; 3], scn: &IntercityScenario) -> f64 {
    let k = scn.k();
    let decay = |from: i64, to: i64| (-k * (to - from) as f64).exp();
    let [x1, x2, xb] = x;
    let s1 = x1.max(xb);
    let s2 = x2.max(xb);
    let (first, second, x_first, x_second) = if s1 <= s2 { (s1, s2, x1, x2) } else { (s2, s1, x2, x1) };
    let joined = scn.w_m * decay(x_first, first) * scn.w_b * decay(xb, first);
    let full = joined * decay(first, second) * scn.w_m * decay(x_second, second);
    full * (-k * scn.timing.t_msg as f64).exp()
}

/// Scenario simulated by the Monte-Carlo engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum McScenario {
    Intercity(IntercityScenario),
    Metro(MetroScenario),
}

impl McScenario {
    /// Delay of the final classical correction message, us.
    fn t_class(&self) -> f64 {
        match self {
            McScenario::Intercity(s) => s.timing.t_int_class as f64,
            McScenario::Metro(s) => s.t_m_class as f64,
        }
    }
}

/// Monte-Carlo configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub scenario: McScenario,
    /// Mode reported by [`McStats::fidelity`]. Both modes are always
    /// simulated from the same runs.
    pub mode: Mode,
    pub batches: usize,
    pub runs_per_batch: usize,
    pub master_seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 {
            return Err(Error::Config { field: "batches".into(), msg: "must be at least 1".into() });
        }
        if self.runs_per_batch == 0 {
            return Err(Error::Config { field: "runs".into(), msg: "must be at least 1".into() });
        }
        match &self.scenario {
            McScenario::Intercity(s) => s.validate(),
            McScenario::Metro(s) => {
                if !(s.p_mprime > 0.0 && s.p_mprime <= 1.0) {
                    return Err(Error::OutOfRange { what: "p_mprime", value: s.p_mprime });
                }
                Ok(())
            }
        }
    }
}

/// Random stream of batch `i`: ChaCha8 keyed by the master seed, with
/// stream number `i + 1`. Stream 0 is reserved for the pilot.
pub fn batch_rng(master_seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(i as u64 + 1);
    rng
}

fn pilot_rng(master_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(0);
    rng
}

/// One teleportation: fidelities in both modes and the time to the
/// end-to-end link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub fidelity_er: f64,
    pub fidelity_qr: f64,
    /// Time from the start of the first round to the end of the successful
    /// one, us.
    pub e2e_time_us: f64,
    pub rounds: u64,
}

fn intercity_outcome(scn: &IntercityScenario, success: &RoundOutcome, data_exponent: f64, e2e: f64, rounds: u64) -> RunOutcome {
    let k = scn.k();
    let link = success.w_e2e * (-k * scn.timing.t_int_class as f64 / 2.0).exp();
    let exponent = data_exponent + 0.5 * k * success.z as f64;
    let data = if exponent > LN_UNDERFLOW { 0.0 } else { (-exponent).exp() };
    RunOutcome { fidelity_er: 0.5 * (1.0 + link), fidelity_qr: 0.5 * (1.0 + link * data), e2e_time_us: e2e, rounds }
}

fn metro_run<R: Rng + ?Sized>(rng: &mut R, s: &MetroScenario) -> RunOutcome {
    let m = sample_geometric(rng, (-s.p_mprime).ln_1p());
    let wait = (m * s.t_mprime) as f64;
    let link = s.w * (-(s.t_m_class as f64) / s.t_coh_us).exp();
    RunOutcome {
        fidelity_er: 0.5 * (1.0 + link),
        fidelity_qr: 0.5 * (1.0 + link * (-wait / s.t_coh_us).exp()),
        e2e_time_us: wait + s.t_m_class as f64,
        rounds: m as u64,
    }
}

fn direct_intercity_run<R: Rng + ?Sized>(rng: &mut R, sampler: &RoundSampler) -> RunOutcome {
    let half_k = 0.5 * sampler.scn.k();
    let (mut time, mut exponent, mut rounds) = (0i64, 0.0, 0u64);
    loop {
        let r = sampler.round(rng);
        rounds += 1;
        time += r.z;
        if r.y {
            return intercity_outcome(&sampler.scn, &r, exponent, time as f64, rounds);
        }
        exponent += half_k * r.z as f64;
    }
}

/// Simulates one teleportation by repeating rounds until one succeeds.
pub fn simulate_run<R: Rng + ?Sized>(rng: &mut R, config: &McConfig) -> Result<RunOutcome> {
    config.validate()?;
    Ok(match &config.scenario {
        McScenario::Intercity(s) => direct_intercity_run(rng, &RoundSampler::new(s)?),
        McScenario::Metro(s) => metro_run(rng, s),
    })
}

/// Pilot estimates used by the conditional sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimate {
    /// Estimated success probability of a round.
    pub p_hat: f64,
    /// Mean and variance of the duration of a failed round, us and us^2.
    pub fail_mean: f64,
    pub fail_var: f64,
}

/// How [`run_batches`] sampled the runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplerKind {
    Direct,
    Conditional(PilotEstimate),
}

/// Estimates the success probability as the mean over metro pairs of the
/// exact conditional success probability given the pair. Stops early once
/// the estimate is clearly above [`DIRECT_MIN_P`].
fn pilot_success_probability<R: Rng + ?Sized>(rng: &mut R, sampler: &RoundSampler) -> f64 {
    let t_m = sampler.scn.timing.t_m;
    let mut acc = 0.0;
    for n in 1..=PILOT_PAIRS {
        let x1 = t_m * sample_geometric(rng, sampler.ln_qm);
        let x2 = t_m * sample_geometric(rng, sampler.ln_qm);
        if let Some((_, _, q)) = sampler.backbone_window(x1, x2) {
            acc += q;
        }
        if n % 10_000 == 0 && acc / n as f64 > 10.0 * DIRECT_MIN_P {
            return acc / n as f64;
        }
    }
    acc / PILOT_PAIRS as f64
}

fn choose_sampler(master_seed: u64, sampler: &RoundSampler) -> SamplerKind {
    let mut rng = pilot_rng(master_seed);
    let p_hat = pilot_success_probability(&mut rng, sampler);
    if p_hat >= DIRECT_MIN_P {
        return SamplerKind::Direct;
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..PILOT_FAILS {
        let z = sampler.failure_z(&mut rng) as f64;
        sum += z;
        sum_sq += z * z;
    }
    let n = PILOT_FAILS as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    SamplerKind::Conditional(PilotEstimate { p_hat, fail_mean: mean, fail_var: var })
}

fn conditional_intercity_run<R: Rng + ?Sized>(rng: &mut R, sampler: &RoundSampler, est: &PilotEstimate, bound: f64) -> RunOutcome {
    let half_k = 0.5 * sampler.scn.k();
    let n_fail = (sample_geometric(rng, (-est.p_hat).ln_1p()) - 1) as u64;
    let (mut time, mut exponent, mut drawn) = (0.0, 0.0, 0u64);
    while drawn < n_fail {
        let saturated = exponent > LN_UNDERFLOW || drawn >= MAX_EXACT_FAILS;
        if saturated && n_fail - drawn > MIN_EXACT_FAILS {
            break;
        }
        let z = sampler.failure_z(rng) as f64;
        time += z;
        exponent += half_k * z;
        drawn += 1;
    }
    let rest = n_fail - drawn;
    if rest > 0 {
        let n = rest as f64;
        let sum = Normal::new(n * est.fail_mean, (n * est.fail_var).sqrt())
            .map(|d| d.sample(rng))
            .unwrap_or(n * est.fail_mean)
            .max(n * sampler.scn.t_cut as f64);
        time += sum;
        exponent += half_k * sum;
    }
    let success = sampler.success_round(rng, bound);
    intercity_outcome(&sampler.scn, &success, exponent, time + success.z as f64, n_fail + 1)
}

/// Relative rounding allowance of [`Band::contains`].
pub const BAND_SLACK: f64 = 1e-12;

/// Mean with 5th and 95th nearest-rank percentiles of the batch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

impl Band {
    /// Summarises batch means.
    pub fn from_batches(values: &[f64]) -> Band {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Band {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p5: nearest_rank(&v, 5.0),
            p95: nearest_rank(&v, 95.0),
        }
    }

    /// Whether `x` lies in `[p5, p95]`, widened by [`BAND_SLACK`] relative
    /// to `|x|` so that deterministic runs, whose band collapses to a point,
    /// are not rejected over rounding in the last few bits.
    pub fn contains(&self, x: f64) -> bool {
        let slack = BAND_SLACK * x.abs();
        self.p5 - slack <= x && x <= self.p95 + slack
    }
}

/// Nearest-rank percentile of sorted values.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Averages of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_id: usize,
    pub mean_fidelity_er: f64,
    pub mean_fidelity_qr: f64,
    pub mean_e2e_time_us: f64,
    /// Runs per second of total time, including the final correction
    /// message of each teleportation.
    pub rate: f64,
    pub rounds: u64,
}

impl BatchRecord {
    pub fn mean_fidelity(&self, mode: Mode) -> f64 {
        match mode {
            Mode::ER => self.mean_fidelity_er,
            Mode::QR => self.mean_fidelity_qr,
        }
    }
}

/// Summary of a Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub mode: Mode,
    pub fidelity_er: Band,
    pub fidelity_qr: Band,
    pub rate: Band,
    pub n_rounds_total: u64,
    pub sampler: SamplerKind,
    pub batches: Vec<BatchRecord>,
}

impl McStats {
    /// Fidelity band of the configured mode.
    pub fn fidelity(&self) -> Band {
        self.fidelity_in(self.mode)
    }

    pub fn fidelity_in(&self, mode: Mode) -> Band {
        match mode {
            Mode::ER => self.fidelity_er,
            Mode::QR => self.fidelity_qr,
        }
    }
}

/// Runs all batches, in parallel when the `parallel` feature is on. The
/// result depends only on the configuration.
pub fn run_batches(config: &McConfig) -> Result<McStats> {
    config.validate()?;
    let runs = config.runs_per_batch;
    let t_class = config.scenario.t_class();
    let (sampler_kind, run_fn): (SamplerKind, Box<dyn Fn(&mut ChaCha8Rng) -> RunOutcome + Sync + Send>) =
        match config.scenario {
            McScenario::Metro(s) => (SamplerKind::Direct, Box::new(move |rng| metro_run(rng, &s))),
            McScenario::Intercity(s) => {
                let sampler = RoundSampler::new(&s)?;
                match choose_sampler(config.master_seed, &sampler) {
                    SamplerKind::Direct => (SamplerKind::Direct, Box::new(move |rng| direct_intercity_run(rng, &sampler))),
                    SamplerKind::Conditional(est) => {
                        let bound = sampler.window_bound();
                        (
                            SamplerKind::Conditional(est),
                            Box::new(move |rng| conditional_intercity_run(rng, &sampler, &est, bound)),
                        )
                    }
                }
            }
        };
    let records = par::map_range(config.batches, |i| {
        let mut rng = batch_rng(config.master_seed, i);
        let (mut f_er, mut f_qr, mut time, mut rounds) = (0.0, 0.0, 0.0, 0u64);
        for _ in 0..runs {
            let r = run_fn(&mut rng);
            f_er += r.fidelity_er;
            f_qr += r.fidelity_qr;
            time += r.e2e_time_us;
            rounds += r.rounds;
        }
        let n = runs as f64;
        BatchRecord {
            batch_id: i,
            mean_fidelity_er: f_er / n,
            mean_fidelity_qr: f_qr / n,
            mean_e2e_time_us: time / n,
            rate: 1e6 * n / (time + n * t_class),
            rounds,
        }
    });
    let collect = |f: &dyn Fn(&BatchRecord) -> f64| Band::from_batches(&records.iter().map(f).collect::<Vec<_>>());
    Ok(McStats {
        mode: config.mode,
        fidelity_er: collect(&|b| b.mean_fidelity_er),
        fidelity_qr: collect(&|b| b.mean_fidelity_qr),
        rate: collect(&|b| b.rate),
        n_rounds_total: records.iter().map(|b| b.rounds).sum(),
        sampler: sampler_kind,
        batches: records,
    })
}

type C64 = Complex<f64>;
type Mat8 = SMatrix<C64, 8, 8>;

/// Result of the density-matrix teleportation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmOutcome {
    /// `<phi| rho_out |phi>` for the teleported state.
    pub fidelity: f64,
    /// Largest deviation of the trace from 1 over all circuit stages.
    pub max_trace_error: f64,
}

fn c(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

fn kron3(a: &Matrix2<C64>, b: &Matrix2<C64>, d: &Matrix2<C64>) -> Mat8 {
    let ab = a.kronecker(b);
    let full = ab.kronecker(d);
    Mat8::from_fn(|i, j| full[(i, j)])
}

/// Teleports `phi` (normalised internally) from qubit 1 to qubit 3 through
/// a Werner pair with parameter `w` on qubits 2 and 3, with the data qubit
/// depolarised to parameter `p_d` beforehand and the output depolarised for
/// `t_class` microseconds at coherence time `t_coh` afterwards. Qubit 1 is
/// the most significant bit of the basis index.
pub fn dm_teleport_oracle(w: f64, p_d: f64, t_class: f64, t_coh: f64, phi: [C64; 2]) -> Result<DmOutcome> {
    for (what, v) in [("w", w), ("p_d", p_d)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { what, value: v });
        }
    }
    if !(t_class >= 0.0 && t_coh > 0.0) {
        return Err(Error::OutOfRange { what: "t_class", value: t_class });
    }
    let norm = (phi[0].norm_sqr() + phi[1].norm_sqr()).sqrt();
    if norm == 0.0 {
        return Err(Error::OutOfRange { what: "phi", value: 0.0 });
    }
    let phi = [phi[0] / norm, phi[1] / norm];
    let id = Matrix2::<C64>::identity();
    let x = Matrix2::new(c(0.0), c(1.0), c(1.0), c(0.0));
    let z = Matrix2::new(c(1.0), c(0.0), c(0.0), c(-1.0));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = Matrix2::new(c(s), c(s), c(s), c(-s));

    let mut max_err: f64 = 0.0;
    let mut check = |m: &Mat8| max_err = max_err.max((m.trace() - c(1.0)).norm());

    let pure = Matrix2::from_fn(|i, j| phi[i] * phi[j].conj());
    let data = pure * c(p_d) + id * c((1.0 - p_d) / 2.0);
    let mut bell = SMatrix::<C64, 4, 4>::zeros();
    for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        bell[(i, j)] = c(0.5);
    }
    let pair = bell * c(w) + SMatrix::<C64, 4, 4>::identity() * c((1.0 - w) / 4.0);
    let joint = data.kronecker(&pair);
    let mut rho = Mat8::from_fn(|i, j| joint[(i, j)]);
    check(&rho);

    // CNOT with qubit 1 as control and qubit 2 as target.
    let cnot = Mat8::from_fn(|i, j| {
        let target = if i & 4 != 0 { i ^ 2 } else { i };
        c(if target == j { 1.0 } else { 0.0 })
    });
    rho = cnot * rho * cnot.adjoint();
    check(&rho);
    let h1 = kron3(&h, &id, &id);
    rho = h1 * rho * h1.adjoint();
    check(&rho);

    let mut out = Mat8::zeros();
    for m1 in 0..2usize {
        for m2 in 0..2usize {
            let proj = Mat8::from_fn(|i, j| c(if i == j && (i >> 2) == m1 && ((i >> 1) & 1) == m2 { 1.0 } else { 0.0 }));
            let xc = if m2 == 1 { x } else { id };
            let zc = if m1 == 1 { z } else { id };
            let corr = kron3(&id, &id, &(zc * xc));
            let branch = proj * rho * proj.adjoint();
            out += corr * branch * corr.adjoint();
        }
    }
    check(&out);

    let mut rho3 = Matrix2::<C64>::zeros();
    for a in 0..2 {
        for b in 0..2 {
            rho3[(a, b)] = (0..4).map(|r| out[(2 * r + a, 2 * r + b)]).sum();
        }
    }
    max_err = max_err.max((rho3.trace() - c(1.0)).norm());
    let lambda = (-t_class / t_coh).exp();
    let rho3 = rho3 * c(lambda) + id * (rho3.trace() * c((1.0 - lambda) / 2.0));
    max_err = max_err.max((rho3.trace() - c(1.0)).norm());

    let fid = (0..2).map(|i| (0..2).map(|j| phi[i].conj() * rho3[(i, j)] * phi[j]).sum::<C64>()).sum::<C64>();
    Ok(DmOutcome { fidelity: fid.re, max_trace_error: max_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Timing;

    fn toy(p_m: f64, p_b: f64, t_cut: i64) -> IntercityScenario {
        IntercityScenario {
            p_m,
            p_b,
            timing: Timing::from_raw(2, 5, 1, 3),
            t_coh_us: 50.0,
            w_m: 0.9,
            w_b: 0.8,
            t_cut,
        }
    }

    #[test]
    fn deterministic_round_matches_closed_form() {
        let s = toy(1.0, 1.0, 8);
        let mut rng = batch_rng(7, 0);
        let r = sample_round(&mut rng, &s).unwrap();
        assert!(r.y);
        assert_eq!(r.z, 5 + 1);
        let expect = 0.9 * 0.9 * 0.8 * (-s.k() * (2.0 * 3.0 + 1.0)).exp();
        assert!((r.w_e2e - expect).abs() < 1e-15);
        assert!((werner_stepwise(r.x, &s) - expect).abs() < 1e-15);
    }

    #[test]
    fn truncated_geometric_stays_in_range() {
        let mut rng = batch_rng(1, 0);
        for _ in 0..10_000 {
            let m = sample_truncated_geometric(&mut rng, (-0.3f64).ln_1p(), 4, 9);
            assert!((4..=9).contains(&m));
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 5.0), 5.0);
        assert_eq!(nearest_rank(&v, 95.0), 95.0);
        assert_eq!(nearest_rank(&[3.0], 5.0), 3.0);
    }

    #[test]
    fn success_sampler_matches_rejection() {
        // Conditional sampler against plain rejection on a low-probability toy.
        let s = toy(0.05, 0.02, 3);
        let sampler = RoundSampler::new(&s).unwrap();
        let bound = sampler.window_bound();
        let mut rng = batch_rng(3, 0);
        let n = 20_000;
        let a: f64 = (0..n).map(|_| sampler.success_round(&mut rng, bound).x_max as f64).sum::<f64>() / n as f64;
        let mut b = 0.0;
        let mut got = 0;
        while got < n {
            let r = sampler.round(&mut rng);
            if r.y {
                b += r.x_max as f64;
                got += 1;
            }
        }
        b /= n as f64;
        assert!((a - b).abs() / b < 0.03, "{a} vs {b}");
    }

    #[test]
    fn dm_oracle_trivial_cases() {
        let phi = [Complex::new(0.6, 0.1), Complex::new(0.2, -0.7)];
        let r = dm_teleport_oracle(1.0, 1.0, 0.0, 1.0, phi).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-12 && r.max_trace_error < 1e-12);
        let r = dm_teleport_oracle(0.0, 0.4, 3.0, 1.0, phi).unwrap();
        assert!((r.fidelity - 0.5).abs() < 1e-12);
    }
}
