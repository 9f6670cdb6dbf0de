//! Exact evaluation of the intercity success probability, expected
//! end-to-end time, teleportation rate and expected ER/QR fidelities.
//!
//! A round draws three independent geometric attempt counts: `M1`, `M2` for
//! the two end-node to border links (cycle `t_m`) and `Mb` for the backbone
//! (cycle `t_b`). With `X = t * M` the completion times, the round succeeds
//! iff `X_max - X_min <= t_cut - 1`.
//!
//! Every expectation is split over the events "which variable is the maximum
//! (or minimum) and which is the minimum (or maximum)" and recombined by
//! inclusion-exclusion. Each event expectation is a sum over the lattice
//! index of one outer variable. Past a threshold index no bound is clamped
//! any more, and shifting the outer time by a common multiple of all cycle
//! times multiplies a term by a fixed ratio; the tail is then summed in
//! closed form by [`series::geometric_tail`]. Below the threshold the terms
//! are summed directly.
//!
//! Payoffs of the form `exp(-sum_i theta_i X_i)` are handled by tilting the
//! geometric weights of the variables, which keeps the same event machinery
//! for probabilities and for the exponential moments `U`.

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{derive_timing, link_success_probs, Geometry, HardwareParams, Timing};
use crate::series::{self, PeriodSums};

/// Parameters of one intercity teleportation scenario at a fixed cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntercityScenario {
    /// Attempt success probability of an end-node to border link.
    pub p_m: f64,
    /// Attempt success probability of the backbone link.
    pub p_b: f64,
    pub timing: Timing,
    /// Memory coherence time, us.
    pub t_coh_us: f64,
    /// Werner parameter of a fresh metro link.
    pub w_m: f64,
    /// Werner parameter of a fresh backbone link.
    pub w_b: f64,
    /// Cut-off, us. A round succeeds iff the spread is at most `t_cut - 1`.
    pub t_cut: i64,
}

impl IntercityScenario {
    /// Builds a scenario from hardware parameters and geometry.
    pub fn from_params(hw: &HardwareParams, geometry: &Geometry, t_cut: i64) -> Result<Self> {
        hw.validate()?;
        let timing = derive_timing(geometry)?;
        let (_, p_m) = link_success_probs(hw.p_m0, geometry)?;
        let scn = IntercityScenario {
            p_m,
            p_b: hw.p_b,
            timing,
            t_coh_us: hw.t_coh_us(),
            w_m: hw.w_m(),
            w_b: hw.w_b(),
            t_cut,
        };
        scn.validate()?;
        Ok(scn)
    }

    /// Same scenario at another cut-off.
    pub fn with_t_cut(&self, t_cut: i64) -> Self {
        IntercityScenario { t_cut, ..*self }
    }

    /// Decay constant `k = 2 / t_coh` of a link Werner parameter, us^-1.
    pub fn k(&self) -> f64 {
        2.0 / self.t_coh_us
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("p_m", self.p_m, self.p_m > 0.0 && self.p_m <= 1.0),
            ("p_b", self.p_b, self.p_b > 0.0 && self.p_b <= 1.0),
            ("t_coh_us", self.t_coh_us, self.t_coh_us > 0.0),
            ("w_m", self.w_m, (0.0..=1.0).contains(&self.w_m)),
            ("w_b", self.w_b, (0.0..=1.0).contains(&self.w_b)),
            ("t_cut", self.t_cut as f64, self.t_cut >= 1),
        ];
        for (what, value, ok) in checks {
            if !ok {
                return Err(Error::OutOfRange { what, value });
            }
        }
        Ok(())
    }

    fn metro(&self, theta: f64) -> Lat {
        Lat::single(self.p_m, self.timing.t_m, theta)
    }

    fn backbone(&self, theta: f64) -> Lat {
        Lat::single(self.p_b, self.timing.t_b, theta)
    }
}

/// A geometric variable on the time lattice `step * k`, `k >= 1`, with
/// weight `c * g^(k-1)`. Single links have `c = p`, `g = 1 - p`; tilting by
/// `exp(-theta X)` multiplies both by `exp(-theta step)`. Several variables
/// forced to coincide are merged into one variable on their common lattice.
#[derive(Debug, Clone, Copy)]
struct Lat {
    step: i64,
    c: f64,
    ln_g: f64,
    one_minus_g: f64,
}

impl Lat {
    fn single(p: f64, step: i64, theta: f64) -> Lat {
        let a = theta * step as f64;
        let damp = (-a).exp();
        Lat {
            step,
            c: p * damp,
            ln_g: (-p).ln_1p() - a,
            one_minus_g: p * damp - (-a).exp_m1(),
        }
    }

    /// Joint weight of all `parts` taking the same value.
    fn merge(parts: &[Lat]) -> Lat {
        let step = parts.iter().fold(1i64, |acc, v| acc.lcm(&v.step));
        let mut c = 1.0;
        let mut ln_g = 0.0;
        for v in parts {
            let r = step / v.step;
            c *= v.c * v.gpow(r - 1);
            ln_g += r as f64 * v.ln_g;
        }
        Lat { step, c, ln_g, one_minus_g: -ln_g.exp_m1() }
    }

    /// `g^n` with `g^0 = 1` also when `g = 0`.
    #[inline]
    fn gpow(&self, n: i64) -> f64 {
        if n == 0 {
            1.0
        } else {
            (n as f64 * self.ln_g).exp()
        }
    }

    /// Weight of index `k`.
    #[inline]
    fn w(&self, k: i64) -> f64 {
        if k < 1 {
            0.0
        } else {
            self.c * self.gpow(k - 1)
        }
    }

    /// Sum of weights over indices `lo..=hi` (`hi = None` for no bound),
    /// restricted to `k >= 1`.
    #[inline]
    fn range(&self, lo: i64, hi: Option<i64>) -> f64 {
        let lo = lo.max(1);
        match hi {
            None => self.c * self.gpow(lo - 1) / self.one_minus_g,
            Some(hi) if hi < lo => 0.0,
            Some(hi) => {
                let n = hi - lo + 1;
                if self.one_minus_g == 0.0 {
                    self.c * n as f64
                } else {
                    self.c * self.gpow(lo - 1) * -(n as f64 * self.ln_g).exp_m1() / self.one_minus_g
                }
            }
        }
    }

    /// Sum of weights over lattice times in `[t_lo, t_hi]`.
    #[inline]
    fn window(&self, t_lo: i64, t_hi: i64) -> f64 {
        self.range(ceil_div(t_lo, self.step), Some(t_hi.div_euclid(self.step)))
    }

    /// Sum of weights over lattice times `>= t_lo`.
    #[inline]
    fn at_or_after(&self, t_lo: i64) -> f64 {
        self.range(ceil_div(t_lo, self.step), None)
    }
}

#[inline]
fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Sum over the outer index `k >= 1` of `f(k)` (and of `step * k * f(k)`),
/// where `f(k + z) = exp(ln_rho) f(k)` for every `k >= start`. Indices below
/// `start` are summed directly, one period from `start` is summed directly
/// and the rest follows from the closed-form geometric tail. `f` is called
/// with strictly increasing arguments.
fn periodic_sum(
    step: i64,
    start: i64,
    z: i64,
    ln_rho: f64,
    mut f: impl FnMut(i64) -> f64,
) -> PeriodSums {
    let start = start.max(1);
    let mut prefix = PeriodSums::default();
    for k in 1..start {
        let v = f(k);
        prefix.sum += v;
        prefix.weighted += (step * k) as f64 * v;
    }
    let mut period = PeriodSums::default();
    let mut first = 0.0;
    for k in start..start + z {
        let v = f(k);
        if k == start {
            first = v;
        }
        period.sum += v;
        period.weighted += (step * k) as f64 * v;
    }
    if cfg!(debug_assertions) {
        let next = f(start + z);
        let expect = ln_rho.exp() * first;
        let scale = first.abs().max(1e-280);
        debug_assert!(
            (next - expect).abs() <= 1e-6 * scale || (next.abs() < 1e-200 && expect.abs() < 1e-200),
            "periodicity violated: f(start+z) = {next}, rho f(start) = {expect}"
        );
    }
    let tail = series::geometric_tail(period, ln_rho, (z * step) as f64)
        .expect("event tail ratio must be below one");
    PeriodSums { sum: prefix.sum + tail.sum, weighted: prefix.weighted + tail.weighted }
}

/// Period (in outer indices) after which all inner lattices realign, and
/// the log of the per-period weight ratio.
fn period_of(outer: &Lat, inner: &[Lat]) -> (i64, f64) {
    let l = inner.iter().fold(outer.step, |acc, v| acc.lcm(&v.step));
    let z = l / outer.step;
    let mut ln_rho = z as f64 * outer.ln_g;
    for v in inner {
        ln_rho += (l / v.step) as f64 * v.ln_g;
    }
    (z, ln_rho)
}

/// Outer variable is the maximum; every inner variable lies independently in
/// `[X - tp, X]`.
fn star_plus(outer: Lat, inner: &[Lat], tp: i64) -> PeriodSums {
    let (z, ln_rho) = period_of(&outer, inner);
    let start = ceil_div(tp + 1, outer.step);
    periodic_sum(outer.step, start, z, ln_rho, |k| {
        let x = outer.step * k;
        inner.iter().fold(outer.w(k), |acc, v| acc * v.window(x - tp, x))
    })
}

/// Outer variable is the minimum; the other variable is at least `tc` later.
fn pair_minus(outer: Lat, upper: Lat, tc: i64) -> PeriodSums {
    let (z, ln_rho) = period_of(&outer, &[upper]);
    periodic_sum(outer.step, 1, z, ln_rho, |k| outer.w(k) * upper.at_or_after(outer.step * k + tc))
}

/// Ordered chain `A <= B <= C` with `C` the outer maximum and `C - A <= tp`.
fn chain_plus(c: Lat, a: Lat, b: Lat, tp: i64) -> PeriodSums {
    let (z, ln_rho) = period_of(&c, &[a, b]);
    let start = ceil_div(tp + 1, c.step);
    // h(i) = w_A(i) * P(B >= X_A) restricted to B's weights.
    let h = |i: i64| a.w(i) * b.range(ceil_div(a.step * i, b.step), None);
    let mut lo = 1i64;
    let mut hi = 0i64;
    let mut wsum = 0.0;
    periodic_sum(c.step, start, z, ln_rho, |k| {
        let x = c.step * k;
        let hb = x.div_euclid(b.step);
        let new_lo = ceil_div(x - tp, a.step).max(1);
        let new_hi = (b.step * hb).div_euclid(a.step);
        if k == start {
            // Fresh window at the start of the periodic region limits drift
            // from the sliding updates.
            lo = new_lo;
            hi = new_hi.max(new_lo - 1);
            wsum = (lo..=hi).map(h).sum();
        } else if new_lo > hi {
            lo = new_lo;
            hi = new_lo - 1;
            wsum = 0.0;
        } else {
            while lo < new_lo {
                wsum -= h(lo);
                lo += 1;
            }
        }
        while hi < new_hi {
            hi += 1;
            wsum += h(hi);
        }
        if new_hi < new_lo {
            return 0.0;
        }
        let wa = a.range(new_lo, Some(new_hi));
        c.w(k) * (wsum - b.range(hb + 1, None) * wa)
    })
}

/// Ordered chain `A <= B <= C` with `A` the outer minimum and `C - A >= tc`.
fn chain_minus(a: Lat, b: Lat, c: Lat, tc: i64) -> PeriodSums {
    let (z, ln_rho) = period_of(&a, &[b, c]);
    let (zc, ln_rho_c) = period_of(&c, &[b]);
    // Tail sum over c >= c0 of w_C(c) * P(B beyond the last B point <= X_C).
    let kfun = |i: i64| c.w(i) * b.range((c.step * i).div_euclid(b.step) + 1, None);
    let k_tail = |c0: i64| {
        let mut head = PeriodSums::default();
        for i in c0..c0 + zc {
            head.sum += kfun(i);
        }
        series::geometric_tail(head, ln_rho_c, 0.0).expect("chain tail ratio must be below one").sum
    };
    periodic_sum(a.step, 1, z, ln_rho, |i| {
        let xa = a.step * i;
        let lo_b = ceil_div(xa, b.step);
        let c0 = ceil_div(xa + tc, c.step).max(ceil_div(b.step * lo_b, c.step));
        let inner = b.range(lo_b, None) * c.range(c0, None) - k_tail(c0);
        a.w(i) * inner
    })
}

/// Expectations over the events whose union is `{Y = 1}`.
#[derive(Debug, Clone, Copy, Default)]
struct PlusEvents {
    /// `A1+`: link 1 is the maximum.
    a1: PeriodSums,
    /// `Ab+`: the backbone is the maximum.
    ab: PeriodSums,
    /// `A1+ A2+`: both metro links tie for the maximum.
    a1a2: PeriodSums,
    /// `A1+ Ab+`: link 1 and the backbone tie for the maximum.
    a1ab: PeriodSums,
    /// All three coincide.
    a1a2ab: PeriodSums,
}

/// Expectations over the events whose union is `{Y = 0}`; the weighted
/// component is weighted by `X_min`.
#[derive(Debug, Clone, Copy, Default)]
struct MinusEvents {
    a12: PeriodSums,
    a1b: PeriodSums,
    ab1: PeriodSums,
    a12_a1b: PeriodSums,
    ab1_ab2: PeriodSums,
    a1_a2: PeriodSums,
    a1_ab: PeriodSums,
}

fn plus_events(scn: &IntercityScenario) -> PlusEvents {
    let tp = scn.t_cut - 1;
    let m = scn.metro(0.0);
    let b = scn.backbone(0.0);
    PlusEvents {
        a1: star_plus(m, &[m, b], tp),
        ab: star_plus(b, &[m, m], tp),
        a1a2: star_plus(Lat::merge(&[m, m]), &[b], tp),
        a1ab: star_plus(Lat::merge(&[m, b]), &[m], tp),
        a1a2ab: star_plus(Lat::merge(&[m, m, b]), &[], tp),
    }
}

/// The seven `-` events, with the minimum variable tilted by `theta`.
fn minus_events(scn: &IntercityScenario, theta: f64) -> MinusEvents {
    let tc = scn.t_cut;
    let m = scn.metro(0.0);
    let b = scn.backbone(0.0);
    let mt = scn.metro(theta);
    let bt = scn.backbone(theta);
    MinusEvents {
        a12: chain_minus(mt, b, m, tc),
        a1b: chain_minus(bt, m, m, tc),
        ab1: chain_minus(mt, m, b, tc),
        a12_a1b: pair_minus(Lat::merge(&[mt, b]), m, tc),
        ab1_ab2: pair_minus(Lat::merge(&[mt, m]), b, tc),
        a1_a2: pair_minus(bt, Lat::merge(&[m, m]), tc),
        a1_ab: pair_minus(mt, Lat::merge(&[m, b]), tc),
    }
}

impl MinusEvents {
    fn combine(&self, f: impl Fn(&PeriodSums) -> f64) -> f64 {
        2.0 * (f(&self.a12) + f(&self.a1b) + f(&self.ab1))
            - 2.0 * f(&self.a12_a1b)
            - f(&self.ab1_ab2)
            - f(&self.a1_a2)
            - 2.0 * f(&self.a1_ab)
    }
}

impl PlusEvents {
    fn combine(&self, f: impl Fn(&PeriodSums) -> f64) -> f64 {
        2.0 * f(&self.a1) + f(&self.ab) - f(&self.a1a2) - 2.0 * f(&self.a1ab) + f(&self.a1a2ab)
    }
}

/// Payoff functional applied to each event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payoff {
    /// `E(1_event)`.
    Indicator,
    /// `E(Z 1_event)`, with `Z = X_max + t_msg` on success events and
    /// `Z = X_min + t_cut` on failure events.
    Z,
}

/// One expectation per event of the success and failure decompositions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTermSet {
    pub a1_plus: f64,
    pub ab_plus: f64,
    pub a1_plus_a2_plus: f64,
    pub a1_plus_ab_plus: f64,
    pub a1_plus_a2_plus_ab_plus: f64,
    pub a12_minus: f64,
    pub a1b_minus: f64,
    pub ab1_minus: f64,
    pub a12_minus_a1b_minus: f64,
    pub ab1_minus_ab2_minus: f64,
    pub a1_minus_a2_minus: f64,
    pub a1_minus_ab_minus: f64,
}

impl EventTermSet {
    /// Inclusion-exclusion over the success events.
    pub fn success_total(&self) -> f64 {
        2.0 * self.a1_plus + self.ab_plus - self.a1_plus_a2_plus - 2.0 * self.a1_plus_ab_plus
            + self.a1_plus_a2_plus_ab_plus
    }

    /// Inclusion-exclusion over the failure events.
    pub fn failure_total(&self) -> f64 {
        2.0 * (self.a12_minus + self.a1b_minus + self.ab1_minus)
            - 2.0 * self.a12_minus_a1b_minus
            - self.ab1_minus_ab2_minus
            - self.a1_minus_a2_minus
            - 2.0 * self.a1_minus_ab_minus
    }
}

/// Every event expectation for the given payoff.
pub fn event_terms(scn: &IntercityScenario, payoff: Payoff) -> Result<EventTermSet> {
    scn.validate()?;
    let plus = plus_events(scn);
    let minus = minus_events(scn, 0.0);
    let t_msg = scn.timing.t_msg as f64;
    let t_cut = scn.t_cut as f64;
    let fp = |s: &PeriodSums| match payoff {
        Payoff::Indicator => s.sum,
        Payoff::Z => s.weighted + t_msg * s.sum,
    };
    let fm = |s: &PeriodSums| match payoff {
        Payoff::Indicator => s.sum,
        Payoff::Z => s.weighted + t_cut * s.sum,
    };
    Ok(EventTermSet {
        a1_plus: fp(&plus.a1),
        ab_plus: fp(&plus.ab),
        a1_plus_a2_plus: fp(&plus.a1a2),
        a1_plus_ab_plus: fp(&plus.a1ab),
        a1_plus_a2_plus_ab_plus: fp(&plus.a1a2ab),
        a12_minus: fm(&minus.a12),
        a1b_minus: fm(&minus.a1b),
        ab1_minus: fm(&minus.ab1),
        a12_minus_a1b_minus: fm(&minus.a12_a1b),
        ab1_minus_ab2_minus: fm(&minus.ab1_ab2),
        a1_minus_a2_minus: fm(&minus.a1_a2),
        a1_minus_ab_minus: fm(&minus.a1_ab),
    })
}

/// `U(v, alpha) = E(exp(-v (X_diff + (alpha - 2) X_max)) 1_{Y=1})`, where
/// `X_diff = X_max - X_min` when a metro link finishes last and
/// `X_diff = 2 X_b - X_1 - X_2` when the backbone finishes last.
pub fn u_alpha(v: f64, alpha: f64, scn: &IntercityScenario) -> Result<f64> {
    scn.validate()?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::OutOfRange { what: "v", value: v });
    }
    let tp = scn.t_cut - 1;
    let top = scn.metro(v * (alpha - 1.0));
    let m_low = scn.metro(-v);
    let b_low = scn.backbone(-v);
    let m = scn.metro(0.0);
    let b = scn.backbone(0.0);
    let a12 = chain_plus(top, m_low, b, tp).sum;
    let a1b = chain_plus(top, b_low, m, tp).sum;
    let a12_a1b = star_plus(top, &[Lat::merge(&[m_low, b])], tp).sum;
    let ab = star_plus(scn.backbone(v * alpha), &[m_low, m_low], tp).sum;
    let a1a2 = star_plus(Lat::merge(&[top, m]), &[b_low], tp).sum;
    let a1ab = star_plus(Lat::merge(&[top, b]), &[m_low], tp).sum;
    let all = star_plus(Lat::merge(&[scn.metro(v * (alpha - 2.0)), m, b]), &[], tp).sum;
    Ok(2.0 * (a12 + a1b - a12_a1b) + ab - a1a2 - 2.0 * a1ab + all)
}

/// `U1(v) = U(v, 2)`.
pub fn u1(v: f64, scn: &IntercityScenario) -> Result<f64> {
    u_alpha(v, 2.0, scn)
}

/// `U2(v) = U(v, 5/2) = E(exp(-v (X_diff + X_max / 2)) 1_{Y=1})`.
pub fn u2(v: f64, scn: &IntercityScenario) -> Result<f64> {
    u_alpha(v, 2.5, scn)
}

/// `U3(v) = E(exp(-v X_min / 2) 1_{Y=0})`.
pub fn u3(v: f64, scn: &IntercityScenario) -> Result<f64> {
    scn.validate()?;
    Ok(minus_events(scn, v / 2.0).combine(|s| s.sum))
}

/// Probability `p = E(1_{Y=1}) = U1(0)` that a round succeeds.
pub fn success_probability(scn: &IntercityScenario) -> Result<f64> {
    scn.validate()?;
    Ok(plus_events(scn).combine(|s| s.sum))
}

/// `E(Z 1_{Y=1})`, us.
pub fn expected_z_success(scn: &IntercityScenario) -> Result<f64> {
    Ok(event_terms(scn, Payoff::Z)?.success_total())
}

/// `E(Z 1_{Y=0})`, us.
pub fn expected_z_fail(scn: &IntercityScenario) -> Result<f64> {
    Ok(event_terms(scn, Payoff::Z)?.failure_total())
}

/// Round statistics needed for the time to an end-to-end link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMoments {
    pub p: f64,
    pub z_success: f64,
    pub z_fail: f64,
}

/// Success probability together with both `Z` moments, from one pass.
pub fn round_moments(scn: &IntercityScenario) -> Result<RoundMoments> {
    scn.validate()?;
    let plus = plus_events(scn);
    let minus = minus_events(scn, 0.0);
    let t_msg = scn.timing.t_msg as f64;
    let t_cut = scn.t_cut as f64;
    Ok(RoundMoments {
        p: plus.combine(|s| s.sum),
        z_success: plus.combine(|s| s.weighted + t_msg * s.sum),
        z_fail: minus.combine(|s| s.weighted + t_cut * s.sum),
    })
}

/// Expected time to establish an end-to-end link, us.
pub fn expected_e2e_time(scn: &IntercityScenario) -> Result<f64> {
    let m = round_moments(scn)?;
    Ok((m.z_fail + m.z_success) / m.p)
}

/// Teleportation rate `1 / (t_int + E(X_e2e))`, s^-1.
pub fn intercity_rate(scn: &IntercityScenario) -> Result<f64> {
    let t = expected_e2e_time(scn)?;
    Ok(1e6 / (scn.timing.t_int_class as f64 + t))
}

/// Expected Werner parameter and fidelity of the end-to-end link.
pub fn e2e_werner_expectation(scn: &IntercityScenario) -> Result<(f64, f64)> {
    let k = scn.k();
    let p = success_probability(scn)?;
    let w = scn.w_m * scn.w_m * scn.w_b * (-k * scn.timing.t_msg as f64).exp() * u1(k, scn)? / p;
    Ok((w, (1.0 + 3.0 * w) / 4.0))
}

/// Expected fidelity of entanglement-ready teleportation.
pub fn intercity_fidelity_er(scn: &IntercityScenario) -> Result<f64> {
    let k = scn.k();
    let p = success_probability(scn)?;
    let t = &scn.timing;
    let decay = (-k * (t.t_msg as f64 + t.t_int_class as f64 / 2.0)).exp();
    Ok(0.5 + scn.w_m * scn.w_m * scn.w_b * decay * u1(k, scn)? / (2.0 * p))
}

/// Expected fidelity of qubit-ready teleportation. The data qubit waits from
/// the start of the first round: it decays over every failed round, over
/// the successful round including its final notification, and over the
/// classical teleportation delay.
pub fn intercity_fidelity_qr(scn: &IntercityScenario) -> Result<f64> {
    let k = scn.k();
    let t = &scn.timing;
    let decay = (-k * (1.5 * t.t_msg as f64 + t.t_int_class as f64 / 2.0)).exp();
    let fail = (-k * scn.t_cut as f64 / 2.0).exp() * u3(k, scn)?;
    Ok(0.5 + 0.5 * scn.w_m * scn.w_m * scn.w_b * decay * u2(k, scn)? / (1.0 - fail))
}

/// Rate and both fidelities at one cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntercityPerf {
    pub t_cut: i64,
    pub p: f64,
    pub e2e_time_us: f64,
    pub rate: f64,
    pub fidelity_er: f64,
    pub fidelity_qr: f64,
}

/// Evaluates every analytic output of a scenario.
pub fn evaluate(scn: &IntercityScenario) -> Result<IntercityPerf> {
    let m = round_moments(scn)?;
    let e2e = (m.z_fail + m.z_success) / m.p;
    Ok(IntercityPerf {
        t_cut: scn.t_cut,
        p: m.p,
        e2e_time_us: e2e,
        rate: 1e6 / (scn.timing.t_int_class as f64 + e2e),
        fidelity_er: intercity_fidelity_er(scn)?,
        fidelity_qr: intercity_fidelity_qr(scn)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(p_m: f64, p_b: f64, t_m: i64, t_b: i64, t_msg: i64, t_cut: i64) -> IntercityScenario {
        IntercityScenario {
            p_m,
            p_b,
            timing: Timing::from_raw(t_m, t_b, t_msg, 2),
            t_coh_us: 40.0,
            w_m: 0.9,
            w_b: 0.8,
            t_cut,
        }
    }

    #[test]
    fn deterministic_round() {
        let s = toy(1.0, 1.0, 2, 5, 1, 8);
        let k = s.k();
        assert!((success_probability(&s).unwrap() - 1.0).abs() < 1e-15);
        let expect = (-2.0 * k * 3.0).exp();
        assert!((u1(k, &s).unwrap() - expect).abs() < 1e-15);
        let m = round_moments(&s).unwrap();
        assert!((m.z_success - 6.0).abs() < 1e-12 && m.z_fail.abs() < 1e-15);
        assert!((intercity_rate(&s).unwrap() - 1e6 / 8.0).abs() < 1e-6);
    }

    #[test]
    fn partition_sums_to_one() {
        for &(pm, pb, tm, tb, tc) in &[(0.3, 0.2, 2, 3, 4), (0.5, 0.7, 3, 5, 7), (0.25, 0.9, 1, 4, 2)] {
            let s = toy(pm, pb, tm, tb, 1, tc);
            let e = event_terms(&s, Payoff::Indicator).unwrap();
            let total = e.success_total() + e.failure_total();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
            assert!((e.success_total() - success_probability(&s).unwrap()).abs() < 1e-14);
            assert!((u_alpha(0.0, 2.0, &s).unwrap() - e.success_total()).abs() < 1e-13);
        }
    }

    #[test]
    fn lattice_range_matches_direct_sum() {
        let v = Lat::single(0.3, 4, 0.01);
        let direct: f64 = (3..=11).map(|k| v.w(k)).sum();
        assert!((v.range(3, Some(11)) - direct).abs() < 1e-15);
        let grow = Lat::single(0.3, 4, -0.2);
        let direct: f64 = (1..=6).map(|k| grow.w(k)).sum();
        assert!((grow.range(0, Some(6)) - direct).abs() < 1e-12 * direct);
    }
}
