//! Hardware requirements: the cut-off domain, maximisation of the expected
//! fidelity over the cut-off, the penalised hardware cost, the multi-start
//! optimiser over the box between baseline and optimistic values, and the
//! grid sweeps behind the requirement surfaces.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intercity_analytic::{self as ia, IntercityScenario};
use crate::metro::{self, MetroScenario};
use crate::par;
use crate::params::{derive_timing, hardware_cost, improvement_factor, p_ni, Geometry, HardwareParams, Mode, ParamKind, Timing};

/// Default target fidelity, the classical limit 2/3.
pub const F_TARGET: f64 = 2.0 / 3.0;

/// Penalty weight on infeasibility.
pub const OMEGA_1: f64 = 1e100;

/// Weight on the hardware cost.
pub const OMEGA_2: f64 = 1.0;

/// Which network and teleportation mode a requirement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    MetroER,
    MetroQR,
    IntercityER,
    IntercityQR,
}

impl ScenarioKind {
    pub fn new(intercity: bool, mode: Mode) -> Self {
        match (intercity, mode) {
            (false, Mode::ER) => ScenarioKind::MetroER,
            (false, Mode::QR) => ScenarioKind::MetroQR,
            (true, Mode::ER) => ScenarioKind::IntercityER,
            (true, Mode::QR) => ScenarioKind::IntercityQR,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            ScenarioKind::MetroER | ScenarioKind::IntercityER => Mode::ER,
            ScenarioKind::MetroQR | ScenarioKind::IntercityQR => Mode::QR,
        }
    }

    pub fn is_intercity(self) -> bool {
        matches!(self, ScenarioKind::IntercityER | ScenarioKind::IntercityQR)
    }
}

/// Admissible cut-off times `lower + 1 ..= upper`, us.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffDomain {
    /// Exclusive lower bound.
    pub lower: i64,
    pub upper: i64,
}

impl CutoffDomain {
    pub fn first(&self) -> i64 {
        self.lower + 1
    }

    pub fn len(&self) -> i64 {
        self.upper - self.lower
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0
    }
}

/// Cut-off domain `(max{t_m, t_b, t_msg, ceil(0.01 t_coh)}, t_coh]`.
pub fn cut_off_domain(timing: &Timing, t_coh_us: f64) -> Result<CutoffDomain> {
    let lower = timing.t_m.max(timing.t_b).max(timing.t_msg).max((0.01 * t_coh_us).ceil() as i64);
    let upper = t_coh_us.floor() as i64;
    if upper <= lower {
        return Err(Error::EmptyCutoffDomain { lower, upper });
    }
    Ok(CutoffDomain { lower, upper })
}

/// Resolution of the search over cut-off times in the QR case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcutSearch {
    /// Number of log-spaced grid points over the domain.
    pub grid_points: usize,
    /// Golden-section refinement stops once the bracket is narrower than
    /// this fraction of its left end (or 2 us); 0 refines to single
    /// microseconds.
    pub rel_tol: f64,
}

impl Default for TcutSearch {
    fn default() -> Self {
        TcutSearch { grid_points: 64, rel_tol: 0.0 }
    }
}

impl TcutSearch {
    /// Coarser search used inside the optimiser.
    pub fn coarse() -> Self {
        TcutSearch { grid_points: 16, rel_tol: 1e-3 }
    }
}

/// Performance of one hardware point at one cut-off (absent for metro).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfPoint {
    pub t_cut: Option<i64>,
    pub fidelity: f64,
    /// Teleportation rate, s^-1.
    pub rate: f64,
}

/// A hardware point bound to geometry and scenario kind.
struct Evaluator {
    kind: ScenarioKind,
    metro: Option<MetroScenario>,
    intercity: Option<IntercityScenario>,
    domain: Option<CutoffDomain>,
    cache: HashMap<i64, f64>,
}

impl Evaluator {
    fn new(hw: &HardwareParams, geometry: &Geometry, kind: ScenarioKind) -> Result<Self> {
        if kind.is_intercity() {
            let timing = derive_timing(geometry)?;
            let domain = cut_off_domain(&timing, hw.t_coh_us())?;
            let scn = IntercityScenario::from_params(hw, geometry, domain.first())?;
            Ok(Evaluator { kind, metro: None, intercity: Some(scn), domain: Some(domain), cache: HashMap::new() })
        } else {
            let scn = MetroScenario::from_params(hw, geometry, kind.mode())?;
            Ok(Evaluator { kind, metro: Some(scn), intercity: None, domain: None, cache: HashMap::new() })
        }
    }

    fn fidelity(&mut self, t_cut: i64) -> Result<f64> {
        if let Some(s) = &self.metro {
            return Ok(metro::metro_fidelity(s));
        }
        if let Some(&f) = self.cache.get(&t_cut) {
            return Ok(f);
        }
        let scn = self.intercity.expect("intercity scenario").with_t_cut(t_cut);
        let f = match self.kind.mode() {
            Mode::ER => ia::intercity_fidelity_er(&scn)?,
            Mode::QR => ia::intercity_fidelity_qr(&scn)?,
        };
        self.cache.insert(t_cut, f);
        Ok(f)
    }

    fn rate(&self, t_cut: Option<i64>) -> Result<f64> {
        match (&self.metro, &self.intercity, t_cut) {
            (Some(s), _, _) => Ok(metro::metro_rate(s)),
            (_, Some(s), Some(t)) => ia::intercity_rate(&s.with_t_cut(t)),
            _ => unreachable!("intercity rate needs a cut-off"),
        }
    }

    /// Best fidelity among all cut-offs evaluated so far, ties to the
    /// smaller cut-off.
    fn cached_best(&self) -> Option<(f64, i64)> {
        self.cache
            .iter()
            .map(|(&t, &f)| (f, t))
            .reduce(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
    }

    /// Largest fidelity over the domain. With `stop_at`, returns as soon as
    /// a cut-off reaching it is found. The result is the best cut-off among
    /// every one this evaluator has seen.
    fn best(&mut self, search: &TcutSearch, stop_at: Option<f64>) -> Result<(f64, Option<i64>)> {
        let Some(domain) = self.domain else {
            return Ok((self.fidelity(0)?, None));
        };
        if self.kind.mode() == Mode::ER {
            let t = domain.first();
            return Ok((self.fidelity(t)?, Some(t)));
        }
        let grid = log_grid(&domain, search.grid_points);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &t) in grid.iter().enumerate() {
            let f = self.fidelity(t)?;
            if f > best.0 {
                best = (f, i);
            }
            if stop_at.is_some_and(|s| f >= s) {
                return Ok((f, Some(t)));
            }
        }
        let lo = grid[best.1.saturating_sub(1)];
        let hi = grid[(best.1 + 1).min(grid.len() - 1)];
        self.golden(lo, hi, search.rel_tol, stop_at)?;
        let (f, t) = self.cached_best().expect("evaluated at least one cut-off");
        Ok((f, Some(t)))
    }

    /// As [`Evaluator::best`] for the QR case, starting from a cut-off
    /// expected to lie near the maximiser. Walks outward in log steps until
    /// the maximum is bracketed, then refines. Falls back to the full search
    /// when the walk runs long.
    fn best_near(&mut self, hint: i64, search: &TcutSearch, stop_at: Option<f64>) -> Result<(f64, Option<i64>)> {
        let Some(domain) = self.domain else {
            return self.best(search, stop_at);
        };
        if self.kind.mode() == Mode::ER {
            return self.best(search, stop_at);
        }
        const STEP: f64 = 1.1;
        let clamp = |t: f64| (t.round() as i64).clamp(domain.first(), domain.upper);
        let mut mid = clamp(hint as f64);
        let reached = |f: f64| stop_at.is_some_and(|s| f >= s);
        let f_mid = self.fidelity(mid)?;
        if reached(f_mid) {
            return Ok((f_mid, Some(mid)));
        }
        for _ in 0..12 {
            let (lo, hi) = (clamp(mid as f64 / STEP), clamp(mid as f64 * STEP));
            let (f_lo, f_hi, f_mid) = (self.fidelity(lo)?, self.fidelity(hi)?, self.fidelity(mid)?);
            for (f, t) in [(f_lo, lo), (f_hi, hi)] {
                if reached(f) {
                    return Ok((f, Some(t)));
                }
            }
            if f_mid >= f_lo && f_mid >= f_hi {
                self.golden(lo, hi, search.rel_tol.max(1e-3), stop_at)?;
                let (f, t) = self.cached_best().expect("evaluated at least one cut-off");
                return Ok((f, Some(t)));
            }
            mid = if f_lo > f_hi { lo } else { hi };
        }
        self.best(search, stop_at)
    }

    /// Golden-section search for the maximum on `[lo, hi]`, finishing with
    /// an exhaustive scan of a short bracket.
    fn golden(&mut self, mut lo: i64, mut hi: i64, rel_tol: f64, stop_at: Option<f64>) -> Result<(f64, i64)> {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let done = |lo: i64, hi: i64| hi - lo <= 4 || (hi - lo) as f64 <= rel_tol * lo as f64;
        let interior = |lo: i64, hi: i64| {
            let d = ((hi - lo) as f64 * INV_PHI).round() as i64;
            (hi - d, lo + d)
        };
        let reached = |f: f64| stop_at.is_some_and(|s| f >= s);
        if done(lo, hi) {
            return self.scan(lo, hi);
        }
        // Each step keeps one interior point and mirrors it to get the other.
        let (mut a, mut b) = interior(lo, hi);
        let (mut fa, mut fb) = (self.fidelity(a)?, self.fidelity(b)?);
        loop {
            if reached(fa) {
                return Ok((fa, a));
            }
            if reached(fb) {
                return Ok((fb, b));
            }
            if fa >= fb {
                hi = b;
            } else {
                lo = a;
            }
            if done(lo, hi) {
                break;
            }
            let (kept, f_kept) = if fa >= fb { (a, fa) } else { (b, fb) };
            let mirror = lo + hi - kept;
            (a, b) = if mirror == kept { interior(lo, hi) } else { (mirror.min(kept), mirror.max(kept)) };
            fa = if a == kept { f_kept } else { self.fidelity(a)? };
            fb = if b == kept { f_kept } else { self.fidelity(b)? };
        }
        self.scan(lo, hi)
    }

    /// Best fidelity on a short bracket: every point when at most five,
    /// otherwise both ends and the middle.
    fn scan(&mut self, lo: i64, hi: i64) -> Result<(f64, i64)> {
        let mut best = (f64::NEG_INFINITY, lo);
        let pts: Vec<i64> = if hi - lo <= 4 { (lo..=hi).collect() } else { vec![lo, (lo + hi) / 2, hi] };
        for t in pts {
            let f = self.fidelity(t)?;
            if f > best.0 {
                best = (f, t);
            }
        }
        Ok(best)
    }

    /// Largest `t` in `[good, bad)` with fidelity at least `target`, given
    /// fidelity(good) >= target > fidelity(bad) and monotone in between.
    fn frontier(&mut self, mut good: i64, mut bad: i64, target: f64) -> Result<i64> {
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if self.fidelity(mid)? >= target {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    }

    fn max_rate_at_target(&mut self, target: f64, search: &TcutSearch) -> Result<(f64, Option<i64>)> {
        let Some(domain) = self.domain else {
            if self.fidelity(0)? >= target {
                return Ok((self.rate(None)?, None));
            }
            return Err(Error::Infeasible { target });
        };
        let t = match self.kind.mode() {
            Mode::ER => {
                if self.fidelity(domain.first())? < target {
                    return Err(Error::Infeasible { target });
                }
                if self.fidelity(domain.upper)? >= target {
                    domain.upper
                } else {
                    self.frontier(domain.first(), domain.upper, target)?
                }
            }
            Mode::QR => {
                let grid = log_grid(&domain, search.grid_points);
                let mut last_ok = None;
                for (i, &t) in grid.iter().enumerate() {
                    if self.fidelity(t)? >= target {
                        last_ok = Some(i);
                    }
                }
                match last_ok {
                    Some(i) if i + 1 == grid.len() => grid[i],
                    Some(i) => self.frontier(grid[i], grid[i + 1], target)?,
                    None => {
                        // The peak lies between grid points.
                        let (f, t) = self.best(search, None)?;
                        if f < target {
                            return Err(Error::Infeasible { target });
                        }
                        let t = t.expect("intercity cut-off");
                        match grid.iter().find(|&&g| g > t) {
                            Some(&g) => self.frontier(t, g, target)?,
                            None => t,
                        }
                    }
                }
            }
        };
        Ok((self.rate(Some(t))?, Some(t)))
    }
}

/// Log-spaced distinct integer cut-offs covering the domain, both ends
/// included.
pub fn log_grid(domain: &CutoffDomain, n: usize) -> Vec<i64> {
    let (a, b) = (domain.first(), domain.upper);
    if n <= 1 || a >= b {
        return vec![a];
    }
    let ratio = (b as f64 / a as f64).ln();
    let mut v: Vec<i64> = (0..n)
        .map(|i| {
            let t = (a as f64 * (ratio * i as f64 / (n - 1) as f64).exp()).round() as i64;
            t.clamp(a, b)
        })
        .collect();
    v[n - 1] = b;
    v.dedup();
    v
}

/// Largest expected fidelity over the cut-off domain and where it is
/// attained. Metro fidelities do not depend on a cut-off.
pub fn best_over_tcut(hw: &HardwareParams, geometry: &Geometry, kind: ScenarioKind, search: &TcutSearch) -> Result<(f64, Option<i64>)> {
    Evaluator::new(hw, geometry, kind)?.best(search, None)
}

/// Rate at the largest cut-off whose expected fidelity reaches `target`.
pub fn max_rate_at_target(hw: &HardwareParams, geometry: &Geometry, kind: ScenarioKind, target: f64, search: &TcutSearch) -> Result<(f64, Option<i64>)> {
    Evaluator::new(hw, geometry, kind)?.max_rate_at_target(target, search)
}

/// `omega_1 (1 + (f_target - F)^2) 1[F < f_target] + omega_2 h`.
pub fn penalised_cost(fidelity: f64, h: f64, problem: &OptimProblem) -> f64 {
    let deficit = problem.f_target - fidelity;
    let penalty = if fidelity < problem.f_target { problem.omega_1 * (1.0 + deficit * deficit) } else { 0.0 };
    penalty + problem.omega_2 * h
}

/// Penalised cost of a point, with `F` the best fidelity over the cut-off.
pub fn scalarized_cost(point: &HardwareParams, problem: &OptimProblem) -> Result<f64> {
    let h = hardware_cost(&problem.free, point, &problem.baseline_point())?;
    let (f, _) = Evaluator::new(point, &problem.geometry, problem.kind)?.best(&problem.search, None)?;
    Ok(penalised_cost(f, h, problem))
}

/// One of the four requirement questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Question {
    /// Metro network alone.
    Q1,
    /// Metro hardware free, backbone at optimistic values.
    Q2,
    /// Backbone hardware free, metro at optimistic values.
    Q3,
    /// All five parameters free.
    Q4,
}

impl Question {
    pub fn parse(s: &str) -> Option<Question> {
        match s.to_ascii_lowercase().as_str() {
            "q1" => Some(Question::Q1),
            "q2" => Some(Question::Q2),
            "q3" => Some(Question::Q3),
            "q4" => Some(Question::Q4),
            _ => None,
        }
    }
}

/// An optimisation problem over a box of hardware parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimProblem {
    pub kind: ScenarioKind,
    pub free: Vec<ParamKind>,
    /// Values of all parameters; free ones are overwritten during search.
    pub fixed: HardwareParams,
    /// Lower corner of the box (baseline values).
    pub lower: HardwareParams,
    /// Upper corner of the box (optimistic values).
    pub upper: HardwareParams,
    pub geometry: Geometry,
    pub f_target: f64,
    pub omega_1: f64,
    pub omega_2: f64,
    pub restarts: usize,
    /// Fidelity maximisations allowed per restart.
    pub budget: usize,
    pub seed: u64,
    pub search: TcutSearch,
}

impl OptimProblem {
    /// Standard problem for a question and mode.
    pub fn question(q: Question, mode: Mode) -> Self {
        use ParamKind::*;
        let base = HardwareParams::baseline();
        let opt = HardwareParams::optimistic();
        let (intercity, free, fixed) = match q {
            Question::Q1 => (false, vec![BaseEfficiency, CoherenceTime, MetroFidelity], base),
            Question::Q2 => (true, vec![BaseEfficiency, CoherenceTime, MetroFidelity], HardwareParams { p_b: opt.p_b, f_b: opt.f_b, ..base }),
            Question::Q3 => (true, vec![BackboneProb, BackboneFidelity], HardwareParams { p_b: base.p_b, f_b: base.f_b, ..opt }),
            Question::Q4 => (true, ParamKind::ALL.to_vec(), base),
        };
        OptimProblem {
            kind: ScenarioKind::new(intercity, mode),
            free,
            fixed,
            lower: base,
            upper: opt,
            geometry: Geometry::default(),
            f_target: F_TARGET,
            omega_1: OMEGA_1,
            omega_2: OMEGA_2,
            restarts: 50,
            budget: 4000,
            seed: 0,
            search: TcutSearch::coarse(),
        }
    }

    /// The fixed values with every free parameter at its lower bound.
    pub fn baseline_point(&self) -> HardwareParams {
        let mut p = self.fixed;
        for &k in &self.free {
            k.set(&mut p, k.get(&self.lower));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::Config { field: "free".into(), msg: "no free parameters".into() });
        }
        if self.budget == 0 {
            return Err(Error::Config { field: "budget".into(), msg: "must be positive".into() });
        }
        self.fixed.validate()?;
        for &k in &self.free {
            let (lo, hi) = (k.get(&self.lower), k.get(&self.upper));
            if !(lo <= hi) {
                return Err(Error::Config { field: k.symbol().into(), msg: format!("lower bound {lo} exceeds upper bound {hi}") });
            }
            p_ni(k, lo)?;
            p_ni(k, hi)?;
        }
        Ok(())
    }

    /// Maps unit-box coordinates to parameter values, linearly in
    /// `ln p_NI` between the bounds.
    fn point_at(&self, u: &[f64]) -> HardwareParams {
        let mut p = self.fixed;
        for (&k, &x) in self.free.iter().zip(u) {
            let (lo, hi) = (k.get(&self.lower), k.get(&self.upper));
            let v = if x <= 0.0 {
                lo
            } else if x >= 1.0 {
                hi
            } else {
                let (a, b) = (p_ni(k, lo).unwrap().ln(), p_ni(k, hi).unwrap().ln());
                k.from_p_ni((a + x * (b - a)).exp()).clamp(lo, hi)
            };
            k.set(&mut p, v);
        }
        p
    }
}

/// Outcome of an optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub point: HardwareParams,
    /// Operating cut-off, us: the largest one meeting the target when
    /// feasible, otherwise the fidelity maximiser. Absent for metro.
    pub t_cut_star: Option<i64>,
    /// Expected fidelity at `t_cut_star`.
    pub fidelity: f64,
    /// Largest expected fidelity over the cut-off domain.
    pub max_fidelity: f64,
    /// Rate at `t_cut_star`, s^-1.
    pub rate: f64,
    pub cost_h: f64,
    pub per_param_if: BTreeMap<String, f64>,
    pub feasible: bool,
    /// Total cost evaluations over all restarts.
    pub evaluations: usize,
}

/// Strict preference: lower cost, then lexicographically smaller
/// coordinates.
fn better(a_cost: f64, a_u: &[f64], b_cost: f64, b_u: &[f64]) -> bool {
    if a_cost != b_cost {
        return a_cost < b_cost;
    }
    for (x, y) in a_u.iter().zip(b_u) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Smallest pattern step; coordinates are unit-box fractions.
const MIN_STEP: f64 = 1e-3;

/// State of one restart: the problem, the coordinate solved onto the
/// feasibility frontier, and the last QR maximiser as a warm start.
struct Restart<'a> {
    problem: &'a OptimProblem,
    base: HardwareParams,
    solve: usize,
    hint: Option<i64>,
    evals: usize,
}

impl<'a> Restart<'a> {
    /// Best fidelity over the cut-off, stopping early at the target. A point
    /// without admissible cut-offs counts as fidelity 0.
    fn max_f(&mut self, u: &[f64]) -> f64 {
        self.evals += 1;
        let p = self.problem;
        let point = p.point_at(u);
        let Ok(mut ev) = Evaluator::new(&point, &p.geometry, p.kind) else { return 0.0 };
        let found = match self.hint {
            Some(h) if p.kind == ScenarioKind::IntercityQR => ev.best_near(h, &p.search, Some(p.f_target)),
            _ => ev.best(&p.search, Some(p.f_target)),
        };
        match found {
            Ok((f, t)) => {
                if t.is_some() {
                    self.hint = t;
                }
                f
            }
            Err(_) => 0.0,
        }
    }

    /// False when no cut-off can bring the point to the target: the expected
    /// intercity fidelity never exceeds `1/2 + w_m^2 w_b d / 2`, with `d` the
    /// decay over the fixed message delays.
    fn could_reach(&self, u: &[f64]) -> bool {
        let p = self.problem;
        if !p.kind.is_intercity() {
            return true;
        }
        let Ok(t) = derive_timing(&p.geometry) else { return true };
        let point = p.point_at(u);
        let msg = match p.kind.mode() {
            Mode::ER => t.t_msg as f64,
            Mode::QR => 1.5 * t.t_msg as f64,
        };
        let decay = (-2.0 / point.t_coh_us() * (msg + t.t_int_class as f64 / 2.0)).exp();
        0.5 + 0.5 * point.w_m().powi(2) * point.w_b().max(0.0) * decay >= p.f_target
    }

    fn cost(&self, u: &[f64], f: f64) -> f64 {
        let h = hardware_cost(&self.problem.free, &self.problem.point_at(u), &self.base).unwrap_or(f64::INFINITY);
        penalised_cost(f, h, self.problem)
    }

    /// Completes `v` with the smallest solved coordinate reaching the target,
    /// to within `tol`, starting the bracket from `prev` when given. When even
    /// the upper bound misses the target, returns the penalised cost there.
    /// The cost grows with the solved coordinate, so once the hardware cost at
    /// the lowest still possible value exceeds `ceiling` the search stops and
    /// returns an infinite cost.
    fn project(&mut self, v: &[f64], prev: Option<f64>, tol: f64, ceiling: f64) -> (Vec<f64>, f64) {
        let target = self.problem.f_target;
        let j = self.solve;
        let with = |x: f64| {
            let mut u = v.to_vec();
            u.insert(j, x);
            u
        };
        let feasible = |s: &mut Self, x: f64| {
            let u = with(x);
            s.could_reach(&u) && s.max_f(&u) >= target
        };
        let infeasible_top = |s: &mut Self| {
            let u = with(1.0);
            let f = s.max_f(&u);
            let c = s.cost(&u, f);
            (u, c)
        };
        let above = |s: &Self, x: f64| {
            let u = with(x);
            (s.problem.omega_2 * hardware_cost(&s.problem.free, &s.problem.point_at(&u), &s.base).unwrap_or(f64::INFINITY) > ceiling)
                .then_some((u, f64::INFINITY))
        };
        if let Some(out) = above(self, 0.0) {
            return out;
        }
        let (mut lo, mut hi);
        let mut d = tol * 4.0;
        match prev {
            Some(p) if feasible(self, p) => {
                hi = p;
                lo = (p - d).max(0.0);
                while lo > 0.0 && feasible(self, lo) {
                    hi = lo;
                    d *= 2.0;
                    lo = (hi - d).max(0.0);
                }
                if lo == 0.0 && hi > 0.0 && feasible(self, 0.0) {
                    hi = 0.0;
                }
            }
            Some(p) => {
                lo = p;
                if let Some(out) = above(self, lo) {
                    return out;
                }
                hi = (p + d).min(1.0);
                while hi < 1.0 && !feasible(self, hi) {
                    lo = hi;
                    if let Some(out) = above(self, lo) {
                        return out;
                    }
                    d *= 2.0;
                    hi = (lo + d).min(1.0);
                }
                if hi == 1.0 && !feasible(self, 1.0) {
                    return infeasible_top(self);
                }
            }
            None => {
                if !feasible(self, 1.0) {
                    return infeasible_top(self);
                }
                lo = 0.0;
                hi = 1.0;
                if feasible(self, 0.0) {
                    hi = 0.0;
                }
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if feasible(self, mid) {
                hi = mid;
            } else {
                lo = mid;
                if let Some(out) = above(self, lo) {
                    return out;
                }
            }
        }
        let u = with(hi);
        let c = self.cost(&u, target);
        (u, c)
    }

    /// Pattern search over the coordinates other than the solved one, with
    /// halving steps.
    fn run(&mut self, mut v: Vec<f64>) -> (Vec<f64>, f64) {
        let tol_for = |step: f64| (step * 0.05).max(1e-5);
        let mut step = 0.25;
        let (mut u, mut cost) = self.project(&v, None, tol_for(step), f64::INFINITY);
        while step >= MIN_STEP && self.evals < self.problem.budget {
            let mut improved = false;
            'moves: for i in 0..v.len() {
                for dir in [-1.0, 1.0] {
                    if self.evals >= self.problem.budget {
                        break 'moves;
                    }
                    let mut trial = v.clone();
                    trial[i] = (v[i] + dir * step).clamp(0.0, 1.0);
                    if trial[i] == v[i] {
                        continue;
                    }
                    let ceiling = if cost < self.problem.omega_1 { cost } else { f64::INFINITY };
                    let (tu, c) = self.project(&trial, Some(u[self.solve]), tol_for(step), ceiling);
                    if better(c, &tu, cost, &u) {
                        v = trial;
                        u = tu;
                        cost = c;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                // Re-solve at the finer tolerance so later comparisons are
                // made at matching precision.
                let (tu, c) = self.project(&v, Some(u[self.solve]), tol_for(step), f64::INFINITY);
                if better(c, &tu, cost, &u) || c < self.problem.omega_1 {
                    u = tu;
                    cost = c;
                }
            }
        }
        (u, cost)
    }
}

/// Summarises a point: fidelity, operating cut-off, rate and cost.
pub fn assess(point: &HardwareParams, problem: &OptimProblem) -> Result<OptimResult> {
    assess_with_witness(point, problem, None)
}

/// As [`assess`], also considering the cut-off `witness` at which the
/// optimiser saw the point reach its best fidelity. QR fidelity is jagged on
/// the integer cut-off lattice, so a generic search can miss that cut-off.
pub fn assess_with_witness(point: &HardwareParams, problem: &OptimProblem, witness: Option<i64>) -> Result<OptimResult> {
    let base = problem.baseline_point();
    let mut ev = Evaluator::new(point, &problem.geometry, problem.kind)?;
    let full = TcutSearch::default();
    if let (Some(t), Some(d)) = (witness, ev.domain) {
        if (d.first()..=d.upper).contains(&t) {
            ev.fidelity(t)?;
        }
    }
    ev.best(&problem.search, None)?;
    let (max_f, t_best) = ev.best(&full, None)?;
    let feasible = max_f >= problem.f_target;
    let (rate, t_cut) = if feasible {
        ev.max_rate_at_target(problem.f_target, &full)?
    } else {
        (ev.rate(t_best)?, t_best)
    };
    let fidelity = match t_cut {
        Some(t) => ev.fidelity(t)?,
        None => max_f,
    };
    let mut per_param_if = BTreeMap::new();
    for &k in &problem.free {
        per_param_if.insert(k.symbol().to_string(), improvement_factor(k, k.get(point), k.get(&base))?);
    }
    Ok(OptimResult {
        point: *point,
        t_cut_star: t_cut,
        fidelity,
        max_fidelity: max_f,
        rate,
        cost_h: hardware_cost(&problem.free, point, &base)?,
        per_param_if,
        feasible,
        evaluations: 0,
    })
}

/// Minimises the penalised cost by multi-start pattern search in
/// `ln p_NI` coordinates. Each restart solves one coordinate (cycling over
/// the free ones) onto the feasibility frontier and searches over the
/// others. Returns the baseline point when it is already feasible or when
/// `restarts` is zero.
/// Infeasibility is reported through `feasible = false` with the best point
/// found.
pub fn optimize(problem: &OptimProblem) -> Result<OptimResult> {
    problem.validate()?;
    let n = problem.free.len();
    let base = problem.baseline_point();
    let mut probe = Restart { problem, base, solve: 0, hint: None, evals: 0 };
    let zero = vec![0.0; n];
    let f0 = probe.max_f(&zero);
    if f0 >= problem.f_target || problem.restarts == 0 {
        let mut r = assess(&base, problem)?;
        r.evaluations = 1;
        return Ok(r);
    }
    let runs = par::map_range(problem.restarts, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
        rng.set_stream(i as u64);
        let start: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
        let mut r = Restart { problem, base, solve: i % n, hint: None, evals: 0 };
        let (u, cost) = r.run(start);
        let witness = if r.max_f(&u) >= problem.f_target { r.hint } else { None };
        (u, cost, r.evals, witness)
    });
    let evaluations = runs.iter().map(|r| r.2).sum::<usize>() + 1;
    let (u, _, _, witness) = runs
        .into_iter()
        .reduce(|a, b| if better(b.1, &b.0, a.1, &a.0) { b } else { a })
        .expect("at least one restart");
    let mut r = assess_with_witness(&problem.point_at(&u), problem, witness)?;
    r.evaluations = evaluations;
    Ok(r)
}

/// One cell of a minimum-fidelity surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub p_m0: f64,
    pub t_coh_s: f64,
    /// Smallest metro link fidelity reaching the target, if any up to the
    /// fixed upper value does.
    pub f_min: Option<f64>,
    /// Largest rate at `f_min`, s^-1.
    pub rate: Option<f64>,
}

/// Bisection tolerance on link fidelities in the sweeps.
pub const F_TOL: f64 = 1e-10;

fn min_link_fidelity(
    hw: &HardwareParams,
    kind_param: ParamKind,
    f_hi: f64,
    geometry: &Geometry,
    kind: ScenarioKind,
    target: f64,
    search: &TcutSearch,
) -> Result<Option<(f64, f64)>> {
    let feasible = |f: f64| -> Result<bool> {
        let mut p = *hw;
        kind_param.set(&mut p, f);
        Ok(best_over_tcut(&p, geometry, kind, search)?.0 >= target)
    };
    if !feasible(f_hi)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.25 + 1e-12, f_hi);
    if feasible(lo)? {
        hi = lo;
    }
    while hi - lo > F_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut p = *hw;
    kind_param.set(&mut p, hi);
    let (rate, _) = max_rate_at_target(&p, geometry, kind, target, search)?;
    Ok(Some((hi, rate)))
}

/// For every `(p_m0, t_coh)` cell, the smallest metro link fidelity in
/// `(1/4, fixed.f_m]` reaching the target and the largest rate there. The
/// backbone values are taken from `fixed`.
pub fn min_fidelity_surface(
    p_m0s: &[f64],
    t_cohs: &[f64],
    fixed: &HardwareParams,
    geometry: &Geometry,
    kind: ScenarioKind,
    target: f64,
    search: &TcutSearch,
) -> Result<Vec<SurfaceRow>> {
    let cells: Vec<(f64, f64)> = p_m0s.iter().flat_map(|&p| t_cohs.iter().map(move |&t| (p, t))).collect();
    par::map(&cells, |&(p_m0, t_coh_s)| {
        let hw = HardwareParams { p_m0, t_coh_s, ..*fixed };
        let found = match min_link_fidelity(&hw, ParamKind::MetroFidelity, fixed.f_m, geometry, kind, target, search) {
            Err(Error::EmptyCutoffDomain { .. }) => None,
            other => other?,
        };
        Ok(SurfaceRow { p_m0, t_coh_s, f_min: found.map(|x| x.0), rate: found.map(|x| x.1) })
    })
    .into_iter()
    .collect()
}

/// One cell of a backbone feasibility region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub p_b: f64,
    pub f_b: f64,
    pub feasible: bool,
    pub max_rate: Option<f64>,
    pub t_cut: Option<i64>,
}

/// Feasibility and largest rate at the target for every `(p_b, f_b)` cell,
/// with metro values taken from `fixed`.
pub fn feasibility_region(
    p_bs: &[f64],
    f_bs: &[f64],
    fixed: &HardwareParams,
    geometry: &Geometry,
    kind: ScenarioKind,
    target: f64,
    search: &TcutSearch,
) -> Result<Vec<RegionRow>> {
    let cells: Vec<(f64, f64)> = p_bs.iter().flat_map(|&p| f_bs.iter().map(move |&f| (p, f))).collect();
    par::map(&cells, |&(p_b, f_b)| {
        let hw = HardwareParams { p_b, f_b, ..*fixed };
        match max_rate_at_target(&hw, geometry, kind, target, search) {
            Ok((rate, t)) => Ok(RegionRow { p_b, f_b, feasible: true, max_rate: Some(rate), t_cut: t }),
            Err(Error::Infeasible { .. }) => Ok(RegionRow { p_b, f_b, feasible: false, max_rate: None, t_cut: None }),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_examples() {
        let t = derive_timing(&Geometry::default()).unwrap();
        assert_eq!(cut_off_domain(&t, 62_000.0).unwrap(), CutoffDomain { lower: 2425, upper: 62_000 });
        assert_eq!(cut_off_domain(&t, 4e6).unwrap().first(), 40_001);
        assert!(matches!(cut_off_domain(&t, 2_000.0), Err(Error::EmptyCutoffDomain { .. })));
    }

    #[test]
    fn log_grid_covers_domain() {
        let d = CutoffDomain { lower: 100, upper: 10_000 };
        let g = log_grid(&d, 64);
        assert_eq!(g[0], 101);
        assert_eq!(*g.last().unwrap(), 10_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_grid(&CutoffDomain { lower: 5, upper: 6 }, 64), vec![6]);
    }

    #[test]
    fn penalty_plug_in() {
        let p = OptimProblem::question(Question::Q1, Mode::ER);
        assert_eq!(penalised_cost(0.7, 3.0, &p), 3.0);
        let d: f64 = 2.0 / 3.0 - 0.6;
        assert_eq!(penalised_cost(0.6, 3.0, &p), 1e100 * (1.0 + d * d) + 3.0);
    }

    #[test]
    fn point_mapping_hits_bounds() {
        let p = OptimProblem::question(Question::Q4, Mode::QR);
        assert_eq!(p.point_at(&[0.0; 5]), HardwareParams::baseline());
        assert_eq!(p.point_at(&[1.0; 5]), HardwareParams::optimistic());
        let mid = p.point_at(&[0.5; 5]);
        assert!(mid.p_m0 > 5.95e-4 && mid.p_m0 < 1.43e-2);
    }
}
