//! Reference implementations shared by the integration tests.

#![allow(dead_code)]

pub mod series_oracle;

use qnet::intercity_analytic::IntercityScenario;
use qnet::params::Timing;
use rand::Rng;

/// Quantities computed by direct enumeration of attempt counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct Enumerated {
    pub p: f64,
    pub z_success: f64,
    pub z_fail: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    /// Probability mass outside the enumerated cube.
    pub missing_mass: f64,
}

fn cap_for(q: f64) -> usize {
    if q <= 0.0 {
        1
    } else {
        ((1e-17f64).ln() / q.ln()).ceil() as usize + 1
    }
}

/// Enumerates every `(m1, m2, mb)` up to a cap chosen so that the geometric
/// mass beyond it is below 1e-16, evaluating each payoff from its
/// definition at `v = k`.
pub fn enumerate(s: &IntercityScenario) -> Enumerated {
    let (tm, tb) = (s.timing.t_m, s.timing.t_b);
    let (qm, qb) = (1.0 - s.p_m, 1.0 - s.p_b);
    let (cm, cb) = (cap_for(qm), cap_for(qb));
    let wm: Vec<f64> = (1..=cm).map(|m| s.p_m * qm.powi(m as i32 - 1)).collect();
    let wb: Vec<f64> = (1..=cb).map(|m| s.p_b * qb.powi(m as i32 - 1)).collect();
    let k = s.k();
    let tp = s.t_cut - 1;
    let mut out = Enumerated::default();
    for (i1, w1) in wm.iter().enumerate() {
        let x1 = tm * (i1 as i64 + 1);
        for (i2, w2) in wm.iter().enumerate() {
            let x2 = tm * (i2 as i64 + 1);
            let w12 = w1 * w2;
            for (ib, w3) in wb.iter().enumerate() {
                let xb = tb * (ib as i64 + 1);
                let w = w12 * w3;
                let xmax = x1.max(x2).max(xb);
                let xmin = x1.min(x2).min(xb);
                if xmax - xmin <= tp {
                    let xdiff = if x1 == xmax || x2 == xmax { xmax - xmin } else { 2 * xb - x1 - x2 };
                    out.p += w;
                    out.z_success += w * (xmax + s.timing.t_msg) as f64;
                    out.u1 += w * (-k * xdiff as f64).exp();
                    out.u2 += w * (-k * (xdiff as f64 + xmax as f64 / 2.0)).exp();
                } else {
                    out.z_fail += w * (xmin + s.t_cut) as f64;
                    out.u3 += w * (-k * xmin as f64 / 2.0).exp();
                }
            }
        }
    }
    let inside = (1.0 - qm.powi(cm as i32)).powi(2) * (1.0 - qb.powi(cb as i32));
    out.missing_mass = 1.0 - inside;
    out
}

/// Random toy scenario with cycle times of at most a few slots, cut-off of
/// at most 8 slots and attempt probabilities of at least 0.2.
pub fn random_toy(rng: &mut impl Rng) -> IntercityScenario {
    let t_m = rng.gen_range(1..=3);
    let t_b = rng.gen_range(1..=5);
    let t_msg = rng.gen_range(0..=3);
    IntercityScenario {
        p_m: rng.gen_range(0.2..=1.0),
        p_b: rng.gen_range(0.2..=1.0),
        timing: Timing::from_raw(t_m, t_b, t_msg, rng.gen_range(0..=4)),
        t_coh_us: rng.gen_range(5.0..200.0),
        w_m: rng.gen_range(0.3..=1.0),
        w_b: rng.gen_range(0.3..=1.0),
        t_cut: rng.gen_range(1..=8),
    }
}

/// Relative difference with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Compares analytic and enumerated values on one scenario, returning the
/// worst relative error and a description of the failing quantity, if any.
pub fn compare_with_enumeration(s: &IntercityScenario, tol: f64) -> Result<f64, String> {
    use qnet::intercity_analytic as ia;
    let e = enumerate(s);
    let k = s.k();
    let m = ia::round_moments(s).map_err(|e| e.to_string())?;
    let pairs = [
        ("p", m.p, e.p),
        ("E(Z 1_{Y=1})", m.z_success, e.z_success),
        ("E(Z 1_{Y=0})", m.z_fail, e.z_fail),
        ("U1(k)", ia::u1(k, s).unwrap(), e.u1),
        ("U2(k)", ia::u2(k, s).unwrap(), e.u2),
        ("U3(k)", ia::u3(k, s).unwrap(), e.u3),
    ];
    let mut worst: f64 = 0.0;
    for (name, a, b) in pairs {
        // Values that vanish in both computations agree trivially.
        let err = if a.abs() < 1e-300 && b.abs() < 1e-300 { 0.0 } else { rel_err(a, b) };
        // Mass outside the cube bounds what enumeration can miss.
        let allowed = tol + 1e3 * e.missing_mass / b.abs().max(1e-300);
        if err > allowed {
            return Err(format!("{name}: analytic {a:.17e} vs enumerated {b:.17e} (rel {err:.3e}) in {s:?}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
