//! Teleportation rate and expected fidelity inside one metropolitan network,
//! where two end nodes share a single heralded link through their hub.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{derive_timing, link_success_probs, Geometry, HardwareParams, Mode};

/// One metro teleportation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetroScenario {
    /// Attempt success probability of the end-to-end metro link.
    pub p_mprime: f64,
    /// One-way end-node to hub signal time, us.
    pub t_m_class: i64,
    /// Attempt cycle of the metro link, us.
    pub t_mprime: i64,
    /// Memory coherence time, us.
    pub t_coh_us: f64,
    /// Werner parameter of a fresh metro link.
    pub w: f64,
    pub mode: Mode,
}

impl MetroScenario {
    pub fn from_params(hw: &HardwareParams, geometry: &Geometry, mode: Mode) -> Result<Self> {
        hw.validate()?;
        let timing = derive_timing(geometry)?;
        let (p_mprime, _) = link_success_probs(hw.p_m0, geometry)?;
        Ok(MetroScenario {
            p_mprime,
            t_m_class: timing.t_m_class,
            t_mprime: timing.t_mprime,
            t_coh_us: hw.t_coh_us(),
            w: hw.w_m(),
            mode,
        })
    }
}

/// Teleportation rate `p' / (2 p' t_m_class + t_m')`, s^-1. The same for
/// both modes since local operations are instantaneous.
pub fn metro_rate(scn: &MetroScenario) -> f64 {
    let p = scn.p_mprime;
    1e6 * p / (2.0 * p * scn.t_m_class as f64 + scn.t_mprime as f64)
}

/// Expected ER fidelity `(1 + w exp(-t_m_class / t_coh)) / 2`.
pub fn metro_fidelity_er(scn: &MetroScenario) -> f64 {
    0.5 * (1.0 + scn.w * (-(scn.t_m_class as f64) / scn.t_coh_us).exp())
}

/// Expected QR fidelity
/// `1/2 + 1/2 w exp(-t_m_class / t_coh) p' / (exp(t_m' / t_coh) + p' - 1)`.
pub fn metro_fidelity_qr(scn: &MetroScenario) -> f64 {
    let p = scn.p_mprime;
    let wait = p / ((scn.t_mprime as f64 / scn.t_coh_us).exp_m1() + p);
    0.5 + 0.5 * scn.w * (-(scn.t_m_class as f64) / scn.t_coh_us).exp() * wait
}

/// Expected fidelity in the scenario's own mode.
pub fn metro_fidelity(scn: &MetroScenario) -> f64 {
    match scn.mode {
        Mode::ER => metro_fidelity_er(scn),
        Mode::QR => metro_fidelity_qr(scn),
    }
}
