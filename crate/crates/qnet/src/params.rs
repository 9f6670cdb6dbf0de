//! Hardware and geometry parameters, derived slot timings, presets, the
//! no-imperfection mapping, improvement factors and the hardware cost.

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed network geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Distance from an end node to its hub, km.
    pub d_metro_km: f64,
    /// Length of the backbone link, km.
    pub d_backbone_km: f64,
    /// Fiber attenuation coefficient, km^-1 (dB scale as in 10^(-alpha d / 10)).
    pub alpha_per_km: f64,
    /// Speed of light in fiber, km/s.
    pub c_km_s: f64,
    /// Local preparation overhead per attempt, us.
    pub t_prep_us: i64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            d_metro_km: 25.0,
            d_backbone_km: 450.0,
            alpha_per_km: 0.2,
            c_km_s: 200_000.0,
            t_prep_us: 175,
        }
    }
}

/// The five free hardware parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareParams {
    /// Base efficiency of a metro entanglement attempt.
    pub p_m0: f64,
    /// Memory coherence time, seconds.
    pub t_coh_s: f64,
    /// Fidelity of a fresh metro link.
    pub f_m: f64,
    /// Success probability of a backbone attempt.
    pub p_b: f64,
    /// Fidelity of a fresh backbone link.
    pub f_b: f64,
}

/// Discrete timings, all in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub t_m_class: i64,
    pub t_b_class: i64,
    pub t_mprime: i64,
    pub t_m: i64,
    pub t_b: i64,
    pub t_msg: i64,
    pub t_int_class: i64,
    /// t_b / gcd(t_m, t_b); `m_star * t_m` is the least common multiple.
    pub m_star: i64,
}

impl Timing {
    /// Builds a timing record from raw cycle values. Used for toy scenarios
    /// that do not come from a physical geometry.
    pub fn from_raw(t_m: i64, t_b: i64, t_msg: i64, t_int_class: i64) -> Timing {
        assert!(t_m > 0 && t_b > 0 && t_msg >= 0 && t_int_class >= 0);
        Timing {
            t_m_class: 0,
            t_b_class: 0,
            t_mprime: t_m,
            t_m,
            t_b,
            t_msg,
            t_int_class,
            m_star: t_b / t_m.gcd(&t_b),
        }
    }
}

/// Teleportation mode: entanglement-ready or qubit-ready.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// The data qubit is prepared once the end-to-end link exists.
    ER,
    /// The data qubit is prepared before entanglement generation starts.
    QR,
}

/// Trapped-ion experiment efficiencies feeding the base efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonExperimentParams {
    pub eta_ion: f64,
    pub eta_det_ion_freq: f64,
    pub eta_fc: f64,
    pub eta_penalty: f64,
    pub eta_det_telecom: f64,
    /// Average preparation time between shots, us.
    pub t_m_prep: f64,
}

impl IonExperimentParams {
    pub fn baseline() -> Self {
        IonExperimentParams {
            eta_ion: 0.462 / 0.87,
            eta_det_ion_freq: 0.87,
            eta_fc: 0.25,
            eta_penalty: 0.12,
            eta_det_telecom: 0.75,
            t_m_prep: 175.0,
        }
    }

    pub fn optimistic() -> Self {
        IonExperimentParams {
            eta_ion: 0.5 / 0.87,
            eta_det_ion_freq: 0.87,
            eta_fc: 0.70,
            eta_penalty: 0.20,
            eta_det_telecom: 0.94,
            t_m_prep: 175.0,
        }
    }
}

/// The five kinds of free hardware parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamKind {
    BaseEfficiency,
    CoherenceTime,
    MetroFidelity,
    BackboneProb,
    BackboneFidelity,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::BaseEfficiency,
        ParamKind::CoherenceTime,
        ParamKind::MetroFidelity,
        ParamKind::BackboneProb,
        ParamKind::BackboneFidelity,
    ];

    /// Column / key name used in CSV and JSON output.
    pub fn symbol(self) -> &'static str {
        match self {
            ParamKind::BaseEfficiency => "p_m0",
            ParamKind::CoherenceTime => "t_coh_s",
            ParamKind::MetroFidelity => "f_m",
            ParamKind::BackboneProb => "p_b",
            ParamKind::BackboneFidelity => "f_b",
        }
    }

    /// Reads this parameter from a parameter set.
    pub fn get(self, hw: &HardwareParams) -> f64 {
        match self {
            ParamKind::BaseEfficiency => hw.p_m0,
            ParamKind::CoherenceTime => hw.t_coh_s,
            ParamKind::MetroFidelity => hw.f_m,
            ParamKind::BackboneProb => hw.p_b,
            ParamKind::BackboneFidelity => hw.f_b,
        }
    }

    /// Writes this parameter into a parameter set.
    pub fn set(self, hw: &mut HardwareParams, value: f64) {
        match self {
            ParamKind::BaseEfficiency => hw.p_m0 = value,
            ParamKind::CoherenceTime => hw.t_coh_s = value,
            ParamKind::MetroFidelity => hw.f_m = value,
            ParamKind::BackboneProb => hw.p_b = value,
            ParamKind::BackboneFidelity => hw.f_b = value,
        }
    }

    /// Inverse of [`p_ni`] on the kind's domain.
    pub fn from_p_ni(self, p: f64) -> f64 {
        match self {
            ParamKind::BaseEfficiency | ParamKind::BackboneProb => p,
            ParamKind::CoherenceTime => -1.0 / p.ln(),
            ParamKind::MetroFidelity | ParamKind::BackboneFidelity => fidelity_from_werner(p),
        }
    }
}

/// Microseconds for a propagation distance, required to be an integer.
fn slots(what: &'static str, d_km: f64, c_km_s: f64) -> Result<i64> {
    let us = d_km / c_km_s * 1e6;
    let r = us.round();
    if !us.is_finite() || (us - r).abs() > 1e-6 * r.abs().max(1.0) {
        return Err(Error::NonIntegerSlot { what, value: us });
    }
    Ok(r as i64)
}

fn check_geometry(g: &Geometry) -> Result<()> {
    let checks = [
        ("d_metro_km", g.d_metro_km, g.d_metro_km > 0.0),
        ("d_backbone_km", g.d_backbone_km, g.d_backbone_km > 0.0),
        ("alpha_per_km", g.alpha_per_km, g.alpha_per_km >= 0.0),
        ("c_km_s", g.c_km_s, g.c_km_s > 0.0),
        ("t_prep_us", g.t_prep_us as f64, g.t_prep_us >= 0),
    ];
    for (what, value, ok) in checks {
        if !ok || !value.is_finite() {
            return Err(Error::OutOfRange { what, value });
        }
    }
    Ok(())
}

/// Derives all slot timings from the geometry.
pub fn derive_timing(geometry: &Geometry) -> Result<Timing> {
    check_geometry(geometry)?;
    let t_m_class = slots("t_m_class", geometry.d_metro_km, geometry.c_km_s)?;
    let t_b_class = slots("t_b_class", geometry.d_backbone_km, geometry.c_km_s)?;
    let t_m = geometry.t_prep_us + 2 * t_m_class;
    let t_b = geometry.t_prep_us + t_b_class;
    Ok(Timing {
        t_m_class,
        t_b_class,
        t_mprime: t_m,
        t_m,
        t_b,
        t_msg: t_m_class + t_b_class,
        t_int_class: 2 * t_m_class + t_b_class,
        m_star: t_b / t_m.gcd(&t_b),
    })
}

/// Attempt success probabilities `(p_mprime, p_m)` of the end-to-end metro
/// link (two hops of fiber) and of the end-node to border link (one hop).
pub fn link_success_probs(p_m0: f64, geometry: &Geometry) -> Result<(f64, f64)> {
    if !(p_m0 > 0.0 && p_m0 <= 1.0) {
        return Err(Error::OutOfRange { what: "p_m0", value: p_m0 });
    }
    let loss = geometry.alpha_per_km * geometry.d_metro_km / 10.0;
    Ok((p_m0 * 10f64.powf(-2.0 * loss), p_m0 * 10f64.powf(-loss)))
}

/// Base efficiency `1/2 * eta_penalty * (eta_ion * eta_fc * eta_det_telecom)^2`.
pub fn base_efficiency(ion: &IonExperimentParams) -> Result<f64> {
    let effs = [
        ("eta_ion", ion.eta_ion),
        ("eta_det_ion_freq", ion.eta_det_ion_freq),
        ("eta_fc", ion.eta_fc),
        ("eta_penalty", ion.eta_penalty),
        ("eta_det_telecom", ion.eta_det_telecom),
    ];
    for (what, value) in effs {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { what, value });
        }
    }
    let chain = ion.eta_ion * ion.eta_fc * ion.eta_det_telecom;
    Ok(0.5 * ion.eta_penalty * chain * chain)
}

/// Werner parameter of a state with the given fidelity.
pub fn werner_from_fidelity(f: f64) -> Result<f64> {
    if !(0.25..=1.0).contains(&f) {
        return Err(Error::OutOfRange { what: "fidelity", value: f });
    }
    Ok((4.0 * f - 1.0) / 3.0)
}

/// Fidelity of a Werner state with parameter `w`.
pub fn fidelity_from_werner(w: f64) -> f64 {
    (1.0 + 3.0 * w) / 4.0
}

/// No-imperfection probability of a parameter value.
pub fn p_ni(kind: ParamKind, value: f64) -> Result<f64> {
    let what = kind.symbol();
    let bad = Error::OutOfRange { what, value };
    match kind {
        ParamKind::BaseEfficiency | ParamKind::BackboneProb => {
            if value > 0.0 && value <= 1.0 {
                Ok(value)
            } else {
                Err(bad)
            }
        }
        ParamKind::CoherenceTime => {
            if value > 0.0 && value.is_finite() {
                Ok((-1.0 / value).exp())
            } else {
                Err(bad)
            }
        }
        ParamKind::MetroFidelity | ParamKind::BackboneFidelity => {
            if value > 0.25 && value <= 1.0 {
                Ok((4.0 * value - 1.0) / 3.0)
            } else {
                Err(bad)
            }
        }
    }
}

/// Improvement factor `ln p_NI(baseline) / ln p_NI(value)`.
pub fn improvement_factor(kind: ParamKind, value: f64, baseline: f64) -> Result<f64> {
    if kind == ParamKind::CoherenceTime {
        // ln e^(-1/t) = -1/t, so the ratio is t / t_baseline exactly.
        p_ni(kind, value)?;
        p_ni(kind, baseline)?;
        return Ok(value / baseline);
    }
    let a = p_ni(kind, baseline)?;
    let b = p_ni(kind, value)?;
    if a >= 1.0 || b >= 1.0 {
        return Err(Error::DegenerateLog { what: kind.symbol() });
    }
    Ok(a.ln() / b.ln())
}

/// Hardware cost: the sum of improvement factors over the free parameters.
pub fn hardware_cost(kinds: &[ParamKind], point: &HardwareParams, baseline: &HardwareParams) -> Result<f64> {
    kinds
        .iter()
        .map(|&k| improvement_factor(k, k.get(point), k.get(baseline)))
        .sum()
}

impl HardwareParams {
    pub fn baseline() -> Self {
        HardwareParams { p_m0: 5.95e-4, t_coh_s: 0.062, f_m: 0.88, p_b: 1.51e-6, f_b: 0.60 }
    }

    pub fn optimistic() -> Self {
        HardwareParams { p_m0: 1.43e-2, t_coh_s: 4.0, f_m: 0.95, p_b: 4.18e-3, f_b: 0.90 }
    }

    /// Checks every field against its stated range.
    pub fn validate(&self) -> Result<()> {
        for k in ParamKind::ALL {
            p_ni(k, k.get(self))?;
        }
        Ok(())
    }

    /// Metro link Werner parameter.
    pub fn w_m(&self) -> f64 {
        (4.0 * self.f_m - 1.0) / 3.0
    }

    /// Backbone link Werner parameter.
    pub fn w_b(&self) -> f64 {
        (4.0 * self.f_b - 1.0) / 3.0
    }

    /// Coherence time in microseconds.
    pub fn t_coh_us(&self) -> f64 {
        self.t_coh_s * 1e6
    }
}

/// Returns the named preset: hardware values, geometry and ion parameters.
pub fn load_preset(name: &str) -> Result<(HardwareParams, Geometry, IonExperimentParams)> {
    match name {
        "baseline" => Ok((HardwareParams::baseline(), Geometry::default(), IonExperimentParams::baseline())),
        "optimistic" => Ok((HardwareParams::optimistic(), Geometry::default(), IonExperimentParams::optimistic())),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Flat JSON configuration keyed by parameter symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub p_m0: f64,
    pub t_coh_s: f64,
    pub f_m: f64,
    pub p_b: f64,
    pub f_b: f64,
    pub d_metro_km: f64,
    pub d_backbone_km: f64,
    pub alpha_per_km: f64,
    pub c_km_s: f64,
    pub t_prep_us: i64,
}

impl ParamConfig {
    pub fn new(hw: &HardwareParams, g: &Geometry) -> Self {
        ParamConfig {
            p_m0: hw.p_m0,
            t_coh_s: hw.t_coh_s,
            f_m: hw.f_m,
            p_b: hw.p_b,
            f_b: hw.f_b,
            d_metro_km: g.d_metro_km,
            d_backbone_km: g.d_backbone_km,
            alpha_per_km: g.alpha_per_km,
            c_km_s: g.c_km_s,
            t_prep_us: g.t_prep_us,
        }
    }

    pub fn hardware(&self) -> HardwareParams {
        HardwareParams { p_m0: self.p_m0, t_coh_s: self.t_coh_s, f_m: self.f_m, p_b: self.p_b, f_b: self.f_b }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            d_metro_km: self.d_metro_km,
            d_backbone_km: self.d_backbone_km,
            alpha_per_km: self.alpha_per_km,
            c_km_s: self.c_km_s,
            t_prep_us: self.t_prep_us,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_timing() {
        let t = derive_timing(&Geometry::default()).unwrap();
        assert_eq!((t.t_m_class, t.t_m, t.t_mprime), (125, 425, 425));
        assert_eq!((t.t_b_class, t.t_b, t.t_msg, t.t_int_class), (2250, 2425, 2375, 2500));
        assert_eq!(t.m_star, 97);
        assert_eq!((t.m_star * t.t_m) % t.t_b, 0);
    }

    #[test]
    fn non_integer_slot_is_rejected() {
        let g = Geometry { d_metro_km: 25.0001, ..Geometry::default() };
        assert!(matches!(derive_timing(&g), Err(Error::NonIntegerSlot { .. })));
    }

    #[test]
    fn link_probs() {
        let (pp, p) = link_success_probs(5.95e-4, &Geometry::default()).unwrap();
        assert!((pp - 5.95e-5).abs() < 1e-15);
        assert!((p - 1.8816e-4).abs() < 1e-8);
        let lossless = Geometry { alpha_per_km: 0.0, ..Geometry::default() };
        assert_eq!(link_success_probs(0.3, &lossless).unwrap(), (0.3, 0.3));
    }

    #[test]
    fn base_efficiency_presets() {
        let b = base_efficiency(&IonExperimentParams::baseline()).unwrap();
        let o = base_efficiency(&IonExperimentParams::optimistic()).unwrap();
        assert!((b - 5.95e-4).abs() < 0.005e-4, "{b}");
        assert!((o - 1.43e-2).abs() < 0.005e-2, "{o}");
        let perfect = IonExperimentParams {
            eta_ion: 1.0,
            eta_det_ion_freq: 1.0,
            eta_fc: 1.0,
            eta_penalty: 1.0,
            eta_det_telecom: 1.0,
            t_m_prep: 175.0,
        };
        assert_eq!(base_efficiency(&perfect).unwrap(), 0.5);
    }

    #[test]
    fn werner_roundtrip() {
        assert_eq!(werner_from_fidelity(1.0).unwrap(), 1.0);
        assert_eq!(werner_from_fidelity(0.25).unwrap(), 0.0);
        assert!((werner_from_fidelity(0.88).unwrap() - 0.84).abs() < 1e-15);
        for i in 0..=100 {
            let f = 0.25 + 0.75 * i as f64 / 100.0;
            let back = fidelity_from_werner(werner_from_fidelity(f).unwrap());
            assert!((back - f).abs() < 1e-15);
        }
        assert!(werner_from_fidelity(1.1).is_err());
    }

    #[test]
    fn p_ni_values() {
        assert!((p_ni(ParamKind::MetroFidelity, 0.88).unwrap() - 0.84).abs() < 1e-15);
        let t = p_ni(ParamKind::CoherenceTime, 0.062).unwrap();
        // Direct evaluation gives 9.891e-8 for a 62 ms coherence time.
        assert!((t - (-1.0f64 / 0.062).exp()).abs() < 1e-20 && (t - 9.89e-8).abs() < 0.01e-8, "{t}");
        assert_eq!(p_ni(ParamKind::BaseEfficiency, 0.123).unwrap(), 0.123);
        assert!(p_ni(ParamKind::BackboneProb, 0.0).is_err());
    }

    #[test]
    fn improvement_factors() {
        for k in ParamKind::ALL {
            let b = k.get(&HardwareParams::baseline());
            assert_eq!(improvement_factor(k, b, b).unwrap(), 1.0);
        }
        let f = improvement_factor(ParamKind::CoherenceTime, 0.196, 0.062).unwrap();
        assert!((f - 3.161).abs() < 1e-3);
        let f = improvement_factor(ParamKind::MetroFidelity, 0.95, 0.88).unwrap();
        assert!((f - 2.527).abs() < 1e-3, "{f}");
        let f = improvement_factor(ParamKind::BackboneProb, 4.18e-3, 1.51e-6).unwrap();
        assert!((f - 2.447).abs() < 1e-3, "{f}");
        assert!(matches!(
            improvement_factor(ParamKind::BaseEfficiency, 1.0, 0.5),
            Err(Error::DegenerateLog { .. })
        ));
    }

    #[test]
    fn cost_at_baseline_counts_parameters() {
        let b = HardwareParams::baseline();
        let kinds = [ParamKind::BaseEfficiency, ParamKind::CoherenceTime, ParamKind::MetroFidelity];
        assert_eq!(hardware_cost(&kinds, &b, &b).unwrap(), 3.0);
    }

    #[test]
    fn presets_and_config_roundtrip() {
        assert_eq!(load_preset("baseline").unwrap().0.p_b, 1.51e-6);
        assert_eq!(load_preset("optimistic").unwrap().0.t_coh_s, 4.0);
        assert_eq!(load_preset("baseline").unwrap().0.f_b, 0.60);
        assert!(matches!(load_preset("nope"), Err(Error::UnknownPreset(_))));
        let cfg = ParamConfig::new(&HardwareParams::baseline(), &Geometry::default());
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ParamConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert!((ParamKind::CoherenceTime.from_p_ni(p_ni(ParamKind::CoherenceTime, 0.5).unwrap()) - 0.5).abs() < 1e-12);
    }
}
