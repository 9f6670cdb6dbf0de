//! Cut-off search, rate at target, sweeps and the requirements optimiser.

use qnet::error::Error;
use qnet::intercity_analytic::{self as ia, IntercityScenario};
use qnet::metro::MetroScenario;
use qnet::params::{derive_timing, hardware_cost, Geometry, HardwareParams, Mode, ParamKind};
use qnet::requirements::{self as rq, OptimProblem, Question, ScenarioKind, TcutSearch, F_TARGET};

fn geom() -> Geometry {
    Geometry::default()
}

fn base() -> HardwareParams {
    HardwareParams::baseline()
}

fn opt() -> HardwareParams {
    HardwareParams::optimistic()
}

fn intercity(mode: Mode) -> ScenarioKind {
    ScenarioKind::new(true, mode)
}

fn within(x: f64, expect: f64, rel: f64) -> bool {
    (x - expect).abs() <= rel * expect.abs()
}

#[test]
fn cut_off_domain_examples() {
    let timing = derive_timing(&geom()).unwrap();
    let d = rq::cut_off_domain(&timing, 62_000.0).unwrap();
    assert_eq!((d.first(), d.upper), (2426, 62_000));
    let d = rq::cut_off_domain(&timing, 4e6).unwrap();
    assert_eq!((d.first(), d.upper), (40_001, 4_000_000));
    assert!(matches!(rq::cut_off_domain(&timing, 2_000.0), Err(Error::EmptyCutoffDomain { .. })));
}

#[test]
fn er_maximum_sits_at_the_lower_end() {
    for hw in [base(), opt(), HardwareParams { p_b: opt().p_b, f_b: opt().f_b, ..base() }] {
        let (f, t) = rq::best_over_tcut(&hw, &geom(), intercity(Mode::ER), &TcutSearch::default()).unwrap();
        let d = rq::cut_off_domain(&derive_timing(&geom()).unwrap(), hw.t_coh_us()).unwrap();
        assert_eq!(t, Some(d.first()));
        // No grid point beats it.
        for t in rq::log_grid(&d, 64) {
            let s = IntercityScenario::from_params(&hw, &geom(), t).unwrap();
            assert!(ia::intercity_fidelity_er(&s).unwrap() <= f + 1e-15);
        }
    }
}

#[test]
fn qr_maximum_is_interior_for_optimistic_params() {
    let (f, t) = rq::best_over_tcut(&opt(), &geom(), intercity(Mode::QR), &TcutSearch::default()).unwrap();
    let d = rq::cut_off_domain(&derive_timing(&geom()).unwrap(), opt().t_coh_us()).unwrap();
    let t = t.unwrap();
    assert!(d.first() < t && t < d.upper, "t* = {t}");
    for probe in [t - 1, t + 1, t - 1000, t + 1000] {
        let s = IntercityScenario::from_params(&opt(), &geom(), probe).unwrap();
        assert!(ia::intercity_fidelity_qr(&s).unwrap() <= f + 1e-12);
    }
}

#[test]
fn single_point_domain_returns_that_point() {
    // Lower bound is t_b = 2425 us; a 2.426 ms coherence time leaves one value.
    let hw = HardwareParams { t_coh_s: 2.426e-3, ..base() };
    for mode in [Mode::ER, Mode::QR] {
        let (_, t) = rq::best_over_tcut(&hw, &geom(), intercity(mode), &TcutSearch::default()).unwrap();
        assert_eq!(t, Some(2426));
    }
}

#[test]
fn penalty_follows_the_scalarisation() {
    let p = OptimProblem::question(Question::Q1, Mode::ER);
    assert_eq!(rq::penalised_cost(0.7, 3.5, &p), 3.5);
    let d: f64 = 2.0 / 3.0 - 0.6;
    assert_eq!(rq::penalised_cost(0.6, 3.5, &p), 1e100 * (1.0 + d * d) + 3.5);
    assert_eq!(rq::scalarized_cost(&base(), &p).unwrap(), 3.0);
}

#[test]
fn q1_er_returns_the_baseline() {
    let r = rq::optimize(&OptimProblem::question(Question::Q1, Mode::ER)).unwrap();
    assert!(r.feasible);
    assert_eq!(r.point, base());
    assert_eq!(r.cost_h, 3.0);
    assert!(within(r.fidelity, 0.92, 0.005 / 0.92));
}

#[test]
fn q1_qr_matches_the_published_cost() {
    let mut p = OptimProblem::question(Question::Q1, Mode::QR);
    p.restarts = 6;
    let r = rq::optimize(&p).unwrap();
    assert!(r.feasible && r.fidelity >= F_TARGET);
    let published = HardwareParams { p_m0: 1.43e-2, t_coh_s: 0.196, f_m: 0.88, ..base() };
    let h_published = hardware_cost(&p.free, &published, &base()).unwrap();
    assert!(r.cost_h <= 1.02 * h_published, "{} vs {h_published}", r.cost_h);
    // Box constraints and the cost floor.
    for k in ParamKind::ALL {
        let v = k.get(&r.point);
        assert!(k.get(&base()) <= v && v <= k.get(&opt()), "{k:?} = {v}");
    }
    assert!(r.cost_h > p.free.len() as f64);
}

#[test]
fn optimiser_is_deterministic() {
    let mut p = OptimProblem::question(Question::Q4, Mode::ER);
    p.restarts = 3;
    assert_eq!(rq::optimize(&p).unwrap(), rq::optimize(&p).unwrap());
}

#[test]
fn q4_er_raises_the_backbone_fidelity_most() {
    let mut p = OptimProblem::question(Question::Q4, Mode::ER);
    p.restarts = 10;
    let r = rq::optimize(&p).unwrap();
    assert!(r.feasible);
    let top = r.per_param_if.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert_eq!(top.0, "f_b", "{:?}", r.per_param_if);
}

#[test]
fn q4_qr_at_baseline_without_restarts_is_infeasible() {
    let mut p = OptimProblem::question(Question::Q4, Mode::QR);
    p.restarts = 0;
    let r = rq::optimize(&p).unwrap();
    assert!(!r.feasible);
    assert!((r.max_fidelity - 0.5).abs() < 0.01);
}

#[test]
fn published_rates_at_target() {
    let q2 = HardwareParams { p_b: opt().p_b, f_b: opt().f_b, ..base() };
    let (rate, _) = rq::max_rate_at_target(&q2, &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default()).unwrap();
    assert!(within(rate, 4.00e-4, 0.05), "Q2-ER rate {rate}");
    let q3 = HardwareParams { p_b: base().p_b, f_b: base().f_b, ..opt() };
    let (rate, _) = rq::max_rate_at_target(&q3, &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default()).unwrap();
    assert!(within(rate, 6.16e-4, 0.05), "Q3-ER rate {rate}");
}

#[test]
fn trivial_target_uses_the_largest_cut_off() {
    let (rate, t) = rq::max_rate_at_target(&opt(), &geom(), intercity(Mode::ER), 0.5, &TcutSearch::default()).unwrap();
    assert_eq!(t, Some(4_000_000));
    let s = IntercityScenario::from_params(&opt(), &geom(), 4_000_000).unwrap();
    assert_eq!(rate, ia::intercity_rate(&s).unwrap());
}

#[test]
fn er_frontier_is_exact() {
    let points = [
        HardwareParams { p_b: opt().p_b, f_b: opt().f_b, ..base() },
        HardwareParams { p_b: base().p_b, f_b: base().f_b, ..opt() },
        opt(),
        HardwareParams { f_b: 0.8, ..opt() },
    ];
    for hw in points {
        let (_, t) = rq::max_rate_at_target(&hw, &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default()).unwrap();
        let t = t.unwrap();
        let f = |t| ia::intercity_fidelity_er(&IntercityScenario::from_params(&hw, &geom(), t).unwrap()).unwrap();
        assert!(f(t) >= F_TARGET);
        if t < hw.t_coh_us() as i64 {
            assert!(f(t + 1) < F_TARGET);
        }
    }
}

/// Our Q3-QR optimum, next to the published (2.73e-3, 0.64).
fn q3_qr_point() -> HardwareParams {
    HardwareParams { p_b: 2.72e-3, f_b: 0.646, ..opt() }
}

#[test]
fn qr_frontier_is_feasible_and_tight() {
    let hw = q3_qr_point();
    let (rate, t) = rq::max_rate_at_target(&hw, &geom(), intercity(Mode::QR), F_TARGET, &TcutSearch::default()).unwrap();
    let t = t.unwrap();
    let f = |t| ia::intercity_fidelity_qr(&IntercityScenario::from_params(&hw, &geom(), t).unwrap()).unwrap();
    assert!(f(t) >= F_TARGET);
    assert!(f(t + 1) < F_TARGET);
    assert!(within(rate, 0.92, 0.05), "rate {rate}");
}

#[test]
fn published_q3_qr_point_is_just_short_of_the_target() {
    let hw = HardwareParams { p_b: 2.73e-3, f_b: 0.64, ..opt() };
    let (f, _) = rq::best_over_tcut(&hw, &geom(), intercity(Mode::QR), &TcutSearch::default()).unwrap();
    assert!((F_TARGET - 0.005..F_TARGET).contains(&f), "{f}");
}

#[test]
fn metro_er_surface_matches_closed_form() {
    let p_m0s = [5.95e-4, 2e-3, 1.43e-2];
    let t_cohs = [0.02, 0.062, 0.5, 4.0];
    let fixed = HardwareParams { f_m: opt().f_m, ..base() };
    let rows =
        rq::min_fidelity_surface(&p_m0s, &t_cohs, &fixed, &geom(), ScenarioKind::new(false, Mode::ER), F_TARGET, &TcutSearch::default())
            .unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        let s = MetroScenario::from_params(&HardwareParams { p_m0: r.p_m0, t_coh_s: r.t_coh_s, ..fixed }, &geom(), Mode::ER).unwrap();
        let w = (s.t_m_class as f64 / s.t_coh_us).exp() / 3.0;
        let f = (3.0 * w + 1.0) / 4.0;
        let got = r.f_min.unwrap();
        assert!((got - f).abs() <= 1e-9, "{got} vs {f}");
        if r.p_m0 == 5.95e-4 && r.t_coh_s == 0.062 {
            assert!(got <= 0.88);
        }
    }
}

#[test]
fn q2_er_needs_much_more_fidelity_at_short_coherence() {
    let fixed = HardwareParams { f_m: opt().f_m, p_b: opt().p_b, f_b: opt().f_b, ..base() };
    let rows = rq::min_fidelity_surface(&[5.95e-4], &[0.01, 0.062], &fixed, &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default())
        .unwrap();
    let at_base = rows[1].f_min.unwrap();
    assert!(at_base <= 0.88, "baseline cell needs {at_base}");
    match rows[0].f_min {
        None => {}
        Some(f) => assert!(f > at_base + 0.02, "{f} vs {at_base}"),
    }
}

#[test]
fn backbone_region_examples() {
    let fixed = HardwareParams { p_b: base().p_b, f_b: base().f_b, ..opt() };
    let er = rq::feasibility_region(&[1.51e-6], &[0.60], &fixed, &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default()).unwrap();
    assert!(er[0].feasible);
    assert!(within(er[0].max_rate.unwrap(), 6.16e-4, 0.05));
    let q3 = q3_qr_point();
    let qr = rq::feasibility_region(&[1.51e-6, q3.p_b], &[0.60, q3.f_b], &fixed, &geom(), intercity(Mode::QR), F_TARGET, &TcutSearch::default())
        .unwrap();
    assert_eq!(qr.len(), 4);
    assert!(!qr[0].feasible);
    let cell = qr.iter().find(|r| r.p_b == q3.p_b && r.f_b == q3.f_b).unwrap();
    assert!(cell.feasible);
    assert!(within(cell.max_rate.unwrap(), 0.92, 0.05));
}

#[test]
fn empty_grids_give_no_rows() {
    let rows = rq::feasibility_region(&[], &[0.6], &opt(), &geom(), intercity(Mode::ER), F_TARGET, &TcutSearch::default()).unwrap();
    assert!(rows.is_empty());
}
