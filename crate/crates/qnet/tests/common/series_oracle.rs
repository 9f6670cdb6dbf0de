//! Truncated-summation reference for the closed-form series.

use proptest::prelude::*;
use qnet::series::{self, delta_sum, gamma_sum, pi_sum, rat, theta_sum, Family, Rat, SeriesArgs, Upper, Variant};

pub const CASES: u32 = 1000;
pub const REL_TOL: f64 = 1e-9;
/// Truncation point: the dropped tail is below this fraction of the first
/// term's scale.
pub const TAIL: f64 = 1e-30;
pub const MAX_TERMS: i64 = 200_000;

pub fn rational(max_num: i64, max_den: i64) -> impl Strategy<Value = Rat> {
    (1..=max_num, 1..=max_den).prop_map(|(n, d)| rat(n, d))
}

pub fn offset() -> impl Strategy<Value = Rat> {
    (0..=12i64, 1..=6i64).prop_map(|(n, d)| rat(n, d))
}

/// Per-index decay of the terms, computed from the exponent slopes alone.
pub fn decay(kind: Family, a: &SeriesArgs) -> f64 {
    let f = |r: Rat| *r.numer() as f64 / *r.denom() as f64;
    match kind {
        Family::Pi(Variant::C | Variant::F) => a.x * a.y.powf(f(a.q)),
        Family::Pi(_) => a.x * a.y.powf(2.0 * f(a.q)),
        Family::Gamma => a.x * (a.y * a.s).powf(f(a.q)),
        Family::Delta => a.x * a.y.powf(f(a.r)) * a.s.powf(f(a.r) * f(a.q)),
    }
}

/// Direct sum from `l` far enough that the remaining terms cannot matter,
/// or `None` when that would take too many terms.
pub fn truncated(kind: Family, a: &SeriesArgs, weighted: bool) -> Option<f64> {
    let lambda = decay(kind, a);
    if !(lambda < 0.995) {
        return None;
    }
    let n = if lambda == 0.0 { 64 } else { (TAIL.ln() / lambda.ln()).ceil() as i64 + 64 };
    if n > MAX_TERMS {
        return None;
    }
    let mut total = 0.0;
    for i in a.l..a.l + n {
        let t = series::term(kind, a, i);
        let w = match (weighted, kind) {
            (false, _) => 1.0,
            (true, Family::Pi(v)) => series::theta_weight(v, a, i),
            (true, _) => unreachable!(),
        };
        total += w * t;
    }
    Some(total)
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOL * b.abs().max(a.abs())
}

pub fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

pub fn pi_args() -> impl Strategy<Value = SeriesArgs> {
    (0.0..0.98f64, 0.05..=1.0f64, rational(12, 12), offset(), offset(), 0..6i64)
        .prop_map(|(x, y, q, alpha, sigma, l)| SeriesArgs::double(x, y, q, alpha, sigma, l, Upper::Infinity))
}

pub fn gamma_args() -> impl Strategy<Value = SeriesArgs> {
    (0.0..0.98f64, 0.05..=1.0f64, 0.05..=1.0f64, rational(12, 12), offset(), 0..6i64)
        .prop_map(|(x, y, s, q, alpha, l)| SeriesArgs::gamma(x, y, s, q, alpha, l, Upper::Infinity))
}

pub fn delta_args() -> impl Strategy<Value = SeriesArgs> {
    (0.0..0.98f64, 0.05..=1.0f64, 0.05..=1.0f64, rational(6, 6), offset(), rational(12, 12), 0..6i64)
        .prop_map(|(x, y, s, r, kappa, q, l)| SeriesArgs::delta(x, y, s, r, kappa, q, l, Upper::Infinity))
}

pub fn check_closed_form(kind: Family, a: &SeriesArgs, weighted: bool) -> Result<(), TestCaseError> {
    let Some(expect) = truncated(kind, a, weighted) else {
        return Err(TestCaseError::reject("slow decay"));
    };
    let got = match (kind, weighted) {
        (Family::Pi(v), false) => pi_sum(v, a),
        (Family::Pi(v), true) => theta_sum(v, a),
        (Family::Gamma, _) => gamma_sum(a),
        (Family::Delta, _) => delta_sum(a),
    }
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(close(got, expect), "{kind:?} closed {got:.17e} vs truncated {expect:.17e} for {a:?}");
    Ok(())
}

pub fn check_split(kind: Family, a: &SeriesArgs, m: i64) -> Result<(), TestCaseError> {
    let sum = |b: &SeriesArgs| match kind {
        Family::Pi(v) => pi_sum(v, b),
        Family::Gamma => gamma_sum(b),
        Family::Delta => delta_sum(b),
    };
    let whole = sum(a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let head = sum(&SeriesArgs { u: Upper::Finite(a.l + m), ..*a }).unwrap();
    let tail = sum(&SeriesArgs { l: a.l + m + 1, ..*a }).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((whole - head - tail).abs() <= 1e-12 * whole.abs().max(1e-300) + 1e-300);
    Ok(())
}

pub fn check_period(kind: Family, a: &SeriesArgs, i: i64) -> Result<(), TestCaseError> {
    let (z, rho) = series::period_and_ratio(kind, a);
    let now = series::term(kind, a, i);
    let next = series::term(kind, a, i + z);
    prop_assert!(
        (next - rho * now).abs() <= 1e-12 * next.abs().max((rho * now).abs()),
        "term({}) = {next:e} but rho * term({i}) = {:e}",
        i + z,
        rho * now
    );
    Ok(())
}

