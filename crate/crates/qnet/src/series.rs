//! Sum primitives over terms whose exponents contain floors and ceilings of
//! rational multiples of the summation index, together with the closed forms
//! of their infinite tails.
//!
//! All the infinite sums here share one structure: after a fixed number of
//! indices `z` every term is multiplied by the same ratio `rho`. Such a tail
//! is summed exactly from one period of terms by [`geometric_tail`], which is
//! also what the intercity event sums use for their own tails.

use num_integer::Integer;
use num_rational::Ratio;

use crate::error::{Error, Result};

/// Exact rational number used for slot ratios and offsets.
pub type Rat = Ratio<i64>;

/// Shorthand for building a rational `n / d`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n, d)
}

/// `ceil(i * q - a)` computed in exact integer arithmetic.
pub fn ceil_lin(i: i64, q: Rat, a: Rat) -> i64 {
    let (num, den) = lin(i, q, a);
    -((-num).div_euclid(den)) as i64
}

/// `floor(i * q - a)` computed in exact integer arithmetic.
pub fn floor_lin(i: i64, q: Rat, a: Rat) -> i64 {
    let (num, den) = lin(i, q, a);
    num.div_euclid(den) as i64
}

fn lin(i: i64, q: Rat, a: Rat) -> (i128, i128) {
    let (qn, qd) = (*q.numer() as i128, *q.denom() as i128);
    let (an, ad) = (*a.numer() as i128, *a.denom() as i128);
    let num = i as i128 * qn * ad - an * qd;
    let den = qd * ad;
    if den < 0 {
        (-num, -den)
    } else {
        (num, den)
    }
}

/// Smallest positive `z` with `z * q` integral: the reduced denominator of `q`.
pub fn z_star(q: Rat) -> i64 {
    assert!(*q.numer() > 0, "z_star needs q > 0");
    *q.denom()
}

/// Smallest positive `z` with both `z * r` and `z * r * q` integral.
pub fn z_bar(r: Rat, q: Rat) -> i64 {
    assert!(*r.numer() > 0 && *q.numer() > 0, "z_bar needs r, q > 0");
    r.denom().lcm((r * q).denom())
}

/// One period of terms `t_i`, summed plainly and weighted by their index.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeriodSums {
    /// `sum t_i` over the period.
    pub sum: f64,
    /// `sum w_i t_i` over the period, with `w_i` the term weight.
    pub weighted: f64,
}

/// Sums an infinite tail whose terms repeat every period up to a common
/// factor `rho = exp(ln_ratio)`, with the weight of every term growing by
/// `weight_step` from one period to the next.
///
/// Given the sums over the first period, returns
/// `sum / (1 - rho)` and
/// `weighted / (1 - rho) + weight_step * rho * sum / (1 - rho)^2`.
pub fn geometric_tail(period: PeriodSums, ln_ratio: f64, weight_step: f64) -> Result<PeriodSums> {
    if period.sum == 0.0 && period.weighted == 0.0 {
        return Ok(PeriodSums::default());
    }
    if ln_ratio.is_nan() || ln_ratio >= 0.0 {
        return Err(Error::DivergentSeries { ratio: ln_ratio.exp() });
    }
    let one_minus = -ln_ratio.exp_m1();
    let rho = ln_ratio.exp();
    Ok(PeriodSums {
        sum: period.sum / one_minus,
        weighted: period.weighted / one_minus + weight_step * rho * period.sum / (one_minus * one_minus),
    })
}

/// Upper summation bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upper {
    Finite(i64),
    Infinity,
}

/// Exponent pattern of the `Pi` / `Theta` families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `ceil(iq - alpha)`
    C,
    /// `floor(iq - alpha)`
    F,
    /// `ceil(iq - alpha) + ceil(iq - sigma)`
    CC,
    /// `ceil(iq - alpha) + floor(iq - sigma)`
    CF,
    /// `floor(iq - alpha) + floor(iq - sigma)`
    FF,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::C, Variant::F, Variant::CC, Variant::CF, Variant::FF];

    fn exponent(self, i: i64, q: Rat, alpha: Rat, sigma: Rat) -> i64 {
        match self {
            Variant::C => ceil_lin(i, q, alpha),
            Variant::F => floor_lin(i, q, alpha),
            Variant::CC => ceil_lin(i, q, alpha) + ceil_lin(i, q, sigma),
            Variant::CF => ceil_lin(i, q, alpha) + floor_lin(i, q, sigma),
            Variant::FF => floor_lin(i, q, alpha) + floor_lin(i, q, sigma),
        }
    }

    /// Number of `q` multiples gained by the exponent per unit step of `i`.
    fn q_multiplicity(self) -> i64 {
        match self {
            Variant::C | Variant::F => 1,
            _ => 2,
        }
    }
}

/// Arguments shared by all primitives. Unused fields are ignored by a given
/// primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesArgs {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub q: Rat,
    pub r: Rat,
    pub alpha: Rat,
    pub sigma: Rat,
    pub kappa: Rat,
    pub l: i64,
    pub u: Upper,
}

impl SeriesArgs {
    /// Arguments for a `Pi` / `Theta` call with one offset.
    pub fn single(x: f64, y: f64, q: Rat, alpha: Rat, l: i64, u: Upper) -> Self {
        SeriesArgs { x, y, s: 1.0, q, r: rat(1, 1), alpha, sigma: rat(0, 1), kappa: rat(0, 1), l, u }
    }

    /// Arguments for a `Pi` / `Theta` call with two offsets.
    pub fn double(x: f64, y: f64, q: Rat, alpha: Rat, sigma: Rat, l: i64, u: Upper) -> Self {
        SeriesArgs { sigma, ..SeriesArgs::single(x, y, q, alpha, l, u) }
    }

    /// Arguments for a `Gamma` call.
    pub fn gamma(x: f64, y: f64, s: f64, q: Rat, alpha: Rat, l: i64, u: Upper) -> Self {
        SeriesArgs { s, ..SeriesArgs::single(x, y, q, alpha, l, u) }
    }

    /// Arguments for a `Delta` call.
    #[allow(clippy::too_many_arguments)]
    pub fn delta(x: f64, y: f64, s: f64, r: Rat, kappa: Rat, q: Rat, l: i64, u: Upper) -> Self {
        SeriesArgs { s, r, kappa, ..SeriesArgs::single(x, y, q, rat(0, 1), l, u) }
    }

    fn with_range(&self, l: i64, u: i64) -> Self {
        SeriesArgs { l, u: Upper::Finite(u), ..*self }
    }
}

fn check_inputs(a: &SeriesArgs) -> Result<()> {
    for (what, v) in [("x", a.x), ("y", a.y), ("s", a.s)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::OutOfRange { what, value: v });
        }
    }
    if a.l < 0 {
        return Err(Error::OutOfRange { what: "l", value: a.l as f64 });
    }
    if *a.q.numer() <= 0 || *a.r.numer() <= 0 {
        return Err(Error::OutOfRange { what: "q or r", value: 0.0 });
    }
    Ok(())
}

fn powi(base: f64, e: i64) -> f64 {
    if e == 0 {
        1.0
    } else {
        base.powf(e as f64)
    }
}

/// Term `x^i y^e(i)` of the `Pi` family.
pub fn pi_term(variant: Variant, a: &SeriesArgs, i: i64) -> f64 {
    powi(a.x, i) * powi(a.y, variant.exponent(i, a.q, a.alpha, a.sigma))
}

/// Weight of term `i` in the `Theta` family: `i`, except for `FF` where it
/// is `floor(iq - alpha)`.
pub fn theta_weight(variant: Variant, a: &SeriesArgs, i: i64) -> f64 {
    match variant {
        Variant::FF => floor_lin(i, a.q, a.alpha) as f64,
        _ => i as f64,
    }
}

/// Term `x^i y^floor(iq) s^floor(iq - alpha)` of `Gamma`.
pub fn gamma_term(a: &SeriesArgs, i: i64) -> f64 {
    let zero = rat(0, 1);
    powi(a.x, i) * powi(a.y, floor_lin(i, a.q, zero)) * powi(a.s, floor_lin(i, a.q, a.alpha))
}

/// Term `x^i sum_{j=ceil(ir-kappa)}^{floor(ir)} y^j s^ceil(jq)` of `Delta`.
pub fn delta_term(a: &SeriesArgs, i: i64) -> f64 {
    let zero = rat(0, 1);
    let lo = ceil_lin(i, a.r, a.kappa);
    let hi = floor_lin(i, a.r, zero);
    let mut inner = 0.0;
    for j in lo..=hi {
        inner += powi(a.y, j) * powi(a.s, ceil_lin(j, a.q, zero));
    }
    powi(a.x, i) * inner
}

fn finite_sum(l: i64, u: i64, term: impl Fn(i64) -> f64, weight: impl Fn(i64) -> f64) -> PeriodSums {
    let mut out = PeriodSums::default();
    for i in l..=u {
        let t = term(i);
        out.sum += t;
        out.weighted += weight(i) * t;
    }
    out
}

/// `ln` of a nonnegative power product, with `0^0 = 1`.
fn ln_pow(base: f64, e: i64) -> f64 {
    if e == 0 {
        0.0
    } else {
        e as f64 * base.ln()
    }
}

/// Evaluates a family over `[l, u]`. For an infinite upper bound the first
/// `period` terms are summed directly and the rest follows from
/// [`geometric_tail`]; `ln_ratio` is the log of the per-period factor and
/// `weight_step` the per-period growth of the weight.
fn evaluate(
    a: &SeriesArgs,
    period: i64,
    ln_ratio: f64,
    weight_step: f64,
    term: impl Fn(i64) -> f64,
    weight: impl Fn(i64) -> f64,
) -> Result<PeriodSums> {
    check_inputs(a)?;
    match a.u {
        Upper::Finite(u) => Ok(finite_sum(a.l, u, term, weight)),
        Upper::Infinity => {
            let head = finite_sum(a.l, a.l + period - 1, term, weight);
            if ln_ratio >= 0.0 && head.sum != 0.0 {
                return Err(Error::DivergentSeries { ratio: ln_ratio.exp() });
            }
            geometric_tail(head, ln_ratio, weight_step)
        }
    }
}

fn pi_family(variant: Variant, a: &SeriesArgs) -> Result<PeriodSums> {
    let z = z_star(a.q);
    let zq = (a.q * z).to_integer();
    let ln_ratio = ln_pow(a.x, z) + ln_pow(a.y, variant.q_multiplicity() * zq);
    let step = match variant {
        Variant::FF => zq as f64,
        _ => z as f64,
    };
    evaluate(a, z, ln_ratio, step, |i| pi_term(variant, a, i), |i| theta_weight(variant, a, i))
}

/// `Pi_v(x, y, q, alpha[, sigma], l, u) = sum_{i=l}^{u} x^i y^e(i)`.
pub fn pi_sum(variant: Variant, a: &SeriesArgs) -> Result<f64> {
    Ok(pi_family(variant, a)?.sum)
}

/// `Theta_v(...) = sum_{i=l}^{u} w_i x^i y^e(i)` with `w_i` from [`theta_weight`].
pub fn theta_sum(variant: Variant, a: &SeriesArgs) -> Result<f64> {
    Ok(pi_family(variant, a)?.weighted)
}

/// `Gamma(x, y, s, q, alpha, l, u) = sum x^i y^floor(iq) s^floor(iq - alpha)`.
pub fn gamma_sum(a: &SeriesArgs) -> Result<f64> {
    let z = z_star(a.q);
    let zq = (a.q * z).to_integer();
    let ln_ratio = ln_pow(a.x, z) + ln_pow(a.y, zq) + ln_pow(a.s, zq);
    Ok(evaluate(a, z, ln_ratio, 0.0, |i| gamma_term(a, i), |_| 0.0)?.sum)
}

/// `Delta(x, y, s, r, kappa, q, l, u) = sum x^i sum_{j=ceil(ir-kappa)}^{floor(ir)} y^j s^ceil(jq)`.
pub fn delta_sum(a: &SeriesArgs) -> Result<f64> {
    let z = z_bar(a.r, a.q);
    let zr = (a.r * z).to_integer();
    let zrq = (a.r * a.q * z).to_integer();
    let ln_ratio = ln_pow(a.x, z) + ln_pow(a.y, zr) + ln_pow(a.s, zrq);
    Ok(evaluate(a, z, ln_ratio, 0.0, |i| delta_term(a, i), |_| 0.0)?.sum)
}

/// Per-period factor of a family, used by property tests of the periodicity
/// identity `term(i + z) = rho * term(i)`.
pub fn period_and_ratio(kind: Family, a: &SeriesArgs) -> (i64, f64) {
    match kind {
        Family::Pi(v) => {
            let z = z_star(a.q);
            let zq = (a.q * z).to_integer();
            (z, (ln_pow(a.x, z) + ln_pow(a.y, v.q_multiplicity() * zq)).exp())
        }
        Family::Gamma => {
            let z = z_star(a.q);
            let zq = (a.q * z).to_integer();
            (z, (ln_pow(a.x, z) + ln_pow(a.y, zq) + ln_pow(a.s, zq)).exp())
        }
        Family::Delta => {
            let z = z_bar(a.r, a.q);
            let zr = (a.r * z).to_integer();
            let zrq = (a.r * a.q * z).to_integer();
            (z, (ln_pow(a.x, z) + ln_pow(a.y, zr) + ln_pow(a.s, zrq)).exp())
        }
    }
}

/// Identifies a primitive family for [`period_and_ratio`] and [`term`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Pi(Variant),
    Gamma,
    Delta,
}

/// Term `i` of a family.
pub fn term(kind: Family, a: &SeriesArgs, i: i64) -> f64 {
    match kind {
        Family::Pi(v) => pi_term(v, a, i),
        Family::Gamma => gamma_term(a, i),
        Family::Delta => delta_term(a, i),
    }
}

/// Sum of the first `period` terms from `l`, as used by the closed forms.
pub fn head(kind: Family, a: &SeriesArgs, period: i64) -> f64 {
    let b = a.with_range(a.l, a.l + period - 1);
    match kind {
        Family::Pi(v) => pi_sum(v, &b).unwrap_or(f64::NAN),
        Family::Gamma => gamma_sum(&b).unwrap_or(f64::NAN),
        Family::Delta => delta_sum(&b).unwrap_or(f64::NAN),
    }
}
