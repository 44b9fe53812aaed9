//! Closed-form flux expansions for two ions of valences `+1` and `-1` in the
//! limits of small and large permanent charge, with the critical voltages and
//! regime labels they imply.
//!
//! The small-charge coefficients multiply `Q0` for a charge whose neck plateau
//! is `2 Q0` (the unit-plateau convention). `A` carries the `ln(L/R)` factor,
//! so that `V_1^0 = ln(L/R) / (1 - B)` is consistent with the linear terms.

use serde::{Deserialize, Serialize};

use crate::error::{PnpError, Result};
use crate::model::GeometryMoments;

/// Coefficients of `J_k(Q0) = J_k0 + J_k1 Q0 + O(Q0²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallQExpansion {
    pub j10: f64,
    pub j11: f64,
    pub j20: f64,
    pub j21: f64,
    pub a: f64,
    pub b: f64,
}

impl SmallQExpansion {
    /// Linear-order slope of `λ_k` in `Q0`.
    pub fn ratio_slope(&self, k: usize) -> f64 {
        match k {
            0 => self.j11 / self.j10,
            _ => self.j21 / self.j20,
        }
    }
}

/// Coefficients of `J_k(ν) = J_k0 + J_k1 ν + O(ν²)`, `ν = 1/Q0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeQExpansion {
    pub j10: f64,
    pub j11: f64,
    pub j20: f64,
    pub j21: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    /// `1 < λ_1 < λ_2`
    I,
    /// `λ_1 < 1 < λ_2`
    II,
    /// `λ_1 < λ_2 < 1`
    III,
}

impl RegimeLabel {
    /// Label from the flux ratios; `None` for the excluded pattern `λ_2 < 1 < λ_1`
    /// and for points on a boundary.
    pub fn from_ratios(l1: f64, l2: f64) -> Option<Self> {
        if !(l1 < l2) {
            return None;
        }
        if l1 > 1.0 {
            Some(Self::I)
        } else if l2 < 1.0 {
            Some(Self::III)
        } else if l1 < 1.0 && l2 > 1.0 {
            Some(Self::II)
        } else {
            None
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
        }
    }
}

fn log_ratio(l: f64, r: f64) -> Result<f64> {
    if !(l > 0.0 && r > 0.0) {
        return Err(PnpError::validation(
            "L/R",
            format!("concentrations must be positive, got {l}, {r}"),
        ));
    }
    if l == r {
        return Err(PnpError::Degenerate(
            "L = R makes ln L - ln R vanish".into(),
        ));
    }
    Ok(l.ln() - r.ln())
}

/// `A` and `B` of the small-charge expansion.
pub fn small_q_auxiliaries(l: f64, r: f64, m: &GeometryMoments) -> Result<(f64, f64)> {
    let lt = log_ratio(l, r)?;
    let (al, be) = (m.alpha, m.beta);
    let left = (1.0 - al) * l + al * r;
    let right = (1.0 - be) * l + be * r;
    let a = (be - al) * (l - r).powi(2) / (left * right * lt);
    let b = (left / right).ln() / a;
    Ok((a, b))
}

pub fn small_q_expansion(v: f64, l: f64, r: f64, m: &GeometryMoments) -> Result<SmallQExpansion> {
    let lt = log_ratio(l, r)?;
    let (a, b) = small_q_auxiliaries(l, r, m)?;
    let h1 = m.total;
    Ok(SmallQExpansion {
        j10: (l - r) * (v + lt) / (h1 * lt),
        j11: -a * ((b - 1.0) * v + lt) * (v + lt) / (h1 * lt * lt),
        j20: (l - r) * (-v + lt) / (h1 * lt),
        j21: a * ((1.0 - b) * v + lt) * (-v + lt) / (h1 * lt * lt),
        a,
        b,
    })
}

/// `(V_1^0, V_2^0)` for valences `(1, -1)`.
pub fn small_q_critical_voltages(l: f64, r: f64, m: &GeometryMoments) -> Result<(f64, f64)> {
    let lt = log_ratio(l, r)?;
    let (_, b) = small_q_auxiliaries(l, r, m)?;
    if b == 1.0 {
        return Err(PnpError::Degenerate(
            "B = 1 puts both critical voltages at infinity".into(),
        ));
    }
    let (z1, z2) = (1.0, -1.0);
    Ok((-lt / (z2 * (1.0 - b)), -lt / (z1 * (1.0 - b))))
}

/// `γ(t) = (t ln t - t + 1) / ((t - 1) ln t)`.
pub fn gamma_threshold(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(PnpError::validation("t", format!("{t} is not > 0")));
    }
    if t == 1.0 {
        return Err(PnpError::Degenerate("γ(t) is 0/0 at t = 1".into()));
    }
    let lt = t.ln();
    Ok((t * lt - t + 1.0) / ((t - 1.0) * lt))
}

fn g_function(beta: f64, t: f64, alpha: f64) -> f64 {
    let left = (1.0 - alpha) * t + alpha;
    let right = (1.0 - beta) * t + beta;
    left * right * t.ln() * (right / left).ln() + (beta - alpha) * (t - 1.0).powi(2)
}

/// Plain bisection; `f(lo)` and `f(hi)` must differ in sign.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(PnpError::Root(format!("no sign change on [{lo}, {hi}]")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root `β_1 ∈ (α, 1)` of `g(β) = 0`.
pub fn beta1_root(t: f64, alpha: f64) -> Result<f64> {
    let gamma = gamma_threshold(t)?;
    if !(alpha > 0.0 && alpha < gamma) {
        return Err(PnpError::Root(format!(
            "need 0 < α < γ(t) = {gamma}, got α = {alpha}"
        )));
    }
    let g = |b: f64| g_function(b, t, alpha);
    // g vanishes at β = α itself, so start just inside the interval
    let lo = alpha + 1e-12 * (1.0 - alpha);
    bisect(g, lo, 1.0, 1e-10)
}

/// Small-charge regime of the point `(V, L, R)` for `t = L/R > 1`.
pub fn classify_small_q(v: f64, l: f64, r: f64, m: &GeometryMoments) -> Result<RegimeLabel> {
    let t = l / r;
    if !(t > 1.0) {
        return Err(PnpError::Domain(format!(
            "only L/R > 1 is classified, got t = {t}"
        )));
    }
    let (v1, v2) = small_q_critical_voltages(l, r, m)?;
    let gamma = gamma_threshold(t)?;
    let first_branch = m.alpha < gamma && m.beta < beta1_root(t, m.alpha)?;
    Ok(if first_branch {
        if v < v1 {
            RegimeLabel::I
        } else if v < v2 {
            RegimeLabel::II
        } else {
            RegimeLabel::III
        }
    } else if v > v1 {
        RegimeLabel::I
    } else if v > v2 {
        RegimeLabel::II
    } else {
        RegimeLabel::III
    })
}

pub fn large_q_expansion(v: f64, l: f64, r: f64, m: &GeometryMoments) -> Result<LargeQExpansion> {
    let lt = log_ratio(l, r)?;
    let (al, be, h1) = (m.alpha, m.beta, m.total);
    let ev = v.exp();
    let s_minus = (l / ev).sqrt() - r.sqrt();
    // at V = ln(L/R) the difference is pure rounding
    if s_minus.abs() <= 4.0 * f64::EPSILON * r.sqrt() {
        return Err(PnpError::Degenerate(format!(
            "V = ln(L/R) = {lt} is singular for J21"
        )));
    }
    let den = (1.0 - be) * (ev * l).sqrt() + al * r.sqrt();
    let num = (1.0 - be) * l + al * r;
    let drive = ev * l - r;
    let j11 = (num / den).powi(2) * drive / (2.0 * h1 * (be - al));
    let j20 = 2.0 * (l * r).sqrt() / h1 / ((1.0 - be) * l.sqrt() + al * (r / ev).sqrt()) * s_minus;
    let j21 = -(be - al) * ev * l * r * num / (h1 * den.powi(3)) * s_minus
        + drive * (-v + lt) * num.powi(3) / (4.0 * (be - al) * h1 * s_minus * den.powi(3))
        - drive / (2.0 * (be - al) * h1) * (num / den).powi(2);
    Ok(LargeQExpansion {
        j10: 0.0,
        j11,
        j20,
        j21,
    })
}

/// Leading-order `λ_2` as `Q0 → ∞`.
pub fn lambda2_large_q_limit(v: f64, t: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(PnpError::validation("t", format!("{t} is not > 0")));
    }
    let lt = t.ln();
    if t == 1.0 || v == lt {
        return Err(PnpError::Degenerate(format!(
            "λ2 limit is 0/0 at t = {t}, V = {v}"
        )));
    }
    let s = (v.exp() * t).sqrt();
    Ok(2.0 * (t - s) * lt / ((t - 1.0) * ((1.0 - beta) * s + alpha) * (lt - v)))
}

/// The two roots of `λ_2^∞(V) = 1`, located by a scan of `[-200, 200]` and
/// bisection.
pub fn large_q_critical_voltages(l: f64, r: f64, m: &GeometryMoments) -> Result<(f64, f64)> {
    let t = l / r;
    log_ratio(l, r)?;
    let lt = t.ln();
    let f = |v: f64| {
        lambda2_large_q_limit(v, t, m.alpha, m.beta)
            .map(|x| x - 1.0)
            .unwrap_or(f64::NAN)
    };
    const STEPS: usize = 4000;
    let (lo, hi) = (-200.0, 200.0);
    let h = (hi - lo) / STEPS as f64;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=STEPS {
        let mut v = lo + h * i as f64;
        if v == lt {
            // removable point: step off it
            v += 1e-3 * h;
        }
        let fv = f(v);
        if !fv.is_finite() {
            prev = None;
            continue;
        }
        if let Some((pv, pf)) = prev {
            if pf == 0.0 {
                roots.push(pv);
            } else if pf.signum() != fv.signum() && fv != 0.0 {
                roots.push(bisect(f, pv, v, 1e-6)?);
            }
        }
        prev = Some((v, fv));
    }
    if roots.len() != 2 {
        return Err(PnpError::Root(format!(
            "λ2 limit crosses 1 {} times on [-200, 200], expected 2",
            roots.len()
        )));
    }
    Ok((roots[0], roots[1]))
}

/// `λ_k = J_k(Q) / J_k(0)`.
pub fn flux_ratio(j_at_q: f64, j_at_zero: f64) -> Result<f64> {
    if !(j_at_zero.abs() >= 1e-14) {
        return Err(PnpError::Degenerate(format!(
            "reference flux {j_at_zero:e} is zero: the species is at equilibrium"
        )));
    }
    Ok(j_at_q / j_at_zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L: f64 = 0.008;
    const R: f64 = 0.001;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn zero_factors() {
        let m = GeometryMoments::default_channel();
        let lt = L.ln() - R.ln();
        assert_eq!(small_q_expansion(-lt, L, R, &m).unwrap().j10, 0.0);
        assert_eq!(small_q_expansion(lt, L, R, &m).unwrap().j20, 0.0);
    }

    #[test]
    fn reference_flux_by_hand() {
        let m = GeometryMoments::default_channel();
        let e = small_q_expansion(10.0, L, R, &m).unwrap();
        let lt = 8f64.ln();
        assert!(rel(e.j10, 0.007 * (10.0 + lt) / (m.total * lt)) < 1e-14);
        assert!(rel(e.j20, 0.007 * (lt - 10.0) / (m.total * lt)) < 1e-14);
    }

    #[test]
    fn auxiliaries_for_the_default_channel() {
        let m = GeometryMoments::default_channel();
        let (a, b) = small_q_auxiliaries(L, R, &m).unwrap();
        assert!((a - 1.8238).abs() < 1e-3, "{a}");
        assert!((b - 0.8904).abs() < 1e-3, "{b}");
        // slopes of λ_k vanish exactly at the critical voltages
        let (v1, v2) = small_q_critical_voltages(L, R, &m).unwrap();
        assert!(
            small_q_expansion(v1, L, R, &m)
                .unwrap()
                .ratio_slope(0)
                .abs()
                < 1e-10
        );
        assert!(
            small_q_expansion(v2, L, R, &m)
                .unwrap()
                .ratio_slope(1)
                .abs()
                < 1e-10
        );
    }

    #[test]
    fn critical_voltages() {
        let m = GeometryMoments::default_channel();
        let (v1, v2) = small_q_critical_voltages(L, R, &m).unwrap();
        assert!((v1 - 18.97).abs() < 0.01, "{v1}");
        assert_eq!(v1, -v2);
        assert!(small_q_critical_voltages(0.5, 0.1, &m)
            .unwrap()
            .0
            .is_finite());
        assert!(matches!(
            small_q_critical_voltages(L, L, &m),
            Err(PnpError::Degenerate(_))
        ));
    }

    #[test]
    fn gamma_values() {
        let g = gamma_threshold(8.0).unwrap();
        assert!(rel(g, (8.0 * 8f64.ln() - 7.0) / (7.0 * 8f64.ln())) < 1e-15);
        assert!((g - 0.662).abs() < 1e-3);
        for i in 1..=1000 {
            let t = 0.1 * i as f64;
            if t == 1.0 {
                continue;
            }
            let g = gamma_threshold(t).unwrap();
            assert!(g > 0.0 && g < 1.0, "t = {t}: {g}");
        }
        assert!(gamma_threshold(1.0).is_err());
    }

    #[test]
    fn beta1_default() {
        let m = GeometryMoments::default_channel();
        let b1 = beta1_root(8.0, m.alpha).unwrap();
        assert!((b1 - 0.89).abs() < 0.005, "{b1}");
        assert!(g_function(b1, 8.0, m.alpha).abs() < 1e-8);
        let below = g_function(0.5 * (m.alpha + b1), 8.0, m.alpha);
        let above = g_function(0.5 * (b1 + 1.0), 8.0, m.alpha);
        assert!(below.signum() != above.signum());
        assert!(beta1_root(8.0, 0.9).is_err());
    }

    #[test]
    fn classification_examples() {
        let m = GeometryMoments::default_channel();
        assert_eq!(classify_small_q(50.0, L, R, &m).unwrap(), RegimeLabel::I);
        assert_eq!(classify_small_q(10.0, L, R, &m).unwrap(), RegimeLabel::II);
        assert_eq!(classify_small_q(-60.0, L, R, &m).unwrap(), RegimeLabel::III);
        assert!(classify_small_q(0.0, R, L, &m).is_err());
    }

    #[test]
    fn classification_agrees_with_slopes() {
        let m = GeometryMoments::default_channel();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = rng.gen_range(0.001..0.1);
            let l = r * rng.gen_range(1.2..20.0);
            let v = rng.gen_range(-100.0..100.0);
            let e = small_q_expansion(v, l, r, &m).unwrap();
            let label = classify_small_q(v, l, r, &m).unwrap();
            // λ_k - 1 ≈ slope_k · Q0 for tiny Q0
            let q = 1e-9;
            let got =
                RegimeLabel::from_ratios(1.0 + e.ratio_slope(0) * q, 1.0 + e.ratio_slope(1) * q);
            assert_eq!(got, Some(label), "V = {v}, L = {l}, R = {r}");
        }
    }

    #[test]
    fn large_q_examples() {
        let m = GeometryMoments::default_channel();
        let e = large_q_expansion(10.0, L, R, &m).unwrap();
        assert_eq!(e.j10, 0.0);
        assert!(e.j11 > 0.0);
        let lt = L.ln() - R.ln();
        assert!(large_q_expansion(lt, L, R, &m).is_err());
        let scale = large_q_expansion(0.0, L, R, &m).unwrap().j20.abs();
        assert!(large_q_expansion(lt + 1e-9, L, R, &m).unwrap().j20.abs() < 1e-8 * scale);
    }

    #[test]
    fn lambda2_limit_values() {
        let got = lambda2_large_q_limit(0.0, 8.0, 0.07, 0.93).unwrap();
        let s8 = 8f64.sqrt();
        assert!(rel(got, 2.0 * (8.0 - s8) / (7.0 * (0.07 * s8 + 0.07))) < 1e-14);
        let lt = 8f64.ln();
        assert!(lambda2_large_q_limit(lt, 8.0, 0.07, 0.93).is_err());
        let near = lambda2_large_q_limit(lt - 1e-6, 8.0, 0.07, 0.93).unwrap();
        assert!(near > 0.0 && near.is_finite());
    }

    #[test]
    fn lambda2_limit_is_ratio_of_expansions() {
        let m = GeometryMoments::default_channel();
        let r = 0.001;
        for i in 0..20 {
            let t = 1.5 + i as f64 * 0.9;
            for j in 0..20 {
                let v = -100.0 + j as f64 * 9.7;
                let big = large_q_expansion(v, t * r, r, &m).unwrap();
                let small = small_q_expansion(v, t * r, r, &m).unwrap();
                let want = big.j20 / small.j20;
                let got = lambda2_large_q_limit(v, t, m.alpha, m.beta).unwrap();
                assert!(rel(got, want) < 1e-12, "t = {t} V = {v}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn large_q_roots() {
        let m = GeometryMoments::default_channel();
        let (v1, v2) = large_q_critical_voltages(L, R, &m).unwrap();
        assert!(v1 < v2);
        let t = L / R;
        for v in [v1, v2] {
            let x = lambda2_large_q_limit(v, t, m.alpha, m.beta).unwrap();
            assert!((x - 1.0).abs() < 1e-5);
        }
        assert!(lambda2_large_q_limit(0.5 * (v1 + v2), t, m.alpha, m.beta).unwrap() > 1.0);
    }

    #[test]
    fn ratio_definition() {
        assert_eq!(flux_ratio(0.3, 0.3).unwrap(), 1.0);
        assert!(flux_ratio(0.3, 1e-16).is_err());
    }

    #[test]
    fn regime_from_ratios() {
        assert_eq!(RegimeLabel::from_ratios(1.1, 1.2), Some(RegimeLabel::I));
        assert_eq!(RegimeLabel::from_ratios(0.9, 1.2), Some(RegimeLabel::II));
        assert_eq!(RegimeLabel::from_ratios(0.5, 0.9), Some(RegimeLabel::III));
        assert_eq!(RegimeLabel::from_ratios(1.1, 0.9), None);
    }
}
