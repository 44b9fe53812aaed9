//! Gauss–Legendre rules on reference intervals and an adaptive composite
//! integrator built on the five-point rule.

use crate::error::{PnpError, Result};

/// Two-point rule on [0, 1]: (abscissa, weight).
pub const GAUSS2_UNIT: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

// Five-point rule on [-1, 1].
const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss–Legendre approximation of the integral of `f` over `[a, b]`.
pub fn gauss5<F>(f: &mut F, a: f64, b: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (node, weight) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS.iter()) {
        acc += weight * f(mid + half * node)?;
    }
    Ok(acc * half)
}

const MAX_DEPTH: usize = 40;

/// Adaptive composite five-point Gauss–Legendre integration.
///
/// Each panel is accepted once its estimate agrees with the sum over its two
/// halves to `rel_tol` (relative to the running magnitude of the integral).
pub fn integrate_adaptive<F>(f: &mut F, a: f64, b: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if b == a {
        return Ok(0.0);
    }
    let whole = gauss5(f, a, b)?;
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    refine(f, a, b, whole, rel_tol, scale, 0)
}

fn refine<F>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    scale: f64,
    depth: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mid = 0.5 * (a + b);
    let left = gauss5(f, a, mid)?;
    let right = gauss5(f, mid, b)?;
    let split = left + right;
    if (split - whole).abs() <= rel_tol * scale.max(split.abs()) {
        return Ok(split);
    }
    if depth >= MAX_DEPTH {
        return Err(PnpError::Quadrature(format!(
            "no convergence on [{a}, {b}] after {MAX_DEPTH} bisections"
        )));
    }
    Ok(refine(f, a, mid, left, rel_tol, scale, depth + 1)?
        + refine(f, mid, b, right, rel_tol, scale, depth + 1)?)
}
