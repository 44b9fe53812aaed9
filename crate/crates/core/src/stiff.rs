//! Adaptive TR-BDF2 (an L-stable singly diagonally implicit Runge-Kutta pair)
//! for stiff systems with tridiagonal Jacobians.

use crate::banded::solve_tridiagonal;
use crate::error::{PnpError, Result};

/// Tridiagonal matrix by diagonals; `lower[0]` and `upper[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Solves `(I - s A) z = rhs`.
    fn solve_shifted(&self, s: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let lower: Vec<f64> = self.lower.iter().map(|v| -s * v).collect();
        let upper: Vec<f64> = self.upper.iter().map(|v| -s * v).collect();
        let diag: Vec<f64> = self.diag.iter().map(|v| 1.0 - s * v).collect();
        solve_tridiagonal(&lower, &diag, &upper, rhs)
    }
}

/// `y' = f(t, y)` with a tridiagonal `∂f/∂y`.
pub trait TridiagonalSystem {
    fn rhs(&self, t: f64, y: &[f64]) -> Vec<f64>;
    fn jacobian(&self, t: f64, y: &[f64]) -> Tridiagonal;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for StiffOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            initial_step: None,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub y: Vec<f64>,
    /// States at the requested checkpoints, in order.
    pub checkpoints: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
const W: f64 = std::f64::consts::SQRT_2 / 4.0;
const NEWTON_ITERATIONS: usize = 10;

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &StiffOptions) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Solves `z = base + h d f(t, z)` by simplified Newton with the frozen matrix.
fn stage<S: TridiagonalSystem>(
    sys: &S,
    t: f64,
    h: f64,
    base: &[f64],
    guess: Vec<f64>,
    jac: &Tridiagonal,
    opts: &StiffOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut z = guess;
    for _ in 0..NEWTON_ITERATIONS {
        let f = sys.rhs(t, &z);
        let g: Vec<f64> = z
            .iter()
            .zip(base)
            .zip(&f)
            .map(|((z, b), f)| b + h * D * f - z)
            .collect();
        let dz = jac.solve_shifted(h * D, &g)?;
        let size = error_norm(&dz, &z, &z, opts);
        for (z, d) in z.iter_mut().zip(&dz) {
            *z += d;
        }
        if size < 1e-3 {
            let f = sys.rhs(t, &z);
            return Ok((z, f));
        }
    }
    Err(PnpError::Integration(
        "stage equations did not converge".into(),
    ))
}

/// Integrates from `t0` to `t_end`, recording the state at each checkpoint
/// (which must be increasing and inside `(t0, t_end]`).
pub fn integrate<S: TridiagonalSystem>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    checkpoints: &[f64],
    opts: &StiffOptions,
) -> Result<Integration> {
    if !(t_end > t0) {
        return Err(PnpError::validation("t_end", "must exceed the start time"));
    }
    if checkpoints.windows(2).any(|w| !(w[1] > w[0]))
        || checkpoints.iter().any(|&c| !(c > t0 && c <= t_end))
    {
        return Err(PnpError::validation(
            "checkpoints",
            "must increase inside (t0, t_end]",
        ));
    }
    let mut stops: Vec<f64> = checkpoints.to_vec();
    if stops.last() != Some(&t_end) {
        stops.push(t_end);
    }
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f0 = sys.rhs(t, &y);
    let mut h = opts.initial_step.unwrap_or_else(|| {
        let scale = error_norm(&f0, &y, &y, opts);
        if scale > 0.0 {
            (0.01 / scale).min(t_end - t0)
        } else {
            t_end - t0
        }
    });
    let mut out = Integration {
        y: Vec::new(),
        checkpoints: Vec::with_capacity(checkpoints.len()),
        accepted: 0,
        rejected: 0,
    };
    let mut next_stop = 0;
    while next_stop < stops.len() {
        if out.accepted + out.rejected >= opts.max_steps {
            return Err(PnpError::Integration(format!(
                "step budget exhausted at t = {t}"
            )));
        }
        let target = stops[next_stop];
        let hit = t + h >= target;
        let step = if hit { target - t } else { h };
        let jac = sys.jacobian(t, &y);
        let attempt = (|| -> Result<(Vec<f64>, Vec<f64>, f64)> {
            let base2: Vec<f64> = y.iter().zip(&f0).map(|(y, f)| y + step * D * f).collect();
            let guess2: Vec<f64> = y
                .iter()
                .zip(&f0)
                .map(|(y, f)| y + step * GAMMA * f)
                .collect();
            let (z2, f2) = stage(sys, t + GAMMA * step, step, &base2, guess2, &jac, opts)?;
            let base3: Vec<f64> = y
                .iter()
                .zip(f0.iter().zip(&f2))
                .map(|(y, (a, b))| y + step * W * (a + b))
                .collect();
            let (z3, f3) = stage(sys, t + step, step, &base3, z2, &jac, opts)?;
            // b - b_hat, filtered through (I - h d J)^-1 to damp stiff components
            let e1 = W - (1.0 - W) / 3.0;
            let e2 = W - (3.0 * W + 1.0) / 3.0;
            let e3 = D - D / 3.0;
            let raw: Vec<f64> = f0
                .iter()
                .zip(f2.iter().zip(&f3))
                .map(|(a, (b, c))| step * (e1 * a + e2 * b + e3 * c))
                .collect();
            let est = jac.solve_shifted(step * D, &raw)?;
            let err = error_norm(&est, &y, &z3, opts);
            Ok((z3, f3, err))
        })();
        match attempt {
            Ok((y1, f1, err)) if err <= 1.0 => {
                t = if hit { target } else { t + step };
                y = y1;
                f0 = f1;
                out.accepted += 1;
                if hit {
                    if next_stop < checkpoints.len() {
                        out.checkpoints.push(y.clone());
                    }
                    next_stop += 1;
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
                };
                // a shortened final step should not shrink the next one
                h = if hit {
                    h.max(step * factor)
                } else {
                    step * factor
                };
            }
            Ok((_, _, err)) => {
                out.rejected += 1;
                h = step * (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5);
            }
            Err(_) => {
                out.rejected += 1;
                h = step * 0.25;
            }
        }
        if !(h > 0.0) || t + h == t {
            return Err(PnpError::Integration(format!(
                "step size underflow at t = {t}"
            )));
        }
    }
    out.y = y;
    Ok(out)
}
