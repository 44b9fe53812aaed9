//! Damped Newton iteration with positivity control, a pseudo-transient
//! fallback, and parameter continuation for hard cases.

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{PnpError, Result};
use crate::model::PnpProblem;

use super::assembly::Assembler;
use super::{initial_guess, DiscreteSolution, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationControls {
    pub enabled: bool,
    /// Geometric rungs in the charge amplitude, ending at the target.
    pub charge_steps: usize,
    /// Linear rungs in the voltage, ending at the target.
    pub voltage_steps: usize,
    /// Smallest rung of the charge ladder relative to the target.
    pub charge_start_ratio: f64,
    /// How many times a failing rung may be halved.
    pub max_subdivisions: usize,
}

impl Default for ContinuationControls {
    fn default() -> Self {
        Self {
            enabled: true,
            charge_steps: 8,
            voltage_steps: 8,
            charge_start_ratio: 1e-3,
            max_subdivisions: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    /// Absolute ∞-norm bound on the residual.
    pub tolerance: f64,
    /// Largest relative update accepted at convergence.
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the line search.
    pub armijo: f64,
    /// A step may shrink any concentration by at most this fraction.
    pub positivity_fraction: f64,
    /// Pseudo-transient steps tried when the line search stalls.
    pub pseudo_transient_steps: usize,
    pub continuation: ContinuationControls,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            step_tolerance: 1e-9,
            max_iterations: 100,
            max_backtracks: 30,
            armijo: 1e-4,
            positivity_fraction: 0.9,
            pseudo_transient_steps: 200,
            continuation: ContinuationControls::default(),
        }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(PnpError::validation("tolerance", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(PnpError::validation("max_iterations", "must be >= 1"));
        }
        if !(self.positivity_fraction > 0.0 && self.positivity_fraction < 1.0) {
            return Err(PnpError::validation(
                "positivity_fraction",
                "must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub solution: DiscreteSolution,
    pub iterations: usize,
    pub residual: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn scaled_norm(v: &[f64], scale: &[f64]) -> f64 {
    v.iter()
        .zip(scale)
        .map(|(a, s)| (a * s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Iterations over which the residual must drop by [`STALL_FACTOR`].
const STALL_WINDOW: usize = 12;
const STALL_FACTOR: f64 = 0.99;

struct Newton<'a> {
    asm: Assembler<'a>,
    controls: &'a SolverControls,
    state: DiscreteSolution,
    x: Vec<f64>,
}

impl<'a> Newton<'a> {
    fn residual_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trial = self.state.clone();
        self.asm.unpack(x, &mut trial);
        Ok(self.asm.evaluate(&trial, false)?.0)
    }

    fn jacobian(&self) -> Result<(Vec<f64>, BandMatrix)> {
        let (r, j) = self.asm.evaluate(&self.state, true)?;
        Ok((r, j.expect("jacobian requested")))
    }

    fn set(&mut self, x: Vec<f64>) {
        self.asm.unpack(&x, &mut self.state);
        self.x = x;
    }

    /// Largest step fraction keeping every concentration above
    /// `(1 - positivity_fraction)` times its current value.
    fn positivity_limit(&self, dx: &[f64]) -> f64 {
        let frac = self.controls.positivity_fraction;
        let mut theta = 1.0f64;
        for (i, (&x, &d)) in self.x.iter().zip(dx).enumerate() {
            if d < 0.0 && self.asm.is_concentration(i) {
                theta = theta.min(frac * x / -d);
            }
        }
        theta
    }

    fn relative_update(&self, dx: &[f64], theta: f64) -> f64 {
        self.x
            .iter()
            .zip(dx)
            .enumerate()
            .map(|(i, (&x, &d))| {
                let denom = if self.asm.is_concentration(i) {
                    x.abs()
                } else {
                    1.0 + x.abs()
                };
                (theta * d).abs() / denom
            })
            .fold(0.0, f64::max)
    }

    /// Newton direction for row-equilibrated `J Δ = -F`; returns the row scaling.
    fn direction(
        &self,
        residual: &[f64],
        mut jac: BandMatrix,
        shift: Option<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let scale: Vec<f64> = jac
            .row_maxima()
            .into_iter()
            .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
            .collect();
        for (i, s) in scale.iter().enumerate() {
            jac.scale_row(i, *s);
        }
        if let Some(inv_dt) = shift {
            jac.shift_diagonal(&vec![inv_dt; scale.len()]);
        }
        let mut rhs: Vec<f64> = residual.iter().zip(&scale).map(|(r, s)| -r * s).collect();
        jac.solve(&mut rhs)?;
        Ok((rhs, scale))
    }

    /// Pseudo-transient continuation: `(S J + I/Δt) Δ = -S F` with the
    /// switched-evolution-relaxation time step.
    fn pseudo_transient(&mut self) -> Result<()> {
        let mut inv_dt = 1.0;
        let mut prev: Option<f64> = None;
        for _ in 0..self.controls.pseudo_transient_steps {
            let (residual, jac) = self.jacobian()?;
            let (dx, scale) = self.direction(&residual, jac, Some(inv_dt))?;
            let merit = scaled_norm(&residual, &scale);
            let theta = self.positivity_limit(&dx);
            let trial: Vec<f64> = self.x.iter().zip(&dx).map(|(x, d)| x + theta * d).collect();
            match self.residual_at(&trial) {
                Ok(r) => {
                    let new_merit = scaled_norm(&r, &scale);
                    if let Some(old) = prev {
                        inv_dt *= (new_merit / old).clamp(0.1, 10.0);
                    }
                    prev = Some(new_merit.max(f64::MIN_POSITIVE));
                    self.set(trial);
                    if inv_dt < 1e-8 || new_merit < 1e-3 * merit {
                        return Ok(());
                    }
                }
                Err(_) => inv_dt *= 10.0,
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<SolveOutcome> {
        let c = self.controls;
        let mut last_update = f64::INFINITY;
        let mut best_norm = f64::INFINITY;
        let mut best = self.state.clone();
        let mut used_fallback = false;
        let mut history: Vec<f64> = Vec::new();
        let mut iterations = c.max_iterations;
        for iteration in 0..=c.max_iterations {
            let (residual, jac) = self.jacobian()?;
            let norm = inf_norm(&residual);
            // the residual cannot be resolved below the rounding level of its terms
            let floor = 8.0 * f64::EPSILON * inf_norm(&jac.abs_mul_vec(&self.x));
            if norm < best_norm {
                best_norm = norm;
                best = self.state.clone();
            }
            let resolved = norm <= c.tolerance.max(floor);
            if resolved && last_update <= c.step_tolerance {
                return Ok(SolveOutcome {
                    solution: self.state.clone(),
                    iterations: iteration,
                    residual: norm,
                });
            }
            if iteration == c.max_iterations {
                break;
            }
            history.push(norm);
            if history.len() > STALL_WINDOW
                && norm > STALL_FACTOR * history[history.len() - 1 - STALL_WINDOW]
            {
                iterations = iteration;
                break;
            }
            let (dx, scale) = self.direction(&residual, jac, None)?;
            let merit = scaled_norm(&residual, &scale);
            let theta_max = self.positivity_limit(&dx);
            if theta_max < 1e-12 {
                return Err(PnpError::Positivity);
            }
            let mut theta = theta_max;
            let mut accepted = None;
            for _ in 0..=c.max_backtracks {
                let trial: Vec<f64> = self.x.iter().zip(&dx).map(|(x, d)| x + theta * d).collect();
                if let Ok(r) = self.residual_at(&trial) {
                    let m = scaled_norm(&r, &scale);
                    if m <= (1.0 - c.armijo * theta) * merit || merit == 0.0 {
                        accepted = Some(trial);
                        break;
                    }
                }
                theta *= 0.5;
            }
            match accepted {
                Some(trial) => {
                    last_update = self.relative_update(&dx, theta);
                    self.set(trial);
                }
                None if !used_fallback => {
                    used_fallback = true;
                    self.pseudo_transient()?;
                    last_update = f64::INFINITY;
                }
                // no descent left below tolerance: the residual is at rounding level
                None if resolved => {
                    return Ok(SolveOutcome {
                        solution: self.state.clone(),
                        iterations: iteration,
                        residual: norm,
                    })
                }
                None => {
                    iterations = iteration;
                    break;
                }
            }
        }
        Err(PnpError::NonConvergence {
            iterations,
            residual: best_norm,
            best: Some(Box::new(best)),
        })
    }
}

/// Solves the discrete PNP equations on `mesh` starting from `guess`.
pub fn solve_nonlinear(
    problem: &PnpProblem,
    mesh: &Mesh,
    guess: &DiscreteSolution,
    controls: &SolverControls,
) -> Result<SolveOutcome> {
    controls.validate()?;
    guess.check_boundary(problem)?;
    if guess.mesh != *mesh {
        return Err(PnpError::validation("guess", "lives on a different mesh"));
    }
    let asm = Assembler::new(problem, mesh)?;
    let x = asm.pack(guess);
    let mut newton = Newton {
        asm,
        controls,
        state: guess.clone(),
        x,
    };
    newton.run()
}

/// A converged state on the continuation path toward a target problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub amplitude: f64,
    pub voltage: f64,
    pub solution: DiscreteSolution,
}

/// How far a continuation walk got.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub reached: Waypoint,
    pub iterations: usize,
    /// Why the walk stopped short of the target; `None` when it arrived.
    pub failure: Option<PnpError>,
}

impl Walk {
    pub fn arrived(&self) -> bool {
        self.failure.is_none()
    }
}

/// Walks one parameter through `rungs`, warm-starting every rung and halving
/// rungs that fail. `at(s)` builds the problem for value `s`. Returns the last
/// converged value and state, plus the error if a rung could not be passed.
fn ladder<F>(
    start: f64,
    rungs: &[f64],
    mesh: &Mesh,
    mut state: DiscreteSolution,
    controls: &SolverControls,
    at: F,
) -> (f64, DiscreteSolution, usize, Option<PnpError>)
where
    F: Fn(f64) -> PnpProblem,
{
    let mut iterations = 0;
    let mut prev = start;
    for &target in rungs {
        let mut stack = vec![(prev, target, 0usize)];
        while let Some((lo, hi, depth)) = stack.pop() {
            let problem = at(hi);
            let mut guess = state.clone();
            guess.impose_boundary(&problem);
            match solve_nonlinear(&problem, mesh, &guess, controls) {
                Ok(out) => {
                    iterations += out.iterations;
                    state = out.solution;
                    prev = hi;
                }
                Err(_) if depth < controls.continuation.max_subdivisions => {
                    let mid = 0.5 * (lo + hi);
                    stack.push((mid, hi, depth + 1));
                    stack.push((lo, mid, depth + 1));
                }
                Err(err) => return (prev, state, iterations, Some(err)),
            }
        }
    }
    (prev, state, iterations, None)
}

/// Continues from `from` (or from the uncharged zero-voltage state) toward
/// `problem`: first the charge amplitude at fixed voltage, geometrically,
/// then the voltage, linearly.
pub fn continuation_walk(
    problem: &PnpProblem,
    mesh: &Mesh,
    from: Option<Waypoint>,
    controls: &SolverControls,
) -> Result<Walk> {
    let cont = controls.continuation;
    let target_q = problem.charge.amplitude;
    let target_v = problem.bc.voltage;
    let mut iterations = 0;
    let Waypoint {
        amplitude: mut q,
        voltage: mut v,
        solution: mut state,
    } = match from {
        Some(w) => w,
        None => {
            let base = problem.with_voltage(0.0).with_q0(0.0);
            let out = solve_nonlinear(&base, mesh, &initial_guess(&base, mesh), controls)?;
            iterations += out.iterations;
            Waypoint {
                amplitude: 0.0,
                voltage: 0.0,
                solution: out.solution,
            }
        }
    };
    let stop = |q, v, state, iterations, err| Walk {
        reached: Waypoint {
            amplitude: q,
            voltage: v,
            solution: state,
        },
        iterations,
        failure: err,
    };
    if q < target_q {
        let n = cont.charge_steps.max(1);
        let floor = (target_q * cont.charge_start_ratio).max(q);
        let rungs: Vec<f64> = (0..n)
            .map(|i| {
                let s = if n == 1 {
                    1.0
                } else {
                    i as f64 / (n - 1) as f64
                };
                if i + 1 == n {
                    target_q
                } else {
                    floor * (target_q / floor).powf(s)
                }
            })
            .filter(|&a| a > q)
            .collect();
        let at_v = v;
        let (reached, s, it, err) = ladder(q, &rungs, mesh, state, controls, |a| {
            let mut p = problem.with_voltage(at_v);
            p.charge.amplitude = a;
            p
        });
        iterations += it;
        if err.is_some() {
            return Ok(stop(reached, v, s, iterations, err));
        }
        q = target_q;
        state = s;
    }
    if v != target_v {
        let n = cont.voltage_steps.max(1);
        let rungs: Vec<f64> = (1..=n)
            .map(|i| {
                if i == n {
                    target_v
                } else {
                    v + (target_v - v) * i as f64 / n as f64
                }
            })
            .collect();
        let (reached, s, it, err) = ladder(v, &rungs, mesh, state, controls, |x| {
            problem.with_voltage(x)
        });
        iterations += it;
        if err.is_some() {
            return Ok(stop(q, reached, s, iterations, err));
        }
        v = target_v;
        state = s;
    }
    Ok(stop(q, v, state, iterations, None))
}

/// Direct solve from `guess`, falling back to a charge-then-voltage ladder
/// from the uncharged zero-voltage state when the direct attempt fails.
pub fn solve_with_continuation(
    problem: &PnpProblem,
    mesh: &Mesh,
    guess: &DiscreteSolution,
    controls: &SolverControls,
) -> Result<SolveOutcome> {
    let first_err = match solve_nonlinear(problem, mesh, guess, controls) {
        Ok(out) => return Ok(out),
        Err(e) => e,
    };
    if !controls.continuation.enabled {
        return Err(first_err);
    }
    let walk = continuation_walk(problem, mesh, None, controls)?;
    if let Some(err) = walk.failure {
        return Err(err);
    }
    let out = solve_nonlinear(problem, mesh, &walk.reached.solution, controls)?;
    Ok(SolveOutcome {
        iterations: walk.iterations + out.iterations,
        ..out
    })
}
