//! Moving-mesh adaptation: monitor functions, the discrete equidistribution
//! energy and its gradient flow, physical mesh recovery, and the outer loop
//! alternating mesh generation with nonlinear solves.

use serde::{Deserialize, Serialize};

use crate::error::{PnpError, Result};
use crate::fem::{
    compute_fluxes, continuation_walk, initial_guess, solve_nonlinear, solve_with_continuation,
    DiscreteSolution, FluxReport, Mesh, SolveOutcome, SolverControls, Waypoint,
};
use crate::model::{PnpProblem, NECK_END, NECK_START};
use crate::stiff::{integrate, StiffOptions, Tridiagonal, TridiagonalSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorVariant {
    /// `(1 + φ''²)^{1/3}`
    Optimal,
    /// Curvature term plus explicit concentration at the neck ends.
    #[default]
    #[serde(alias = "boundary")]
    BoundaryWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub variant: MonitorVariant,
}

impl MonitorConfig {
    pub fn new(variant: MonitorVariant) -> Self {
        Self { variant }
    }
}

/// Piecewise-constant mesh density, one value per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSamples {
    values: Vec<f64>,
    sigma: f64,
}

impl MonitorSamples {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_elements() {
            return Err(PnpError::validation(
                "monitor",
                "one value per element is required",
            ));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(PnpError::validation(
                "monitor",
                format!("value {v} is not positive"),
            ));
        }
        let sigma = values
            .iter()
            .zip(mesh.nodes().windows(2))
            .map(|(r, w)| r * (w[1] - w[0]))
            .sum();
        Ok(Self { values, sigma })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ ρ_j Δx_j`
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Physical, computational and fixed uniform reference meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshIterate {
    pub physical: Mesh,
    pub computational: Vec<f64>,
    pub reference: Vec<f64>,
}

fn uniform_coordinates(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|j| j as f64 / last).collect();
    v[n - 1] = 1.0;
    v
}

fn check_increasing(name: &str, v: &[f64]) -> Result<()> {
    if v.first() != Some(&0.0) || v.last() != Some(&1.0) {
        return Err(PnpError::Monotonicity(format!(
            "{name} does not span [0, 1]"
        )));
    }
    match v.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(PnpError::Monotonicity(format!("{name} fails at node {i}"))),
        None => Ok(()),
    }
}

/// Nodal second derivatives from least-squares quadratics over five
/// neighbouring nodes (shifted inward at the ends).
pub fn second_derivative_estimate(mesh: &Mesh, phi: &[f64]) -> Result<Vec<f64>> {
    let n = mesh.len();
    if n < 5 {
        return Err(PnpError::validation(
            "mesh",
            "at least five nodes are needed for the fit",
        ));
    }
    if phi.len() != n {
        return Err(PnpError::validation("phi", "length differs from the mesh"));
    }
    let x = mesh.nodes();
    (0..n)
        .map(|j| {
            let s = j.saturating_sub(2).min(n - 5);
            let centre = x[j];
            let span = x[s + 4] - x[s];
            // normal equations in scaled local coordinates
            let mut m = [[0.0f64; 3]; 3];
            let mut rhs = [0.0f64; 3];
            for i in s..s + 5 {
                let u = (x[i] - centre) / span;
                let basis = [1.0, u, u * u];
                for r in 0..3 {
                    rhs[r] += basis[r] * phi[i];
                    for c in 0..3 {
                        m[r][c] += basis[r] * basis[c];
                    }
                }
            }
            let coef = solve3(m, rhs)
                .ok_or_else(|| PnpError::Degenerate(format!("quadratic fit at node {j}")))?;
            Ok(2.0 * coef[2] / (span * span))
        })
        .collect()
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let p = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[p][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, p);
        b.swap(col, p);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = b[r];
        for c in r + 1..3 {
            acc -= m[r][c] * x[c];
        }
        x[r] = acc / m[r][r];
    }
    Some(x)
}

/// Nodal monitor values; element values are the means of these.
pub fn monitor_nodal(mesh: &Mesh, phi2: &[f64], config: &MonitorConfig) -> Vec<f64> {
    match config.variant {
        MonitorVariant::Optimal => phi2.iter().map(|d| (1.0 + d * d).cbrt()).collect(),
        MonitorVariant::BoundaryWeighted => {
            let base: Vec<f64> = phi2.iter().map(|d| (1.0 + d * d).powf(2.0 / 3.0)).collect();
            let c = 4.0 / base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            base.iter()
                .zip(mesh.nodes())
                .map(|(b, &x)| {
                    let bump = |centre: f64| 1.0 / ((4.0 * (x - centre).powi(2)).exp_m1() + c);
                    (b + bump(NECK_START) + bump(NECK_END)).sqrt()
                })
                .collect()
        }
    }
}

pub fn monitor(mesh: &Mesh, phi2: &[f64], config: &MonitorConfig) -> Result<MonitorSamples> {
    let nodal = monitor_nodal(mesh, phi2, config);
    let values = nodal.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    MonitorSamples::new(mesh, values)
}

/// `½ Σ (Δξ)² / (ρ Δx)`
pub fn mesh_energy(x: &[f64], xi: &[f64], rho: &MonitorSamples) -> f64 {
    0.5 * x
        .windows(2)
        .zip(xi.windows(2))
        .zip(rho.values())
        .map(|((xw, cw), r)| (cw[1] - cw[0]).powi(2) / (r * (xw[1] - xw[0])))
        .sum::<f64>()
}

/// Partial derivatives of [`mesh_energy`] with respect to the interior `ξ_j`.
pub fn energy_gradient(x: &[f64], xi: &[f64], rho: &MonitorSamples) -> Vec<f64> {
    let r = rho.values();
    (1..x.len() - 1)
        .map(|j| {
            (xi[j] - xi[j - 1]) / (r[j - 1] * (x[j] - x[j - 1]))
                - (xi[j + 1] - xi[j]) / (r[j] * (x[j + 1] - x[j]))
        })
        .collect()
}

/// The gradient flow restricted to interior nodes; it is linear in `ξ`.
struct GradientFlow {
    /// `1 / (ρ_j Δx_j)` per element
    stiffness: Vec<f64>,
}

impl GradientFlow {
    fn new(x: &[f64], rho: &MonitorSamples) -> Self {
        Self {
            stiffness: x
                .windows(2)
                .zip(rho.values())
                .map(|(w, r)| 1.0 / (r * (w[1] - w[0])))
                .collect(),
        }
    }
}

impl TridiagonalSystem for GradientFlow {
    fn rhs(&self, _t: f64, y: &[f64]) -> Vec<f64> {
        let m = y.len();
        let a = &self.stiffness;
        (0..m)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { y[i - 1] };
                let right = if i + 1 == m { 1.0 } else { y[i + 1] };
                a[i + 1] * (right - y[i]) - a[i] * (y[i] - left)
            })
            .collect()
    }

    fn jacobian(&self, _t: f64, y: &[f64]) -> Tridiagonal {
        let m = y.len();
        let a = &self.stiffness;
        Tridiagonal {
            lower: (0..m).map(|i| a[i]).collect(),
            diag: (0..m).map(|i| -(a[i] + a[i + 1])).collect(),
            upper: (0..m).map(|i| a[i + 1]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowControls {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowControls {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            rtol: 1e-6,
            atol: 1e-9,
        }
    }
}

/// Computational meshes at the checkpoints and at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub xi: Vec<f64>,
    pub checkpoints: Vec<Vec<f64>>,
}

/// Integrates the gradient flow of the mesh energy from the uniform mesh.
pub fn evolve_computational_mesh_with(
    x: &[f64],
    rho: &MonitorSamples,
    controls: &FlowControls,
    checkpoints: &[f64],
) -> Result<FlowResult> {
    check_increasing("physical mesh", x)?;
    let n = x.len();
    if rho.values().len() != n - 1 {
        return Err(PnpError::validation(
            "monitor",
            "one value per element is required",
        ));
    }
    let reference = uniform_coordinates(n);
    let flow = GradientFlow::new(x, rho);
    let opts = StiffOptions {
        rtol: controls.rtol,
        atol: controls.atol,
        ..StiffOptions::default()
    };
    let run = integrate(
        &flow,
        0.0,
        &reference[1..n - 1],
        controls.t_end,
        checkpoints,
        &opts,
    )?;
    let wrap = |interior: Vec<f64>| -> Result<Vec<f64>> {
        let mut xi = Vec::with_capacity(n);
        xi.push(0.0);
        xi.extend(interior);
        xi.push(1.0);
        check_increasing("computational mesh", &xi)?;
        Ok(xi)
    };
    Ok(FlowResult {
        xi: wrap(run.y)?,
        checkpoints: run
            .checkpoints
            .into_iter()
            .map(wrap)
            .collect::<Result<_>>()?,
    })
}

pub fn evolve_computational_mesh(x: &[f64], rho: &MonitorSamples) -> Result<Vec<f64>> {
    Ok(evolve_computational_mesh_with(x, rho, &FlowControls::default(), &[])?.xi)
}

/// Steady state of the gradient flow: `ξ_j = Σ_{i<j} ρ_i Δx_i / σ`.
pub fn equidistributed_coordinates(x: &[f64], rho: &MonitorSamples) -> Vec<f64> {
    let mut xi = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    xi.push(0.0);
    for (w, r) in x.windows(2).zip(rho.values()) {
        acc += r * (w[1] - w[0]);
        xi.push(acc / rho.sigma());
    }
    let last = xi.len() - 1;
    xi[last] = 1.0;
    xi
}

/// Evaluates the piecewise-linear map `ξ_new ↦ x_old` at the uniform reference nodes.
pub fn recover_physical_mesh(x_old: &[f64], xi_new: &[f64]) -> Result<Mesh> {
    check_increasing("computational mesh", xi_new)?;
    check_increasing("physical mesh", x_old)?;
    if x_old.len() != xi_new.len() {
        return Err(PnpError::validation("mesh", "node counts differ"));
    }
    let n = x_old.len();
    let last = (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut e = 0;
    for j in 0..n {
        let s = j as f64 / last;
        while e + 2 < n && xi_new[e + 1] <= s {
            e += 1;
        }
        let t = (s - xi_new[e]) / (xi_new[e + 1] - xi_new[e]);
        nodes.push(x_old[e] + t * (x_old[e + 1] - x_old[e]));
    }
    nodes[0] = 0.0;
    nodes[n - 1] = 1.0;
    Mesh::new(nodes)
}

/// `max_j |Δx_j ρ_j − σ/(N−1)| / (σ/(N−1))`
pub fn equidistribution_defect(mesh: &Mesh, rho: &MonitorSamples) -> f64 {
    let target = rho.sigma() / mesh.n_elements() as f64;
    mesh.nodes()
        .windows(2)
        .zip(rho.values())
        .map(|(w, r)| ((w[1] - w[0]) * r - target).abs() / target)
        .fold(0.0, f64::max)
}

/// Flow end time used inside the outer solve/adapt loop.
pub const ADAPT_FLOW_END: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptControls {
    pub n_nodes: usize,
    pub outer_iterations: usize,
    pub monitor: MonitorConfig,
    pub flow: FlowControls,
    pub solver: SolverControls,
    /// Adaptations allowed on the way to a first solution of the target.
    pub max_pre_adaptations: usize,
    /// Snap a node onto each kink of the channel profile after every adaptation.
    pub align_breakpoints: bool,
}

impl Default for AdaptControls {
    fn default() -> Self {
        Self {
            n_nodes: 301,
            outer_iterations: 5,
            monitor: MonitorConfig::default(),
            // the slowest mode of the flow decays like exp(-π² t / (ρ̄ N)), so a
            // 301-node mesh needs far longer than the single-flow default
            flow: FlowControls {
                t_end: ADAPT_FLOW_END,
                ..FlowControls::default()
            },
            solver: SolverControls::default(),
            max_pre_adaptations: 8,
            align_breakpoints: true,
        }
    }
}

/// What one outer iteration produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub newton_iterations: usize,
    pub residual: f64,
    /// Equidistribution defect of the iteration's mesh for the monitor built from its solution.
    pub defect: f64,
    pub nonuniformity: Vec<f64>,
    pub nodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub mesh: Mesh,
    pub solution: DiscreteSolution,
    pub fluxes: FluxReport,
    pub history: Vec<IterationDiagnostics>,
    /// Adaptations made before the target problem could first be solved.
    pub pre_adaptations: usize,
}

fn density(
    mesh: &Mesh,
    solution: &DiscreteSolution,
    config: &MonitorConfig,
) -> Result<MonitorSamples> {
    let phi2 = second_derivative_estimate(mesh, &solution.phi)?;
    monitor(mesh, &phi2, config)
}

fn adapt_mesh(
    problem: &PnpProblem,
    mesh: &Mesh,
    rho: &MonitorSamples,
    controls: &AdaptControls,
) -> Result<Mesh> {
    let xi = evolve_computational_mesh_with(mesh.nodes(), rho, &controls.flow, &[])?;
    let next = recover_physical_mesh(mesh.nodes(), &xi.xi)?;
    if controls.align_breakpoints {
        next.aligned_to(&problem.geometry.breakpoints())
    } else {
        Ok(next)
    }
}

/// First outer iteration. When the target cannot be reached on the uniform
/// mesh, the mesh is adapted to the furthest converged continuation state and
/// the walk resumes from there.
fn first_solve(
    problem: &PnpProblem,
    controls: &AdaptControls,
    mut mesh: Mesh,
    start: DiscreteSolution,
) -> Result<(Mesh, SolveOutcome, usize)> {
    let solver = &controls.solver;
    let direct = match solve_nonlinear(problem, &mesh, &start, solver) {
        Ok(out) => return Ok((mesh, out, 0)),
        Err(e) => e,
    };
    if !solver.continuation.enabled {
        return Err(direct);
    }
    let mut from: Option<Waypoint> = None;
    for pre in 0..=controls.max_pre_adaptations {
        let walk = continuation_walk(problem, &mesh, from.take(), solver)?;
        if walk.arrived() {
            let out = solve_nonlinear(problem, &mesh, &walk.reached.solution, solver)?;
            let iterations = walk.iterations + out.iterations;
            return Ok((mesh, SolveOutcome { iterations, ..out }, pre));
        }
        if pre == controls.max_pre_adaptations {
            break;
        }
        let Waypoint {
            amplitude,
            voltage,
            solution,
        } = walk.reached;
        let rho = density(&mesh, &solution, &controls.monitor)?;
        mesh = adapt_mesh(problem, &mesh, &rho, controls)?;
        let mut partial = problem.with_voltage(voltage);
        partial.charge.amplitude = amplitude;
        let mut moved = solution.interpolate_to(&mesh);
        moved.impose_boundary(&partial);
        let out = solve_nonlinear(&partial, &mesh, &moved, solver)?;
        from = Some(Waypoint {
            amplitude,
            voltage,
            solution: out.solution,
        });
    }
    Err(direct)
}

/// Alternates nonlinear solves with mesh adaptation. The first iteration runs
/// on the uniform mesh, starting from `guess` (transferred onto it) if given.
pub fn adapt_and_solve_from(
    problem: &PnpProblem,
    controls: &AdaptControls,
    guess: Option<&DiscreteSolution>,
) -> Result<AdaptOutcome> {
    problem.validate()?;
    if controls.n_nodes < 5 {
        return Err(PnpError::validation(
            "n_nodes",
            "at least five nodes are required",
        ));
    }
    if controls.outer_iterations == 0 {
        return Err(PnpError::validation("outer_iterations", "must be >= 1"));
    }
    let wrap = |iteration: usize| {
        move |e: PnpError| PnpError::Adapt {
            iteration,
            source: Box::new(e),
        }
    };
    let uniform = Mesh::uniform(controls.n_nodes)?;
    let mut start = match guess {
        Some(g) => g.interpolate_to(&uniform),
        None => initial_guess(problem, &uniform),
    };
    start.impose_boundary(problem);
    let (mut mesh, mut out, pre_adaptations) =
        first_solve(problem, controls, uniform, start).map_err(wrap(1))?;
    let mut history = Vec::with_capacity(controls.outer_iterations);
    let mut iteration = 1;
    loop {
        let err = wrap(iteration);
        let rho = density(&mesh, &out.solution, &controls.monitor).map_err(err)?;
        let fluxes = compute_fluxes(problem, &mesh, &out.solution).map_err(err)?;
        history.push(IterationDiagnostics {
            iteration,
            newton_iterations: out.iterations,
            residual: out.residual,
            defect: equidistribution_defect(&mesh, &rho),
            nonuniformity: fluxes.nonuniformity.clone(),
            nodes: mesh.nodes().to_vec(),
        });
        if iteration == controls.outer_iterations {
            return Ok(AdaptOutcome {
                mesh,
                solution: out.solution,
                fluxes,
                history,
                pre_adaptations,
            });
        }
        iteration += 1;
        let err = wrap(iteration);
        mesh = adapt_mesh(problem, &mesh, &rho, controls).map_err(err)?;
        let mut start = out.solution.interpolate_to(&mesh);
        start.impose_boundary(problem);
        out = solve_with_continuation(problem, &mesh, &start, &controls.solver).map_err(err)?;
    }
}

pub fn adapt_and_solve(problem: &PnpProblem, controls: &AdaptControls) -> Result<AdaptOutcome> {
    adapt_and_solve_from(problem, controls, None)
}

/// One adaptation step, keeping all three meshes.
pub fn mesh_iterate(
    x_old: &Mesh,
    rho: &MonitorSamples,
    flow: &FlowControls,
) -> Result<MeshIterate> {
    let xi = evolve_computational_mesh_with(x_old.nodes(), rho, flow, &[])?.xi;
    Ok(MeshIterate {
        physical: recover_physical_mesh(x_old.nodes(), &xi)?,
        computational: xi,
        reference: uniform_coordinates(x_old.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(mesh: &Mesh, v: Vec<f64>) -> MonitorSamples {
        MonitorSamples::new(mesh, v).unwrap()
    }

    #[test]
    fn quadratics_are_reproduced() {
        let mesh = Mesh::new(vec![0.0, 0.05, 0.2, 0.21, 0.5, 0.77, 0.9, 1.0]).unwrap();
        let sq: Vec<f64> = mesh.nodes().iter().map(|x| x * x - 3.0 * x + 1.0).collect();
        for d in second_derivative_estimate(&mesh, &sq).unwrap() {
            assert!((d - 2.0).abs() < 1e-9, "{d}");
        }
        let lin: Vec<f64> = mesh.nodes().iter().map(|x| 4.0 * x - 1.0).collect();
        for d in second_derivative_estimate(&mesh, &lin).unwrap() {
            assert!(d.abs() < 1e-9);
        }
        assert!(second_derivative_estimate(&Mesh::uniform(4).unwrap(), &[0.0; 4]).is_err());
    }

    #[test]
    fn sine_curvature() {
        use std::f64::consts::PI;
        let mesh = Mesh::uniform(101).unwrap();
        let phi: Vec<f64> = mesh.nodes().iter().map(|x| (2.0 * PI * x).sin()).collect();
        let d = second_derivative_estimate(&mesh, &phi).unwrap();
        let scale = 4.0 * PI * PI;
        for j in 2..99 {
            let exact = -scale * (2.0 * PI * mesh.nodes()[j]).sin();
            assert!((d[j] - exact).abs() < 0.01 * scale);
        }
    }

    #[test]
    fn monitor_values() {
        let mesh = Mesh::uniform(7).unwrap();
        let zero = vec![0.0; 7];
        let opt = monitor(&mesh, &zero, &MonitorConfig::new(MonitorVariant::Optimal)).unwrap();
        assert!(opt.values().iter().all(|&v| v == 1.0));
        let nodal = monitor_nodal(&mesh, &zero, &MonitorConfig::default());
        // node 2 sits at 1/3
        let want = (1.0 + 0.25 + 1.0 / ((4.0f64 / 9.0).exp() - 1.0 + 4.0)).sqrt();
        assert!((nodal[2] - want).abs() < 1e-14);
        let steep = vec![5.0; 7];
        for variant in [MonitorVariant::Optimal, MonitorVariant::BoundaryWeighted] {
            let cfg = MonitorConfig::new(variant);
            let a = monitor_nodal(&mesh, &zero, &cfg);
            let mut bumped = zero.clone();
            bumped[4] = 5.0;
            let b = monitor_nodal(&mesh, &bumped, &cfg);
            if variant == MonitorVariant::Optimal {
                assert!(b[4] > a[4]);
            }
            assert!(monitor_nodal(&mesh, &steep, &cfg).iter().all(|&v| v >= 1.0));
        }
    }

    #[test]
    fn energy_examples() {
        let mesh = Mesh::uniform(3).unwrap();
        let rho = samples(&mesh, vec![1.0, 1.0]);
        assert!((mesh_energy(mesh.nodes(), mesh.nodes(), &rho) - 0.5).abs() < 1e-15);
        let scaled = samples(&mesh, vec![4.0, 4.0]);
        assert!((mesh_energy(mesh.nodes(), mesh.nodes(), &scaled) - 0.125).abs() < 1e-15);
        assert_eq!(energy_gradient(mesh.nodes(), mesh.nodes(), &rho), vec![0.0]);
        // N = 3 by hand: x = (0, .4, 1), ξ = (0, .7, 1), ρ = (2, 3)
        let x = [0.0, 0.4, 1.0];
        let xi = [0.0, 0.7, 1.0];
        let m = Mesh::new(x.to_vec()).unwrap();
        let r = samples(&m, vec![2.0, 3.0]);
        let g = energy_gradient(&x, &xi, &r);
        assert!((g[0] - (0.7 / 0.8 - 0.3 / 1.8)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(3..30);
            let mut x: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(0.0..1.0)).collect();
            x.push(0.0);
            x.push(1.0);
            x.sort_by(f64::total_cmp);
            let mut xi: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(0.0..1.0)).collect();
            xi.push(0.0);
            xi.push(1.0);
            xi.sort_by(f64::total_cmp);
            let mesh = Mesh::new(x.clone()).unwrap();
            let rho = samples(&mesh, (0..n - 1).map(|_| rng.gen_range(0.5..5.0)).collect());
            let g = energy_gradient(&x, &xi, &rho);
            for j in 1..n - 1 {
                let h = 1e-7;
                let mut p = xi.clone();
                let mut m = xi.clone();
                p[j] += h;
                m[j] -= h;
                let fd = (mesh_energy(&x, &p, &rho) - mesh_energy(&x, &m, &rho)) / (2.0 * h);
                assert!((fd - g[j - 1]).abs() <= 1e-6 * g[j - 1].abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_density_keeps_uniform_mesh() {
        let mesh = Mesh::uniform(21).unwrap();
        let rho = samples(&mesh, vec![3.0; 20]);
        let xi = evolve_computational_mesh(mesh.nodes(), &rho).unwrap();
        for (a, b) in xi.iter().zip(mesh.nodes()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = recover_physical_mesh(mesh.nodes(), &xi).unwrap();
        for (a, b) in back.nodes().iter().zip(mesh.nodes()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(equidistribution_defect(&mesh, &rho) < 1e-14);
    }

    #[test]
    fn flow_approaches_equidistribution_and_energy_decreases() {
        let mesh = Mesh::uniform(11).unwrap();
        let mut v = vec![1.0; 10];
        v[6] = 8.0;
        let rho = samples(&mesh, v);
        let stops: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let flow = FlowControls {
            t_end: 10.0,
            ..FlowControls::default()
        };
        let out = evolve_computational_mesh_with(mesh.nodes(), &rho, &flow, &stops).unwrap();
        let mut prev = mesh_energy(mesh.nodes(), mesh.nodes(), &rho);
        for xi in &out.checkpoints {
            let e = mesh_energy(mesh.nodes(), xi, &rho);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
        let steady = equidistributed_coordinates(mesh.nodes(), &rho);
        // the heavy element's image grows
        assert!(out.xi[7] - out.xi[6] > 0.1);
        let long = FlowControls {
            t_end: 200.0,
            ..FlowControls::default()
        };
        let settled = evolve_computational_mesh_with(mesh.nodes(), &rho, &long, &[]).unwrap();
        for (a, b) in settled.xi.iter().zip(&steady) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn recovery_by_hand() {
        let m = recover_physical_mesh(&[0.0, 0.5, 1.0], &[0.0, 0.25, 1.0]).unwrap();
        assert!((m.nodes()[1] - (0.5 + 0.25 / 0.75 * 0.5)).abs() < 1e-15);
        assert!(recover_physical_mesh(&[0.0, 0.5, 1.0], &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn defect_two_valued_density() {
        let mesh = Mesh::uniform(11).unwrap();
        let v: Vec<f64> = (0..10).map(|e| if e < 5 { 1.0 } else { 9.0 }).collect();
        let rho = samples(&mesh, v);
        assert!((equidistribution_defect(&mesh, &rho) - 0.8).abs() < 1e-13);
    }

    #[test]
    fn constant_solution_problem_is_left_alone() {
        let p = PnpProblem::binary(0.008, 0.008, 0.0, 0.0).unwrap();
        let controls = AdaptControls {
            n_nodes: 31,
            monitor: MonitorConfig::new(MonitorVariant::Optimal),
            ..AdaptControls::default()
        };
        let out = adapt_and_solve(&p, &controls).unwrap();
        let uniform = Mesh::uniform(31).unwrap();
        for (a, b) in out.mesh.nodes().iter().zip(uniform.nodes()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out
            .fluxes
            .per_element
            .iter()
            .flatten()
            .all(|j| j.abs() < 1e-14));
        assert_eq!(out.history.len(), 5);
    }
}
