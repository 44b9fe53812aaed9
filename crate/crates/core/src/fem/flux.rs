use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::PnpProblem;

use super::{Assembler, DiscreteSolution, Mesh};

/// Element fluxes and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    /// `per_element[k][e]`
    pub per_element: Vec<Vec<f64>>,
    /// Element-length weighted mean per species.
    pub representative: Vec<f64>,
    /// `(max - min) / |mean|` per species; zero when all element values agree.
    pub nonuniformity: Vec<f64>,
    /// `Σ_k z_k J_k` from the representative fluxes.
    pub current: f64,
    /// Flux the discrete equations conserve, per species. Unlike the
    /// element values it stays accurate where the mesh underresolves a layer.
    pub conservative: Vec<f64>,
}

impl FluxReport {
    pub fn max_nonuniformity(&self) -> f64 {
        self.nonuniformity.iter().copied().fold(0.0, f64::max)
    }
}

/// Nodal electrochemical potentials `μ̄_k` (ideal plus optional excess part).
pub fn electrochemical_profile(
    problem: &PnpProblem,
    solution: &DiscreteSolution,
) -> Result<Vec<Vec<f64>>> {
    let n = problem.n_species();
    let mut out = vec![Vec::with_capacity(solution.phi.len()); n];
    for j in 0..solution.phi.len() {
        let c = solution.conc_at_node(j);
        for (k, col) in out.iter_mut().enumerate() {
            col.push(problem.electrochemical_potential(k, solution.phi[j], &c)?);
        }
    }
    Ok(out)
}

/// Element fluxes `J = -D h(x_mid) c(x_mid) Δμ̄ / Δx`.
pub fn compute_fluxes(
    problem: &PnpProblem,
    mesh: &Mesh,
    solution: &DiscreteSolution,
) -> Result<FluxReport> {
    let mu = electrochemical_profile(problem, solution)?;
    let nodes = mesh.nodes();
    let mut per_element = Vec::with_capacity(problem.n_species());
    let mut representative = Vec::with_capacity(problem.n_species());
    let mut nonuniformity = Vec::with_capacity(problem.n_species());
    for (k, sp) in problem.species.iter().enumerate() {
        let c = &solution.conc[k];
        let mut fluxes = Vec::with_capacity(mesh.n_elements());
        let mut mean = 0.0;
        for e in 0..mesh.n_elements() {
            let dx = nodes[e + 1] - nodes[e];
            let h = problem.geometry.area(0.5 * (nodes[e] + nodes[e + 1]))?;
            let c_mid = 0.5 * (c[e] + c[e + 1]);
            let j = -sp.diffusion * h * c_mid * (mu[k][e + 1] - mu[k][e]) / dx;
            mean += j * dx;
            fluxes.push(j);
        }
        mean /= nodes[nodes.len() - 1] - nodes[0];
        let (lo, hi) = fluxes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let spread = hi - lo;
        nonuniformity.push(if spread == 0.0 {
            0.0
        } else {
            spread / mean.abs()
        });
        representative.push(mean);
        per_element.push(fluxes);
    }
    let current = problem
        .species
        .iter()
        .zip(&representative)
        .map(|(s, j)| s.valence as f64 * j)
        .sum();
    let total = nodes[nodes.len() - 1] - nodes[0];
    let conservative = Assembler::new(problem, mesh)?
        .conservative_fluxes(solution)?
        .iter()
        .map(|g| {
            (0..mesh.n_elements())
                .map(|e| g[e] * (nodes[e + 1] - nodes[e]))
                .sum::<f64>()
                / total
        })
        .collect();
    Ok(FluxReport {
        per_element,
        representative,
        nonuniformity,
        current,
        conservative,
    })
}
