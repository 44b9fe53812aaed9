//! Piecewise-linear finite element discretization of the steady PNP system.

mod assembly;
mod flux;
mod newton;

pub use assembly::{assemble, assemble_residual, Assembler};
pub use flux::{compute_fluxes, electrochemical_profile, FluxReport};
pub use newton::{
    continuation_walk, solve_nonlinear, solve_with_continuation, ContinuationControls,
    SolveOutcome, SolverControls, Walk, Waypoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{PnpError, Result};
use crate::model::PnpProblem;

/// Strictly increasing nodes covering `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    nodes: Vec<f64>,
}

impl Mesh {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(PnpError::validation(
                "mesh",
                "at least three nodes are required",
            ));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(PnpError::validation(
                "mesh",
                "end nodes must be exactly 0 and 1",
            ));
        }
        if let Some(i) = nodes.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PnpError::Monotonicity(format!(
                "nodes {i} and {} are not increasing ({} >= {})",
                i + 1,
                nodes[i],
                nodes[i + 1]
            )));
        }
        Ok(Self { nodes })
    }

    /// Moves the nearest interior node onto each point, so that no element
    /// straddles a kink of the data.
    pub fn aligned_to(&self, points: &[f64]) -> Result<Mesh> {
        let mut nodes = self.nodes.clone();
        let last = nodes.len() - 1;
        let mut pinned = vec![false; nodes.len()];
        for &p in points {
            if p <= nodes[0] || p >= nodes[last] {
                continue;
            }
            // nodes[i - 1] < p <= nodes[i]
            let i = nodes.partition_point(|&x| x < p);
            if nodes[i] == p {
                pinned[i] = true;
                continue;
            }
            let free = |j: usize| j > 0 && j < last && !pinned[j];
            let j = match (free(i - 1), free(i)) {
                (true, true) if p - nodes[i - 1] < nodes[i] - p => i - 1,
                (_, true) => i,
                (true, false) => i - 1,
                (false, false) => continue,
            };
            nodes[j] = p;
            pinned[j] = true;
        }
        Mesh::new(nodes)
    }

    pub fn uniform(n_nodes: usize) -> Result<Self> {
        if n_nodes < 3 {
            return Err(PnpError::validation(
                "mesh",
                "at least three nodes are required",
            ));
        }
        let last = (n_nodes - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_nodes).map(|j| j as f64 / last).collect();
        nodes[n_nodes - 1] = 1.0;
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluates the piecewise-linear interpolant of `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let nodes = &self.nodes;
        let e = match nodes.partition_point(|&n| n <= x) {
            0 => 0,
            p if p >= nodes.len() => nodes.len() - 2,
            p => p - 1,
        };
        let (a, b) = (nodes[e], nodes[e + 1]);
        let t = (x - a) / (b - a);
        values[e] * (1.0 - t) + values[e + 1] * t
    }
}

/// Nodal potential and concentrations on a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSolution {
    pub mesh: Mesh,
    pub phi: Vec<f64>,
    /// `conc[k][j]`: species `k` at node `j`.
    pub conc: Vec<Vec<f64>>,
}

impl DiscreteSolution {
    pub fn n_species(&self) -> usize {
        self.conc.len()
    }

    pub fn conc_at_node(&self, j: usize) -> Vec<f64> {
        self.conc.iter().map(|c| c[j]).collect()
    }

    /// Transfers the solution onto another mesh by linear interpolation.
    pub fn interpolate_to(&self, mesh: &Mesh) -> DiscreteSolution {
        let map = |values: &[f64]| -> Vec<f64> {
            mesh.nodes()
                .iter()
                .map(|&x| self.mesh.interpolate(values, x))
                .collect()
        };
        DiscreteSolution {
            mesh: mesh.clone(),
            phi: map(&self.phi),
            conc: self.conc.iter().map(|c| map(c)).collect(),
        }
    }

    /// Overwrites the end values with the problem's Dirichlet data.
    pub fn impose_boundary(&mut self, problem: &PnpProblem) {
        let last = self.phi.len() - 1;
        self.phi[0] = problem.bc.voltage;
        self.phi[last] = 0.0;
        for (k, c) in self.conc.iter_mut().enumerate() {
            c[0] = problem.bc.left[k];
            c[last] = problem.bc.right[k];
        }
    }

    pub fn check_boundary(&self, problem: &PnpProblem) -> Result<()> {
        let last = self.phi.len() - 1;
        let mut ok = self.phi[0] == problem.bc.voltage && self.phi[last] == 0.0;
        for (k, c) in self.conc.iter().enumerate() {
            ok &= c[0] == problem.bc.left[k] && c[last] == problem.bc.right[k];
        }
        if ok {
            Ok(())
        } else {
            Err(PnpError::validation(
                "state",
                "boundary values do not match the problem",
            ))
        }
    }

    pub fn min_concentration(&self) -> f64 {
        self.conc
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Linear profiles between the Dirichlet data at both ends.
pub fn initial_guess(problem: &PnpProblem, mesh: &Mesh) -> DiscreteSolution {
    let v = problem.bc.voltage;
    let phi = mesh.nodes().iter().map(|&x| v * (1.0 - x)).collect();
    let conc = problem
        .bc
        .left
        .iter()
        .zip(&problem.bc.right)
        .map(|(&l, &r)| mesh.nodes().iter().map(|&x| l + (r - l) * x).collect())
        .collect();
    let mut guess = DiscreteSolution {
        mesh: mesh.clone(),
        phi,
        conc,
    };
    guess.impose_boundary(problem);
    guess
}
