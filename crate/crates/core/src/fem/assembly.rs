//! Galerkin residual and Jacobian of the discrete PNP equations.
//!
//! Unknowns are the interior nodal values, interleaved per node as
//! `(φ, c_1, …, c_n)`. Row `(j - 1) * (n + 1)` is the Poisson equation tested
//! against the hat function of node `j`, the following `n` rows are the
//! Nernst–Planck equations of that node.

use crate::banded::BandMatrix;
use crate::error::{PnpError, Result};
use crate::model::{mu_hard_sphere, mu_hard_sphere_gradient, ExcessModel, PnpProblem};
use crate::quadrature::GAUSS2_UNIT;

use super::{DiscreteSolution, Mesh};

/// Per-element integrals that depend only on the mesh and the coefficients.
#[derive(Debug, Clone)]
struct ElementData {
    dx: f64,
    /// ∫ h
    area: f64,
    /// ∫ h ψ_a
    weighted: [f64; 2],
    /// ∫ h ψ_a ψ_b
    mass: [[f64; 2]; 2],
    /// ∫ h Q ψ_a
    charge: [f64; 2],
}

/// Reusable assembly context for one problem on one mesh.
#[derive(Debug, Clone)]
pub struct Assembler<'a> {
    problem: &'a PnpProblem,
    mesh: &'a Mesh,
    elements: Vec<ElementData>,
}

struct NodalExcess {
    /// `mu[j][k]`
    mu: Vec<Vec<f64>>,
    /// `grad[j][k][i]` = ∂μ_k/∂c_i at node j
    grad: Vec<Vec<Vec<f64>>>,
}

impl<'a> Assembler<'a> {
    pub fn new(problem: &'a PnpProblem, mesh: &'a Mesh) -> Result<Self> {
        let mut elements = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let (a, b) = mesh.element(e);
            let dx = b - a;
            let mut data = ElementData {
                dx,
                area: 0.0,
                weighted: [0.0; 2],
                mass: [[0.0; 2]; 2],
                charge: [0.0; 2],
            };
            for &(t, w) in GAUSS2_UNIT.iter() {
                let x = a + t * dx;
                let wh = w * dx * problem.geometry.area(x)?;
                let psi = [1.0 - t, t];
                let q = problem.charge.density(x);
                data.area += wh;
                for i in 0..2 {
                    data.weighted[i] += wh * psi[i];
                    data.charge[i] += wh * q * psi[i];
                    for j in 0..2 {
                        data.mass[i][j] += wh * psi[i] * psi[j];
                    }
                }
            }
            elements.push(data);
        }
        Ok(Self {
            problem,
            mesh,
            elements,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        (self.mesh.len() - 2) * (self.problem.n_species() + 1)
    }

    /// Half bandwidth of the Jacobian under the interleaved ordering.
    pub fn bandwidth(&self) -> usize {
        2 * (self.problem.n_species() + 1) - 1
    }

    fn excess(&self, state: &DiscreteSolution) -> Result<Option<NodalExcess>> {
        if self.problem.excess != ExcessModel::HardSphere {
            return Ok(None);
        }
        let radii = self.problem.radii();
        let n = self.problem.n_species();
        let mut mu = Vec::with_capacity(state.phi.len());
        let mut grad = Vec::with_capacity(state.phi.len());
        // the packing fraction is linear in c, so checking nodes bounds every
        // quadrature point of the adjacent elements
        for j in 0..state.phi.len() {
            let c = state.conc_at_node(j);
            let mut mu_j = Vec::with_capacity(n);
            let mut grad_j = Vec::with_capacity(n);
            for k in 0..n {
                mu_j.push(mu_hard_sphere(k, &c, &radii)?);
                grad_j.push(mu_hard_sphere_gradient(k, &c, &radii)?);
            }
            mu.push(mu_j);
            grad.push(grad_j);
        }
        Ok(Some(NodalExcess { mu, grad }))
    }

    /// Residual vector, plus the banded Jacobian when `with_jacobian` is set.
    pub fn evaluate(
        &self,
        state: &DiscreteSolution,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<BandMatrix>)> {
        let p = self.problem;
        let n = p.n_species();
        let m = n + 1;
        let n_nodes = self.mesh.len();
        if state.phi.len() != n_nodes || state.conc.len() != n {
            return Err(PnpError::validation(
                "state",
                "shape does not match mesh and species",
            ));
        }
        if let Some(bad) = state.conc.iter().flatten().find(|c| !(**c > 0.0)) {
            return Err(PnpError::Domain(format!("nonpositive concentration {bad}")));
        }
        let excess = self.excess(state)?;
        let eps2 = p.epsilon * p.epsilon;
        let mut residual = vec![0.0; self.n_unknowns()];
        let bw = self.bandwidth();
        let mut jac = with_jacobian.then(|| BandMatrix::zeros(self.n_unknowns(), bw, bw));

        let mut local_r = vec![0.0; 2 * m];
        let mut local_j = vec![vec![0.0; 2 * m]; 2 * m];
        for (e, el) in self.elements.iter().enumerate() {
            local_r.iter_mut().for_each(|v| *v = 0.0);
            if with_jacobian {
                local_j.iter_mut().flatten().for_each(|v| *v = 0.0);
            }
            let dx = el.dx;
            let (phi_l, phi_r) = (state.phi[e], state.phi[e + 1]);
            let dphi = (phi_r - phi_l) / dx;
            let stiff = eps2 * el.area / (dx * dx);

            // Poisson rows
            local_r[0] = stiff * (phi_l - phi_r) - el.charge[0];
            local_r[m] = stiff * (phi_r - phi_l) - el.charge[1];
            for (k, sp) in p.species.iter().enumerate() {
                let z = sp.valence as f64;
                let (cl, cr) = (state.conc[k][e], state.conc[k][e + 1]);
                local_r[0] -= z * (el.mass[0][0] * cl + el.mass[0][1] * cr);
                local_r[m] -= z * (el.mass[1][0] * cl + el.mass[1][1] * cr);
                if with_jacobian {
                    local_j[0][1 + k] = -z * el.mass[0][0];
                    local_j[0][m + 1 + k] = -z * el.mass[0][1];
                    local_j[m][1 + k] = -z * el.mass[1][0];
                    local_j[m][m + 1 + k] = -z * el.mass[1][1];
                }
            }
            if with_jacobian {
                local_j[0][0] = stiff;
                local_j[0][m] = -stiff;
                local_j[m][0] = -stiff;
                local_j[m][m] = stiff;
            }

            // Nernst–Planck rows: G = D/dx [(z φ' + μex') ∫hc + c' ∫h]
            for (k, sp) in p.species.iter().enumerate() {
                let z = sp.valence as f64;
                let d = sp.diffusion;
                let (cl, cr) = (state.conc[k][e], state.conc[k][e + 1]);
                let c_int = el.weighted[0] * cl + el.weighted[1] * cr;
                let dmu = excess
                    .as_ref()
                    .map_or(0.0, |x| (x.mu[e + 1][k] - x.mu[e][k]) / dx);
                let drift = z * dphi + dmu;
                let g = d / dx * (drift * c_int + (cr - cl) / dx * el.area);
                let row_l = 1 + k;
                let row_r = m + 1 + k;
                local_r[row_l] -= g;
                local_r[row_r] += g;
                if with_jacobian {
                    let mut dg = vec![0.0; 2 * m];
                    dg[0] = -d / dx * z / dx * c_int;
                    dg[m] = d / dx * z / dx * c_int;
                    dg[1 + k] += d / dx * (drift * el.weighted[0] - el.area / dx);
                    dg[m + 1 + k] += d / dx * (drift * el.weighted[1] + el.area / dx);
                    if let Some(x) = excess.as_ref() {
                        for i in 0..n {
                            dg[1 + i] -= d / dx * c_int * x.grad[e][k][i] / dx;
                            dg[m + 1 + i] += d / dx * c_int * x.grad[e + 1][k][i] / dx;
                        }
                    }
                    for (col, v) in dg.iter().enumerate() {
                        local_j[row_l][col] -= v;
                        local_j[row_r][col] += v;
                    }
                }
            }

            // scatter into interior rows/columns
            let global = |local: usize| -> Option<usize> {
                let node = e + local / m;
                (node > 0 && node < n_nodes - 1).then(|| (node - 1) * m + local % m)
            };
            for a in 0..2 * m {
                let Some(row) = global(a) else { continue };
                residual[row] += local_r[a];
                if let Some(jac) = jac.as_mut() {
                    for b in 0..2 * m {
                        if let Some(col) = global(b) {
                            if local_j[a][b] != 0.0 {
                                jac.add(row, col, local_j[a][b]);
                            }
                        }
                    }
                }
            }
        }
        Ok((residual, jac))
    }

    /// Element means of `J_k = -D_k h (c_k' + c_k μ̄ex_k' + z_k c_k φ')` under the
    /// Galerkin discretization, `out[k][e]`. A converged solution makes them
    /// equal across elements up to the solver tolerance.
    pub fn conservative_fluxes(&self, state: &DiscreteSolution) -> Result<Vec<Vec<f64>>> {
        let p = self.problem;
        let excess = self.excess(state)?;
        let mut out = vec![Vec::with_capacity(self.elements.len()); p.n_species()];
        for (e, el) in self.elements.iter().enumerate() {
            let dx = el.dx;
            let dphi = (state.phi[e + 1] - state.phi[e]) / dx;
            for (k, sp) in p.species.iter().enumerate() {
                let (cl, cr) = (state.conc[k][e], state.conc[k][e + 1]);
                let c_int = el.weighted[0] * cl + el.weighted[1] * cr;
                let dmu = excess
                    .as_ref()
                    .map_or(0.0, |x| (x.mu[e + 1][k] - x.mu[e][k]) / dx);
                let drift = sp.valence as f64 * dphi + dmu;
                out[k].push(-sp.diffusion / dx * (drift * c_int + (cr - cl) / dx * el.area));
            }
        }
        Ok(out)
    }

    /// Interior unknowns in solver ordering.
    pub fn pack(&self, state: &DiscreteSolution) -> Vec<f64> {
        let n = self.problem.n_species();
        let mut x = Vec::with_capacity(self.n_unknowns());
        for j in 1..self.mesh.len() - 1 {
            x.push(state.phi[j]);
            for k in 0..n {
                x.push(state.conc[k][j]);
            }
        }
        x
    }

    /// Writes interior unknowns back into `state`.
    pub fn unpack(&self, x: &[f64], state: &mut DiscreteSolution) {
        let m = self.problem.n_species() + 1;
        for j in 1..self.mesh.len() - 1 {
            let base = (j - 1) * m;
            state.phi[j] = x[base];
            for k in 0..m - 1 {
                state.conc[k][j] = x[base + 1 + k];
            }
        }
    }

    /// Whether unknown `i` is a concentration.
    pub fn is_concentration(&self, i: usize) -> bool {
        !i.is_multiple_of(self.problem.n_species() + 1)
    }
}

/// Galerkin residual of the discrete equations at `state`.
pub fn assemble_residual(
    problem: &PnpProblem,
    mesh: &Mesh,
    state: &DiscreteSolution,
) -> Result<Vec<f64>> {
    Ok(Assembler::new(problem, mesh)?.evaluate(state, false)?.0)
}

/// Residual and banded Jacobian at `state`.
pub fn assemble(
    problem: &PnpProblem,
    mesh: &Mesh,
    state: &DiscreteSolution,
) -> Result<(Vec<f64>, BandMatrix)> {
    let (r, j) = Assembler::new(problem, mesh)?.evaluate(state, true)?;
    Ok((r, j.expect("jacobian requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::initial_guess;
    use crate::model::ChargeConvention;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_state_has_zero_residual() {
        let p = PnpProblem::binary(0.008, 0.008, 0.0, 0.0).unwrap();
        let mesh = Mesh::uniform(41).unwrap();
        let state = initial_guess(&p, &mesh);
        let r = assemble_residual(&p, &mesh, &state).unwrap();
        assert!(
            r.iter().all(|v| v.abs() < 1e-18),
            "{:?}",
            r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
    }

    /// Independent evaluation of every weak-form integral on a 5-node mesh
    /// with a dense-sampled 2-point rule applied element by element.
    #[test]
    fn five_node_residual_by_hand() {
        let mut p = PnpProblem::binary(0.5, 0.1, 3.0, 0.6).unwrap();
        p.epsilon = 0.3;
        p.charge.convention = ChargeConvention::UnitPlateau;
        p.charge.width = 0.05;
        let nodes = vec![0.0, 0.2, 0.45, 0.7, 1.0];
        let mesh = Mesh::new(nodes.clone()).unwrap();
        let phi = vec![3.0, 2.1, 1.4, 0.3, 0.0];
        let c1 = vec![0.5, 0.41, 0.3, 0.2, 0.1];
        let c2 = vec![0.5, 0.35, 0.6, 0.15, 0.1];
        let state = DiscreteSolution {
            mesh: mesh.clone(),
            phi: phi.clone(),
            conc: vec![c1.clone(), c2.clone()],
        };
        let r = assemble_residual(&p, &mesh, &state).unwrap();

        let g = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let lin = |v: &[f64], e: usize, t: f64| v[e] * (1.0 - t) + v[e + 1] * t;
        let mut expect = vec![0.0; 9];
        for j in 1..4 {
            let mut poisson = 0.0;
            let mut np = [0.0; 2];
            for e in [j - 1, j] {
                let dx = nodes[e + 1] - nodes[e];
                let dv = if e == j - 1 { 1.0 / dx } else { -1.0 / dx };
                for &t in &g {
                    let x = nodes[e] + t * dx;
                    let h = p.geometry.area(x).unwrap();
                    let v = if e == j - 1 { t } else { 1.0 - t };
                    let w = 0.5 * dx;
                    let dphi = (phi[e + 1] - phi[e]) / dx;
                    let rho = lin(&c1, e, t) - lin(&c2, e, t) + p.charge.density(x);
                    poisson += w * (p.epsilon.powi(2) * h * dphi * dv - h * rho * v);
                    for (k, (c, z)) in [(&c1, 1.0), (&c2, -1.0)].into_iter().enumerate() {
                        let dc = (c[e + 1] - c[e]) / dx;
                        np[k] += w * h * (z * lin(c, e, t) * dphi + dc) * dv;
                    }
                }
            }
            expect[(j - 1) * 3] = poisson;
            expect[(j - 1) * 3 + 1] = np[0];
            expect[(j - 1) * 3 + 2] = np[1];
        }
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    fn random_state(p: &PnpProblem, mesh: &Mesh, rng: &mut ChaCha8Rng) -> DiscreteSolution {
        let mut s = initial_guess(p, mesh);
        for j in 1..mesh.len() - 1 {
            s.phi[j] += rng.gen_range(-1.0..1.0);
            for c in s.conc.iter_mut() {
                c[j] *= rng.gen_range(0.5..2.0);
            }
        }
        s
    }

    fn check_jacobian(p: &PnpProblem, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(vec![0.0, 0.1, 0.3, 0.34, 0.5, 0.66, 0.7, 0.9, 1.0]).unwrap();
        let state = random_state(p, &mesh, &mut rng);
        let asm = Assembler::new(p, &mesh).unwrap();
        let (_, jac) = asm.evaluate(&state, true).unwrap();
        let jac = jac.unwrap();
        let x0 = asm.pack(&state);
        let mut max_err = 0.0f64;
        for col in 0..x0.len() {
            let step = 1e-7 * x0[col].abs().max(1e-3);
            let mut plus = state.clone();
            let mut minus = state.clone();
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[col] += step;
            xm[col] -= step;
            asm.unpack(&xp, &mut plus);
            asm.unpack(&xm, &mut minus);
            let rp = asm.evaluate(&plus, false).unwrap().0;
            let rm = asm.evaluate(&minus, false).unwrap().0;
            for row in 0..x0.len() {
                let fd = (rp[row] - rm[row]) / (2.0 * step);
                let an = jac.get(row, col);
                let scale = an.abs().max(fd.abs());
                if scale > 1e-9 {
                    max_err = max_err.max((an - fd).abs() / scale);
                } else {
                    assert!((an - fd).abs() < 1e-9);
                }
            }
        }
        assert!(max_err < 1e-6, "max relative jacobian error {max_err}");
    }

    #[test]
    fn jacobian_matches_central_differences_ideal() {
        let mut p = PnpProblem::binary(0.5, 0.1, 5.0, 0.8).unwrap();
        p.epsilon = 0.05;
        check_jacobian(&p, 1);
    }

    #[test]
    fn jacobian_matches_central_differences_hard_sphere() {
        let mut p = PnpProblem::binary(0.5, 0.1, -4.0, 0.3)
            .unwrap()
            .with_radii(&[0.2, 0.4]);
        p.epsilon = 0.05;
        p.excess = ExcessModel::HardSphere;
        check_jacobian(&p, 2);
    }

    #[test]
    fn perturbation_is_local() {
        let p = PnpProblem::binary(0.008, 0.001, 10.0, 0.1).unwrap();
        let mesh = Mesh::uniform(11).unwrap();
        let state = initial_guess(&p, &mesh);
        let base = assemble_residual(&p, &mesh, &state).unwrap();
        let mut moved = state.clone();
        moved.phi[5] += 0.1;
        let r = assemble_residual(&p, &mesh, &moved).unwrap();
        for node in 1..10 {
            let changed = (0..3).any(|v| r[(node - 1) * 3 + v] != base[(node - 1) * 3 + v]);
            assert_eq!(changed, (4..=6).contains(&node), "node {node}");
        }
    }

    #[test]
    fn dense_hard_sphere_state_is_rejected() {
        let mut p = PnpProblem::binary(0.5, 0.1, 0.0, 0.0)
            .unwrap()
            .with_radii(&[0.9, 0.9]);
        p.excess = ExcessModel::HardSphere;
        let mesh = Mesh::uniform(5).unwrap();
        let state = initial_guess(&p, &mesh);
        assert!(matches!(
            assemble_residual(&p, &mesh, &state),
            Err(PnpError::Domain(_))
        ));
    }
}
