//! Parameter sweeps over the charge `q0 = 2 Q0` and the voltage `V`, the
//! flux-ratio surface on a `(q0, V)` grid, region labels, `λ_k = 1` contours
//! and their turning points.

mod contour;

pub use contour::{
    detect_saddle_nodes, trace_level, trace_unity_contours, BifurcationPoint, Contour, ContourSet,
    Lattice,
};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{flux_ratio, RegimeLabel};
use crate::error::{PnpError, Result};
use crate::fem::{electrochemical_profile, DiscreteSolution};
use crate::mmpde::{adapt_and_solve_from, AdaptControls, AdaptOutcome};
use crate::model::PnpProblem;
use crate::par::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Linear,
    Log,
    /// Half the points log-spaced up to `switch`, the rest linear from there.
    Hybrid {
        switch: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Axis {
    pub fn linear(min: f64, max: f64, count: usize) -> Self {
        Self {
            min,
            max,
            count,
            spacing: Spacing::Linear,
        }
    }

    pub fn log(min: f64, max: f64, count: usize) -> Self {
        Self {
            min,
            max,
            count,
            spacing: Spacing::Log,
        }
    }

    pub fn hybrid(min: f64, switch: f64, max: f64, count: usize) -> Self {
        Self {
            min,
            max,
            count,
            spacing: Spacing::Hybrid { switch },
        }
    }

    /// Increasing sample values, both ends included.
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(PnpError::validation("axis", "count must be >= 2"));
        }
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(PnpError::validation(
                "axis",
                format!("empty range [{}, {}]", self.min, self.max),
            ));
        }
        let lin = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        };
        let mut out = match self.spacing {
            Spacing::Linear => lin(self.min, self.max, self.count),
            Spacing::Log => {
                if !(self.min > 0.0) {
                    return Err(PnpError::validation(
                        "axis",
                        "log spacing needs a positive minimum",
                    ));
                }
                lin(self.min.ln(), self.max.ln(), self.count)
                    .into_iter()
                    .map(f64::exp)
                    .collect()
            }
            Spacing::Hybrid { switch } => {
                if !(self.min > 0.0 && switch > self.min && switch < self.max) || self.count < 3 {
                    return Err(PnpError::validation(
                        "axis",
                        "hybrid spacing needs 0 < min < switch < max and at least three points",
                    ));
                }
                let n_log = self.count / 2;
                let n_lin = self.count - n_log;
                let step = (switch / self.min).ln() / n_log as f64;
                let mut v: Vec<f64> = (0..n_log)
                    .map(|i| self.min * (step * i as f64).exp())
                    .collect();
                v.extend(lin(switch, self.max, n_lin));
                v
            }
        };
        // pin the ends exactly
        out[0] = self.min;
        *out.last_mut().unwrap() = self.max;
        Ok(out)
    }
}

/// A `(q0, V)` grid together with the problem every point is solved for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q0: Axis,
    pub v: Axis,
    pub template: PnpProblem,
    pub controls: AdaptControls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "kebab-case")]
pub enum PointStatus {
    Converged,
    Failed(String),
}

/// Fluxes and flux ratios at one `(q0, V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub q0: f64,
    pub v: f64,
    /// Conserved fluxes of the adapted solution; empty on failure.
    pub fluxes: Vec<f64>,
    pub ratios: Vec<f64>,
    pub status: PointStatus,
}

impl RatioPoint {
    fn failed(q0: f64, v: f64, e: &PnpError) -> Self {
        Self {
            q0,
            v,
            fluxes: Vec::new(),
            ratios: Vec::new(),
            status: PointStatus::Failed(e.to_string()),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == PointStatus::Converged
    }

    /// `λ_k`, if the point converged.
    pub fn ratio(&self, k: usize) -> Option<f64> {
        self.converged().then(|| self.ratios[k])
    }
}

/// Solves the template at `(q0, V)`, warm-started from `guess` if given.
pub fn solve_at(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: f64,
    v: f64,
    guess: Option<&DiscreteSolution>,
) -> Result<AdaptOutcome> {
    let problem = template.with_q0(q0).with_voltage(v);
    adapt_and_solve_from(&problem, controls, guess)
}

/// Fluxes at `Q0 = 0`, the denominators of the flux ratios at voltage `v`.
pub fn reference_fluxes(
    template: &PnpProblem,
    controls: &AdaptControls,
    v: f64,
) -> Result<Vec<f64>> {
    Ok(solve_at(template, controls, 0.0, v, None)?
        .fluxes
        .conservative)
}

fn ratio_point(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: f64,
    v: f64,
    reference: &[f64],
    guess: Option<&DiscreteSolution>,
) -> (RatioPoint, Option<DiscreteSolution>) {
    let out = solve_at(template, controls, q0, v, guess).and_then(|out| {
        let ratios = out
            .fluxes
            .conservative
            .iter()
            .zip(reference)
            .map(|(j, j0)| flux_ratio(*j, *j0))
            .collect::<Result<Vec<_>>>()?;
        Ok((out, ratios))
    });
    match out {
        Ok((out, ratios)) => (
            RatioPoint {
                q0,
                v,
                fluxes: out.fluxes.conservative,
                ratios,
                status: PointStatus::Converged,
            },
            Some(out.solution),
        ),
        Err(e) => (RatioPoint::failed(q0, v, &e), None),
    }
}

/// Fresh ratio solve at one point.
pub fn ratios_at(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: f64,
    v: f64,
) -> Result<Vec<f64>> {
    let reference = reference_fluxes(template, controls, v)?;
    let (point, _) = ratio_point(template, controls, q0, v, &reference, None);
    match point.status {
        PointStatus::Converged => Ok(point.ratios),
        PointStatus::Failed(msg) => Err(PnpError::Domain(msg)),
    }
}

fn check_sorted(name: &'static str, values: &[f64]) -> Result<()> {
    if values.is_empty() || values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PnpError::validation(
            name,
            "must be nonempty and strictly increasing",
        ));
    }
    Ok(())
}

fn sweep_row(
    template: &PnpProblem,
    controls: &AdaptControls,
    v: f64,
    q0_list: &[f64],
    reference: &Result<Vec<f64>>,
) -> Vec<RatioPoint> {
    let reference = match reference {
        Ok(r) => r,
        Err(e) => {
            return q0_list
                .iter()
                .map(|&q| RatioPoint::failed(q, v, e))
                .collect()
        }
    };
    let mut guess: Option<DiscreteSolution> = None;
    let mut out = Vec::with_capacity(q0_list.len());
    for &q0 in q0_list {
        let (point, sol) = ratio_point(template, controls, q0, v, reference, guess.as_ref());
        if sol.is_some() {
            guess = sol;
        }
        out.push(point);
    }
    out
}

/// Ratios along increasing `q0` at fixed `V`, each solve warm-started from the previous one.
pub fn sweep_q(
    template: &PnpProblem,
    controls: &AdaptControls,
    v: f64,
    q0_list: &[f64],
) -> Result<Vec<RatioPoint>> {
    check_sorted("q0 list", q0_list)?;
    let reference = reference_fluxes(template, controls, v);
    Ok(sweep_row(template, controls, v, q0_list, &reference))
}

/// Ratios along increasing `V` at fixed `q0`; every voltage has its own reference solve.
pub fn sweep_v(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: f64,
    v_list: &[f64],
    workers: usize,
) -> Result<Vec<RatioPoint>> {
    check_sorted("V list", v_list)?;
    Ok(map_indexed(
        v_list,
        workers,
        |_, &v| match reference_fluxes(template, controls, v) {
            Ok(reference) => ratio_point(template, controls, q0, v, &reference, None).0,
            Err(e) => RatioPoint::failed(q0, v, &e),
        },
    ))
}

/// Flux ratios on a `(q0, V)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSurface {
    pub q0: Vec<f64>,
    pub v: Vec<f64>,
    /// Reference fluxes per `V` row; `None` where that solve failed.
    pub reference: Vec<Option<Vec<f64>>>,
    /// `points[iv][iq]`
    pub points: Vec<Vec<RatioPoint>>,
}

impl RatioSurface {
    pub fn point(&self, iv: usize, iq: usize) -> &RatioPoint {
        &self.points[iv][iq]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RatioPoint> {
        self.points.iter().flatten()
    }

    pub fn failures(&self) -> usize {
        self.iter().filter(|p| !p.converged()).count()
    }

    /// `λ_k - 1` on the grid, unconverged points left out.
    pub fn lattice(&self, k: usize) -> Lattice {
        Lattice {
            q0: self.q0.clone(),
            v: self.v.clone(),
            values: self
                .points
                .iter()
                .map(|row| row.iter().map(|p| p.ratio(k).map(|l| l - 1.0)).collect())
                .collect(),
        }
    }
}

/// Evaluates the grid row by row: the reference solve once per `V`, then
/// increasing `q0` with warm starts. Rows run concurrently; the result does
/// not depend on `workers`.
pub fn build_surface(grid: &GridSpec, workers: usize) -> Result<RatioSurface> {
    surface_on(
        &grid.template,
        &grid.controls,
        &grid.q0.values()?,
        &grid.v.values()?,
        workers,
    )
}

/// [`build_surface`] on explicit sample values.
pub fn surface_on(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: &[f64],
    v: &[f64],
    workers: usize,
) -> Result<RatioSurface> {
    template.validate()?;
    check_sorted("q0 values", q0)?;
    check_sorted("V values", v)?;
    if !(q0[0] > 0.0) {
        return Err(PnpError::validation("q0 axis", "the surface needs q0 > 0"));
    }
    let rows = map_indexed(v, workers, |_, &vv| {
        let reference = reference_fluxes(template, controls, vv);
        let points = sweep_row(template, controls, vv, q0, &reference);
        (reference.ok(), points)
    });
    let (reference, points) = rows.into_iter().unzip();
    Ok(RatioSurface {
        q0: q0.to_vec(),
        v: v.to_vec(),
        reference,
        points,
    })
}

/// Region labels with anomalies flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    /// `labels[iv][iq]`; `None` for failed points, anomalies and exact boundaries.
    pub labels: Vec<Vec<Option<RegimeLabel>>>,
    /// Grid indices `(iv, iq)` of converged points violating `0 < λ_1 < λ_2`.
    pub anomalies: Vec<(usize, usize)>,
}

pub fn classify_regions(surface: &RatioSurface) -> RegionMap {
    let mut anomalies = Vec::new();
    let labels = surface
        .points
        .iter()
        .enumerate()
        .map(|(iv, row)| {
            row.iter()
                .enumerate()
                .map(|(iq, p)| {
                    let (l1, l2) = (p.ratio(0)?, p.ratio(1)?);
                    if !(l1 > 0.0 && l1 < l2) {
                        anomalies.push((iv, iq));
                        return None;
                    }
                    RegimeLabel::from_ratios(l1, l2)
                })
                .collect()
        })
        .collect();
    RegionMap { labels, anomalies }
}

/// Internal state of one adapted solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    /// `conc[k][j]`
    pub conc: Vec<Vec<f64>>,
    /// `mu[k][j]`
    pub mu: Vec<Vec<f64>>,
    /// `element_fluxes[k][e]`
    pub element_fluxes: Vec<Vec<f64>>,
    /// Element-length weighted mean flux per species.
    pub fluxes: Vec<f64>,
    pub conserved_fluxes: Vec<f64>,
    pub current: f64,
    pub nonuniformity: Vec<f64>,
    pub newton_iterations: usize,
}

impl Profiles {
    pub fn from_outcome(problem: &PnpProblem, out: &AdaptOutcome) -> Result<Self> {
        Ok(Self {
            x: out.mesh.nodes().to_vec(),
            phi: out.solution.phi.clone(),
            conc: out.solution.conc.clone(),
            mu: electrochemical_profile(problem, &out.solution)?,
            element_fluxes: out.fluxes.per_element.clone(),
            fluxes: out.fluxes.representative.clone(),
            conserved_fluxes: out.fluxes.conservative.clone(),
            current: out.fluxes.current,
            nonuniformity: out.fluxes.nonuniformity.clone(),
            newton_iterations: out.history.iter().map(|h| h.newton_iterations).sum(),
        })
    }
}

pub fn internal_profiles(
    template: &PnpProblem,
    controls: &AdaptControls,
    q0: f64,
    v: f64,
) -> Result<Profiles> {
    let problem = template.with_q0(q0).with_voltage(v);
    let out = adapt_and_solve_from(&problem, controls, None)?;
    Profiles::from_outcome(&problem, &out)
}
