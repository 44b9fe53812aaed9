//! Run configuration: a TOML document (or the same schema in JSON) with
//! `problem`, `solver` and `output` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pnp_core::fem::{ContinuationControls, SolverControls};
use pnp_core::mmpde::{AdaptControls, FlowControls, MonitorConfig, MonitorVariant};
use pnp_core::model::{
    BoundaryConditions, ChannelGeometry, ChargeConvention, ExcessModel, IonSpecies,
    PermanentCharge, PnpProblem, DEFAULT_CHARGE_WIDTH, DEFAULT_EPSILON,
};
use pnp_core::scan::{Axis, Spacing};
use serde::{Deserialize, Serialize};

/// Raised for anything wrong with the user's input, as opposed to solver failures.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

/// A single value, an explicit list, or a generated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    List(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingName {
    #[default]
    Linear,
    Log,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: SpacingName,
    /// Where a hybrid axis turns from log to linear spacing.
    pub switch: Option<f64>,
}

impl Param {
    pub fn is_point(&self) -> bool {
        matches!(self, Param::Value(_))
    }

    pub fn values(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        let out = match self {
            Param::Value(v) => vec![*v],
            Param::List(v) => v.clone(),
            Param::Range(r) => {
                let spacing = match (r.spacing, r.switch) {
                    (SpacingName::Linear, _) => Spacing::Linear,
                    (SpacingName::Log, _) => Spacing::Log,
                    (SpacingName::Hybrid, Some(switch)) => Spacing::Hybrid { switch },
                    (SpacingName::Hybrid, None) => {
                        return Err(invalid(format!("{name}: hybrid spacing needs `switch`")))
                    }
                };
                let axis = Axis {
                    min: r.min,
                    max: r.max,
                    count: r.count,
                    spacing,
                };
                axis.values().map_err(|e| invalid(format!("{name}: {e}")))?
            }
        };
        if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "{name}: values must be finite and nonempty"
            )));
        }
        if out.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid(format!(
                "{name}: values must be strictly increasing"
            )));
        }
        Ok(out)
    }
}

/// Concentrations given once for every species or per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Concentrations {
    Shared(f64),
    PerSpecies(Vec<f64>),
}

impl Concentrations {
    fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            Concentrations::Shared(c) => vec![*c; n],
            Concentrations::PerSpecies(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionName {
    /// Neck plateau `4 Q0`.
    #[default]
    #[serde(alias = "paper-verbatim")]
    Paper,
    /// Neck plateau `2 Q0`.
    UnitPlateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorName {
    Optimal,
    #[default]
    #[serde(alias = "boundary-weighted")]
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExcessName {
    #[default]
    Ideal,
    HardSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub valence: i32,
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default)]
    pub radius: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Left-end concentrations `L`.
    pub left: Concentrations,
    /// Right-end concentrations `R`.
    pub right: Concentrations,
    pub voltage: Param,
    /// `q0 = 2 Q0`
    pub q0: Param,
    pub epsilon: f64,
    pub n_nodes: usize,
    pub excess: ExcessName,
    /// Overrides the species radii (needed for the hard-sphere model).
    pub radii: Option<Vec<f64>>,
    /// Defaults to a cation and an anion with unit diffusion.
    pub species: Option<Vec<SpeciesConfig>>,
    pub charge_convention: ConventionName,
    pub charge_width: f64,
    /// Half-width of the smoothed kinks; absent for the exact profile.
    pub kink_smoothing: Option<f64>,
    pub monitor: MonitorName,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            left: Concentrations::Shared(0.008),
            right: Concentrations::Shared(0.001),
            voltage: Param::Value(10.0),
            q0: Param::Value(1e-4),
            epsilon: DEFAULT_EPSILON,
            n_nodes: 301,
            excess: ExcessName::Ideal,
            radii: None,
            species: None,
            charge_convention: ConventionName::Paper,
            charge_width: DEFAULT_CHARGE_WIDTH,
            kink_smoothing: None,
            monitor: MonitorName::Boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub outer_iterations: usize,
    /// End time of the mesh gradient flow in each adaptation.
    pub flow_end: f64,
    pub continuation: bool,
    pub charge_steps: usize,
    pub voltage_steps: usize,
    pub max_subdivisions: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let adapt = AdaptControls::default();
        let cont = ContinuationControls::default();
        Self {
            tolerance: adapt.solver.tolerance,
            step_tolerance: adapt.solver.step_tolerance,
            max_iterations: adapt.solver.max_iterations,
            outer_iterations: adapt.outer_iterations,
            flow_end: adapt.flow.t_end,
            continuation: cont.enabled,
            charge_steps: cont.charge_steps,
            voltage_steps: cont.voltage_steps,
            max_subdivisions: cont.max_subdivisions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also solve at `Q0 = 0` so that `solve` can report flux ratios.
    pub reference: bool,
    /// `|λ_k - 1|` accepted when refining contour crossings.
    pub contour_tolerance: f64,
    /// Threads for grid work; all available cores when absent.
    pub workers: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("pnpflux-out"),
            reference: true,
            contour_tolerance: 1e-3,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, json: bool) -> anyhow::Result<Self> {
        if json {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    /// The problem at the first voltage and charge of the configured ranges.
    pub fn template(&self) -> anyhow::Result<PnpProblem> {
        let p = &self.problem;
        let species: Vec<IonSpecies> = match &p.species {
            Some(list) => list
                .iter()
                .map(|s| IonSpecies::new(s.valence, s.diffusion, s.radius))
                .collect::<pnp_core::Result<_>>()
                .map_err(|e| invalid(e.to_string()))?,
            None => vec![IonSpecies::cation(), IonSpecies::anion()],
        };
        let n = species.len();
        let left = p.left.expand(n);
        let right = p.right.expand(n);
        if left.len() != n || right.len() != n {
            bail!(invalid(format!(
                "problem.left/right: expected {n} concentrations, got {} and {}",
                left.len(),
                right.len()
            )));
        }
        let valences: Vec<i32> = species.iter().map(|s| s.valence).collect();
        let v0 = p.voltage.values("problem.voltage")?[0];
        let q0 = p.q0.values("problem.q0")?[0];
        let build = || -> pnp_core::Result<PnpProblem> {
            let bc = BoundaryConditions::new(v0, left.clone(), right.clone(), &valences)?;
            let geometry = match p.kink_smoothing {
                None => ChannelGeometry::exact(),
                Some(w) => ChannelGeometry::regularized(w)?,
            };
            let convention = match p.charge_convention {
                ConventionName::Paper => ChargeConvention::PaperVerbatim,
                ConventionName::UnitPlateau => ChargeConvention::UnitPlateau,
            };
            let charge = PermanentCharge::new(0.5 * q0, p.charge_width, convention)?;
            let excess = match p.excess {
                ExcessName::Ideal => ExcessModel::Ideal,
                ExcessName::HardSphere => ExcessModel::HardSphere,
            };
            let mut problem =
                PnpProblem::new(p.epsilon, species.clone(), geometry, charge, bc, excess)?;
            if let Some(r) = &p.radii {
                if r.len() != n {
                    return Err(pnp_core::PnpError::Validation {
                        name: "radii",
                        reason: format!("expected {n} radii, got {}", r.len()),
                    });
                }
                problem = problem.with_radii(r);
                problem.validate()?;
            }
            Ok(problem)
        };
        let problem = build().map_err(|e| invalid(e.to_string()))?;
        if let Some(bad) = p.q0.values("problem.q0")?.iter().find(|q| !(**q >= 0.0)) {
            bail!(invalid(format!("problem.q0: {bad} is negative")));
        }
        Ok(problem)
    }

    pub fn controls(&self) -> anyhow::Result<AdaptControls> {
        let s = &self.solver;
        let defaults = AdaptControls::default();
        let controls = AdaptControls {
            n_nodes: self.problem.n_nodes,
            outer_iterations: s.outer_iterations,
            monitor: MonitorConfig::new(match self.problem.monitor {
                MonitorName::Optimal => MonitorVariant::Optimal,
                MonitorName::Boundary => MonitorVariant::BoundaryWeighted,
            }),
            flow: FlowControls {
                t_end: s.flow_end,
                ..defaults.flow
            },
            solver: SolverControls {
                tolerance: s.tolerance,
                step_tolerance: s.step_tolerance,
                max_iterations: s.max_iterations,
                continuation: ContinuationControls {
                    enabled: s.continuation,
                    charge_steps: s.charge_steps,
                    voltage_steps: s.voltage_steps,
                    max_subdivisions: s.max_subdivisions,
                    ..ContinuationControls::default()
                },
                ..defaults.solver
            },
            ..defaults
        };
        if controls.n_nodes < 5 {
            bail!(invalid("problem.n_nodes: at least five nodes are required"));
        }
        if controls.outer_iterations == 0 {
            bail!(invalid("solver.outer_iterations: must be >= 1"));
        }
        if !(s.flow_end > 0.0) {
            bail!(invalid("solver.flow_end: must be > 0"));
        }
        controls
            .solver
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        Ok(controls)
    }
}
