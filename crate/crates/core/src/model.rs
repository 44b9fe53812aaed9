//! Dimensionless quasi-one-dimensional PNP problem data: ion species, channel
//! shape, permanent charge, boundary data and electrochemical potentials.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{PnpError, Result};
use crate::quadrature::integrate_adaptive;

/// Left end of the channel neck.
pub const NECK_START: f64 = 1.0 / 3.0;
/// Right end of the channel neck.
pub const NECK_END: f64 = 2.0 / 3.0;

/// Default tanh width of the regularized permanent charge.
pub const DEFAULT_CHARGE_WIDTH: f64 = 1.0 / 800.0;
/// Default half-width of the regularized cross-section transition bands.
pub const DEFAULT_AREA_WIDTH: f64 = 1e-7;

const RESISTANCE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub valence: i32,
    pub diffusion: f64,
    /// Dimensionless hard-sphere radius; zero for point charges.
    pub radius: f64,
}

impl IonSpecies {
    pub fn new(valence: i32, diffusion: f64, radius: f64) -> Result<Self> {
        if valence == 0 {
            return Err(PnpError::validation("valence", "must be nonzero"));
        }
        if !(diffusion > 0.0) {
            return Err(PnpError::validation(
                "diffusion",
                format!("{diffusion} is not > 0"),
            ));
        }
        if !(radius >= 0.0) {
            return Err(PnpError::validation(
                "radius",
                format!("{radius} is negative"),
            ));
        }
        Ok(Self {
            valence,
            diffusion,
            radius,
        })
    }

    pub fn cation() -> Self {
        Self {
            valence: 1,
            diffusion: 1.0,
            radius: 0.0,
        }
    }

    pub fn anion() -> Self {
        Self {
            valence: -1,
            diffusion: 1.0,
            radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryVariant {
    /// Continuous piecewise-linear cross-section.
    Exact,
    /// Five-branch form with linear transition bands of half-width `delta_x`
    /// around the neck edges.
    Regularized { delta_x: f64 },
}

/// Channel cross-section area profile `h(x)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    pub variant: GeometryVariant,
}

impl Default for ChannelGeometry {
    fn default() -> Self {
        Self::exact()
    }
}

fn area_outer_left(x: f64) -> f64 {
    3.0 * (0.4 * x + 20.0 * (NECK_START - x))
}

fn area_neck(x: f64) -> f64 {
    3.0 * (0.4 * (x - NECK_START) + 0.4 * (NECK_END - x))
}

fn area_outer_right(x: f64) -> f64 {
    3.0 * (20.0 * (x - NECK_END) + 0.4 * (1.0 - x))
}

impl ChannelGeometry {
    pub fn exact() -> Self {
        Self {
            variant: GeometryVariant::Exact,
        }
    }

    pub fn regularized(delta_x: f64) -> Result<Self> {
        if !(delta_x > 0.0 && delta_x < (NECK_END - NECK_START) / 2.0) {
            return Err(PnpError::validation(
                "delta_x",
                format!("{delta_x} must lie in (0, 1/6)"),
            ));
        }
        Ok(Self {
            variant: GeometryVariant::Regularized { delta_x },
        })
    }

    /// Cross-section area `h(x)`.
    pub fn area(&self, x: f64) -> Result<f64> {
        match self.variant {
            GeometryVariant::Exact => Ok(if x < NECK_START {
                area_outer_left(x)
            } else if x < NECK_END {
                area_neck(x)
            } else {
                area_outer_right(x)
            }),
            GeometryVariant::Regularized { delta_x } => {
                let slope = 14.7 / delta_x;
                let h = if x < NECK_START - delta_x {
                    area_outer_left(x)
                } else if x < NECK_START + delta_x {
                    slope * (x - NECK_START - delta_x) + 0.4
                } else if x < NECK_END - delta_x {
                    area_neck(x)
                } else if x < NECK_END + delta_x {
                    slope * (x - NECK_END + delta_x) + 0.4
                } else {
                    area_outer_right(x)
                };
                if h > 0.0 {
                    Ok(h)
                } else {
                    Err(PnpError::Domain(format!(
                        "regularized cross-section is nonpositive ({h:.4e}) at x = {x}"
                    )))
                }
            }
        }
    }

    /// Points where the profile changes formula.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.variant {
            GeometryVariant::Exact => vec![NECK_START, NECK_END],
            GeometryVariant::Regularized { delta_x } => vec![
                NECK_START - delta_x,
                NECK_START + delta_x,
                NECK_END - delta_x,
                NECK_END + delta_x,
            ],
        }
    }

    /// `H(x) = ∫_0^x 1/h(s) ds`, integrated panel-wise between breakpoints.
    pub fn cumulative_resistance(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(PnpError::Domain(format!("coordinate {x} outside [0, 1]")));
        }
        let mut edges = vec![0.0];
        edges.extend(self.breakpoints().into_iter().filter(|&b| b > 0.0 && b < x));
        edges.push(x);
        let mut inverse = |s: f64| self.area(s).map(|h| 1.0 / h);
        let mut total = 0.0;
        for w in edges.windows(2) {
            total += integrate_adaptive(&mut inverse, w[0], w[1], RESISTANCE_REL_TOL)?;
        }
        Ok(total)
    }

    /// `H(1)` together with `α = H(1/3)/H(1)` and `β = H(2/3)/H(1)`.
    pub fn moments(&self) -> Result<GeometryMoments> {
        let total = self.cumulative_resistance(1.0)?;
        let alpha = self.cumulative_resistance(NECK_START)? / total;
        let beta = self.cumulative_resistance(NECK_END)? / total;
        GeometryMoments::new(total, alpha, beta)
    }
}

/// Resistance moments of the channel shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryMoments {
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GeometryMoments {
    pub fn new(total: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(total > 0.0) {
            return Err(PnpError::validation("H(1)", format!("{total} is not > 0")));
        }
        if !(0.0 < alpha && alpha < beta && beta < 1.0) {
            return Err(PnpError::validation(
                "alpha/beta",
                format!("need 0 < alpha < beta < 1, got {alpha}, {beta}"),
            ));
        }
        Ok(Self { total, alpha, beta })
    }

    /// Moments of the default channel shape.
    pub fn default_channel() -> Self {
        ChannelGeometry::exact()
            .moments()
            .expect("default channel shape has positive area")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeConvention {
    /// `2 Q0 [tanh((x-1/3)/δ) - tanh((x-2/3)/δ)]`, plateau `4 Q0`.
    PaperVerbatim,
    /// `Q0 [tanh((x-1/3)/δ) - tanh((x-2/3)/δ)]`, plateau `2 Q0`.
    UnitPlateau,
}

/// Smoothed permanent charge supported on the channel neck.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermanentCharge {
    /// Amplitude `Q0`; the figures' axis variable is `q0 = 2 Q0`.
    pub amplitude: f64,
    pub width: f64,
    pub convention: ChargeConvention,
}

impl PermanentCharge {
    pub fn new(amplitude: f64, width: f64, convention: ChargeConvention) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(PnpError::validation(
                "Q0",
                format!("{amplitude} must be finite and nonnegative"),
            ));
        }
        if !(width > 0.0) {
            return Err(PnpError::validation("delta", format!("{width} is not > 0")));
        }
        Ok(Self {
            amplitude,
            width,
            convention,
        })
    }

    /// Charge with `Q0 = q0 / 2` and the default width and convention.
    pub fn from_q0(q0: f64) -> Result<Self> {
        Self::new(
            0.5 * q0,
            DEFAULT_CHARGE_WIDTH,
            ChargeConvention::PaperVerbatim,
        )
    }

    pub fn none() -> Self {
        Self {
            amplitude: 0.0,
            width: DEFAULT_CHARGE_WIDTH,
            convention: ChargeConvention::PaperVerbatim,
        }
    }

    pub fn q0(&self) -> f64 {
        2.0 * self.amplitude
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { amplitude, ..*self }
    }

    fn prefactor(&self) -> f64 {
        match self.convention {
            ChargeConvention::PaperVerbatim => 2.0 * self.amplitude,
            ChargeConvention::UnitPlateau => self.amplitude,
        }
    }

    /// Value on the neck away from the smoothed edges.
    pub fn plateau(&self) -> f64 {
        2.0 * self.prefactor()
    }

    pub fn density(&self, x: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.prefactor()
            * (((x - NECK_START) / self.width).tanh() - ((x - NECK_END) / self.width).tanh())
    }
}

/// Dirichlet data: potential `V` and concentrations on the left end, zero
/// potential and concentrations on the right end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub voltage: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

const NEUTRALITY_TOL: f64 = 1e-12;

impl BoundaryConditions {
    pub fn new(voltage: f64, left: Vec<f64>, right: Vec<f64>, valences: &[i32]) -> Result<Self> {
        let bc = Self {
            voltage,
            left,
            right,
        };
        bc.validate(valences)?;
        Ok(bc)
    }

    pub fn validate(&self, valences: &[i32]) -> Result<()> {
        if !self.voltage.is_finite() {
            return Err(PnpError::validation("V", "must be finite"));
        }
        if self.left.len() != valences.len() || self.right.len() != valences.len() {
            return Err(PnpError::validation(
                "concentrations",
                format!(
                    "expected {} values per side, got {} and {}",
                    valences.len(),
                    self.left.len(),
                    self.right.len()
                ),
            ));
        }
        for (side, values) in [("L", &self.left), ("R", &self.right)] {
            if let Some(bad) = values.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
                return Err(PnpError::validation(
                    "concentrations",
                    format!("{side} contains nonpositive value {bad}"),
                ));
            }
            let charge: f64 = values
                .iter()
                .zip(valences)
                .map(|(c, z)| *z as f64 * c)
                .sum();
            let scale: f64 = values
                .iter()
                .zip(valences)
                .map(|(c, z)| (*z as f64 * c).abs())
                .sum();
            if charge.abs() > NEUTRALITY_TOL * scale {
                return Err(PnpError::validation(
                    "electroneutrality",
                    format!("{side} side carries net charge {charge:.3e}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcessModel {
    Ideal,
    HardSphere,
}

/// A complete dimensionless problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpProblem {
    pub epsilon: f64,
    pub species: Vec<IonSpecies>,
    pub geometry: ChannelGeometry,
    pub charge: PermanentCharge,
    pub bc: BoundaryConditions,
    pub excess: ExcessModel,
}

pub const DEFAULT_EPSILON: f64 = 1e-5;

impl PnpProblem {
    pub fn new(
        epsilon: f64,
        species: Vec<IonSpecies>,
        geometry: ChannelGeometry,
        charge: PermanentCharge,
        bc: BoundaryConditions,
        excess: ExcessModel,
    ) -> Result<Self> {
        let problem = Self {
            epsilon,
            species,
            geometry,
            charge,
            bc,
            excess,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Binary salt with `z = ±1`, unit diffusion, `L_1 = L_2 = l`, `R_1 = R_2 = r`
    /// on the default channel with `ε = 1e-5`.
    pub fn binary(l: f64, r: f64, voltage: f64, q0: f64) -> Result<Self> {
        let species = vec![IonSpecies::cation(), IonSpecies::anion()];
        let bc = BoundaryConditions::new(voltage, vec![l, l], vec![r, r], &[1, -1])?;
        Self::new(
            DEFAULT_EPSILON,
            species,
            ChannelGeometry::exact(),
            PermanentCharge::from_q0(q0)?,
            bc,
            ExcessModel::Ideal,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(PnpError::validation(
                "epsilon",
                format!("{} is not > 0", self.epsilon),
            ));
        }
        if self.species.len() < 2 {
            return Err(PnpError::validation(
                "species",
                "at least two species are required",
            ));
        }
        for s in &self.species {
            IonSpecies::new(s.valence, s.diffusion, s.radius)?;
        }
        PermanentCharge::new(
            self.charge.amplitude,
            self.charge.width,
            self.charge.convention,
        )?;
        if let GeometryVariant::Regularized { delta_x } = self.geometry.variant {
            ChannelGeometry::regularized(delta_x)?;
        }
        self.bc.validate(&self.valences())
    }

    pub fn valences(&self) -> Vec<i32> {
        self.species.iter().map(|s| s.valence).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.radius).collect()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn with_voltage(&self, voltage: f64) -> Self {
        let mut p = self.clone();
        p.bc.voltage = voltage;
        p
    }

    pub fn with_q0(&self, q0: f64) -> Self {
        let mut p = self.clone();
        p.charge.amplitude = 0.5 * q0;
        p
    }

    pub fn with_radii(&self, radii: &[f64]) -> Self {
        let mut p = self.clone();
        for (s, r) in p.species.iter_mut().zip(radii) {
            s.radius = *r;
        }
        p
    }

    /// Electrochemical potential of species `k` from the local state.
    pub fn electrochemical_potential(&self, k: usize, phi: f64, conc: &[f64]) -> Result<f64> {
        let ideal = mu_ideal(self.species[k].valence, phi, conc[k])?;
        match self.excess {
            ExcessModel::Ideal => Ok(ideal),
            ExcessModel::HardSphere => Ok(ideal + mu_hard_sphere(k, conc, &self.radii())?),
        }
    }
}

/// Ideal electrochemical potential `z φ + ln c`.
pub fn mu_ideal(valence: i32, phi: f64, conc: f64) -> Result<f64> {
    if !(conc > 0.0) {
        return Err(PnpError::Domain(format!(
            "concentration {conc} is not positive"
        )));
    }
    Ok(valence as f64 * phi + conc.ln())
}

/// Local packing fraction `Σ_j (4/3) π r_j³ c_j`.
pub fn packing_fraction(conc: &[f64], radii: &[f64]) -> f64 {
    conc.iter()
        .zip(radii)
        .map(|(c, r)| 4.0 / 3.0 * PI * r.powi(3) * c)
        .sum()
}

struct HardSphereSums {
    free: f64,
    s0: f64,
    s1: f64,
    s2: f64,
}

fn hard_sphere_sums(conc: &[f64], radii: &[f64]) -> Result<HardSphereSums> {
    let eta = packing_fraction(conc, radii);
    if !(eta < 1.0) {
        return Err(PnpError::Domain(format!(
            "packing fraction {eta} is not below 1"
        )));
    }
    let mut sums = HardSphereSums {
        free: 1.0 - eta,
        s0: 0.0,
        s1: 0.0,
        s2: 0.0,
    };
    for (c, r) in conc.iter().zip(radii) {
        sums.s0 += c;
        sums.s1 += r * c;
        sums.s2 += 4.0 * PI * r * r * c;
    }
    Ok(sums)
}

/// Hard-sphere excess chemical potential of species `k`.
pub fn mu_hard_sphere(k: usize, conc: &[f64], radii: &[f64]) -> Result<f64> {
    let HardSphereSums { free, s0, s1, s2 } = hard_sphere_sums(conc, radii)?;
    let rk = radii[k];
    Ok(-free.ln()
        + rk * s2 / free
        + 4.0 * PI * rk * rk * s1 / free
        + 4.0 / 3.0 * PI * rk.powi(3) * s0 / free)
}

/// Gradient of [`mu_hard_sphere`] with respect to every concentration.
pub fn mu_hard_sphere_gradient(k: usize, conc: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    let HardSphereSums { free, s0, s1, s2 } = hard_sphere_sums(conc, radii)?;
    let rk = radii[k];
    let a2 = 4.0 * PI * rk * rk;
    let a3 = 4.0 / 3.0 * PI * rk.powi(3);
    // numerator of every fraction term, differentiated through 1/(1 - eta)
    let stacked = rk * s2 + a2 * s1 + a3 * s0;
    Ok(radii
        .iter()
        .map(|&ri| {
            let e = 4.0 / 3.0 * PI * ri.powi(3);
            e / free + (rk * 4.0 * PI * ri * ri + a2 * ri + a3) / free + stacked * e / (free * free)
        })
        .collect())
}

/// Dimensional inputs of the channel model (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParameters {
    pub relative_permittivity: f64,
    pub vacuum_permittivity: f64,
    pub elementary_charge: f64,
    pub boltzmann: f64,
    pub temperature: f64,
    pub characteristic_concentration: f64,
    pub characteristic_diffusion: f64,
    pub left_end: f64,
    pub right_end: f64,
    pub voltage: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Dimensionless parameters derived from [`PhysicalParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledParameters {
    pub epsilon: f64,
    pub voltage: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

pub fn nondimensionalize(p: &PhysicalParameters) -> Result<ScaledParameters> {
    let positive = [
        ("relative_permittivity", p.relative_permittivity),
        ("vacuum_permittivity", p.vacuum_permittivity),
        ("elementary_charge", p.elementary_charge),
        ("boltzmann", p.boltzmann),
        ("temperature", p.temperature),
        (
            "characteristic_concentration",
            p.characteristic_concentration,
        ),
        ("characteristic_diffusion", p.characteristic_diffusion),
    ];
    for (name, value) in positive {
        if !(value > 0.0) {
            return Err(PnpError::validation(name, format!("{value} is not > 0")));
        }
    }
    if !(p.right_end > p.left_end) {
        return Err(PnpError::validation("right_end", "must exceed left_end"));
    }
    if p.left.iter().chain(&p.right).any(|c| !(*c > 0.0)) {
        return Err(PnpError::validation("concentrations", "must be positive"));
    }
    let length = p.right_end - p.left_end;
    let thermal = p.boltzmann * p.temperature;
    let eps2 = p.relative_permittivity * p.vacuum_permittivity * thermal
        / (p.elementary_charge.powi(2) * length * length * p.characteristic_concentration);
    let c0 = p.characteristic_concentration;
    Ok(ScaledParameters {
        epsilon: eps2.sqrt(),
        voltage: p.elementary_charge * p.voltage / thermal,
        left: p.left.iter().map(|c| c / c0).collect(),
        right: p.right.iter().map(|c| c / c0).collect(),
    })
}
