//! The four subcommands. Each returns how many grid points failed so that
//! the caller can pick the exit status; files are written after all work is done.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pnp_core::asymptotics::{
    beta1_root, classify_small_q, gamma_threshold, lambda2_large_q_limit,
    large_q_critical_voltages, large_q_expansion, small_q_auxiliaries, small_q_critical_voltages,
    small_q_expansion, LargeQExpansion, SmallQExpansion,
};
use pnp_core::mmpde::adapt_and_solve;
use pnp_core::model::PnpProblem;
use pnp_core::scan::{
    classify_regions, detect_saddle_nodes, reference_fluxes, surface_on, sweep_q, sweep_v,
    trace_unity_contours, Profiles,
};
use serde::{Deserialize, Serialize};

use crate::config::{InvalidInput, RunConfig};
use crate::output::{
    bifurcation_records, contour_records, write_element_fluxes, write_json, write_profiles,
    write_surface, write_sweep,
};

/// Files a command wrote and how many points failed on the way.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.output.dir.as_path();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn point(config: &RunConfig) -> Result<(f64, f64)> {
    let p = &config.problem;
    if !p.q0.is_point() || !p.voltage.is_point() {
        bail!(InvalidInput(
            "this command needs a single q0 and a single voltage".into()
        ));
    }
    Ok((
        p.q0.values("problem.q0")?[0],
        p.voltage.values("problem.voltage")?[0],
    ))
}

/// What `solve` prints and stores next to the profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub q0: f64,
    #[serde(rename = "V")]
    pub v: f64,
    /// Conserved flux per species.
    pub fluxes: Vec<f64>,
    /// Element-length weighted mean of the element fluxes.
    pub element_mean_fluxes: Vec<f64>,
    pub current: f64,
    pub ratios: Option<Vec<f64>>,
    pub newton_iterations: usize,
    pub pre_adaptations: usize,
    pub nonuniformity: Vec<f64>,
    pub defects: Vec<f64>,
}

pub fn solve(config: &RunConfig) -> Result<Report> {
    let template = config.template()?;
    let controls = config.controls()?;
    let (q0, v) = point(config)?;
    let problem = template.with_q0(q0).with_voltage(v);
    let out = adapt_and_solve(&problem, &controls)?;
    let profiles = Profiles::from_outcome(&problem, &out)?;
    let ratios = if config.output.reference {
        let reference = reference_fluxes(&template, &controls, v)?;
        Some(
            profiles
                .conserved_fluxes
                .iter()
                .zip(&reference)
                .map(|(j, j0)| pnp_core::asymptotics::flux_ratio(*j, *j0))
                .collect::<pnp_core::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let summary = SolveSummary {
        q0,
        v,
        fluxes: profiles.conserved_fluxes.clone(),
        element_mean_fluxes: profiles.fluxes.clone(),
        current: profiles.current,
        ratios,
        newton_iterations: profiles.newton_iterations,
        pre_adaptations: out.pre_adaptations,
        nonuniformity: profiles.nonuniformity.clone(),
        defects: out.history.iter().map(|h| h.defect).collect(),
    };
    print_summary(&summary);
    let dir = out_dir(config)?;
    let files = vec![
        dir.join("profiles.csv"),
        dir.join("fluxes.csv"),
        dir.join("summary.json"),
    ];
    write_profiles(&files[0], &profiles)?;
    write_element_fluxes(&files[1], &profiles.x, &profiles.element_fluxes)?;
    write_json(&files[2], &summary)?;
    Ok(Report { files, failures: 0 })
}

fn print_summary(s: &SolveSummary) {
    println!("q0 = {}, V = {}", s.q0, s.v);
    for (k, j) in s.fluxes.iter().enumerate() {
        print!(
            "J_{} = {j:.10e} (element mean {:.10e})",
            k + 1,
            s.element_mean_fluxes[k]
        );
        match &s.ratios {
            Some(r) => println!(", lambda_{} = {:.10}", k + 1, r[k]),
            None => println!(),
        }
    }
    println!("I = {:.10e}", s.current);
    println!(
        "Newton iterations {}, pre-adaptations {}, flux nonuniformity {:?}",
        s.newton_iterations, s.pre_adaptations, s.nonuniformity
    );
}

pub fn sweep(config: &RunConfig, workers: usize) -> Result<Report> {
    let template = config.template()?;
    let controls = config.controls()?;
    let p = &config.problem;
    let q0 = p.q0.values("problem.q0")?;
    let v = p.voltage.values("problem.voltage")?;
    let points = match (p.q0.is_point(), p.voltage.is_point()) {
        (false, true) => sweep_q(&template, &controls, v[0], &q0)?,
        (true, false) => sweep_v(&template, &controls, q0[0], &v, workers)?,
        _ => bail!(InvalidInput(
            "sweep needs exactly one of problem.q0 and problem.voltage to be a range or list"
                .into()
        )),
    };
    let failures = points.iter().filter(|p| !p.converged()).count();
    for pt in points.iter().filter(|p| !p.converged()) {
        eprintln!("failed at q0 = {}, V = {}: {:?}", pt.q0, pt.v, pt.status);
    }
    println!("{} points, {failures} failed", points.len());
    let dir = out_dir(config)?;
    let file = dir.join("sweep.csv");
    write_sweep(&file, &points, template.n_species())?;
    Ok(Report {
        files: vec![file],
        failures,
    })
}

pub fn diagram(config: &RunConfig, workers: usize) -> Result<Report> {
    let template = config.template()?;
    let controls = config.controls()?;
    let p = &config.problem;
    if p.q0.is_point() || p.voltage.is_point() {
        bail!(InvalidInput(
            "diagram needs ranges for both problem.q0 and problem.voltage".into()
        ));
    }
    if template.n_species() != 2 {
        bail!(InvalidInput("diagram is defined for two species".into()));
    }
    let q0 = p.q0.values("problem.q0")?;
    let v = p.voltage.values("problem.voltage")?;
    let surface = surface_on(&template, &controls, &q0, &v, workers)?;
    let regions = classify_regions(&surface);
    let contours = trace_unity_contours(
        &surface,
        &template,
        &controls,
        config.output.contour_tolerance,
        workers,
    );
    let turning = detect_saddle_nodes(&contours);
    for w in &contours.warnings {
        eprintln!("warning: {w}");
    }
    let failures = surface.failures();
    println!(
        "{} points, {failures} failed, {} anomalies, {} contours, {} turning points",
        surface.iter().count(),
        regions.anomalies.len(),
        contours.contours.len(),
        turning.len()
    );
    for b in &turning {
        println!(
            "lambda_{} = 1 turns at q0 = {:.6e}, V = {:.4}",
            b.species + 1,
            b.q0,
            b.v
        );
    }
    let dir = out_dir(config)?;
    let files = vec![
        dir.join("surface.csv"),
        dir.join("contours.json"),
        dir.join("bifurcations.json"),
    ];
    write_surface(&files[0], &surface, &regions)?;
    write_json(&files[1], &contour_records(&contours))?;
    write_json(&files[2], &bifurcation_records(&turning))?;
    Ok(Report { files, failures })
}

/// Closed-form quantities at one voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageAsymptotics {
    #[serde(rename = "V")]
    pub v: f64,
    pub small: SmallQExpansion,
    pub ratio_slopes: [f64; 2],
    pub small_q_region: String,
    /// Absent where the expansion is singular.
    pub large: Option<LargeQExpansion>,
    pub lambda2_large_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub left: f64,
    pub right: f64,
    pub alpha: f64,
    pub beta: f64,
    pub h1: f64,
    pub a: f64,
    pub b: f64,
    pub v1_small: f64,
    pub v2_small: f64,
    pub gamma: f64,
    /// Only defined when `α < γ(L/R)`.
    pub beta1: Option<f64>,
    pub v1_large: Option<f64>,
    pub v2_large: Option<f64>,
    pub voltages: Vec<VoltageAsymptotics>,
}

fn binary_ends(problem: &PnpProblem) -> Result<(f64, f64)> {
    let valences = problem.valences();
    let bc = &problem.bc;
    if valences != [1, -1] || bc.left[0] != bc.left[1] || bc.right[0] != bc.right[1] {
        bail!(InvalidInput(
            "the closed forms need a cation and an anion (valences 1, -1) with shared end concentrations".into()
        ));
    }
    Ok((bc.left[0], bc.right[0]))
}

pub fn asymptotics_report(config: &RunConfig) -> Result<AsymptoticsReport> {
    let template = config.template()?;
    let (l, r) = binary_ends(&template)?;
    let m = template.geometry.moments()?;
    let t = l / r;
    let (a, b) = small_q_auxiliaries(l, r, &m)?;
    let (v1_small, v2_small) = small_q_critical_voltages(l, r, &m)?;
    let large_roots = large_q_critical_voltages(l, r, &m).ok();
    let voltages = config
        .problem
        .voltage
        .values("problem.voltage")?
        .into_iter()
        .map(|v| -> Result<VoltageAsymptotics> {
            let small = small_q_expansion(v, l, r, &m)?;
            Ok(VoltageAsymptotics {
                v,
                small,
                ratio_slopes: [small.ratio_slope(0), small.ratio_slope(1)],
                small_q_region: classify_small_q(v, l, r, &m)?.name().to_owned(),
                large: large_q_expansion(v, l, r, &m).ok(),
                lambda2_large_q: lambda2_large_q_limit(v, t, m.alpha, m.beta).ok(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AsymptoticsReport {
        left: l,
        right: r,
        alpha: m.alpha,
        beta: m.beta,
        h1: m.total,
        a,
        b,
        v1_small,
        v2_small,
        gamma: gamma_threshold(t)?,
        beta1: beta1_root(t, m.alpha).ok(),
        v1_large: large_roots.map(|x| x.0),
        v2_large: large_roots.map(|x| x.1),
        voltages,
    })
}

pub fn asymptotics(config: &RunConfig) -> Result<Report> {
    let rep = asymptotics_report(config)?;
    println!("L = {}, R = {}", rep.left, rep.right);
    println!(
        "alpha = {:.6}, beta = {:.6}, H(1) = {:.6}",
        rep.alpha, rep.beta, rep.h1
    );
    println!("A = {:.6}, B = {:.6}", rep.a, rep.b);
    println!(
        "small-charge critical voltages V1 = {:.4}, V2 = {:.4}",
        rep.v1_small, rep.v2_small
    );
    match rep.beta1 {
        Some(b1) => println!("gamma = {:.6}, beta1 = {:.6}", rep.gamma, b1),
        None => println!("gamma = {:.6}, beta1 undefined", rep.gamma),
    }
    match (rep.v1_large, rep.v2_large) {
        (Some(a), Some(b)) => println!("large-charge critical voltages V1 = {a:.4}, V2 = {b:.4}"),
        _ => println!("large-charge critical voltages not found"),
    }
    for e in &rep.voltages {
        println!(
            "V = {}: J10 = {:.6e}, J11 = {:.6e}, J20 = {:.6e}, J21 = {:.6e}, region {}, lambda2 limit {}",
            e.v,
            e.small.j10,
            e.small.j11,
            e.small.j20,
            e.small.j21,
            e.small_q_region,
            e.lambda2_large_q.map_or("undefined".to_owned(), |x| format!("{x:.6}"))
        );
    }
    let dir = out_dir(config)?;
    let file = dir.join("asymptotics.json");
    write_json(&file, &rep)?;
    Ok(Report {
        files: vec![file],
        failures: 0,
    })
}
