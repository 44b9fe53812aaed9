//! CSV and JSON files written by the subcommands, and readers for them.
//! Every number is printed with 16 significant digits.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use pnp_core::asymptotics::RegimeLabel;
use pnp_core::scan::{
    BifurcationPoint, ContourSet, PointStatus, Profiles, RatioPoint, RatioSurface, RegionMap,
};
use serde::{Deserialize, Serialize};

pub fn fmt16(x: f64) -> String {
    format!("{x:.15e}")
}

/// `x` as it reads back from its printed form.
pub fn round16(x: f64) -> f64 {
    fmt16(x).parse().unwrap_or(x)
}

fn opt16(x: Option<f64>) -> String {
    x.map(fmt16).unwrap_or_default()
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}

fn write_table(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns by header name, with empty cells as `None`.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_owned).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing column {name}"))
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn optional(&self, name: &str) -> Result<Vec<Option<f64>>> {
        self.text(name)?
            .into_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| anyhow!("{name}: {e}"))
                }
            })
            .collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.optional(name)?
            .into_iter()
            .map(|v| v.ok_or_else(|| anyhow!("{name}: empty cell")))
            .collect()
    }

    /// Count of columns named `prefix_1`, `prefix_2`, ...
    pub fn species(&self, prefix: &str) -> usize {
        (1..)
            .take_while(|k| self.header.contains(&format!("{prefix}_{k}")))
            .count()
    }
}

pub fn write_profiles(path: &Path, p: &Profiles) -> Result<()> {
    let n = p.conc.len();
    let mut header = vec!["x".to_owned(), "phi".to_owned()];
    header.extend(numbered("c", n));
    header.extend(numbered("mu", n));
    let rows = (0..p.x.len()).map(|j| {
        let mut row = vec![fmt16(p.x[j]), fmt16(p.phi[j])];
        row.extend(p.conc.iter().map(|c| fmt16(c[j])));
        row.extend(p.mu.iter().map(|m| fmt16(m[j])));
        row
    });
    write_table(path, &header, rows)
}

/// Nodal profiles as read back from a profiles file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub conc: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

pub fn read_profiles(path: &Path) -> Result<ProfileTable> {
    let t = Table::read(path)?;
    let n = t.species("c");
    Ok(ProfileTable {
        x: t.column("x")?,
        phi: t.column("phi")?,
        conc: (1..=n)
            .map(|k| t.column(&format!("c_{k}")))
            .collect::<Result<_>>()?,
        mu: (1..=n)
            .map(|k| t.column(&format!("mu_{k}")))
            .collect::<Result<_>>()?,
    })
}

pub fn write_element_fluxes(path: &Path, x: &[f64], per_element: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["x_left".to_owned(), "x_right".to_owned()];
    header.extend(numbered("J", per_element.len()));
    let rows = (0..x.len().saturating_sub(1)).map(|e| {
        let mut row = vec![fmt16(x[e]), fmt16(x[e + 1])];
        row.extend(per_element.iter().map(|j| fmt16(j[e])));
        row
    });
    write_table(path, &header, rows)
}

/// `(x_left, x_right, J[k][e])`
pub type ElementFluxTable = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

pub fn read_element_fluxes(path: &Path) -> Result<ElementFluxTable> {
    let t = Table::read(path)?;
    let n = t.species("J");
    Ok((
        t.column("x_left")?,
        t.column("x_right")?,
        (1..=n)
            .map(|k| t.column(&format!("J_{k}")))
            .collect::<Result<_>>()?,
    ))
}

fn status_text(s: &PointStatus) -> &'static str {
    match s {
        PointStatus::Converged => "converged",
        PointStatus::Failed(_) => "failed",
    }
}

pub fn write_sweep(path: &Path, points: &[RatioPoint], n_species: usize) -> Result<()> {
    let mut header = vec!["q0".to_owned(), "V".to_owned()];
    header.extend(numbered("J", n_species));
    header.extend(numbered("lambda", n_species));
    header.push("status".to_owned());
    let rows = points.iter().map(|p| {
        let mut row = vec![fmt16(p.q0), fmt16(p.v)];
        row.extend((0..n_species).map(|k| opt16(p.fluxes.get(k).copied())));
        row.extend((0..n_species).map(|k| opt16(p.ratio(k))));
        row.push(status_text(&p.status).to_owned());
        row
    });
    write_table(path, &header, rows)
}

/// Sweep rows; failure messages are not stored, so failed points read back
/// with the status text as their message.
pub fn read_sweep(path: &Path) -> Result<Vec<RatioPoint>> {
    let t = Table::read(path)?;
    let n = t.species("J");
    let q0 = t.column("q0")?;
    let v = t.column("V")?;
    let status = t.text("status")?;
    let fluxes: Vec<Vec<Option<f64>>> = (1..=n)
        .map(|k| t.optional(&format!("J_{k}")))
        .collect::<Result<_>>()?;
    let ratios: Vec<Vec<Option<f64>>> = (1..=n)
        .map(|k| t.optional(&format!("lambda_{k}")))
        .collect::<Result<_>>()?;
    (0..t.len())
        .map(|i| {
            let converged = status[i] == "converged";
            let pick = |cols: &[Vec<Option<f64>>]| -> Vec<f64> {
                if converged {
                    cols.iter().filter_map(|c| c[i]).collect()
                } else {
                    Vec::new()
                }
            };
            Ok(RatioPoint {
                q0: q0[i],
                v: v[i],
                fluxes: pick(&fluxes),
                ratios: pick(&ratios),
                status: if converged {
                    PointStatus::Converged
                } else {
                    PointStatus::Failed(status[i].clone())
                },
            })
        })
        .collect()
}

/// Label text in the surface file; `anomaly` marks `λ_1 ≥ λ_2` or `λ_1 ≤ 0`.
pub fn region_text(label: Option<RegimeLabel>, anomaly: bool) -> &'static str {
    match (label, anomaly) {
        (_, true) => "anomaly",
        (Some(l), _) => l.name(),
        (None, _) => "",
    }
}

pub fn write_surface(path: &Path, surface: &RatioSurface, regions: &RegionMap) -> Result<()> {
    let header: Vec<String> = ["q0", "V", "lambda_1", "lambda_2", "region", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = surface.points.iter().enumerate().flat_map(|(iv, row)| {
        row.iter().enumerate().map(move |(iq, p)| {
            let anomaly = regions.anomalies.contains(&(iv, iq));
            vec![
                fmt16(p.q0),
                fmt16(p.v),
                opt16(p.ratio(0)),
                opt16(p.ratio(1)),
                region_text(regions.labels[iv][iq], anomaly).to_owned(),
                status_text(&p.status).to_owned(),
            ]
        })
    });
    write_table(path, &header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub q0: f64,
    pub v: f64,
    pub lambda_1: Option<f64>,
    pub lambda_2: Option<f64>,
    pub region: String,
    pub status: String,
}

pub fn read_surface(path: &Path) -> Result<Vec<SurfaceRow>> {
    let t = Table::read(path)?;
    let (q0, v) = (t.column("q0")?, t.column("V")?);
    let (l1, l2) = (t.optional("lambda_1")?, t.optional("lambda_2")?);
    let (region, status) = (t.text("region")?, t.text("status")?);
    Ok((0..t.len())
        .map(|i| SurfaceRow {
            q0: q0[i],
            v: v[i],
            lambda_1: l1[i],
            lambda_2: l2[i],
            region: region[i].clone(),
            status: status[i].clone(),
        })
        .collect())
}

/// One `λ_k = 1` polyline; `species` counts from 1 like the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourRecord {
    pub species: usize,
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationRecord {
    pub species: usize,
    pub q0: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

pub fn contour_records(set: &ContourSet) -> Vec<ContourRecord> {
    set.contours
        .iter()
        .map(|c| ContourRecord {
            species: c.species + 1,
            points: c
                .points
                .iter()
                .map(|p| [round16(p[0]), round16(p[1])])
                .collect(),
            closed: c.closed,
        })
        .collect()
}

pub fn bifurcation_records(points: &[BifurcationPoint]) -> Vec<BifurcationRecord> {
    points
        .iter()
        .map(|b| BifurcationRecord {
            species: b.species + 1,
            q0: round16(b.q0),
            v: round16(b.v),
        })
        .collect()
}

fn round_numbers(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n
                .as_f64()
                .and_then(|x| serde_json::Number::from_f64(round16(x)))
            {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with every float cut to 16 significant digits.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut tree = serde_json::to_value(value)?;
    round_numbers(&mut tree);
    let mut text = serde_json::to_string_pretty(&tree)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
