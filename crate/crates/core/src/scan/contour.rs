//! Level-set tracing by marching squares, with each edge crossing refined by
//! bisection against fresh evaluations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mmpde::AdaptControls;
use crate::model::PnpProblem;
use crate::par::map_indexed;

use super::{ratios_at, RatioSurface};

/// Samples of a scalar field on a `(q0, V)` grid; `values[iv][iq]`, `None`
/// where the field is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub q0: Vec<f64>,
    pub v: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// A polyline on which `λ_k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    /// Zero-based species index.
    pub species: usize,
    /// `[q0, V]` vertices.
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContourSet {
    pub contours: Vec<Contour>,
    pub warnings: Vec<String>,
}

/// A turning point in `q0` of a contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub species: usize,
    pub q0: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Edge {
    /// Row `iv`, between columns `iq` and `iq + 1`.
    AlongQ(usize, usize),
    /// Column `iq`, between rows `iv` and `iv + 1`.
    AlongV(usize, usize),
}

impl Lattice {
    fn at(&self, iv: usize, iq: usize) -> Option<f64> {
        self.values[iv][iq]
    }

    fn ends(&self, e: Edge) -> ((f64, f64, f64), (f64, f64, f64)) {
        let (a, b) = match e {
            Edge::AlongQ(iv, iq) => ((iv, iq), (iv, iq + 1)),
            Edge::AlongV(iv, iq) => ((iv, iq), (iv + 1, iq)),
        };
        let pt = |(iv, iq): (usize, usize)| (self.q0[iq], self.v[iv], self.values[iv][iq].unwrap());
        (pt(a), pt(b))
    }
}

fn positive(x: f64) -> bool {
    x >= 0.0
}

/// Cell segments as pairs of crossed edges.
fn cell_segments(lat: &Lattice, iv: usize, iq: usize) -> Vec<(Edge, Edge)> {
    let corners = [
        lat.at(iv, iq),
        lat.at(iv, iq + 1),
        lat.at(iv + 1, iq + 1),
        lat.at(iv + 1, iq),
    ];
    let Some(c) = corners.iter().copied().collect::<Option<Vec<f64>>>() else {
        return Vec::new();
    };
    let edges = [
        Edge::AlongQ(iv, iq),
        Edge::AlongV(iv, iq + 1),
        Edge::AlongQ(iv + 1, iq),
        Edge::AlongV(iv, iq),
    ];
    let crossed: Vec<usize> = (0..4)
        .filter(|&i| positive(c[i]) != positive(c[(i + 1) % 4]))
        .collect();
    match crossed.len() {
        2 => vec![(edges[crossed[0]], edges[crossed[1]])],
        4 => {
            let center = c.iter().sum::<f64>() / 4.0;
            if positive(center) == positive(c[0]) {
                vec![(edges[0], edges[1]), (edges[2], edges[3])]
            } else {
                vec![(edges[3], edges[0]), (edges[1], edges[2])]
            }
        }
        _ => Vec::new(),
    }
}

/// Bisection along an edge until `|f| < tol`. Returns the point and a
/// warning if evaluation failed or the tolerance was not met.
fn refine_edge(
    a: (f64, f64, f64),
    b: (f64, f64, f64),
    geometric_q: bool,
    f: &(dyn Fn(f64, f64) -> Result<f64> + Sync),
    tol: f64,
) -> ([f64; 2], Option<String>) {
    let (mut lo, mut hi) = (a, b);
    let mut best = if a.2.abs() < b.2.abs() { a } else { b };
    for _ in 0..40 {
        if best.2.abs() < tol {
            return ([best.0, best.1], None);
        }
        let q = if geometric_q && lo.0 > 0.0 && hi.0 > 0.0 {
            (lo.0 * hi.0).sqrt()
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let v = 0.5 * (lo.1 + hi.1);
        let fm = match f(q, v) {
            Ok(x) if x.is_finite() => x,
            Ok(_) | Err(_) => {
                // fall back to the secant estimate of the bracket
                let s = lo.2 / (lo.2 - hi.2);
                let p = [lo.0 + s * (hi.0 - lo.0), lo.1 + s * (hi.1 - lo.1)];
                return (
                    p,
                    Some(format!(
                        "evaluation failed at ({q:e}, {v}); crossing interpolated"
                    )),
                );
            }
        };
        let mid = (q, v, fm);
        if fm.abs() < best.2.abs() {
            best = mid;
        }
        if positive(fm) == positive(lo.2) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = [best.0, best.1];
    if best.2.abs() < tol {
        (p, None)
    } else {
        (
            p,
            Some(format!(
                "crossing near ({:e}, {}) kept |f| = {:e}",
                p[0],
                p[1],
                best.2.abs()
            )),
        )
    }
}

/// Traces the zero set of `lattice`, refining crossings with `f`.
pub fn trace_level(
    lattice: &Lattice,
    species: usize,
    f: &(dyn Fn(f64, f64) -> Result<f64> + Sync),
    tol: f64,
    workers: usize,
) -> ContourSet {
    let (nv, nq) = (lattice.v.len(), lattice.q0.len());
    let mut segments = Vec::new();
    for iv in 0..nv.saturating_sub(1) {
        for iq in 0..nq.saturating_sub(1) {
            segments.extend(cell_segments(lattice, iv, iq));
        }
    }
    let mut edges: Vec<Edge> = segments.iter().flat_map(|&(a, b)| [a, b]).collect();
    edges.sort();
    edges.dedup();
    let geometric = lattice.q0.first().is_some_and(|&q| q > 0.0);
    let refined = map_indexed(&edges, workers, |_, &e| {
        let (a, b) = lattice.ends(e);
        refine_edge(a, b, geometric, f, tol)
    });
    let mut warnings = Vec::new();
    let mut point = HashMap::new();
    for (e, (p, w)) in edges.iter().zip(refined) {
        point.insert(*e, p);
        warnings.extend(w);
    }

    // link segments through shared edges; every edge touches at most two cells
    let mut touching: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (i, &(a, b)) in segments.iter().enumerate() {
        touching.entry(a).or_default().push(i);
        touching.entry(b).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    let walk =
        |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| -> (Vec<[f64; 2]>, bool) {
            let mut pts = vec![point[&start_edge]];
            let (mut seg, mut at) = (start_seg, start_edge);
            loop {
                used[seg] = true;
                let (a, b) = segments[seg];
                let next = if a == at { b } else { a };
                pts.push(point[&next]);
                if next == start_edge {
                    return (pts, true);
                }
                match touching[&next].iter().find(|&&s| !used[s]) {
                    Some(&s) => {
                        seg = s;
                        at = next;
                    }
                    None => return (pts, false),
                }
            }
        };
    // open polylines start at edges used once (domain boundary or excluded cells)
    let mut starts: Vec<(&Edge, &Vec<usize>)> =
        touching.iter().filter(|(_, s)| s.len() == 1).collect();
    starts.sort();
    for (e, segs) in starts {
        if !used[segs[0]] {
            let (points, closed) = walk(segs[0], *e, &mut used);
            contours.push(Contour {
                species,
                points,
                closed,
            });
        }
    }
    for i in 0..segments.len() {
        if !used[i] {
            let (points, closed) = walk(i, segments[i].0, &mut used);
            contours.push(Contour {
                species,
                points,
                closed,
            });
        }
    }
    for c in contours.iter().filter(|c| !c.closed) {
        warnings.push(format!(
            "open contour for species {} ends at ({:e}, {})",
            species + 1,
            c.points.last().unwrap()[0],
            c.points.last().unwrap()[1]
        ));
    }
    ContourSet { contours, warnings }
}

/// `λ_k = 1` contours of both species, crossings refined to `|λ_k - 1| < tol`
/// by fresh solves.
pub fn trace_unity_contours(
    surface: &RatioSurface,
    template: &PnpProblem,
    controls: &AdaptControls,
    tol: f64,
    workers: usize,
) -> ContourSet {
    let mut out = ContourSet::default();
    let n = surface
        .points
        .iter()
        .flatten()
        .find_map(|p| p.converged().then_some(p.ratios.len()));
    for k in 0..n.unwrap_or(0) {
        let f = move |q: f64, v: f64| ratios_at(template, controls, q, v).map(|r| r[k] - 1.0);
        let set = trace_level(&surface.lattice(k), k, &f, tol, workers);
        out.contours.extend(set.contours);
        out.warnings.extend(set.warnings);
    }
    out
}

/// Interior extrema of `q0` along each contour, refined by a parabola
/// `q0(V)` through the extremal vertex and its neighbours.
pub fn detect_saddle_nodes(contours: &ContourSet) -> Vec<BifurcationPoint> {
    let mut out = Vec::new();
    for c in &contours.contours {
        let p = &c.points;
        let n = if c.closed { p.len() - 1 } else { p.len() };
        if n < 3 {
            continue;
        }
        let at = |i: usize| p[i % n];
        let range = if c.closed { 0..n } else { 1..n - 1 };
        for i in range {
            let prev = at(i + n - 1);
            // a run of equal q0 counts once, from its first vertex
            if prev[0] == p[i][0] {
                continue;
            }
            let mut j = i;
            while j + 1 < i + n && at(j + 1)[0] == p[i][0] {
                j += 1;
            }
            if !c.closed && j + 1 >= n {
                continue;
            }
            let next = at(j + 1);
            if !((p[i][0] - prev[0]) * (next[0] - at(j)[0]) < 0.0) {
                continue;
            }
            let third = if j > i { at(j) } else { next };
            let (q0, v) = parabola_vertex(prev, p[i], third).unwrap_or_else(|| {
                let mid = [0.5 * (p[i][0] + at(j)[0]), 0.5 * (p[i][1] + at(j)[1])];
                (mid[0], mid[1])
            });
            out.push(BifurcationPoint {
                species: c.species,
                q0,
                v,
            });
        }
    }
    out
}

/// Vertex of the parabola `q = a V² + b V + c` through three points.
fn parabola_vertex(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> Option<(f64, f64)> {
    let ([q0, v0], [q1, v1], [q2, v2]) = (p0, p1, p2);
    let denom = (v0 - v1) * (v0 - v2) * (v1 - v2);
    if denom == 0.0 {
        return None;
    }
    let a = (v2 * (q1 - q0) + v1 * (q0 - q2) + v0 * (q2 - q1)) / denom;
    let b = (v2 * v2 * (q0 - q1) + v1 * v1 * (q2 - q0) + v0 * v0 * (q1 - q2)) / denom;
    let c =
        (v1 * v2 * (v1 - v2) * q0 + v2 * v0 * (v2 - v0) * q1 + v0 * v1 * (v0 - v1) * q2) / denom;
    if a == 0.0 {
        return None;
    }
    let v = -b / (2.0 * a);
    // keep the refinement local to the bracket
    let (lo, hi) = (v0.min(v1).min(v2), v0.max(v1).max(v2));
    if !(lo..=hi).contains(&v) {
        return None;
    }
    Some((c - b * b / (4.0 * a), v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(q0: Vec<f64>, v: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Lattice {
        let values = v
            .iter()
            .map(|&vv| q0.iter().map(|&q| Some(f(q, vv))).collect())
            .collect();
        Lattice { q0, v, values }
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn plane_is_traced_exactly() {
        // λ = q0 + V, so λ = 1 on the line q0 + V = 1
        let f = |q: f64, v: f64| q + v - 1.0;
        let lat = lattice(grid(0.0, 1.0, 7), grid(0.0, 1.0, 9), f);
        let set = trace_level(&lat, 0, &|q, v| Ok(f(q, v)), 1e-3, 1);
        assert_eq!(set.contours.len(), 1);
        let c = &set.contours[0];
        assert!(!c.closed);
        assert!(c.points.len() >= 8);
        for p in &c.points {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-3);
        }
        assert!(detect_saddle_nodes(&set).is_empty());
    }

    #[test]
    fn no_crossing_gives_empty_set() {
        let lat = lattice(grid(0.0, 1.0, 5), grid(0.0, 1.0, 5), |_, _| -0.5);
        let set = trace_level(&lat, 1, &|_, _| Ok(-0.5), 1e-3, 1);
        assert!(set.contours.is_empty());
        assert!(set.warnings.is_empty());
    }

    #[test]
    fn circle_is_closed() {
        let f = |q: f64, v: f64| 0.3 - ((q - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
        let lat = lattice(grid(0.0, 1.0, 24), grid(0.0, 1.0, 22), f);
        let set = trace_level(&lat, 0, &|q, v| Ok(f(q, v)), 1e-6, 2);
        assert_eq!(set.contours.len(), 1);
        assert!(set.contours[0].closed);
        assert!(set.warnings.is_empty());
        // extremes of q0 at V = 0.5, q0 = 0.2 and 0.8
        let mut nodes = detect_saddle_nodes(&set);
        nodes.sort_by(|a, b| a.q0.partial_cmp(&b.q0).unwrap());
        assert_eq!(nodes.len(), 2);
        assert!((nodes[0].q0 - 0.2).abs() < 2e-3 && (nodes[0].v - 0.5).abs() < 2e-2);
        assert!((nodes[1].q0 - 0.8).abs() < 2e-3);
    }

    #[test]
    fn turning_point_of_a_parabola() {
        // zero set q0 = 0.6 - 2 (V - 0.4)^2 turns at (0.6, 0.4)
        let f = |q: f64, v: f64| 0.6 - 2.0 * (v - 0.4).powi(2) - q;
        let lat = lattice(grid(0.01, 1.0, 15), grid(-0.2, 1.0, 15), f);
        let set = trace_level(&lat, 1, &|q, v| Ok(f(q, v)), 1e-8, 1);
        let nodes = detect_saddle_nodes(&set);
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].species, 1);
        assert!((nodes[0].q0 - 0.6).abs() < 1e-3, "{nodes:?}");
        assert!((nodes[0].v - 0.4).abs() < 2e-2);
        assert!(!set.warnings.iter().any(|w| w.contains("kept")));
    }

    #[test]
    fn unknown_cells_are_skipped() {
        let f = |q: f64, v: f64| q + v - 1.0;
        let mut lat = lattice(grid(0.0, 1.0, 5), grid(0.0, 1.0, 5), f);
        lat.values[2][2] = None;
        let set = trace_level(&lat, 0, &|q, v| Ok(f(q, v)), 1e-3, 1);
        // the line is cut where it passes the hole
        assert_eq!(set.contours.len(), 2);
    }

    #[test]
    fn parabola_vertex_by_hand() {
        let (q, v) = parabola_vertex([0.0, -1.0], [1.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((q - 1.0).abs() < 1e-15 && v.abs() < 1e-15);
        assert!(parabola_vertex([0.0, 1.0], [1.0, 1.0], [0.0, 2.0]).is_none());
    }
}
