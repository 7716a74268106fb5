//! Exact linear-region analysis of one-hidden-layer ReLU networks on `[0,1]²`.
//!
//! Every hidden neuron contributes one line; the arrangement of those lines
//! cut to the unit square gives convex cells on which the logits are affine.
//! On top of the cells this module extracts the decision boundary, the
//! penalty-gradient bounds `(c, C)`, stationary points of the attack
//! objective and the geometric checks around them.

use serde::Serialize;

use crate::attack::Goal;
use crate::error::{invalid, Error, Result};
use crate::network::MlpModel;

pub type Point = [f64; 2];

/// Collinearity / on-line tolerance for the arrangement predicates.
pub const GEOM_TOL: f64 = 1e-12;
/// Cells below this area are numerical slivers and are dropped.
const MIN_AREA: f64 = 1e-14;
/// Residual below which an analytic stationary point is certified.
pub const ANALYTIC_RESIDUAL_TOL: f64 = 1e-8;
/// Sampling step of the grid scans.
pub const GRID_STEP: f64 = 1e-4;

/// Residual tolerance for grid-sampled stationarity tests.
pub fn grid_residual_tol(a: f64) -> f64 {
    (GRID_STEP * a).max(2.0 * GRID_STEP)
}

fn sub(p: Point, q: Point) -> Point {
    [p[0] - q[0], p[1] - q[1]]
}

fn dot(p: Point, q: Point) -> f64 {
    p[0] * q[0] + p[1] * q[1]
}

fn norm(p: Point) -> f64 {
    dot(p, p).sqrt()
}

fn lerp(p: Point, q: Point, t: f64) -> Point {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// A line `{x : normal·x + offset = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Line {
    pub normal: Point,
    pub offset: f64,
}

impl Line {
    /// Unit-normal version, or `None` for a degenerate (zero) normal.
    fn normalized(self) -> Option<Line> {
        let n = norm(self.normal);
        (n > GEOM_TOL).then(|| Line {
            normal: [self.normal[0] / n, self.normal[1] / n],
            offset: self.offset / n,
        })
    }

    fn eval(&self, p: Point) -> f64 {
        dot(self.normal, p) + self.offset
    }
}

/// Polygon area (absolute shoelace).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Area centroid of a convex polygon.
pub fn polygon_centroid(poly: &[Point]) -> Point {
    let n = poly.len();
    let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let cross = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
        a2 += cross;
    }
    if a2.abs() < 1e-300 {
        let m = poly.iter().fold([0.0, 0.0], |s, p| [s[0] + p[0], s[1] + p[1]]);
        return [m[0] / n as f64, m[1] / n as f64];
    }
    [cx / (3.0 * a2), cy / (3.0 * a2)]
}

/// Keeps the part of a convex polygon where `line ≥ 0` (line normalized).
fn clip_polygon(poly: &[Point], line: &Line) -> Vec<Point> {
    let s: Vec<f64> = poly.iter().map(|p| line.eval(*p)).collect();
    let n = poly.len();
    let mut out: Vec<Point> = Vec::with_capacity(n + 1);
    for i in 0..n {
        let j = (i + 1) % n;
        if s[i] >= -GEOM_TOL {
            out.push(poly[i]);
        }
        if (s[i] > GEOM_TOL && s[j] < -GEOM_TOL) || (s[i] < -GEOM_TOL && s[j] > GEOM_TOL) {
            out.push(lerp(poly[i], poly[j], s[i] / (s[i] - s[j])));
        }
    }
    out.dedup_by(|a, b| norm(sub(*a, *b)) <= GEOM_TOL);
    while out.len() > 1 && norm(sub(out[0], *out.last().unwrap())) <= GEOM_TOL {
        out.pop();
    }
    out
}

/// Intersection of a line (normalized) with a convex polygon.
fn line_through_polygon(poly: &[Point], line: &Line) -> Option<(Point, Point)> {
    let s: Vec<f64> = poly.iter().map(|p| line.eval(*p)).collect();
    let n = poly.len();
    let mut hits: Vec<Point> = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        if s[i].abs() <= GEOM_TOL {
            hits.push(poly[i]);
        } else if s[j].abs() > GEOM_TOL && (s[i] > 0.0) != (s[j] > 0.0) {
            hits.push(lerp(poly[i], poly[j], s[i] / (s[i] - s[j])));
        }
    }
    if hits.len() < 2 {
        return None;
    }
    let dir = [-line.normal[1], line.normal[0]];
    let (mut lo, mut hi) = (hits[0], hits[0]);
    for h in &hits {
        if dot(*h, dir) < dot(lo, dir) {
            lo = *h;
        }
        if dot(*h, dir) > dot(hi, dir) {
            hi = *h;
        }
    }
    (norm(sub(hi, lo)) > GEOM_TOL).then_some((lo, hi))
}

/// Keeps the part of a segment where `line ≥ 0` (line normalized).
fn clip_segment(seg: (Point, Point), line: &Line) -> Option<(Point, Point)> {
    let (sa, sb) = (line.eval(seg.0), line.eval(seg.1));
    match (sa >= -GEOM_TOL, sb >= -GEOM_TOL) {
        (true, true) => Some(seg),
        (false, false) => None,
        (true, false) => Some((seg.0, lerp(seg.0, seg.1, sa / (sa - sb)))),
        (false, true) => Some((lerp(seg.0, seg.1, sa / (sa - sb)), seg.1)),
    }
    .filter(|s| norm(sub(s.1, s.0)) > GEOM_TOL)
}

/// Euclidean distance from a point to a segment.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm(sub(p, lerp(a, b, t)))
}

/// Whether a convex CCW polygon contains `p`, boundary included up to `tol`.
pub fn polygon_contains(poly: &[Point], p: Point, tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = sub(b, a);
        let len = norm(e);
        len == 0.0 || (e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])) / len >= -tol
    })
}

/// Distance from `p` to a convex polygon (0 inside).
pub fn point_polygon_distance(poly: &[Point], p: Point) -> f64 {
    if polygon_contains(poly, p, 0.0) {
        return 0.0;
    }
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// One linear region with its affine logit map `Z(x) = A x + β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    /// Bit `h` is set when hidden neuron `h` is active on the cell.
    pub pattern: u64,
    /// Convex polygon, counter-clockwise.
    pub vertices: Vec<Point>,
    #[serde(rename = "A")]
    pub a: Vec<Point>,
    pub beta: Vec<f64>,
}

impl Cell {
    pub fn logits(&self, x: Point) -> Vec<f64> {
        self.a.iter().zip(&self.beta).map(|(row, b)| dot(*row, x) + b).collect()
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point {
        polygon_centroid(&self.vertices)
    }

    /// Gradient of `Z_i − Z_j` (0-based logit indices) on this cell.
    pub fn difference_gradient(&self, i: usize, j: usize) -> Point {
        sub(self.a[i], self.a[j])
    }

    fn difference_line(&self, i: usize, j: usize) -> Line {
        Line {
            normal: self.difference_gradient(i, j),
            offset: self.beta[i] - self.beta[j],
        }
    }
}

/// Piece of the decision boundary inside one cell, where the logits of the
/// two (1-based) `classes` tie and dominate every other logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundarySegment {
    pub cell: usize,
    pub classes: (usize, usize),
    pub from: Point,
    pub to: Point,
}

impl BoundarySegment {
    pub fn length(&self) -> f64 {
        norm(sub(self.to, self.from))
    }

    pub fn midpoint(&self) -> Point {
        lerp(self.from, self.to, 0.5)
    }

    pub fn distance(&self, p: Point) -> f64 {
        point_segment_distance(p, self.from, self.to)
    }

    /// The class tied with `t`, if `t` is one of the two.
    pub fn other(&self, t: usize) -> Option<usize> {
        match self.classes {
            (a, b) if a == t => Some(b),
            (a, b) if b == t => Some(a),
            _ => None,
        }
    }
}

/// Linear-region decomposition of the unit square.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolytopeMap {
    pub hyperplanes: Vec<Line>,
    pub cells: Vec<Cell>,
    #[serde(rename = "boundary")]
    pub boundary_segments: Vec<BoundarySegment>,
    /// `(c, C)`; `None` when no decision boundary crosses the square.
    #[serde(skip)]
    pub gradient_bounds: Option<(f64, f64)>,
    #[serde(rename = "c")]
    c_min: Option<f64>,
    #[serde(rename = "C")]
    c_max: Option<f64>,
}

const UNIT_SQUARE: [Point; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Cells of a 2-input, 1-hidden-layer ReLU network inside `[0,1]²`, built by
/// inserting one neuron line at a time.
pub fn enumerate_regions(model: &MlpModel) -> Result<PolytopeMap> {
    let layers = model.layers();
    if layers.len() != 2 || model.input_dim() != 2 {
        return Err(Error::Unsupported(format!(
            "exact regions need 2 inputs and one hidden layer, got {} inputs and {} hidden layers",
            model.input_dim(),
            layers.len() - 1
        )));
    }
    let (hidden, out) = (&layers[0], &layers[1]);
    if hidden.out_dim() > 64 {
        return Err(Error::Unsupported("more than 64 hidden neurons".into()));
    }
    let hyperplanes: Vec<Line> = hidden
        .w
        .iter()
        .zip(&hidden.b)
        .map(|(w, b)| Line { normal: [w[0], w[1]], offset: *b })
        .collect();

    let mut polys: Vec<Vec<Point>> = vec![UNIT_SQUARE.to_vec()];
    for line in hyperplanes.iter().filter_map(|l| l.normalized()) {
        let flipped = Line { normal: [-line.normal[0], -line.normal[1]], offset: -line.offset };
        let mut next = Vec::with_capacity(polys.len() * 2);
        for poly in polys {
            let s: Vec<f64> = poly.iter().map(|p| line.eval(*p)).collect();
            let all_pos = s.iter().all(|v| *v >= -GEOM_TOL);
            let all_neg = s.iter().all(|v| *v <= GEOM_TOL);
            if all_pos || all_neg {
                next.push(poly);
                continue;
            }
            for part in [clip_polygon(&poly, &line), clip_polygon(&poly, &flipped)] {
                if part.len() >= 3 && polygon_area(&part) > MIN_AREA {
                    next.push(part);
                }
            }
        }
        polys = next;
    }

    let cells: Vec<Cell> = polys
        .into_iter()
        .map(|vertices| {
            let m = polygon_centroid(&vertices);
            let active: Vec<bool> = hyperplanes.iter().map(|l| l.eval(m) > 0.0).collect();
            let pattern = active
                .iter()
                .enumerate()
                .fold(0u64, |acc, (h, &on)| if on { acc | (1 << h) } else { acc });
            let a = out
                .w
                .iter()
                .map(|row| {
                    let mut r = [0.0; 2];
                    for (h, wo) in row.iter().enumerate() {
                        if active[h] {
                            r[0] += wo * hidden.w[h][0];
                            r[1] += wo * hidden.w[h][1];
                        }
                    }
                    r
                })
                .collect();
            let beta = out
                .w
                .iter()
                .zip(&out.b)
                .map(|(row, bo)| {
                    bo + row
                        .iter()
                        .enumerate()
                        .filter(|(h, _)| active[*h])
                        .map(|(h, wo)| wo * hidden.b[h])
                        .sum::<f64>()
                })
                .collect();
            Cell { pattern, vertices, a, beta }
        })
        .collect();

    let boundary_segments = decision_boundary(&cells);
    let gradient_bounds = boundary_gradient_bounds(&cells, &boundary_segments);
    Ok(PolytopeMap {
        hyperplanes,
        cells,
        boundary_segments,
        gradient_bounds,
        c_min: gradient_bounds.map(|b| b.0),
        c_max: gradient_bounds.map(|b| b.1),
    })
}

/// Decision-boundary pieces of every cell: for each class pair, the tie line
/// clipped to the cell and to the region where the pair holds the top two
/// logits.
pub fn decision_boundary(cells: &[Cell]) -> Vec<BoundarySegment> {
    let mut segs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let c = cell.a.len();
        for i in 0..c {
            for j in i + 1..c {
                let Some(tie) = cell.difference_line(i, j).normalized() else {
                    continue;
                };
                let Some(mut seg) = line_through_polygon(&cell.vertices, &tie) else {
                    continue;
                };
                let mut alive = true;
                for k in (0..c).filter(|&k| k != i && k != j) {
                    match cell.difference_line(i, k).normalized() {
                        Some(dom) => match clip_segment(seg, &dom) {
                            Some(s) => seg = s,
                            None => alive = false,
                        },
                        None => alive = cell.beta[i] >= cell.beta[k],
                    }
                    if !alive {
                        break;
                    }
                }
                if alive {
                    segs.push(BoundarySegment { cell: ci, classes: (i + 1, j + 1), from: seg.0, to: seg.1 });
                }
            }
        }
    }
    segs
}

/// `(min, max)` of `‖∇(Z_i − Z_j)‖₂` over the cells carrying boundary
/// segments, each taken with the segment's own class pair.
pub fn boundary_gradient_bounds(cells: &[Cell], segs: &[BoundarySegment]) -> Option<(f64, f64)> {
    segs.iter()
        .map(|s| norm(cells[s.cell].difference_gradient(s.classes.0 - 1, s.classes.1 - 1)))
        .fold(None, |acc, g| match acc {
            None => Some((g, g)),
            Some((lo, hi)) => Some((f64::min(lo, g), f64::max(hi, g))),
        })
}

/// Gradient of the untargeted penalty `Z_t − Z_j` on a cell, `j` being the
/// runner-up class (at the centroid) among classes other than `t`.
pub fn cell_penalty_gradient(cell: &Cell, t: usize) -> Point {
    let z = cell.logits(cell.centroid());
    let ti = t - 1;
    let j = (0..z.len())
        .filter(|&i| i != ti)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if z[b] >= z[i] => Some(b),
            _ => Some(i),
        })
        .expect("at least two classes");
    cell.difference_gradient(ti, j)
}

impl PolytopeMap {
    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    /// Indices of the cells whose closure contains `p` (within `tol`).
    pub fn cells_containing(&self, p: Point, tol: f64) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| polygon_contains(&self.cells[i].vertices, p, tol))
            .collect()
    }

    /// First cell containing `p`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        self.cells.iter().position(|c| polygon_contains(&c.vertices, p, 1e-12))
    }

    /// Distance from `p` to the nearest decision-boundary segment.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        self.boundary_segments.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Segments of `∂F` for an attack leaving class `t`, with the tie partner.
    fn class_boundary(&self, t: usize) -> impl Iterator<Item = (&BoundarySegment, usize)> {
        self.boundary_segments.iter().filter_map(move |s| s.other(t).map(|u| (s, u)))
    }

    /// JSON region dump.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Smallest `‖a Σ λ_i g_i − r‖` over `λ ≥ 0`, `Σλ ≤ 1`, returning the
/// residual and the multipliers. In the plane every point of
/// `conv{0, g_1, …}` lies in a triangle `conv{0, g_i, g_j}`, so pairs suffice.
pub fn cone_residual(gradients: &[Point], a: f64, r: Point) -> (f64, Vec<f64>) {
    let v: Vec<Point> = gradients.iter().map(|g| [a * g[0], a * g[1]]).collect();
    let m = v.len();
    let mut best = (norm(r), vec![0.0; m]);
    let mut consider = |lam: Vec<f64>| {
        let mut s = [0.0, 0.0];
        for (l, vi) in lam.iter().zip(&v) {
            s[0] += l * vi[0];
            s[1] += l * vi[1];
        }
        let res = norm(sub(s, r));
        if res < best.0 {
            best = (res, lam);
        }
    };
    for i in 0..m {
        let vv = dot(v[i], v[i]);
        if vv > 0.0 {
            let mut lam = vec![0.0; m];
            lam[i] = (dot(v[i], r) / vv).clamp(0.0, 1.0);
            consider(lam);
        }
        for j in i + 1..m {
            let det = v[i][0] * v[j][1] - v[i][1] * v[j][0];
            if det.abs() > 1e-300 {
                let li = (r[0] * v[j][1] - r[1] * v[j][0]) / det;
                let lj = (v[i][0] * r[1] - v[i][1] * r[0]) / det;
                if li >= 0.0 && lj >= 0.0 && li + lj <= 1.0 {
                    let mut lam = vec![0.0; m];
                    lam[i] = li;
                    lam[j] = lj;
                    consider(lam);
                }
            }
            // edge λ_i + λ_j = 1
            let e = sub(v[j], v[i]);
            let ee = dot(e, e);
            if ee > 0.0 {
                let s = (dot(sub(r, v[i]), e) / ee).clamp(0.0, 1.0);
                let mut lam = vec![0.0; m];
                lam[i] = 1.0 - s;
                lam[j] = s;
                consider(lam);
            }
        }
    }
    best
}

/// A certified stationary point of `F` on the decision boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryCertificate {
    pub point: Point,
    pub cells: Vec<usize>,
    /// Penalty gradients of the active pieces, paired with `multipliers`.
    pub gradients: Vec<Point>,
    pub multipliers: Vec<f64>,
    pub residual: f64,
    /// Result of [`isolation_check`] and the radius it scanned.
    pub isolated: Option<(bool, f64)>,
}

fn class_of(model: &MlpModel, x0: Point) -> Result<usize> {
    let t = model.classify(&x0)?;
    if t == 0 {
        return Err(Error::BoundaryStart);
    }
    Ok(t)
}

fn on_box_boundary(p: Point) -> bool {
    p.iter().any(|v| *v <= 1e-9 || *v >= 1.0 - 1e-9)
}

/// Every analytically certified stationary point on the boundary of the
/// region of `κ(x₀)`, nearest to `x₀` first.
///
/// Candidates are orthogonal projections of `x₀` onto the tie line of each
/// segment (one active piece) and segment end points where several pieces
/// meet. A candidate is kept when its multipliers satisfy `λ ≥ 0`, `Σλ ≤ 1`
/// and the residual of `2(x₀ − x) = a Σ λ_i g_i` is at most
/// [`ANALYTIC_RESIDUAL_TOL`]. Points on the box boundary are skipped.
pub fn stationary_points(pmap: &PolytopeMap, model: &MlpModel, x0: Point, a: f64) -> Result<Vec<StationaryCertificate>> {
    if !(a > 0.0) {
        return Err(invalid("penalty weight must be positive"));
    }
    if on_box_boundary(x0) {
        return Err(invalid("x0 must lie in the open unit square"));
    }
    let t = class_of(model, x0)?;
    let mut found: Vec<StationaryCertificate> = Vec::new();
    let push = |cert: StationaryCertificate, found: &mut Vec<StationaryCertificate>| {
        if cert.residual <= ANALYTIC_RESIDUAL_TOL
            && !on_box_boundary(cert.point)
            && !found.iter().any(|c| norm(sub(c.point, cert.point)) <= 1e-9)
        {
            found.push(cert);
        }
    };

    for (seg, u) in pmap.class_boundary(t) {
        let cell = &pmap.cells[seg.cell];
        let g = cell.difference_gradient(t - 1, u - 1);
        let gg = dot(g, g);
        if gg <= 0.0 {
            continue;
        }
        let h = cell.beta[t - 1] - cell.beta[u - 1];
        let s = dot(g, x0) + h;
        let x = [x0[0] - s / gg * g[0], x0[1] - s / gg * g[1]];
        let lambda = 2.0 * s / (a * gg);
        if !(0.0..=1.0).contains(&lambda) || seg.distance(x) > 1e-9 {
            continue;
        }
        let r = sub([2.0 * (x0[0] - x[0]), 2.0 * (x0[1] - x[1])], [a * lambda * g[0], a * lambda * g[1]]);
        push(
            StationaryCertificate {
                point: x,
                cells: pmap.cells_containing(x, 1e-9),
                gradients: vec![g],
                multipliers: vec![lambda],
                residual: norm(r),
                isolated: None,
            },
            &mut found,
        );
    }

    // junctions: end points shared by several pieces
    let pieces: Vec<(&BoundarySegment, usize)> = pmap.class_boundary(t).collect();
    for (seg, _) in &pieces {
        for p in [seg.from, seg.to] {
            let mut grads: Vec<Point> = Vec::new();
            let mut cells = Vec::new();
            for (other, u) in &pieces {
                if norm(sub(other.from, p)) <= 1e-9 || norm(sub(other.to, p)) <= 1e-9 {
                    let g = pmap.cells[other.cell].difference_gradient(t - 1, u - 1);
                    cells.push(other.cell);
                    if !grads.iter().any(|q| norm(sub(*q, g)) <= 1e-12) {
                        grads.push(g);
                    }
                }
            }
            if grads.len() < 2 {
                continue;
            }
            let r = [2.0 * (x0[0] - p[0]), 2.0 * (x0[1] - p[1])];
            let (residual, multipliers) = cone_residual(&grads, a, r);
            cells.sort_unstable();
            cells.dedup();
            push(
                StationaryCertificate { point: p, cells, gradients: grads, multipliers, residual, isolated: None },
                &mut found,
            );
        }
    }

    found.sort_by(|p, q| {
        norm(sub(p.point, x0)).total_cmp(&norm(sub(q.point, x0)))
    });
    Ok(found)
}

/// Default radius for the isolation scan attached to certificates.
pub const ISOLATION_RADIUS: f64 = 0.05;

/// Nearest certified stationary point to `x₀`, with its isolation flag.
pub fn stationary_point_near(pmap: &PolytopeMap, model: &MlpModel, x0: Point, a: f64) -> Result<StationaryCertificate> {
    let mut cert = stationary_points(pmap, model, x0, a)?.into_iter().next().ok_or(Error::NotFound)?;
    let iso = isolation_check(pmap, model, x0, a, cert.point, ISOLATION_RADIUS)?;
    cert.isolated = Some((iso, ISOLATION_RADIUS));
    Ok(cert)
}

/// Single-gradient stationarity residual at `p` with the network's own
/// gradient of `Z_t − Z_u`.
fn network_residual(model: &MlpModel, x0: Point, a: f64, p: Point, t: usize, u: usize) -> f64 {
    let mut seed = vec![0.0; model.classes()];
    seed[t - 1] = 1.0;
    seed[u - 1] = -1.0;
    let g = model.input_gradient_unchecked(&p, &seed);
    cone_residual(&[[g[0], g[1]]], a, [2.0 * (x0[0] - p[0]), 2.0 * (x0[1] - p[1])]).0
}

/// Points reachable from the seeds through chains of links no longer than
/// `link`.
fn grow_cluster(points: &[Point], seeds: impl Fn(Point) -> bool, link: f64) -> Vec<bool> {
    let mut member: Vec<bool> = points.iter().map(|p| seeds(*p)).collect();
    let mut frontier: Vec<usize> = (0..points.len()).filter(|&i| member[i]).collect();
    while let Some(i) = frontier.pop() {
        for j in 0..points.len() {
            if !member[j] && norm(sub(points[i], points[j])) <= link {
                member[j] = true;
                frontier.push(j);
            }
        }
    }
    member
}

/// Scans the boundary within `radius` of `x*` at [`GRID_STEP`] spacing for a
/// second point passing the stationarity residual test. Points chained to
/// `x*` through passing neighbours belong to `x*` itself. Returns true when no
/// other stationary point is found.
pub fn isolation_check(pmap: &PolytopeMap, model: &MlpModel, x0: Point, a: f64, x_star: Point, radius: f64) -> Result<bool> {
    let t = class_of(model, x0)?;
    let tol = grid_residual_tol(a);
    let mut passing = Vec::new();
    for (seg, u) in pmap.class_boundary(t) {
        if seg.distance(x_star) > radius {
            continue;
        }
        let steps = (seg.length() / GRID_STEP).ceil() as usize;
        for k in 0..=steps {
            let p = lerp(seg.from, seg.to, k as f64 / steps.max(1) as f64);
            if norm(sub(p, x_star)) <= radius && network_residual(model, x0, a, p, t, u) <= tol {
                passing.push(p);
            }
        }
    }
    let link = 3.0 * GRID_STEP;
    let member = grow_cluster(&passing, |p| norm(sub(p, x_star)) <= link, link);
    Ok(member.into_iter().all(|m| m))
}

/// Whether the closed disk `B(x*, 3ε)` lies in the unit square and inside the
/// union of the cells that contain `x*`.
pub fn ball_eligibility(pmap: &PolytopeMap, x_star: Point, eps: f64) -> bool {
    let r = 3.0 * eps;
    if x_star.iter().any(|v| *v - r <= 0.0 || *v + r >= 1.0) {
        return false;
    }
    let own = pmap.cells_containing(x_star, 1e-9);
    pmap.cells
        .iter()
        .enumerate()
        .filter(|(i, _)| !own.contains(i))
        .all(|(_, c)| point_polygon_distance(&c.vertices, x_star) >= r - GEOM_TOL)
}

/// True when every iterate stays within `3ε` of `x*`.
pub fn verify_theorem2(iterates: &[Vec<f64>], x_star: Point, eps: f64) -> bool {
    iterates
        .iter()
        .all(|x| norm(sub([x[0], x[1]], x_star)) <= 3.0 * eps)
}

/// Decision boundary of one class sampled from the network alone: sign
/// changes of `Z_t − max_{i≠t} Z_i` along every horizontal and vertical grid
/// line spaced [`GRID_STEP`] apart, refined by bisection.
#[derive(Debug, Clone)]
pub struct GridBoundary {
    pub class: usize,
    pub points: Vec<Point>,
}

fn margin(model: &MlpModel, p: Point, t: usize) -> f64 {
    let z = model.logits_unchecked(&p);
    z[t - 1] - z.iter().enumerate().filter(|(i, _)| *i != t - 1).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max)
}

impl GridBoundary {
    pub fn extract(model: &MlpModel, t: usize) -> Result<GridBoundary> {
        if model.input_dim() != 2 {
            return Err(Error::Unsupported("grid boundary needs 2 inputs".into()));
        }
        model.check_class(t)?;
        let lines = (1.0 / GRID_STEP).round() as usize;
        let coarse = 100usize;
        let mut points = Vec::new();
        for axis in 0..2 {
            for li in 0..=lines {
                let fixed = li as f64 * GRID_STEP;
                let at = |s: f64| if axis == 0 { [fixed, s] } else { [s, fixed] };
                let mut prev_s = 0.0;
                let mut prev_m = margin(model, at(0.0), t);
                for k in 1..=coarse {
                    let s = k as f64 / coarse as f64;
                    let m = margin(model, at(s), t);
                    if (prev_m > 0.0) != (m > 0.0) {
                        let (mut lo, mut hi, mut mlo) = (prev_s, s, prev_m);
                        for _ in 0..40 {
                            let mid = 0.5 * (lo + hi);
                            let mm = margin(model, at(mid), t);
                            if (mm > 0.0) == (mlo > 0.0) {
                                lo = mid;
                                mlo = mm;
                            } else {
                                hi = mid;
                            }
                        }
                        points.push(at(0.5 * (lo + hi)));
                    }
                    prev_s = s;
                    prev_m = m;
                }
            }
        }
        Ok(GridBoundary { class: t, points })
    }
}

/// Grid counterpart of [`stationary_point_near`] that never looks at the
/// region map: boundary points come from [`GridBoundary`], gradients from
/// backpropagation at the point and at tiny offsets on the infeasible side.
/// Passing points are grouped, the lowest-residual point of each group is a
/// candidate, and the candidate nearest to `x₀` is returned.
pub fn stationary_point_grid(grid: &GridBoundary, model: &MlpModel, x0: Point, a: f64) -> Result<StationaryCertificate> {
    let t = class_of(model, x0)?;
    if t != grid.class {
        return Err(invalid("grid boundary was extracted for another class"));
    }
    let tol = grid_residual_tol(a);
    let r_of = |p: Point| [2.0 * (x0[0] - p[0]), 2.0 * (x0[1] - p[1])];
    let mut passing: Vec<(Point, f64, Vec<Point>, Vec<f64>)> = Vec::new();
    for &p in &grid.points {
        if on_box_boundary(p) {
            continue;
        }
        let mut grads: Vec<Point> = Vec::new();
        let h = 1e-7;
        for off in [[0.0, 0.0], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]] {
            let q = [p[0] + off[0], p[1] + off[1]];
            let z = model.logits_unchecked(&q);
            let pen = crate::attack::penalty_from_logits(&z, Goal::Leave(t), 0.0);
            let mut seed = vec![0.0; model.classes()];
            seed[pen.plus] = 1.0;
            seed[pen.minus] = -1.0;
            let g = model.input_gradient_unchecked(&q, &seed);
            let g = [g[0], g[1]];
            if !grads.iter().any(|q| norm(sub(*q, g)) <= 1e-9) {
                grads.push(g);
            }
        }
        let (res, lam) = cone_residual(&grads, a, r_of(p));
        if res <= tol {
            passing.push((p, res, grads, lam));
        }
    }
    passing.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut reps: Vec<usize> = Vec::new();
    let group = 0.01;
    for i in 0..passing.len() {
        if !reps.iter().any(|&k| norm(sub(passing[k].0, passing[i].0)) <= group) {
            reps.push(i);
        }
    }
    let best = reps
        .into_iter()
        .min_by(|&i, &j| norm(sub(passing[i].0, x0)).total_cmp(&norm(sub(passing[j].0, x0))))
        .ok_or(Error::NotFound)?;
    let (point, residual, gradients, multipliers) = passing.swap_remove(best);
    Ok(StationaryCertificate { point, cells: Vec::new(), gradients, multipliers, residual, isolated: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use approx::assert_abs_diff_eq;

    fn single_neuron() -> MlpModel {
        // hidden line x + y = 1, output Z1 = h, Z2 = 0.2
        MlpModel::new(vec![
            Layer { w: vec![vec![1.0, 1.0]], b: vec![-1.0] },
            Layer { w: vec![vec![1.0], vec![0.0]], b: vec![0.0, 0.2] },
        ])
        .unwrap()
    }

    /// Hidden layer of identity-like neurons so the logits are affine on the
    /// whole square: Z1 − Z2 = x − y + 0.1.
    fn affine_net() -> MlpModel {
        MlpModel::new(vec![
            Layer { w: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![5.0, 5.0] },
            Layer { w: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![0.1, 0.0] },
        ])
        .unwrap()
    }

    #[test]
    fn one_line_two_cells() {
        let p = enumerate_regions(&single_neuron()).unwrap();
        assert_eq!(p.cells.len(), 2);
        assert_abs_diff_eq!(p.total_area(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cells[0].area(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lines_missing_or_parallel() {
        // line outside the square, zero neuron, and two coincident lines
        let m = MlpModel::new(vec![
            Layer {
                w: vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.0]],
                b: vec![-3.0, 1.0, -0.5, -1.0, -0.25],
            },
            Layer { w: vec![vec![1.0; 5], vec![0.0; 5]], b: vec![0.0, 0.0] },
        ])
        .unwrap();
        let p = enumerate_regions(&m).unwrap();
        // only x = 0.5 (twice) and x = 0.25 split the square
        assert_eq!(p.cells.len(), 3);
        assert_abs_diff_eq!(p.total_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn deeper_nets_rejected() {
        let m = MlpModel::init(&[2, 3, 3, 2], 1).unwrap();
        assert!(matches!(enumerate_regions(&m), Err(Error::Unsupported(_))));
        let m = MlpModel::init(&[3, 3, 2], 1).unwrap();
        assert!(enumerate_regions(&m).is_err());
    }

    #[test]
    fn linear_boundary_and_bounds() {
        let m = affine_net();
        let p = enumerate_regions(&m).unwrap();
        assert_eq!(p.cells.len(), 1);
        assert_eq!(p.boundary_segments.len(), 1);
        let s = p.boundary_segments[0];
        // x − y + 0.1 = 0 meets the square at (0, 0.1) and (0.9, 1)
        let mut ends = [s.from, s.to];
        ends.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_abs_diff_eq!(ends[0][1], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(ends[1][0], 0.9, epsilon = 1e-12);
        let (c, cc) = p.gradient_bounds.unwrap();
        assert_abs_diff_eq!(c, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(cc, 2f64.sqrt(), epsilon = 1e-12);
        let g = cell_penalty_gradient(&p.cells[0], 1);
        assert_abs_diff_eq!(g[0], 1.0);
        assert_abs_diff_eq!(g[1], -1.0);
        let g = cell_penalty_gradient(&p.cells[0], 2);
        assert_abs_diff_eq!(g[0], -1.0);
    }

    #[test]
    fn linear_stationary_point_is_projection() {
        let m = affine_net();
        let p = enumerate_regions(&m).unwrap();
        let x0 = [0.7, 0.3];
        let a = 2.0;
        let cert = stationary_point_near(&p, &m, x0, a).unwrap();
        // projection of x0 onto x − y + 0.1 = 0
        let s = (0.7 - 0.3 + 0.1) / 2.0;
        let expect = [0.7 - s, 0.3 + s];
        assert_abs_diff_eq!(cert.point[0], expect[0], epsilon = 1e-12);
        assert_abs_diff_eq!(cert.point[1], expect[1], epsilon = 1e-12);
        let dist = norm(sub(x0, expect));
        assert_abs_diff_eq!(cert.multipliers[0], 2.0 * dist / (a * 2f64.sqrt()), epsilon = 1e-12);
        assert!(cert.residual <= ANALYTIC_RESIDUAL_TOL);
        assert_eq!(cert.isolated, Some((true, ISOLATION_RADIUS)));
        // penalty too weak for the boundary: λ would exceed 1
        assert!(matches!(stationary_point_near(&p, &m, x0, 0.1), Err(Error::NotFound)));
    }

    #[test]
    fn cone_residual_cases() {
        let g = [[1.0, 0.0], [0.0, 1.0]];
        let (r, lam) = cone_residual(&g, 1.0, [0.3, 0.4]);
        assert!(r < 1e-15);
        assert_abs_diff_eq!(lam[0], 0.3);
        assert_abs_diff_eq!(lam[1], 0.4);
        // outside the simplex: λ sum capped at 1
        let (r, lam) = cone_residual(&g, 1.0, [1.0, 1.0]);
        assert_abs_diff_eq!(r, (0.5f64).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(lam[0] + lam[1], 1.0, epsilon = 1e-12);
        // negative direction only reachable with λ = 0
        let (r, _) = cone_residual(&g, 1.0, [-1.0, 0.0]);
        assert_abs_diff_eq!(r, 1.0);
    }

    #[test]
    fn eligibility_and_theorem2() {
        let p = enumerate_regions(&single_neuron()).unwrap();
        // x* in the middle of a cell, far from the neuron line
        assert!(ball_eligibility(&p, [0.2, 0.2], 0.0));
        assert!(ball_eligibility(&p, [0.2, 0.2], 0.05));
        // disk crosses into the other cell
        assert!(!ball_eligibility(&p, [0.45, 0.45], 0.05));
        // on the line both cells contain x*
        assert!(ball_eligibility(&p, [0.5, 0.5], 0.1));
        // leaves the square
        assert!(!ball_eligibility(&p, [0.05, 0.5], 0.02));

        let xs = [0.5, 0.5];
        assert!(verify_theorem2(&[vec![0.5, 0.5]], xs, 0.0));
        let eps = 0.01;
        let out = vec![0.5 + 3.0 * eps + 1e-6, 0.5];
        assert!(!verify_theorem2(&[vec![0.5, 0.5], out], xs, eps));
        assert!(verify_theorem2(&[vec![0.5, 0.5], vec![0.5 + 3.0 * eps - 1e-9, 0.5]], xs, eps));
    }

    #[test]
    fn geometry_helpers() {
        let sq = UNIT_SQUARE.to_vec();
        assert_abs_diff_eq!(polygon_area(&sq), 1.0);
        let c = polygon_centroid(&sq);
        assert_abs_diff_eq!(c[0], 0.5);
        assert!(polygon_contains(&sq, [1.0, 0.5], 0.0));
        assert!(!polygon_contains(&sq, [1.1, 0.5], 1e-9));
        assert_abs_diff_eq!(point_polygon_distance(&sq, [1.5, 0.5]), 0.5);
        let half = clip_polygon(&sq, &Line { normal: [1.0, 0.0], offset: -0.25 });
        assert_abs_diff_eq!(polygon_area(&half), 0.75, epsilon = 1e-15);
        let seg = line_through_polygon(&sq, &Line { normal: [0.0, 1.0], offset: -0.5 }).unwrap();
        assert_abs_diff_eq!(norm(sub(seg.1, seg.0)), 1.0);
        // line along an edge
        assert!(line_through_polygon(&sq, &Line { normal: [1.0, 0.0], offset: 0.0 }).is_some());
        assert!(line_through_polygon(&sq, &Line { normal: [1.0, 0.0], offset: 0.5 }).is_none());
    }

    #[test]
    fn json_dump_shape() {
        let p = enumerate_regions(&affine_net()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["cells", "boundary", "c", "C"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let cell = &v["cells"][0];
        for key in ["pattern", "vertices", "A", "beta"] {
            assert!(cell.get(key).is_some(), "{key}");
        }
    }
}
