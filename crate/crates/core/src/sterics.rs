//! Double-integral steric repulsion between fibers.
//!
//! The pair energy is ∫∫ φ(r(s, s′)) ds ds′ with a Gaussian force profile of
//! width δ truncated at r_max = 4δ. Two quadratures of the same double
//! integral are provided: trapezoid sums over uniform points on every fiber,
//! and the segment algorithm, which locates local minima of the inter-fiber
//! distance by a projected Newton method and integrates only over small
//! Gauss-Legendre rectangles around them.

use crate::app::domain::Domain;
use crate::app::neighbor::neighbor_search;
use crate::error::{Error, Result};
use crate::filament::{DiscretizationOps, FilamentShape};
use crate::linalg::apply_blockwise;
use crate::spectral::{resampling_matrix, GLTable};
use nalgebra::{Matrix2, SymmetricEigen, Vector2, Vector3};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct StericParams {
    /// Force scale E₀ (energy per length).
    pub e0: f64,
    /// Fiber radius a entering E₀/a.
    pub radius: f64,
    /// Gaussian width δ.
    pub delta: f64,
    pub r_max: f64,
    /// Gauss-Legendre points per standard deviation.
    pub n_delta: f64,
    /// Pieces per fiber in the segment algorithm.
    pub n_seg: usize,
    /// Gradient tolerance of the Newton solve (length units).
    pub newton_tol: f64,
    pub kappa_max: f64,
    pub newton_max_iters: usize,
}

impl StericParams {
    /// δ = a, r_max = 4δ, N_δ = 1, 10 pieces, tolerance 0.01δ.
    pub fn new(e0: f64, radius: f64) -> Result<Self> {
        let p = Self {
            e0,
            radius,
            delta: radius,
            r_max: 4.0 * radius,
            n_delta: 1.0,
            n_seg: 10,
            newton_tol: 0.01 * radius,
            kappa_max: 1e6,
            newton_max_iters: 100,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.delta > 0.0 && self.e0 >= 0.0) {
            return Err(Error::InvalidArgument("steric radius, width and force scale must be positive".into()));
        }
        if (self.r_max - 4.0 * self.delta).abs() > 1e-12 * self.delta {
            return Err(Error::InvalidArgument("r_max must equal 4δ".into()));
        }
        if self.n_delta < 1.0 || self.n_seg < 2 {
            return Err(Error::InvalidArgument("need N_δ ≥ 1 and at least 2 pieces per fiber".into()));
        }
        Ok(())
    }

    pub fn with_n_delta(mut self, n_delta: f64) -> Self {
        self.n_delta = n_delta;
        self
    }

    pub fn with_n_seg(mut self, n_seg: usize) -> Self {
        self.n_seg = n_seg;
        self
    }

    /// Gauss-Legendre count for an interval of length `len`.
    pub fn gl_count(&self, len: f64) -> usize {
        (self.n_delta * len / self.delta).floor() as usize + 1
    }
}

/// Ê(r) = (E₀/a) erf(r/(δ√2)) and its derivative.
pub fn potential_density(r: f64, p: &StericParams) -> (f64, f64) {
    let e = p.e0 / p.radius * libm::erf(r / (p.delta * std::f64::consts::SQRT_2));
    (e, force_magnitude(r, p))
}

/// dÊ/dr, the magnitude of the repulsive pair force density.
pub fn force_magnitude(r: f64, p: &StericParams) -> f64 {
    p.e0 / (p.radius * p.delta) * (2.0 / PI).sqrt() * (-r * r / (2.0 * p.delta * p.delta)).exp()
}

/// Repulsive pair energy density (E₀/a) erfc(r/(δ√2)), whose negative
/// gradient is the force of [`force_magnitude`] pushing the points apart.
pub fn repulsive_energy_density(r: f64, p: &StericParams) -> f64 {
    p.e0 / p.radius * libm::erfc(r / (p.delta * std::f64::consts::SQRT_2))
}

/// Nodal values of 𝕏, 𝕏′ and 𝕏″ with pointwise evaluation of the interpolants.
pub struct FiberCurve<'a> {
    ops: &'a DiscretizationOps,
    x: Vec<f64>,
    xs: Vec<f64>,
    xss: Vec<f64>,
}

impl<'a> FiberCurve<'a> {
    pub fn new(shape: &FilamentShape, ops: &'a DiscretizationOps) -> Self {
        let x = shape.positions().as_slice().to_vec();
        let xs = apply_blockwise(&ops.x_grid.diff, &x);
        let xss = apply_blockwise(&ops.x_grid.diff, &xs);
        Self { ops, x, xs, xss }
    }

    fn eval(&self, v: &[f64], row: &[f64]) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for (m, c) in row.iter().enumerate() {
            out += Vector3::new(v[3 * m], v[3 * m + 1], v[3 * m + 2]) * *c;
        }
        out
    }

    pub fn row(&self, s: f64) -> Vec<f64> {
        self.ops.x_grid.interpolation_row(s)
    }

    pub fn point(&self, s: f64) -> Vector3<f64> {
        self.eval(&self.x, &self.row(s))
    }

    /// (𝕏, 𝕏′, 𝕏″) at s.
    pub fn jet(&self, s: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let r = self.row(s);
        (self.eval(&self.x, &r), self.eval(&self.xs, &r), self.eval(&self.xss, &r))
    }

    pub fn length(&self) -> f64 {
        self.ops.params.length
    }
}

/// Distance from 𝕏 at the middle of a piece to the chord between its ends.
pub fn curvature_deviation(curve: &FiberCurve, piece: [f64; 2]) -> f64 {
    let a = curve.point(piece[0]);
    let b = curve.point(piece[1]);
    let m = curve.point(0.5 * (piece[0] + piece[1]));
    point_line_distance(&m, &a, &b)
}

fn point_line_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let n2 = ab.norm_squared();
    if n2 == 0.0 {
        return (p - a).norm();
    }
    let t = (p - a).dot(&ab) / n2;
    (p - (a + ab * t)).norm()
}

/// Closest points of segments [p0, p1] and [q0, q1]; parameters in [0, 1].
pub fn segment_closest_points(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    q0: &Vector3<f64>,
    q1: &Vector3<f64>,
) -> (f64, f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let tiny = 1e-300;
    let (s, t);
    if a <= tiny && e <= tiny {
        return (0.0, 0.0, r.norm());
    }
    if a <= tiny {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= tiny {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.5 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let dist = (p0 + d1 * s - (q0 + d2 * t)).norm();
    (s, t, dist)
}

/// Local minimizer of ‖𝕏ⁱ(s) − 𝕏ʲ(t) + offset‖² over [0, L]² by projected
/// Newton with a conditioned Hessian and Armijo backtracking.
pub fn closest_points(
    ci: &FiberCurve,
    cj: &FiberCurve,
    offset: &Vector3<f64>,
    guess: (f64, f64),
    p: &StericParams,
) -> Result<(f64, f64, f64)> {
    let (li, lj) = (ci.length(), cj.length());
    let eps_b = 1e-10;
    let objective = |s: &Vector2<f64>| (ci.point(s[0]) - cj.point(s[1]) + offset).norm_squared();
    let project = |s: Vector2<f64>| Vector2::new(s[0].clamp(0.0, li), s[1].clamp(0.0, lj));
    let mut s = project(Vector2::new(guess.0, guess.1));
    for _ in 0..p.newton_max_iters {
        let (xi, xis, xiss) = ci.jet(s[0]);
        let (xj, xjs, xjss) = cj.jet(s[1]);
        let d = xi - xj + offset;
        let mut g = Vector2::new(2.0 * d.dot(&xis), -2.0 * d.dot(&xjs));
        let cross = -2.0 * xis.dot(&xjs);
        let h = Matrix2::new(
            2.0 * (xis.norm_squared() + d.dot(&xiss)),
            cross,
            cross,
            2.0 * (xjs.norm_squared() - d.dot(&xjss)),
        );
        let eig = SymmetricEigen::new(h);
        let (i1, i2) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let l1 = eig.eigenvalues[i1];
        let mut l2 = eig.eigenvalues[i2];
        if l1 <= 0.0 {
            return Err(Error::NewtonAbort);
        }
        if l2 < l1 / p.kappa_max {
            l2 = l1 / p.kappa_max;
        }
        let v1 = eig.eigenvectors.column(i1).into_owned();
        let v2 = eig.eigenvectors.column(i2).into_owned();
        let mut hinv = v1 * v1.transpose() / l1 + v2 * v2.transpose() / l2;
        for (q, len) in [(0, li), (1, lj)] {
            let at_lo = s[q] <= eps_b * len && g[q] > 0.0;
            let at_hi = s[q] >= len * (1.0 - eps_b) && g[q] < 0.0;
            if at_lo || at_hi {
                g[q] = 0.0;
                for k in 0..2 {
                    hinv[(q, k)] = 0.0;
                    hinv[(k, q)] = 0.0;
                }
            }
        }
        if g.norm() < p.newton_tol {
            return Ok((s[0], s[1], d.norm()));
        }
        let mut step = -(hinv * g);
        let cap = 0.1 * li.max(lj);
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        let d0 = d.norm_squared();
        let slope = g.dot(&step);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = project(s + step * alpha);
            if d0 - objective(&trial) >= -0.5 * alpha * slope {
                s = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // No representable descent left: the gradient is at roundoff level.
            return Ok((s[0], s[1], d.norm()));
        }
    }
    Err(Error::MaxIters(p.newton_max_iters))
}

/// Rectangle S^i × S^j of a fiber pair over which the energy is integrated.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionInterval {
    pub fibers: (usize, usize),
    pub si: [f64; 2],
    pub sj: [f64; 2],
    /// Piece pair whose Newton solve produced this interval.
    pub source: (usize, usize),
}

impl InteractionInterval {
    fn overlaps(&self, o: &Self) -> bool {
        self.si[0] <= o.si[1] && o.si[0] <= self.si[1] && self.sj[0] <= o.sj[1] && o.sj[0] <= self.sj[1]
    }

    fn absorb(&mut self, o: &Self) {
        self.si = [self.si[0].min(o.si[0]), self.si[1].max(o.si[1])];
        self.sj = [self.sj[0].min(o.sj[0]), self.sj[1].max(o.sj[1])];
    }
}

/// Half-widths (Δsⁱ, Δsʲ) of the bounding box of the quadratic slack
/// a Δsⁱ² + b Δsʲ² + 2c Δsⁱ + 2d Δsʲ + 2e Δsⁱ Δsʲ + f ≤ 0, or `None` when the
/// region is unbounded (degenerate or indefinite form).
pub fn ellipse_extents(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Option<(f64, f64)> {
    let scale = (a * b).abs().max(e * e);
    let det = a * b - e * e;
    if a <= 0.0 || b <= 0.0 || det <= 1e-12 * scale {
        return None;
    }
    let den = 8.0 * e * e - 8.0 * a * b;
    let root = |lin: f64, disc: f64| -> Option<f64> {
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        Some(((lin + sq) / den).abs().max(((lin - sq) / den).abs()))
    };
    let di = root(
        8.0 * c * b - 8.0 * d * e,
        (8.0 * d * e - 8.0 * c * b).powi(2) - 4.0 * (4.0 * e * e - 4.0 * a * b) * (4.0 * d * d - 4.0 * b * f),
    )?;
    let dj = root(
        8.0 * a * d - 8.0 * c * e,
        (8.0 * c * e - 8.0 * a * d).powi(2) - 4.0 * (4.0 * e * e - 4.0 * a * b) * (4.0 * c * c - 4.0 * a * f),
    )?;
    Some((di, dj))
}

/// Integration rectangle around a local minimum (s*, t*) of the distance, or
/// `None` if the fibers are farther apart than r_max there.
pub fn interaction_interval(
    ci: &FiberCurve,
    cj: &FiberCurve,
    offset: &Vector3<f64>,
    star: (f64, f64),
    fibers: (usize, usize),
    source: (usize, usize),
    p: &StericParams,
) -> Option<InteractionInterval> {
    let (xi, xis, xiss) = ci.jet(star.0);
    let (xj, xjs, xjss) = cj.jet(star.1);
    let dv = xi - xj + offset;
    let dstar = dv.norm();
    if dstar >= p.r_max {
        return None;
    }
    let a = xis.norm_squared() + dv.dot(&xiss);
    let b = xjs.norm_squared() - dv.dot(&xjss);
    let c = dv.dot(&xis);
    let d = -dv.dot(&xjs);
    let e = -xis.dot(&xjs);
    let f = dstar * dstar - p.r_max * p.r_max;
    let (li, lj) = (ci.length(), cj.length());
    let (si, sj) = match ellipse_extents(a, b, c, d, e, f) {
        Some((di, dj)) => (
            [(star.0 - di).max(0.0), (star.0 + di).min(li)],
            [(star.1 - dj).max(0.0), (star.1 + dj).min(lj)],
        ),
        None => ([0.0, li], [0.0, lj]),
    };
    Some(InteractionInterval { fibers, si, sj, source })
}

/// Unions overlapping rectangles until all remaining ones are disjoint.
pub fn merge_intervals(mut intervals: Vec<InteractionInterval>) -> Vec<InteractionInterval> {
    intervals.sort_by(|x, y| x.si[0].total_cmp(&y.si[0]));
    loop {
        let mut out: Vec<InteractionInterval> = Vec::with_capacity(intervals.len());
        let mut changed = false;
        for iv in intervals {
            if let Some(k) = out.iter().position(|o| o.overlaps(&iv)) {
                out[k].absorb(&iv);
                changed = true;
            } else {
                out.push(iv);
            }
        }
        intervals = out;
        if !changed {
            return intervals;
        }
        intervals.sort_by(|x, y| x.si[0].total_cmp(&y.si[0]));
    }
}

/// Merged rectangles of one fiber pair under one periodic image.
#[derive(Clone, Debug)]
pub struct PairContacts {
    pub i: usize,
    pub j: usize,
    /// Added to 𝕏ⁱ − 𝕏ʲ to obtain the minimum-image separation.
    pub offset: Vector3<f64>,
    pub intervals: Vec<InteractionInterval>,
    /// GL sizes (Nⁱ, Nʲ) per interval.
    pub rule_sizes: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default)]
pub struct ContactSet {
    pub pairs: Vec<PairContacts>,
    /// Fiber pairs computed with uniform points after a Newton failure.
    pub fallback_pairs: Vec<(usize, usize)>,
    pub newton_solves: usize,
    pub newton_failures: usize,
}

impl ContactSet {
    pub fn contact_count(&self) -> usize {
        self.pairs.iter().map(|p| p.intervals.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct StericForces {
    /// Per-fiber nodal forces (interleaved, 3N_x).
    pub forces: Vec<Vec<f64>>,
    pub contacts: ContactSet,
}

/// Uniform points on [0, L] with trapezoid weights.
pub fn uniform_points(n_u: usize, length: f64) -> (Vec<f64>, Vec<f64>) {
    let h = length / (n_u - 1) as f64;
    let s = (0..n_u).map(|k| k as f64 * h).collect();
    let w = (0..n_u).map(|k| if k == 0 || k == n_u - 1 { 0.5 * h } else { h }).collect();
    (s, w)
}

fn add_node_force(out: &mut [f64], row: &[f64], f: &Vector3<f64>) {
    for (a, c) in row.iter().enumerate() {
        if *c != 0.0 {
            out[3 * a] += c * f.x;
            out[3 * a + 1] += c * f.y;
            out[3 * a + 2] += c * f.z;
        }
    }
}

/// Forces from uniform resampling of every fiber at `n_u` points.
pub fn uniform_steric_forces(
    fibers: &[FilamentShape],
    ops: &DiscretizationOps,
    n_u: usize,
    domain: &Domain,
    p: &StericParams,
) -> Result<Vec<Vec<f64>>> {
    if n_u < 2 {
        return Err(Error::InvalidArgument("uniform sterics need at least 2 points".into()));
    }
    let (s, w) = uniform_points(n_u, ops.params.length);
    let e = resampling_matrix(&ops.x_grid, &s)?.matrix;
    let mut pts = Vec::with_capacity(n_u * fibers.len());
    for f in fibers {
        let x = apply_blockwise(&e, f.positions().as_slice());
        pts.extend((0..n_u).map(|k| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])));
    }
    let pairs = neighbor_search(&pts, p.r_max, domain)?;
    let mut forces = vec![vec![0.0; 3 * ops.n_x()]; fibers.len()];
    for (ka, kb) in pairs {
        let (fa, fb) = (ka / n_u, kb / n_u);
        if fa == fb {
            continue;
        }
        let (ia, ib) = (ka % n_u, kb % n_u);
        let r = domain.displacement(&pts[ka], &pts[kb]);
        let d = r.norm();
        if d >= p.r_max || d == 0.0 {
            continue;
        }
        let f = r * (force_magnitude(d, p) * w[ia] * w[ib] / d);
        add_node_force(&mut forces[fa], e.row(ia).transpose().as_slice(), &f);
        add_node_force(&mut forces[fb], e.row(ib).transpose().as_slice(), &(-f));
    }
    Ok(forces)
}

/// Uniform-point forces for one fiber pair with a fixed image offset.
fn uniform_pair_forces(
    ci: &FiberCurve,
    cj: &FiberCurve,
    offset: &Vector3<f64>,
    n_u: usize,
    p: &StericParams,
    fi: &mut [f64],
    fj: &mut [f64],
) {
    let (s, w) = uniform_points(n_u, ci.length());
    let rows: Vec<Vec<f64>> = s.iter().map(|x| ci.row(*x)).collect();
    let xi: Vec<_> = s.iter().map(|x| ci.point(*x)).collect();
    let xj: Vec<_> = s.iter().map(|x| cj.point(*x) - offset).collect();
    for (a, pa) in xi.iter().enumerate() {
        for (b, pb) in xj.iter().enumerate() {
            let r = pa - pb;
            let d = r.norm();
            if d >= p.r_max || d == 0.0 {
                continue;
            }
            let f = r * (force_magnitude(d, p) * w[a] * w[b] / d);
            add_node_force(fi, &rows[a], &f);
            add_node_force(fj, &rows[b], &(-f));
        }
    }
}

/// Energy Σ φ w w of the same uniform-point quadrature, with φ shifted to
/// vanish at r_max.
pub fn uniform_steric_energy(
    fibers: &[FilamentShape],
    ops: &DiscretizationOps,
    n_u: usize,
    domain: &Domain,
    p: &StericParams,
) -> Result<f64> {
    let (s, w) = uniform_points(n_u, ops.params.length);
    let e = resampling_matrix(&ops.x_grid, &s)?.matrix;
    let mut pts = Vec::with_capacity(n_u * fibers.len());
    for f in fibers {
        let x = apply_blockwise(&e, f.positions().as_slice());
        pts.extend((0..n_u).map(|k| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])));
    }
    let mut total = 0.0;
    for (ka, kb) in neighbor_search(&pts, p.r_max, domain)? {
        if ka / n_u == kb / n_u {
            continue;
        }
        let d = domain.displacement(&pts[ka], &pts[kb]).norm();
        total += (repulsive_energy_density(d, p) - repulsive_energy_density(p.r_max, p)) * w[ka % n_u] * w[kb % n_u];
    }
    Ok(total)
}

struct Piece {
    fiber: usize,
    index: usize,
    range: [f64; 2],
    ends: [Vector3<f64>; 2],
    mid: Vector3<f64>,
    dh: f64,
}

/// Contact detection of the segment algorithm (steps 1–6).
pub fn find_contacts(
    fibers: &[FilamentShape],
    ops: &DiscretizationOps,
    domain: &Domain,
    p: &StericParams,
) -> Result<ContactSet> {
    let l = ops.params.length;
    let curves: Vec<FiberCurve> = fibers.iter().map(|f| FiberCurve::new(f, ops)).collect();
    let l_seg = l / p.n_seg as f64;
    let mut pieces = Vec::with_capacity(fibers.len() * p.n_seg);
    for (fi, c) in curves.iter().enumerate() {
        for k in 0..p.n_seg {
            let range = [k as f64 * l_seg, (k + 1) as f64 * l_seg];
            let ends = [c.point(range[0]), c.point(range[1])];
            let mid = c.point(0.5 * (range[0] + range[1]));
            let dh = point_line_distance(&mid, &ends[0], &ends[1]);
            pieces.push(Piece { fiber: fi, index: k, range, ends, mid, dh });
        }
    }
    let dh_max = pieces.iter().map(|q| q.dh).fold(0.0, f64::max);
    let mids: Vec<_> = pieces.iter().map(|q| q.mid).collect();
    let cands = neighbor_search(&mids, l_seg + p.r_max + 2.0 * dh_max, domain)?;

    let mut set = ContactSet::default();
    let mut groups: BTreeMap<(usize, usize, [i64; 3]), (Vector3<f64>, Vec<InteractionInterval>)> = BTreeMap::new();
    let mut failed: Vec<(usize, usize, [i64; 3], Vector3<f64>)> = Vec::new();
    for (a, b) in cands {
        let (pa, pb) = if pieces[a].fiber <= pieces[b].fiber { (&pieces[a], &pieces[b]) } else { (&pieces[b], &pieces[a]) };
        if pa.fiber == pb.fiber {
            continue;
        }
        let raw = pa.mid - pb.mid;
        let offset = domain.image_shift(&raw);
        let key = image_key(&offset, domain);
        if failed.iter().any(|f| f.0 == pa.fiber && f.1 == pb.fiber && f.2 == key) {
            continue;
        }
        let q0 = pb.ends[0] - offset;
        let q1 = pb.ends[1] - offset;
        let (u, v, dseg) = segment_closest_points(&pa.ends[0], &pa.ends[1], &q0, &q1);
        if dseg >= p.r_max + pa.dh + pb.dh {
            continue;
        }
        let guess = (
            pa.range[0] + u * (pa.range[1] - pa.range[0]),
            pb.range[0] + v * (pb.range[1] - pb.range[0]),
        );
        set.newton_solves += 1;
        let (ci, cj) = (&curves[pa.fiber], &curves[pb.fiber]);
        match closest_points(ci, cj, &offset, guess, p) {
            Ok((s, t, _)) => {
                if let Some(iv) =
                    interaction_interval(ci, cj, &offset, (s, t), (pa.fiber, pb.fiber), (pa.index, pb.index), p)
                {
                    groups.entry((pa.fiber, pb.fiber, key)).or_insert_with(|| (offset, Vec::new())).1.push(iv);
                }
            }
            Err(Error::NewtonAbort) | Err(Error::MaxIters(_)) => {
                set.newton_failures += 1;
                failed.push((pa.fiber, pb.fiber, key, offset));
            }
            Err(e) => return Err(e),
        }
    }
    for (i, j, key, offset) in failed {
        groups.remove(&(i, j, key));
        set.fallback_pairs.push((i, j));
        set.pairs.push(PairContacts { i, j, offset, intervals: Vec::new(), rule_sizes: Vec::new() });
    }
    for ((i, j, _), (offset, ivs)) in groups {
        let intervals = merge_intervals(ivs);
        let rule_sizes = intervals.iter().map(|iv| (p.gl_count(iv.si[1] - iv.si[0]), p.gl_count(iv.sj[1] - iv.sj[0]))).collect();
        set.pairs.push(PairContacts { i, j, offset, intervals, rule_sizes });
    }
    set.pairs.sort_by(|x, y| (x.i, x.j).cmp(&(y.i, y.j)));
    Ok(set)
}

fn image_key(offset: &Vector3<f64>, domain: &Domain) -> [i64; 3] {
    match domain {
        Domain::FreeSpace => [0; 3],
        Domain::Periodic { edge } => [
            (offset.x / edge).round() as i64,
            (offset.y / edge).round() as i64,
            (offset.z / edge).round() as i64,
        ],
    }
}

/// Segment-algorithm forces (steps 1–7).
pub fn segment_steric_forces(
    fibers: &[FilamentShape],
    ops: &DiscretizationOps,
    domain: &Domain,
    p: &StericParams,
) -> Result<StericForces> {
    let contacts = find_contacts(fibers, ops, domain, p)?;
    let l = ops.params.length;
    let table = GLTable::new(p.gl_count(l));
    let curves: Vec<FiberCurve> = fibers.iter().map(|f| FiberCurve::new(f, ops)).collect();
    let mut forces = vec![vec![0.0; 3 * ops.n_x()]; fibers.len()];
    let fallback_n = (l / p.delta).ceil() as usize + 1;
    for pc in &contacts.pairs {
        let (mut fi, mut fj) = (vec![0.0; 3 * ops.n_x()], vec![0.0; 3 * ops.n_x()]);
        if pc.intervals.is_empty() && contacts.fallback_pairs.contains(&(pc.i, pc.j)) {
            uniform_pair_forces(&curves[pc.i], &curves[pc.j], &pc.offset, fallback_n, p, &mut fi, &mut fj);
        }
        for (iv, &(ni, nj)) in pc.intervals.iter().zip(&pc.rule_sizes) {
            let (si, wi) = table.rule(ni, iv.si[0], iv.si[1])?;
            let (sj, wj) = table.rule(nj, iv.sj[0], iv.sj[1])?;
            let ri: Vec<Vec<f64>> = si.iter().map(|s| curves[pc.i].row(*s)).collect();
            let rj: Vec<Vec<f64>> = sj.iter().map(|s| curves[pc.j].row(*s)).collect();
            let xi: Vec<_> = ri.iter().map(|r| curves[pc.i].eval(&curves[pc.i].x, r)).collect();
            let xj: Vec<_> = rj.iter().map(|r| curves[pc.j].eval(&curves[pc.j].x, r) - pc.offset).collect();
            for (a, pa) in xi.iter().enumerate() {
                for (b, pb) in xj.iter().enumerate() {
                    let r = pa - pb;
                    let d = r.norm();
                    if d >= p.r_max || d == 0.0 {
                        continue;
                    }
                    let f = r * (force_magnitude(d, p) * wi[a] * wj[b] / d);
                    add_node_force(&mut fi, &ri[a], &f);
                    add_node_force(&mut fj, &rj[b], &(-f));
                }
            }
        }
        for (o, v) in forces[pc.i].iter_mut().zip(fi) {
            *o += v;
        }
        for (o, v) in forces[pc.j].iter_mut().zip(fj) {
            *o += v;
        }
    }
    Ok(StericForces { forces, contacts })
}

/// Energy of the segment quadrature on a given contact set.
pub fn segment_steric_energy(
    fibers: &[FilamentShape],
    ops: &DiscretizationOps,
    contacts: &ContactSet,
    p: &StericParams,
) -> Result<f64> {
    let table = GLTable::new(p.gl_count(ops.params.length));
    let curves: Vec<FiberCurve> = fibers.iter().map(|f| FiberCurve::new(f, ops)).collect();
    let mut total = 0.0;
    for pc in &contacts.pairs {
        for (iv, &(ni, nj)) in pc.intervals.iter().zip(&pc.rule_sizes) {
            let (si, wi) = table.rule(ni, iv.si[0], iv.si[1])?;
            let (sj, wj) = table.rule(nj, iv.sj[0], iv.sj[1])?;
            for (a, s) in si.iter().enumerate() {
                let pa = curves[pc.i].point(*s);
                for (b, t) in sj.iter().enumerate() {
                    let d = (pa - curves[pc.j].point(*t) + pc.offset).norm();
                    if d < p.r_max {
                        total += (repulsive_energy_density(d, p) - repulsive_energy_density(p.r_max, p)) * wi[a] * wj[b];
                    }
                }
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filament::{build_discretization, FilamentParams};

    fn setup(n: usize, eps: f64) -> (DiscretizationOps, StericParams) {
        let fp = FilamentParams::new(1.0, eps, 1.0, 1.0, n).unwrap();
        (build_discretization(&fp).unwrap(), StericParams::new(2.0, eps).unwrap())
    }

    fn line(o: &DiscretizationOps, dir: Vector3<f64>, mid: Vector3<f64>) -> FilamentShape {
        FilamentShape::straight(dir, mid, o).unwrap()
    }

    fn arc(o: &DiscretizationOps, radius: f64, mid: Vector3<f64>) -> FilamentShape {
        let tau = o
            .tau_grid
            .nodes
            .iter()
            .map(|s| {
                let th = (s - 0.5) / radius;
                Vector3::new(th.cos(), th.sin(), 0.0)
            })
            .collect();
        FilamentShape::new(tau, mid, o).unwrap()
    }

    #[test]
    fn potential_density_values() {
        let p = StericParams::new(3.0, 0.01).unwrap();
        let scale = p.e0 / (p.radius * p.delta);
        let (e, de) = potential_density(0.0, &p);
        assert_eq!(e, 0.0);
        assert!((de - scale * (2.0 / PI).sqrt()).abs() < 1e-12 * de);
        assert!(potential_density(10.0 * p.delta, &p).1 < 1e-20 * scale);
        let ratio = potential_density(p.delta, &p).1 / de;
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn repulsive_energy_derivative_is_minus_force() {
        let p = StericParams::new(1.5, 0.02).unwrap();
        for r in [0.005, 0.02, 0.05] {
            let h = 1e-7;
            let fd = (repulsive_energy_density(r + h, &p) - repulsive_energy_density(r - h, &p)) / (2.0 * h);
            assert!((fd + force_magnitude(r, &p)).abs() < 1e-6 * force_magnitude(r, &p));
        }
    }

    #[test]
    fn sagitta_of_circular_arc() {
        let (o, _) = setup(16, 4e-3);
        let rho = 0.6;
        let sh = arc(&o, rho, Vector3::zeros());
        let c = FiberCurve::new(&sh, &o);
        let piece = [0.2, 0.5];
        let theta = 0.3 / rho;
        let expect = rho * (1.0 - (theta / 2.0).cos());
        assert!((curvature_deviation(&c, piece) - expect).abs() < 1e-10);
        let st = line(&o, Vector3::new(0.0, 1.0, 0.0), Vector3::zeros());
        assert!(curvature_deviation(&FiberCurve::new(&st, &o), piece) < 1e-14);
    }

    #[test]
    fn newton_finds_crossing_and_skew_points() {
        let (o, p) = setup(8, 4e-3);
        let a = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let b = line(&o, Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.1, -0.05, 0.0));
        let (ca, cb) = (FiberCurve::new(&a, &o), FiberCurve::new(&b, &o));
        let (s, t, d) = closest_points(&ca, &cb, &Vector3::zeros(), (0.3, 0.7), &p).unwrap();
        assert!((s - 0.6).abs() < 1e-6 && (t - 0.55).abs() < 1e-6 && d < 1e-6);

        let u = Vector3::new(1.0, 1.0, 0.3).normalize();
        let c = line(&o, u, Vector3::new(0.05, 0.0, 0.2));
        let cc = FiberCurve::new(&c, &o);
        let (s, t, _) = closest_points(&ca, &cc, &Vector3::zeros(), (0.5, 0.5), &p).unwrap();
        // Closed-form skew-line closest points.
        let (p0, d1) = (Vector3::new(-0.5, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0));
        let (q0, d2) = (Vector3::new(0.05, 0.0, 0.2) - u * 0.5, u);
        let r = p0 - q0;
        let (bb, c1, f1) = (d1.dot(&d2), d1.dot(&r), d2.dot(&r));
        let den = 1.0 - bb * bb;
        let se = (bb * f1 - c1) / den;
        let te = (f1 - bb * c1) / den;
        assert!((s - se).abs() < 1e-6 && (t - te).abs() < 1e-6, "{s} {se} {t} {te}");
    }

    #[test]
    fn perpendicular_interval_half_width() {
        let (o, p) = setup(8, 4e-3);
        let g = 0.01;
        let a = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let b = line(&o, Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, g));
        let (ca, cb) = (FiberCurve::new(&a, &o), FiberCurve::new(&b, &o));
        let iv = interaction_interval(&ca, &cb, &Vector3::zeros(), (0.5, 0.5), (0, 1), (0, 0), &p).unwrap();
        let hw = (p.r_max * p.r_max - g * g).sqrt();
        assert!((iv.si[1] - 0.5 - hw).abs() < 1e-12 && (0.5 - iv.sj[0] - hw).abs() < 1e-12);
        assert!(ellipse_extents(1.0, 1.0, 0.0, 0.0, 0.0, g * g - p.r_max * p.r_max).is_some());
        let far = line(&o, Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 2.0 * p.r_max));
        assert!(interaction_interval(&ca, &FiberCurve::new(&far, &o), &Vector3::zeros(), (0.5, 0.5), (0, 1), (0, 0), &p).is_none());
    }

    #[test]
    fn parallel_interval_covers_overlap() {
        let (o, p) = setup(8, 4e-3);
        let a = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let b = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0 * p.delta, 0.0));
        let (ca, cb) = (FiberCurve::new(&a, &o), FiberCurve::new(&b, &o));
        let iv = interaction_interval(&ca, &cb, &Vector3::zeros(), (0.3, 0.3), (0, 1), (0, 0), &p).unwrap();
        assert_eq!(iv.si, [0.0, 1.0]);
        assert_eq!(iv.sj, [0.0, 1.0]);
    }

    fn rect(si: [f64; 2], sj: [f64; 2]) -> InteractionInterval {
        InteractionInterval { fibers: (0, 1), si, sj, source: (0, 0) }
    }

    #[test]
    fn merging_rectangles() {
        let disjoint = vec![rect([0.0, 0.1], [0.0, 0.1]), rect([0.2, 0.3], [0.5, 0.6])];
        assert_eq!(merge_intervals(disjoint.clone()), disjoint);
        // Four rectangles, two of which overlap, become three.
        let four = vec![
            rect([0.1, 0.3], [0.1, 0.3]),
            rect([0.25, 0.4], [0.2, 0.35]),
            rect([0.6, 0.7], [0.1, 0.2]),
            rect([0.65, 0.8], [0.5, 0.6]),
        ];
        let m = merge_intervals(four);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].si, [0.1, 0.4]);
        assert_eq!(m[0].sj, [0.1, 0.35]);
        let nested = vec![rect([0.1, 0.9], [0.1, 0.9]), rect([0.2, 0.3], [0.4, 0.5])];
        assert_eq!(merge_intervals(nested), vec![rect([0.1, 0.9], [0.1, 0.9])]);
    }

    #[test]
    fn distant_fibers_have_no_force_and_no_solves() {
        let (o, p) = setup(8, 4e-3);
        let a = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let b = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 5.0 * p.delta, 0.0));
        let out = segment_steric_forces(&[a.clone(), b.clone()], &o, &Domain::FreeSpace, &p).unwrap();
        assert_eq!(out.contacts.newton_solves, 0);
        assert!(out.forces.iter().flatten().all(|v| *v == 0.0));
        let u = uniform_steric_forces(&[a, b], &o, 250, &Domain::FreeSpace, &p).unwrap();
        assert!(u.iter().flatten().all(|v| *v == 0.0));
    }

    fn total(f: &[f64]) -> Vector3<f64> {
        (0..f.len() / 3).map(|i| Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2])).sum()
    }

    #[test]
    fn pair_forces_cancel_and_repel() {
        let (o, p) = setup(12, 4e-3);
        let a = arc(&o, 0.8, Vector3::zeros());
        let b = line(&o, Vector3::new(0.2, 1.0, 0.1).normalize(), Vector3::new(0.0, 0.0, 1.5 * p.delta));
        let fibers = [a, b];
        let seg = segment_steric_forces(&fibers, &o, &Domain::FreeSpace, &p).unwrap();
        let uni = uniform_steric_forces(&fibers, &o, 250, &Domain::FreeSpace, &p).unwrap();
        for f in [&seg.forces, &uni] {
            let (ta, tb) = (total(&f[0]), total(&f[1]));
            assert!(ta.norm() > 0.0);
            assert!((ta + tb).norm() <= 1e-12 * ta.norm());
            assert!(ta.z < 0.0 && tb.z > 0.0);
        }
    }

    #[test]
    fn segment_force_is_energy_gradient_along_rigid_shift() {
        let (o, p) = setup(12, 4e-3);
        let a = arc(&o, 0.7, Vector3::zeros());
        let b = line(&o, Vector3::new(0.0, 1.0, 0.2).normalize(), Vector3::new(0.01, 0.0, 2.0 * p.delta));
        let seg = segment_steric_forces(&[a.clone(), b.clone()], &o, &Domain::FreeSpace, &p).unwrap();
        let dir = Vector3::new(0.0, 0.3, 1.0).normalize();
        let h = 1e-6;
        let e = |sh: f64| {
            let bb = b.translated(&(dir * sh), &o);
            segment_steric_energy(&[a.clone(), bb], &o, &seg.contacts, &p).unwrap()
        };
        let de = (e(h) - e(-h)) / (2.0 * h);
        let work = total(&seg.forces[1]).dot(&dir);
        assert!((de + work).abs() <= 1e-3 * work.abs(), "{de} {work}");
    }

    #[test]
    fn periodic_images_interact() {
        let (o, p) = setup(8, 4e-3);
        let edge = 2.0;
        let a = line(&o, Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.005));
        let b = line(&o, Vector3::new(0.0, 1.0, 0.0), Vector3::new(1.0, 1.0, edge - 0.005));
        let dom = Domain::Periodic { edge };
        let seg = segment_steric_forces(&[a.clone(), b.clone()], &o, &dom, &p).unwrap();
        let uni = uniform_steric_forces(&[a, b], &o, 500, &dom, &p).unwrap();
        let (ts, tu) = (total(&seg.forces[0]), total(&uni[0]));
        assert!(ts.z > 0.0 && tu.z > 0.0);
        assert!((ts - tu).norm() < 0.05 * tu.norm());
    }
}
