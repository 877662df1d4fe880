//! Special quadrature for the self RPY line integral.
//!
//! The Stokeslet and doublet parts are integrated over the outer domain
//! D(s) = (0, s−2â) ∪ (s+2â, L) by singularity subtraction: the subtracted
//! inner integrals are analytic and the smooth remainders are expanded in
//! Chebyshev polynomials against precomputed moments q_k. The R < 2â region
//! near s uses the near-field kernel with a short Gauss-Legendre rule.

use super::rpy::rpy_near_branch;
use crate::error::{Error, Result};
use crate::linalg::apply_blockwise;
use crate::spectral::{adaptive_integrate, cheb_t_antiderivative, gauss_legendre_rule, ChebGrid, GridKind};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct LocalPoint {
    pub s: f64,
    pub weight: f64,
    pub row: Vec<f64>,
}

/// Shape-independent tables for one collocation grid and one radius â.
#[derive(Clone, Debug)]
pub struct SelfQuadTables {
    pub a_hat: f64,
    pub length: f64,
    pub n_x: usize,
    /// Collocation arclengths.
    pub nodes: Vec<f64>,
    /// Lower and upper edges (η_ℓ, η_h) of the excluded window around each node.
    pub split: Vec<(f64, f64)>,
    /// q^S_k(η_i), rows are nodes.
    pub q_stokes: DMatrix<f64>,
    /// q^D_k(η_i).
    pub q_doublet: DMatrix<f64>,
    /// Nodal weights Cᵀq: U^{int} at node i is Σ_j w_ij g(s_i, s_j).
    pub w_stokes: DMatrix<f64>,
    pub w_doublet: DMatrix<f64>,
    /// ∫_D |s − s′|⁻¹ ds′ and ∫_D |s − s′|⁻³ ds′ per node.
    pub inner_stokes: Vec<f64>,
    pub inner_doublet: Vec<f64>,
    pub local: Vec<Vec<LocalPoint>>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub coefficients: DMatrix<f64>,
}

/// Local-integral GL count for a true aspect ratio ε.
pub fn local_gl_count(eps: f64) -> usize {
    if eps < 1e-3 {
        4
    } else {
        8
    }
}

pub fn precompute_q_tables(grid: &ChebGrid, a_hat: f64, n2: usize) -> Result<SelfQuadTables> {
    let l = grid.length;
    if !(2.0 * a_hat < l) || !(a_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("need 0 < 2â < L, got â = {a_hat}, L = {l}")));
    }
    if grid.kind != GridKind::Type2 {
        return Err(Error::InvalidArgument("special quadrature runs on the position grid".into()));
    }
    if n2 < 2 || n2 % 2 != 0 {
        return Err(Error::InvalidArgument("local GL count must be even and at least 2".into()));
    }
    let n = grid.order;
    let gap = 4.0 * a_hat / l;
    let mut split = Vec::with_capacity(n);
    let mut q_s = DMatrix::zeros(n, n);
    let mut q_d = DMatrix::zeros(n, n);
    let mut inner_s = Vec::with_capacity(n);
    let mut inner_d = Vec::with_capacity(n);
    let tol = 1e-12 / gap;
    for i in 0..n {
        let eta = grid.x[i];
        let s = grid.nodes[i];
        let (lo, hi) = (eta - gap, eta + gap);
        split.push((lo, hi));
        let has_left = lo > -1.0;
        let has_right = hi < 1.0;
        for k in 0..n {
            let mut v = 0.0;
            if has_left {
                v -= cheb_t_antiderivative(k, lo) - cheb_t_antiderivative(k, -1.0);
            }
            if has_right {
                v += cheb_t_antiderivative(k, 1.0) - cheb_t_antiderivative(k, hi);
            }
            q_s[(i, k)] = v;
        }
        let cheb_all = |x: f64| {
            let mut t = vec![0.0; n];
            t[0] = 1.0;
            if n > 1 {
                t[1] = x;
            }
            for k in 2..n {
                t[k] = 2.0 * x * t[k - 1] - t[k - 2];
            }
            t
        };
        if has_left {
            let f = |x: f64| {
                let w = -1.0 / ((eta - x) * (eta - x));
                cheb_all(x).into_iter().map(|t| t * w).collect()
            };
            let v = adaptive_integrate(&f, -1.0, lo, n, tol);
            for k in 0..n {
                q_d[(i, k)] += v[k];
            }
        }
        if has_right {
            let f = |x: f64| {
                let w = 1.0 / ((x - eta) * (x - eta));
                cheb_all(x).into_iter().map(|t| t * w).collect()
            };
            let v = adaptive_integrate(&f, hi, 1.0, n, tol);
            for k in 0..n {
                q_d[(i, k)] += v[k];
            }
        }
        let (mut a_s, mut a_d) = (0.0, 0.0);
        if s > 2.0 * a_hat {
            a_s += (s / (2.0 * a_hat)).ln();
            a_d += 1.0 / (8.0 * a_hat * a_hat) - 1.0 / (2.0 * s * s);
        }
        if s < l - 2.0 * a_hat {
            a_s += ((l - s) / (2.0 * a_hat)).ln();
            a_d += 1.0 / (8.0 * a_hat * a_hat) - 1.0 / (2.0 * (l - s) * (l - s));
        }
        inner_s.push(a_s);
        inner_d.push(a_d);
    }
    let coefficients = grid.coefficient_matrix();
    let w_stokes = &q_s * &coefficients;
    let w_doublet = &q_d * &coefficients;

    let (gx, gw) = gauss_legendre_rule(n2 / 2);
    let mut local = Vec::with_capacity(n);
    for i in 0..n {
        let s = grid.nodes[i];
        let mut pts = Vec::new();
        for (a, b) in [((s - 2.0 * a_hat).max(0.0), s), (s, (s + 2.0 * a_hat).min(l))] {
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(&gw) {
                let sp = mid + half * x;
                pts.push(LocalPoint { s: sp, weight: w * half, row: grid.interpolation_row(sp) });
            }
        }
        local.push(pts);
    }
    Ok(SelfQuadTables {
        a_hat,
        length: l,
        n_x: n,
        nodes: grid.nodes.clone(),
        split,
        q_stokes: q_s,
        q_doublet: q_d,
        w_stokes,
        w_doublet,
        inner_stokes: inner_s,
        inner_doublet: inner_d,
        local,
        d1: grid.diff.clone(),
        d2: &grid.diff * &grid.diff,
        coefficients,
    })
}

fn vec_at(x: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

struct NodeGeometry {
    x: Vec<Vector3<f64>>,
    xs: Vec<Vector3<f64>>,
    xss: Vec<Vector3<f64>>,
}

impl NodeGeometry {
    fn new(tables: &SelfQuadTables, positions: &[f64]) -> Self {
        let n = tables.n_x;
        let xs = apply_blockwise(&tables.d1, positions);
        let xss = apply_blockwise(&tables.d2, positions);
        Self {
            x: (0..n).map(|i| vec_at(positions, i)).collect(),
            xs: (0..n).map(|i| vec_at(&xs, i)).collect(),
            xss: (0..n).map(|i| vec_at(&xss, i)).collect(),
        }
    }
}

/// Blocks entering the subtracted inner terms and the s′ → s limits at node i.
struct SingularParts {
    stokes_inner: Matrix3<f64>,
    doublet_inner: Matrix3<f64>,
    stokes_limit: Matrix3<f64>,
    doublet_limit: Matrix3<f64>,
}

fn singular_parts(xs: &Vector3<f64>, xss: &Vector3<f64>, pre: f64) -> SingularParts {
    let nrm = xs.norm();
    let t = xs / nrm;
    let tt = t * t.transpose();
    let id = Matrix3::identity();
    let q = xs * xss.transpose() + xss * xs.transpose();
    let dot = xs.dot(xss);
    SingularParts {
        stokes_inner: (id + tt) * (pre / nrm),
        doublet_inner: (id - tt * 3.0) * (pre / nrm.powi(3)),
        stokes_limit: (q - (id + tt * 3.0) * dot) * (pre / (2.0 * nrm.powi(3))),
        doublet_limit: (q * -3.0 - (id * 3.0 - tt * 15.0) * dot) * (pre / (2.0 * nrm.powi(5))),
    }
}

fn stokeslet_and_doublet(r: &Vector3<f64>, pre: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let d = r.norm();
    let rr = r * r.transpose() / (d * d);
    let id = Matrix3::identity();
    ((id + rr) * (pre / d), (id - rr * 3.0) * (pre / (d * d * d)))
}

/// Self velocity of one fiber with force density `f` (interleaved, 3N_x).
pub fn self_special_quadrature(tables: &SelfQuadTables, positions: &[f64], f: &[f64], mu: f64) -> Vec<f64> {
    let n = tables.n_x;
    let l = tables.length;
    let a = tables.a_hat;
    let pre = 1.0 / (8.0 * PI * mu);
    let dip = 2.0 * a * a / 3.0;
    let geo = NodeGeometry::new(tables, positions);
    let fs_all = apply_blockwise(&tables.d1, f);
    let nodes = &tables.nodes;
    let mut u = vec![0.0; 3 * n];
    for i in 0..n {
        let fi = vec_at(f, i);
        let fsi = vec_at(&fs_all, i);
        let sp = singular_parts(&geo.xs[i], &geo.xss[i], pre);
        let mut ui = sp.stokes_inner * fi * tables.inner_stokes[i]
            + sp.doublet_inner * fi * (dip * tables.inner_doublet[i]);
        let mut int_s = Vector3::zeros();
        let mut int_d = Vector3::zeros();
        for j in 0..n {
            let (gs, gd) = if j == i {
                (
                    sp.stokes_limit * fi + sp.stokes_inner * fsi,
                    sp.doublet_limit * fi + sp.doublet_inner * fsi,
                )
            } else {
                let h = nodes[j] - nodes[i];
                let (st, db) = stokeslet_and_doublet(&(geo.x[i] - geo.x[j]), pre);
                let fj = vec_at(f, j);
                (
                    (st * fj * h.abs() - sp.stokes_inner * fi) / h,
                    (db * fj - sp.doublet_inner * fi / h.abs().powi(3)) * (h.abs().powi(3) / h),
                )
            };
            int_s += gs * (tables.w_stokes[(i, j)] * 0.5 * l);
            int_d += gd * tables.w_doublet[(i, j)];
        }
        ui += int_s + int_d * (dip * 2.0 / l);
        for p in &tables.local[i] {
            let mut xp = Vector3::zeros();
            let mut fp = Vector3::zeros();
            for (m, c) in p.row.iter().enumerate() {
                xp += geo.x[m] * *c;
                fp += vec_at(f, m) * *c;
            }
            ui += rpy_near_branch(&(geo.x[i] - xp), a, mu) * fp * p.weight;
        }
        u[3 * i..3 * i + 3].copy_from_slice(ui.as_slice());
    }
    u
}

/// Dense matrix of the special quadrature acting on force densities,
/// assembled block by block from the same decomposition as
/// [`self_special_quadrature`].
pub fn special_quadrature_matrix(tables: &SelfQuadTables, positions: &[f64], mu: f64) -> DMatrix<f64> {
    let n = tables.n_x;
    let l = tables.length;
    let a = tables.a_hat;
    let pre = 1.0 / (8.0 * PI * mu);
    let dip = 2.0 * a * a / 3.0;
    let geo = NodeGeometry::new(tables, positions);
    let nodes = &tables.nodes;
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    let add = |m: &mut DMatrix<f64>, i: usize, j: usize, b: &Matrix3<f64>| {
        let mut v = m.fixed_view_mut::<3, 3>(3 * i, 3 * j);
        v += b;
    };
    for i in 0..n {
        let sp = singular_parts(&geo.xs[i], &geo.xss[i], pre);
        let mut diag = sp.stokes_inner * tables.inner_stokes[i] + sp.doublet_inner * (dip * tables.inner_doublet[i]);
        let ws_ii = tables.w_stokes[(i, i)] * 0.5 * l;
        let wd_ii = tables.w_doublet[(i, i)] * dip * 2.0 / l;
        diag += sp.stokes_limit * ws_ii + sp.doublet_limit * wd_ii;
        let deriv_block = sp.stokes_inner * ws_ii + sp.doublet_inner * wd_ii;
        for mm in 0..n {
            let c = tables.d1[(i, mm)];
            if c != 0.0 {
                add(&mut m, i, mm, &(deriv_block * c));
            }
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let h = nodes[j] - nodes[i];
            let (st, db) = stokeslet_and_doublet(&(geo.x[i] - geo.x[j]), pre);
            let ws = tables.w_stokes[(i, j)] * 0.5 * l;
            let wd = tables.w_doublet[(i, j)] * dip * 2.0 / l;
            add(&mut m, i, j, &(st * (ws * h.abs() / h) + db * (wd * h.abs().powi(3) / h)));
            diag -= sp.stokes_inner * (ws / h) + sp.doublet_inner * (wd / h);
        }
        add(&mut m, i, i, &diag);
        for p in &tables.local[i] {
            let mut xp = Vector3::zeros();
            for (mm, c) in p.row.iter().enumerate() {
                xp += geo.x[mm] * *c;
            }
            let kb = rpy_near_branch(&(geo.x[i] - xp), a, mu) * p.weight;
            for (mm, c) in p.row.iter().enumerate() {
                if *c != 0.0 {
                    add(&mut m, i, mm, &(kb * *c));
                }
            }
        }
    }
    m
}

/// Velocity of the special quadrature as a DVector convenience.
pub fn apply_matrix(m: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(f)).as_slice().to_vec()
}
