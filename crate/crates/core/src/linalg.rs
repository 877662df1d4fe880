//! Dense helpers shared by the numerical modules: Kronecker expansion of scalar
//! grid operators, symmetric matrix functions, and restarted GMRES.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Expands a scalar grid operator to act on coordinate-interleaved 3-vectors.
pub fn kron3(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(3 * r, 3 * c);
    for j in 0..c {
        for i in 0..r {
            let v = a[(i, j)];
            if v != 0.0 {
                for d in 0..3 {
                    out[(3 * i + d, 3 * j + d)] = v;
                }
            }
        }
    }
    out
}

/// Applies a scalar operator to each coordinate of an interleaved field.
pub fn apply_blockwise(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let (r, c) = a.shape();
    assert_eq!(x.len(), 3 * c, "blockwise apply: size mismatch");
    let mut y = vec![0.0; 3 * r];
    for j in 0..c {
        let (x0, x1, x2) = (x[3 * j], x[3 * j + 1], x[3 * j + 2]);
        for i in 0..r {
            let v = a[(i, j)];
            y[3 * i] += v * x0;
            y[3 * i + 1] += v * x1;
            y[3 * i + 2] += v * x2;
        }
    }
    y
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let e = SymmetricEigen::new(symmetrize(m));
        Self { values: e.eigenvalues, vectors: e.eigenvectors }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Q f(Λ) Qᵀ.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let out = &scaled * self.vectors.transpose();
        symmetrize(&out)
    }

    pub fn clamped_below(&self, floor: f64) -> SymEig {
        SymEig { values: self.values.map(|v| v.max(floor)), vectors: self.vectors.clone() }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.map(|v| v)
    }

    /// Symmetric square root; negative roundoff eigenvalues map to zero.
    pub fn sqrt(&self) -> DMatrix<f64> {
        self.map(|v| v.max(0.0).sqrt())
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.map(|v| 1.0 / v.sqrt())
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let (r, c) = a.shape();
    assert_eq!(x.len(), c, "mat_vec: size mismatch");
    let mut y = vec![0.0; r];
    for j in 0..c {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

#[derive(Clone, Copy, Debug)]
pub struct GmresConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { tol: 1e-3, max_iters: 200, restart: 60 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES. `x` holds the initial guess on entry.
/// The residual reported is ‖b − Ax‖/‖b‖.
pub fn gmres(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: &GmresConfig,
) -> GmresOutcome {
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return GmresOutcome { iterations: 0, residual: 0.0, converged: true };
    }
    let m = cfg.restart.max(1);
    let mut total = 0;
    loop {
        let ax = a(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let mut rel = beta / bnorm;
        if rel < cfg.tol || total >= cfg.max_iters {
            return GmresOutcome { iterations: total, residual: rel, converged: rel < cfg.tol };
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < cfg.max_iters {
            let zk = precond(&v[k]);
            let mut w = a(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            rel = g[k].abs() / bnorm;
            if rel < cfg.tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (xj, zj) in x.iter_mut().zip(zi) {
                *xj += yi * zj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron3_matches_blockwise_apply() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let dense = kron3(&a) * DVector::from_column_slice(&x);
        let y = apply_blockwise(&a, &x);
        for i in 0..6 {
            assert!((dense[i] - y[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 4.0 + i as f64 * 0.1 } else { 1.0 / (1.0 + (i + 2 * j) as f64) });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let op = |v: &[f64]| mat_vec(&a, v);
        let id = |v: &[f64]| v.to_vec();
        let cfg = GmresConfig { tol: 1e-12, max_iters: 100, restart: 10 };
        let out = gmres(&op, &id, &b, &mut x, &cfg);
        assert!(out.converged, "{out:?}");
        let exact = a.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..n {
            assert!((x[i] - exact[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_iteration() {
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { 0.1 * ((i * j) as f64).cos() });
        let lu = a.clone().lu();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut x = vec![0.0; n];
        let op = |v: &[f64]| mat_vec(&a, v);
        let pc = |v: &[f64]| lu.solve(&DVector::from_column_slice(v)).unwrap().as_slice().to_vec();
        let out = gmres(&op, &pc, &b, &mut x, &GmresConfig::default());
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let op = |v: &[f64]| v.to_vec();
        let mut x = vec![1.0; 4];
        let out = gmres(&op, &op, &[0.0; 4], &mut x, &GmresConfig::default());
        assert_eq!(out.iterations, 0);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sym_eig_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let e = SymEig::new(&m);
        let s = e.sqrt();
        assert!((&s * &s - &m).abs().max() < 1e-12);
        let is = e.inv_sqrt();
        assert!((&is * &s - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-12);
    }
}
