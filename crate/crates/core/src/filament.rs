//! Filament state, the exact tangent-to-position map, bending, the kinematic
//! matrix K and the rotation update that preserves |τ| = 1.

use crate::error::{Error, Result};
use crate::linalg::{apply_blockwise, kron3, SymEig};
use crate::spectral::{cheb_grid, l2_weight_matrix, ChebGrid, GridKind, L2Weights};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};

/// â/a for the RPY blob radius that matches slender-body mobility.
pub fn hat_ratio() -> f64 {
    1.5f64.exp() / 4.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilamentParams {
    pub length: f64,
    /// True fiber radius a.
    pub radius: f64,
    pub kappa: f64,
    pub mu: f64,
    /// Number of tangent vectors N.
    pub n_tangent: usize,
}

impl FilamentParams {
    pub fn new(length: f64, radius: f64, kappa: f64, mu: f64, n_tangent: usize) -> Result<Self> {
        if !(length > 0.0) || !(radius > 0.0) || !(mu > 0.0) || kappa < 0.0 {
            return Err(Error::InvalidArgument(
                "length, radius and viscosity must be positive, kappa nonnegative".into(),
            ));
        }
        if radius >= length {
            return Err(Error::InvalidArgument("aspect ratio a/L must be below 1".into()));
        }
        if n_tangent < 1 {
            return Err(Error::InvalidArgument("need at least one tangent vector".into()));
        }
        Ok(Self { length, radius, kappa, mu, n_tangent })
    }

    /// Parameters from the RPY aspect ratio ε̂ = â/L.
    pub fn from_hat_eps(length: f64, hat_eps: f64, kappa: f64, mu: f64, n_tangent: usize) -> Result<Self> {
        Self::new(length, hat_eps * length / hat_ratio(), kappa, mu, n_tangent)
    }

    pub fn eps(&self) -> f64 {
        self.radius / self.length
    }

    pub fn hat_radius(&self) -> f64 {
        hat_ratio() * self.radius
    }

    pub fn hat_eps(&self) -> f64 {
        self.hat_radius() / self.length
    }

    pub fn n_x(&self) -> usize {
        self.n_tangent + 1
    }
}

/// Per-resolution operators shared by every fiber.
#[derive(Clone, Debug)]
pub struct DiscretizationOps {
    pub params: FilamentParams,
    pub tau_grid: ChebGrid,
    pub x_grid: ChebGrid,
    /// Scalar 𝔛: N_x × (N+1), the last column multiplies X_MP.
    pub xmap: DMatrix<f64>,
    pub xmap_inverse: DMatrix<f64>,
    pub weights: L2Weights,
    /// Scalar bending operator κ(D²)ᵀW̃D².
    pub bending: DMatrix<f64>,
    pub bending_sqrt: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

pub fn build_discretization(params: &FilamentParams) -> Result<DiscretizationOps> {
    let n = params.n_tangent;
    if n < 4 {
        return Err(Error::InvalidArgument(format!("need N >= 4 tangent vectors, got {n}")));
    }
    let l = params.length;
    let tau_grid = cheb_grid(n, l, GridKind::Type1)?;
    let x_grid = cheb_grid(n + 1, l, GridKind::Type2)?;
    let nx = n + 1;

    // Antiderivative of the tangent interpolant in Chebyshev coefficients:
    // b_k = (c'_{k-1} - c_{k+1}) / 2k with c'_0 = 2c_0.
    let c_tau = tau_grid.coefficient_matrix();
    let mut anti = DMatrix::zeros(n + 1, n);
    for k in 1..=n {
        let prev = k - 1;
        let factor = if prev == 0 { 2.0 } else { 1.0 };
        anti[(k, prev)] += factor / (2.0 * k as f64);
        if k + 1 < n {
            anti[(k, k + 1)] -= 1.0 / (2.0 * k as f64);
        }
    }
    let mut eval = DMatrix::zeros(nx, n + 1);
    for i in 0..nx {
        for k in 0..=n {
            let at_mid = (k as f64 * std::f64::consts::FRAC_PI_2).cos();
            eval[(i, k)] = (k as f64 * x_grid.theta[i]).cos() - at_mid;
        }
    }
    let tau_part = eval * anti * c_tau * (0.5 * l);
    let mut xmap = DMatrix::zeros(nx, n + 1);
    xmap.view_mut((0, 0), (nx, n)).copy_from(&tau_part);
    for i in 0..nx {
        xmap[(i, n)] = 1.0;
    }
    let xmap_inverse = xmap
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("tangent-to-position map is singular".into()))?;

    let weights = l2_weight_matrix(&x_grid)?;
    let d2 = &x_grid.diff * &x_grid.diff;
    let bending = d2.transpose() * &weights.matrix * &d2 * params.kappa;
    let bending = (&bending + bending.transpose()) * 0.5;
    let bending_sqrt = SymEig::new(&bending).sqrt();
    Ok(DiscretizationOps {
        params: params.clone(),
        tau_grid,
        x_grid,
        xmap,
        xmap_inverse,
        weights,
        bending,
        bending_sqrt,
        d2,
    })
}

impl DiscretizationOps {
    pub fn n_tangent(&self) -> usize {
        self.params.n_tangent
    }

    pub fn n_x(&self) -> usize {
        self.params.n_tangent + 1
    }

    /// X = 𝔛(τ, X_MP), interleaved on the type-2 grid.
    pub fn positions(&self, tau: &[Vector3<f64>], midpoint: &Vector3<f64>) -> DVector<f64> {
        let nx = self.n_x();
        let mut x = DVector::zeros(3 * nx);
        for i in 0..nx {
            let mut p = *midpoint;
            for (j, t) in tau.iter().enumerate() {
                p += t * self.xmap[(i, j)];
            }
            x.fixed_rows_mut::<3>(3 * i).copy_from(&p);
        }
        x
    }

    /// Inverse of 𝔛: the (not necessarily unit) tangents and midpoint of X.
    pub fn tangents_from_positions(&self, x: &DVector<f64>) -> (Vec<Vector3<f64>>, Vector3<f64>) {
        let n = self.n_tangent();
        let v = apply_blockwise(&self.xmap_inverse, x.as_slice());
        let tau = (0..n).map(|p| Vector3::new(v[3 * p], v[3 * p + 1], v[3 * p + 2])).collect();
        let mid = Vector3::new(v[3 * n], v[3 * n + 1], v[3 * n + 2]);
        (tau, mid)
    }

    pub fn xmap_full(&self) -> DMatrix<f64> {
        kron3(&self.xmap)
    }

    pub fn bending_full(&self) -> DMatrix<f64> {
        kron3(&self.bending)
    }

    pub fn bending_energy(&self, x: &DVector<f64>) -> f64 {
        let lx = apply_blockwise(&self.bending, x.as_slice());
        0.5 * x.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>()
    }

    /// F = −LX.
    pub fn bending_force(&self, x: &DVector<f64>) -> DVector<f64> {
        let lx = apply_blockwise(&self.bending, x.as_slice());
        DVector::from_iterator(lx.len(), lx.into_iter().map(|v| -v))
    }

    /// W̃ applied to an interleaved density.
    pub fn weigh(&self, density: &[f64]) -> Vec<f64> {
        apply_blockwise(&self.weights.matrix, density)
    }

    pub fn unweigh(&self, force: &[f64]) -> Vec<f64> {
        apply_blockwise(&self.weights.inverse, force)
    }

    /// Nodal forces of a uniform force density g (per unit length).
    pub fn uniform_density_force(&self, g: &Vector3<f64>) -> Vec<f64> {
        let nx = self.n_x();
        let mut dens = vec![0.0; 3 * nx];
        for i in 0..nx {
            for d in 0..3 {
                dens[3 * i + d] = g[d];
            }
        }
        self.weigh(&dens)
    }
}

/// Tangent vectors, midpoint and cached positions of one fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct FilamentShape {
    tau: Vec<Vector3<f64>>,
    midpoint: Vector3<f64>,
    positions: DVector<f64>,
}

impl FilamentShape {
    /// Unit-norm check at 1e-10; roundoff-scale deviations are renormalized.
    pub fn new(tau: Vec<Vector3<f64>>, midpoint: Vector3<f64>, ops: &DiscretizationOps) -> Result<Self> {
        if tau.len() != ops.n_tangent() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tangent vectors, got {}",
                ops.n_tangent(),
                tau.len()
            )));
        }
        let mut tau = tau;
        for t in tau.iter_mut() {
            let nrm = t.norm();
            if (nrm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidState(format!("tangent vector has norm {nrm}")));
            }
            *t /= nrm;
        }
        let positions = ops.positions(&tau, &midpoint);
        Ok(Self { tau, midpoint, positions })
    }

    /// Shape from nodal positions alone, e.g. a centerline resampled from a
    /// coarser grid. The recovered tangents are not renormalized, so this is
    /// meant for mobility and force evaluation, not for time stepping.
    pub fn from_positions(positions: DVector<f64>, ops: &DiscretizationOps) -> Result<Self> {
        if positions.len() != 3 * ops.n_x() {
            return Err(Error::InvalidArgument(format!("expected {} coordinates, got {}", 3 * ops.n_x(), positions.len())));
        }
        let (tau, midpoint) = ops.tangents_from_positions(&positions);
        Ok(Self { tau, midpoint, positions })
    }

    pub fn straight(direction: Vector3<f64>, midpoint: Vector3<f64>, ops: &DiscretizationOps) -> Result<Self> {
        let u = direction.normalize();
        Self::new(vec![u; ops.n_tangent()], midpoint, ops)
    }

    pub fn tau(&self) -> &[Vector3<f64>] {
        &self.tau
    }

    pub fn midpoint(&self) -> &Vector3<f64> {
        &self.midpoint
    }

    pub fn positions(&self) -> &DVector<f64> {
        &self.positions
    }

    pub fn node(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2])
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len() / 3
    }

    /// ‖𝕏(L) − 𝕏(0)‖; the type-2 grid contains both endpoints.
    pub fn end_to_end(&self) -> f64 {
        (self.node(self.n_nodes() - 1) - self.node(0)).norm()
    }

    pub fn translated(&self, d: &Vector3<f64>, ops: &DiscretizationOps) -> Self {
        let midpoint = self.midpoint + d;
        let positions = ops.positions(&self.tau, &midpoint);
        Self { tau: self.tau.clone(), midpoint, positions }
    }
}

/// K for a fixed configuration, plus its reduced full-rank form in which each
/// Ω_p is restricted to the plane orthogonal to τ_p.
#[derive(Clone, Debug)]
pub struct KinematicMatrix {
    pub k: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
    /// Orthonormal pair spanning the plane orthogonal to each τ_p.
    pub basis: Vec<[Vector3<f64>; 2]>,
}

fn perpendicular_basis(t: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let abs = t.abs();
    let helper = if abs.x <= abs.y && abs.x <= abs.z {
        Vector3::x()
    } else if abs.y <= abs.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = t.cross(&helper).normalize();
    let e2 = t.cross(&e1);
    [e1, e2]
}

pub fn kinematic_matrix(shape: &FilamentShape, ops: &DiscretizationOps) -> Result<KinematicMatrix> {
    let n = ops.n_tangent();
    let nx = n + 1;
    for t in shape.tau() {
        if (1.0 - t.norm()).abs() > 1e-6 {
            return Err(Error::InvalidState(format!("non-unit tangent (norm {})", t.norm())));
        }
    }
    let mut k = DMatrix::zeros(3 * nx, 3 * (n + 1));
    let mut reduced = DMatrix::zeros(3 * nx, 2 * n + 3);
    let mut basis = Vec::with_capacity(n);
    for (p, t) in shape.tau().iter().enumerate() {
        let b = perpendicular_basis(t);
        for e in 0..3 {
            let dtau = Vector3::ith(e, 1.0).cross(t);
            for i in 0..nx {
                let c = ops.xmap[(i, p)];
                for d in 0..3 {
                    k[(3 * i + d, 3 * p + e)] = c * dtau[d];
                }
            }
        }
        for (e, be) in b.iter().enumerate() {
            let dtau = be.cross(t);
            for i in 0..nx {
                let c = ops.xmap[(i, p)];
                for d in 0..3 {
                    reduced[(3 * i + d, 2 * p + e)] = c * dtau[d];
                }
            }
        }
        basis.push(b);
    }
    for i in 0..nx {
        for d in 0..3 {
            k[(3 * i + d, 3 * n + d)] = 1.0;
            reduced[(3 * i + d, 2 * n + d)] = 1.0;
        }
    }
    Ok(KinematicMatrix { k, reduced, basis })
}

impl KinematicMatrix {
    pub fn n_tangent(&self) -> usize {
        self.basis.len()
    }

    pub fn reduced_dim(&self) -> usize {
        2 * self.n_tangent() + 3
    }

    /// Full α = (Ω, U_MP) from reduced coordinates.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let n = self.n_tangent();
        let mut alpha = vec![0.0; 3 * (n + 1)];
        for (p, b) in self.basis.iter().enumerate() {
            let om = b[0] * reduced[2 * p] + b[1] * reduced[2 * p + 1];
            alpha[3 * p..3 * p + 3].copy_from_slice(om.as_slice());
        }
        alpha[3 * n..3 * n + 3].copy_from_slice(&reduced[2 * n..2 * n + 3]);
        alpha
    }

    /// Kᵀλ in full coordinates.
    pub fn adjoint(&self, lambda: &[f64]) -> Vec<f64> {
        (self.k.transpose() * DVector::from_column_slice(lambda)).as_slice().to_vec()
    }

    pub fn apply(&self, alpha: &[f64]) -> Vec<f64> {
        (&self.k * DVector::from_column_slice(alpha)).as_slice().to_vec()
    }

    /// Minimal-norm minimizer of ‖Kα − U‖ in the W̃-weighted norm.
    pub fn weighted_pinv(&self, u: &[f64], ops: &DiscretizationOps) -> Result<Vec<f64>> {
        let wk = DMatrix::from_fn(self.reduced.nrows(), self.reduced.ncols(), |_, _| 0.0);
        let mut wk = wk;
        for c in 0..self.reduced.ncols() {
            let col: Vec<f64> = self.reduced.column(c).iter().cloned().collect();
            let wc = apply_blockwise(&ops.weights.matrix, &col);
            wk.column_mut(c).copy_from_slice(&wc);
        }
        let g = self.reduced.transpose() * &wk;
        let g = (&g + g.transpose()) * 0.5;
        let rhs = wk.transpose() * DVector::from_column_slice(u);
        let chol = Cholesky::<f64, Dyn>::new(g)
            .ok_or_else(|| Error::Numerical("KᵀW̃K is not positive definite".into()))?;
        let red = chol.solve(&rhs);
        Ok(self.expand(red.as_slice()))
    }
}

/// Rotates each τ_p by Ω_pΔt (Rodrigues) and translates X_MP by U_MPΔt.
/// `alpha_dt` holds (Ω_1Δt, …, Ω_NΔt, U_MPΔt) interleaved.
pub fn rotate_and_integrate(
    shape: &FilamentShape,
    alpha_dt: &[f64],
    ops: &DiscretizationOps,
) -> Result<FilamentShape> {
    let n = ops.n_tangent();
    if alpha_dt.len() != 3 * (n + 1) {
        return Err(Error::InvalidArgument("α has the wrong length".into()));
    }
    let mut tau = Vec::with_capacity(n);
    for (p, t) in shape.tau().iter().enumerate() {
        let om = Vector3::new(alpha_dt[3 * p], alpha_dt[3 * p + 1], alpha_dt[3 * p + 2]);
        let theta = om.norm();
        let rotated = if theta < 1e-8 {
            // Series of Rodrigues in the unnormalized axis.
            let cross = om.cross(t);
            t + cross * (1.0 - theta * theta / 6.0) + om.cross(&cross) * (0.5 - theta * theta / 24.0)
        } else {
            let k = om / theta;
            let (s, c) = theta.sin_cos();
            t * c + k.cross(t) * s + k * (k.dot(t) * (1.0 - c))
        };
        let nrm = rotated.norm();
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("rotation broke unit tangent (norm {nrm})")));
        }
        tau.push(rotated / nrm);
    }
    let u = Vector3::new(alpha_dt[3 * n], alpha_dt[3 * n + 1], alpha_dt[3 * n + 2]);
    let midpoint = shape.midpoint() + u;
    let positions = ops.positions(&tau, &midpoint);
    Ok(FilamentShape { tau, midpoint, positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::gauss_legendre_rule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops(n: usize) -> DiscretizationOps {
        build_discretization(&FilamentParams::new(2.0, 0.01, 1.3, 1.0, n).unwrap()).unwrap()
    }

    fn bent_shape(o: &DiscretizationOps) -> FilamentShape {
        let tau = o
            .tau_grid
            .nodes
            .iter()
            .map(|s| {
                let th = 0.4 + 0.7 * s - 0.3 * s * s;
                Vector3::new(th.cos() * 0.9f64.cos(), th.sin(), th.cos() * 0.9f64.sin() * 0.2)
                    .normalize()
            })
            .collect();
        FilamentShape::new(tau, Vector3::new(0.1, -0.2, 0.3), o).unwrap()
    }

    #[test]
    fn hat_radius_ratio() {
        let p = FilamentParams::new(1.0, 0.003, 1.0, 1.0, 8).unwrap();
        assert!((p.hat_radius() / p.radius - 1.5f64.exp() / 4.0).abs() < 1e-14);
    }

    #[test]
    fn constant_tangent_gives_line() {
        let o = ops(12);
        let u = Vector3::new(1.0, 2.0, -0.5).normalize();
        let mid = Vector3::new(0.3, 0.1, -1.0);
        let sh = FilamentShape::straight(u, mid, &o).unwrap();
        for (i, s) in o.x_grid.nodes.iter().enumerate() {
            let expect = mid + u * (s - 1.0);
            assert!((sh.node(i) - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn xmap_round_trip() {
        let o = ops(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DVector::from_fn(3 * 17, |_, _| rng.random_range(-1.0..1.0));
        let (tau, mid) = o.tangents_from_positions(&x);
        let back = o.positions(&tau, &mid);
        assert!((back - x).amax() < 1e-12);
    }

    #[test]
    fn positions_match_quadrature_oracle() {
        let o = ops(20);
        let l = 2.0;
        let theta = |s: f64| 0.3 + 0.5 * s + 0.4 * s * s;
        let tangent = |s: f64| Vector3::new(theta(s).cos(), theta(s).sin(), 0.0);
        let tau: Vec<_> = o.tau_grid.nodes.iter().map(|&s| tangent(s)).collect();
        let sh = FilamentShape::new(tau, Vector3::zeros(), &o).unwrap();
        let (gx, gw) = gauss_legendre_rule(64);
        for (i, &s) in o.x_grid.nodes.iter().enumerate() {
            let (a, b) = (l / 2.0, s);
            let mut acc = Vector3::zeros();
            for (xq, wq) in gx.iter().zip(&gw) {
                acc += tangent(0.5 * (a + b) + 0.5 * (b - a) * xq) * (wq * 0.5 * (b - a));
            }
            assert!((sh.node(i) - acc).norm() < 1e-8, "node {i}");
        }
    }

    #[test]
    fn midpoint_shift_translates() {
        let o = ops(10);
        let sh = bent_shape(&o);
        let d = Vector3::new(0.5, -1.0, 2.0);
        let moved = sh.translated(&d, &o);
        for i in 0..sh.n_nodes() {
            assert!((moved.node(i) - sh.node(i) - d).norm() < 1e-13);
        }
    }

    #[test]
    fn bending_of_parabola() {
        let o = ops(8);
        let l = 2.0;
        let mut x = DVector::zeros(27);
        for (i, s) in o.x_grid.nodes.iter().enumerate() {
            x[3 * i] = *s;
            x[3 * i + 1] = s * s;
        }
        let e = o.bending_energy(&x);
        assert!((e - 2.0 * 1.3 * l).abs() < 1e-10);
    }

    #[test]
    fn straight_fiber_has_no_bending_force() {
        let o = ops(12);
        let sh = FilamentShape::straight(Vector3::new(0.2, 1.0, 0.3), Vector3::new(1.0, 0.0, 0.0), &o).unwrap();
        let f = o.bending_force(sh.positions());
        assert!(f.amax() < 1e-10 * o.bending.amax(), "{}", f.amax() / o.bending.amax());
    }

    #[test]
    fn bending_force_matches_finite_differences() {
        let o = ops(10);
        let sh = bent_shape(&o);
        let x = sh.positions().clone();
        let f = o.bending_force(&x);
        let h = 1e-6 * 2.0;
        let mut err: f64 = 0.0;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let g = (o.bending_energy(&xp) - o.bending_energy(&xm)) / (2.0 * h);
            err = err.max((f[j] + g).abs());
        }
        assert!(err <= 1e-5 * f.amax(), "err {err} vs {}", f.amax());
    }

    #[test]
    fn kinematic_translation_nullspace_and_adjoint() {
        let o = ops(9);
        let sh = bent_shape(&o);
        let k = kinematic_matrix(&sh, &o).unwrap();
        let n = 9;
        let mut alpha = vec![0.0; 3 * (n + 1)];
        alpha[3 * n..].copy_from_slice(&[0.3, -0.4, 1.1]);
        let u = k.apply(&alpha);
        for i in 0..n + 1 {
            assert!((u[3 * i] - 0.3).abs() < 1e-13 && (u[3 * i + 2] - 1.1).abs() < 1e-13);
        }
        let mut alpha = vec![0.0; 3 * (n + 1)];
        for (p, t) in sh.tau().iter().enumerate() {
            let c = 0.5 + p as f64;
            alpha[3 * p..3 * p + 3].copy_from_slice((t * c).as_slice());
        }
        assert!(k.apply(&alpha).iter().all(|v| v.abs() < 1e-12));
        let sv = k.k.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|s| **s > 1e-10 * smax).count();
        assert_eq!(rank, 3 * (n + 1) - n);
    }

    #[test]
    fn non_unit_tangent_rejected() {
        let o = ops(6);
        let mut sh = bent_shape(&o);
        sh.tau[2] *= 1.01;
        assert!(matches!(kinematic_matrix(&sh, &o), Err(Error::InvalidState(_))));
    }

    #[test]
    fn quarter_turn_rotation() {
        let o = ops(5);
        let sh = FilamentShape::straight(Vector3::x(), Vector3::zeros(), &o).unwrap();
        let mut a = vec![0.0; 18];
        for p in 0..5 {
            a[3 * p + 2] = std::f64::consts::FRAC_PI_2;
        }
        let out = rotate_and_integrate(&sh, &a, &o).unwrap();
        for t in out.tau() {
            assert!((t - Vector3::y()).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_rotation_translates() {
        let o = ops(6);
        let sh = bent_shape(&o);
        let mut a = vec![0.0; 21];
        a[18..].copy_from_slice(&[1.0, 2.0, 3.0]);
        let out = rotate_and_integrate(&sh, &a, &o).unwrap();
        assert_eq!(out.tau(), sh.tau());
        assert!((out.midpoint() - sh.midpoint() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-15);
    }

    #[test]
    fn many_rotations_keep_unit_norm() {
        let o = ops(6);
        let mut sh = bent_shape(&o);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for step in 0..10_000 {
            let scale = if step % 3 == 0 { 1e-9 } else { 0.3 };
            let a: Vec<f64> = (0..21).map(|_| rng.random_range(-scale..scale)).collect();
            sh = rotate_and_integrate(&sh, &a, &o).unwrap();
        }
        let worst = sh.tau().iter().map(|t| (1.0 - t.norm()).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12);
    }

    #[test]
    fn weighted_pinv_recovers_range_motion() {
        let o = ops(8);
        let sh = bent_shape(&o);
        let k = kinematic_matrix(&sh, &o).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let red: Vec<f64> = (0..k.reduced_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let alpha = k.expand(&red);
        let u = k.apply(&alpha);
        let back = k.weighted_pinv(&u, &o).unwrap();
        for (a, b) in alpha.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
