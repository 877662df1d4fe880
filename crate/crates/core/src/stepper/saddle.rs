//! The constrained saddle-point system
//!
//!   [ −M̃   K + Δt M̃ L K ] [Λ]   [r₁]
//!   [  Kᵀ        0      ] [α] = [r₂]
//!
//! posed on the reduced, full-rank K′ and solved with right-preconditioned
//! GMRES. The preconditioner replaces M̃ by its block-diagonal part and is
//! inverted fiber by fiber through the Schur complement
//! S = K′ᵀ(M̃ᴸ)⁻¹K′ + Δt K′ᵀLK′.

use crate::error::{Error, Result};
use crate::filament::{kinematic_matrix, KinematicMatrix};
use crate::linalg::{apply_blockwise, gmres, mat_vec, GmresConfig, GmresOutcome};
use crate::mobility::ConfiguredMobility;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

struct LocalFactor {
    m_inv: DMatrix<f64>,
    schur: Cholesky<f64, Dyn>,
}

pub struct SaddleSystem<'m, 'a> {
    pub mobility: &'m ConfiguredMobility<'a>,
    pub kinematics: Vec<KinematicMatrix>,
    pub dt: f64,
    factors: Vec<LocalFactor>,
    fiber_dim: usize,
    reduced_dim: usize,
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    /// Constraint forces of all fibers, concatenated.
    pub lambda: Vec<f64>,
    /// Full α = (Ω, U_MP) per fiber.
    pub alpha: Vec<Vec<f64>>,
    pub gmres: GmresOutcome,
}

impl<'m, 'a> SaddleSystem<'m, 'a> {
    pub fn new(mobility: &'m ConfiguredMobility<'a>, dt: f64) -> Result<Self> {
        if !(dt >= 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be nonnegative, got {dt}")));
        }
        let ops = &mobility.mobility.ops;
        let lfull = ops.bending_full();
        let mut kinematics = Vec::with_capacity(mobility.n_fibers());
        let mut factors = Vec::with_capacity(mobility.n_fibers());
        for (f, shape) in mobility.fibers.iter().enumerate() {
            let k = kinematic_matrix(shape, ops)?;
            let block = mobility.local_block(f);
            if block.eig.min() <= 0.0 {
                return Err(Error::Numerical(format!("local mobility of fiber {f} is not positive definite")));
            }
            let m_inv = block.eig.map(|v| 1.0 / v);
            let kr = &k.reduced;
            let s = kr.transpose() * &m_inv * kr + (kr.transpose() * &lfull * kr) * dt;
            let s = (&s + s.transpose()) * 0.5;
            let schur = Cholesky::new(s).ok_or_else(|| Error::Numerical("Schur complement is not positive definite".into()))?;
            kinematics.push(k);
            factors.push(LocalFactor { m_inv, schur });
        }
        let reduced_dim = 2 * ops.n_tangent() + 3;
        Ok(Self { mobility, kinematics, dt, factors, fiber_dim: mobility.fiber_dim(), reduced_dim })
    }

    pub fn n_fibers(&self) -> usize {
        self.kinematics.len()
    }

    /// Length of the unknown vector (Λ, α′).
    pub fn dim(&self) -> usize {
        self.n_fibers() * (self.fiber_dim + self.reduced_dim)
    }

    fn lambda_len(&self) -> usize {
        self.n_fibers() * self.fiber_dim
    }

    fn bending(&self, x: &[f64]) -> Vec<f64> {
        apply_blockwise(&self.mobility.mobility.ops.bending, x)
    }

    fn reduced_apply(&self, f: usize, a: &[f64]) -> Vec<f64> {
        mat_vec(&self.kinematics[f].reduced, a)
    }

    fn reduced_adjoint(&self, f: usize, l: &[f64]) -> Vec<f64> {
        (self.kinematics[f].reduced.transpose() * DVector::from_column_slice(l)).as_slice().to_vec()
    }

    /// Applies the saddle operator to (Λ, α′).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (d, r, nl) = (self.fiber_dim, self.reduced_dim, self.lambda_len());
        let (lam, alpha) = v.split_at(nl);
        let mut kalpha = Vec::with_capacity(nl);
        let mut inner = Vec::with_capacity(nl);
        for f in 0..self.n_fibers() {
            let ka = self.reduced_apply(f, &alpha[f * r..(f + 1) * r]);
            let lka = self.bending(&ka);
            inner.extend(lka.iter().zip(&lam[f * d..(f + 1) * d]).map(|(a, b)| self.dt * a - b));
            kalpha.extend(ka);
        }
        let m = self.mobility.apply(&inner);
        let mut out: Vec<f64> = kalpha.iter().zip(&m).map(|(a, b)| a + b).collect();
        for f in 0..self.n_fibers() {
            out.extend(self.reduced_adjoint(f, &lam[f * d..(f + 1) * d]));
        }
        out
    }

    /// Exact inverse of the block-diagonal preconditioner.
    pub fn precondition(&self, rhs: &[f64]) -> Vec<f64> {
        let (d, r, nl) = (self.fiber_dim, self.reduced_dim, self.lambda_len());
        let (r1, r2) = rhs.split_at(nl);
        let mut lam = Vec::with_capacity(nl);
        let mut alpha = Vec::with_capacity(self.n_fibers() * r);
        for (f, fac) in self.factors.iter().enumerate() {
            let r1f = &r1[f * d..(f + 1) * d];
            let minv_r1 = mat_vec(&fac.m_inv, r1f);
            let mut b = self.reduced_adjoint(f, &minv_r1);
            for (bi, ri) in b.iter_mut().zip(&r2[f * r..(f + 1) * r]) {
                *bi += ri;
            }
            let a = fac.schur.solve(&DVector::from_vec(b));
            let ka = self.reduced_apply(f, a.as_slice());
            let diff: Vec<f64> = ka.iter().zip(r1f).map(|(x, y)| x - y).collect();
            let part = mat_vec(&fac.m_inv, &diff);
            let lka = self.bending(&ka);
            lam.extend(part.iter().zip(&lka).map(|(p, l)| p + self.dt * l));
            alpha.extend_from_slice(a.as_slice());
        }
        lam.extend(alpha);
        lam
    }

    /// Stacks a velocity right-hand side r₁ (one block per fiber) with r₂ = 0.
    pub fn rhs(&self, top: &[f64]) -> Vec<f64> {
        let mut b = top.to_vec();
        b.resize(self.dim(), 0.0);
        b
    }

    fn unpack(&self, x: &[f64], gmres: GmresOutcome) -> SaddleSolution {
        let (r, nl) = (self.reduced_dim, self.lambda_len());
        let alpha = (0..self.n_fibers()).map(|f| self.kinematics[f].expand(&x[nl + f * r..nl + (f + 1) * r])).collect();
        SaddleSolution { lambda: x[..nl].to_vec(), alpha, gmres }
    }

    /// Solves with GMRES; fails if the tolerance is not reached.
    pub fn solve(&self, top: &[f64], cfg: &GmresConfig) -> Result<SaddleSolution> {
        let out = self.solve_capped(top, cfg);
        if !out.gmres.converged {
            return Err(Error::SolverFailure { iterations: out.gmres.iterations, residual: out.gmres.residual });
        }
        Ok(out)
    }

    /// Runs at most `cfg.max_iters` GMRES iterations and returns whatever it has.
    pub fn solve_capped(&self, top: &[f64], cfg: &GmresConfig) -> SaddleSolution {
        let b = self.rhs(top);
        let mut x = vec![0.0; self.dim()];
        let out = gmres(&|v| self.apply(v), &|v| self.precondition(v), &b, &mut x, cfg);
        self.unpack(&x, out)
    }

    /// Direct solve of the preconditioner system (exact for block-diagonal M̃).
    pub fn solve_local(&self, top: &[f64]) -> SaddleSolution {
        let x = self.precondition(&self.rhs(top));
        self.unpack(&x, GmresOutcome { iterations: 0, residual: 0.0, converged: true })
    }

    /// Nodal velocities Kα of every fiber.
    pub fn velocities(&self, sol: &SaddleSolution) -> Vec<f64> {
        sol.alpha.iter().zip(&self.kinematics).flat_map(|(a, k)| k.apply(a)).collect()
    }

    /// −L X for every fiber.
    pub fn bending_forces(&self, positions: &[f64]) -> Vec<f64> {
        positions.chunks(self.fiber_dim).flat_map(|x| self.bending(x)).map(|v| -v).collect()
    }
}

/// Dense matrix of the full (rank-deficient) saddle operator built with the
/// full K, for testing.
pub fn dense_saddle_matrix(sys: &SaddleSystem) -> DMatrix<f64> {
    let m = sys.mobility.dense();
    let lfull = sys.mobility.mobility.ops.bending_full();
    let nf = sys.n_fibers();
    let d = sys.fiber_dim;
    let ka = sys.kinematics[0].k.ncols();
    let n = nf * (d + ka);
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (nf * d, nf * d)).copy_from(&(-&m));
    for f in 0..nf {
        let k = &sys.kinematics[f].k;
        let lk = &lfull * k;
        let col = nf * d + f * ka;
        let mlk = m.columns(f * d, d) * &lk * sys.dt;
        let mut blk = a.view_mut((0, col), (nf * d, ka));
        blk += mlk;
        let mut diag = a.view_mut((f * d, col), (d, ka));
        diag += k;
        a.view_mut((col, f * d), (ka, d)).copy_from(&k.transpose());
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::domain::Domain;
    use crate::filament::{build_discretization, FilamentParams, FilamentShape};
    use crate::mobility::{Mobility, MobilityConfig, MobilityMode};
    use nalgebra::Vector3;

    fn setup(n: usize) -> Mobility {
        let ops = build_discretization(&FilamentParams::from_hat_eps(1.0, 1e-2, 0.01, 1.0, n).unwrap()).unwrap();
        Mobility::new(MobilityConfig::default(), &ops).unwrap()
    }

    fn curved(ops: &crate::filament::DiscretizationOps, phase: f64, mid: Vector3<f64>) -> FilamentShape {
        let tau = ops
            .tau_grid
            .nodes
            .iter()
            .map(|s| Vector3::new((1.5 * s + phase).cos(), (1.5 * s + phase).sin(), 0.4 * s).normalize())
            .collect();
        FilamentShape::new(tau, mid, ops).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let mob = setup(8);
        let fibers = vec![curved(&mob.ops, 0.2, Vector3::zeros())];
        let cm = mob.configure(&fibers, &Domain::FreeSpace);
        let sys = SaddleSystem::new(&cm, 1e-3).unwrap();
        let sol = sys.solve(&vec![0.0; cm.dim()], &GmresConfig::default()).unwrap();
        assert!(sol.lambda.iter().all(|v| *v == 0.0));
        assert!(sol.alpha.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn block_diagonal_converges_in_one_iteration_and_matches_dense_oracle() {
        let mob = setup(10);
        let ops = &mob.ops;
        let fibers = vec![curved(ops, 0.3, Vector3::zeros())];
        let cm = mob.configure(&fibers, &Domain::FreeSpace);
        let dt = 2e-3;
        let sys = SaddleSystem::new(&cm, dt).unwrap();
        let x = fibers[0].positions().as_slice().to_vec();
        let fb = sys.bending_forces(&x);
        let grav = ops.uniform_density_force(&Vector3::new(0.0, 0.0, -3.0));
        let force: Vec<f64> = fb.iter().zip(&grav).map(|(a, b)| a + b).collect();
        let top = cm.apply(&force);
        let cfg = GmresConfig { tol: 1e-12, ..GmresConfig::default() };
        let sol = sys.solve(&top, &cfg).unwrap();
        assert_eq!(sol.gmres.iterations, 1);

        // Minimum-norm solve of the singular full-K system.
        let a = dense_saddle_matrix(&sys);
        let mut b = DVector::zeros(a.nrows());
        b.rows_mut(0, top.len()).copy_from_slice(&top);
        let svd = a.clone().svd(true, true);
        let dense = svd.solve(&b, 1e-10 * svd.singular_values.max()).unwrap();
        let d = cm.dim();
        let lam_ref = dense.rows(0, d);
        let u_ref = &sys.kinematics[0].k * dense.rows(d, a.nrows() - d);
        let u = sys.velocities(&sol);
        let rel = |x: &[f64], y: &[f64]| {
            let n: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            n / y.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        assert!(rel(&sol.lambda, lam_ref.as_slice()) < 1e-8);
        assert!(rel(&u, u_ref.as_slice()) < 1e-8);
        // Constraint: K′ᵀΛ = 0.
        let ktl = sys.reduced_adjoint(0, &sol.lambda);
        let scale = crate::linalg::norm(&sol.lambda) * sys.kinematics[0].reduced.amax();
        assert!(crate::linalg::norm(&ktl) < 1e-9 * scale);
    }

    #[test]
    fn nonlocal_system_converges_and_matches_dense_oracle() {
        let ops = build_discretization(&FilamentParams::from_hat_eps(1.0, 1e-2, 0.01, 1.0, 8).unwrap()).unwrap();
        let cfg = MobilityConfig { mode: MobilityMode::FatCorrected, n_upsample: 40, ..MobilityConfig::default() };
        let mob = Mobility::new(cfg, &ops).unwrap();
        let fibers = vec![curved(&ops, 0.1, Vector3::zeros()), curved(&ops, 1.1, Vector3::new(0.2, 0.3, 0.0))];
        let cm = mob.configure(&fibers, &Domain::FreeSpace);
        let sys = SaddleSystem::new(&cm, 1e-3).unwrap();
        let mut force = ops.uniform_density_force(&Vector3::new(0.0, 0.0, -1.0));
        force.extend(ops.uniform_density_force(&Vector3::new(0.5, 0.0, -1.0)));
        let top = cm.apply(&force);
        let sol = sys.solve(&top, &GmresConfig { tol: 1e-10, ..GmresConfig::default() }).unwrap();
        assert!(sol.gmres.iterations > 1);
        let a = dense_saddle_matrix(&sys);
        let mut b = DVector::zeros(a.nrows());
        b.rows_mut(0, top.len()).copy_from_slice(&top);
        let svd = a.clone().svd(true, true);
        let dense = svd.solve(&b, 1e-10 * svd.singular_values.max()).unwrap();
        let d = cm.dim();
        let err: f64 = sol.lambda.iter().zip(dense.rows(0, d).iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = dense.rows(0, d).norm();
        assert!(err < 1e-7 * scale, "{err} vs {scale}");
    }
}
