//! Force-to-velocity maps for collections of fibers.
//!
//! Three SPD modes are supported: purely local (per-fiber special quadrature),
//! oversampled RPY summation, and the fat-corrected splitting in which the
//! nonlocal sum runs at a thicker radius â* and a dense per-fiber correction
//! restores the true self mobility. A fourth, non-SPD mode (oversampled
//! nonlocal part plus special-quadrature self part) exists for deterministic
//! comparisons only.

pub mod quadrature;
pub mod rpy;

pub use quadrature::{
    local_gl_count, precompute_q_tables, self_special_quadrature, special_quadrature_matrix, SelfQuadTables,
};
pub use rpy::{blob_apply, blob_matrix, rpy_kernel, rpy_kernel_disp, PairSelect};

use crate::app::domain::Domain;
use crate::error::{Error, Result};
use crate::filament::{hat_ratio, DiscretizationOps, FilamentShape};
use crate::linalg::{apply_blockwise, kron3, mat_vec, SymEig};
use crate::spectral::{cheb_grid, resampling_matrix, GridKind};
use nalgebra::{Cholesky, DMatrix, Dyn, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use std::cell::OnceCell;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MobilityMode {
    /// Block-diagonal special-quadrature mobility (no inter-fiber coupling).
    Local,
    /// Oversampled RPY summation at the true radius.
    Oversampled,
    /// Oversampled summation at â* plus per-fiber SPD correction.
    FatCorrected,
    /// Oversampled inter-fiber part with special-quadrature self part; not SPD.
    OversampledFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityConfig {
    pub mode: MobilityMode,
    /// Fattened aspect ratio ε̂* (fat-corrected mode).
    pub hat_eps_fat: f64,
    /// Upsampled points per fiber for the RPY sums.
    pub n_upsample: usize,
    /// Eigenvalue floor λ* in units of 1/(8πμL).
    pub eig_floor: f64,
    /// Override for the local-integral GL count N₂.
    pub n_local_gl: Option<usize>,
    /// Above this N_u the oversampled local blocks used for preconditioning
    /// are replaced by the special-quadrature matrices.
    pub exact_local_max_upsample: usize,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            mode: MobilityMode::Local,
            hat_eps_fat: 1e-2,
            n_upsample: 100,
            eig_floor: 1e-3,
            n_local_gl: None,
            exact_local_max_upsample: 400,
        }
    }
}

/// Upsampling to a type-1 grid of N_u points with its quadrature weights.
#[derive(Clone, Debug)]
pub struct Upsampler {
    pub n_u: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// E_u (N_u × N_x).
    pub extend: DMatrix<f64>,
    /// W_u E_u W̃⁻¹ (N_u × N_x): nodal forces to blob forces.
    pub spread: DMatrix<f64>,
    /// W̃⁻¹ E_uᵀ W_u (N_x × N_u): blob velocities to nodal velocities.
    pub gather: DMatrix<f64>,
}

impl Upsampler {
    pub fn new(ops: &DiscretizationOps, n_u: usize) -> Result<Self> {
        let grid = cheb_grid(n_u, ops.params.length, GridKind::Type1)?;
        let extend = resampling_matrix(&ops.x_grid, &grid.nodes)?.matrix;
        let mut we = extend.clone();
        for (i, w) in grid.weights.iter().enumerate() {
            we.row_mut(i).scale_mut(*w);
        }
        let spread = &we * &ops.weights.inverse;
        let gather = spread.transpose();
        Ok(Self { n_u, nodes: grid.nodes, weights: grid.weights, extend, spread, gather })
    }

    pub fn points(&self, shape: &FilamentShape) -> Vec<Vector3<f64>> {
        let x = apply_blockwise(&self.extend, shape.positions().as_slice());
        (0..self.n_u).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect()
    }
}

/// Configuration-independent part of the mobility.
#[derive(Clone, Debug)]
pub struct Mobility {
    pub config: MobilityConfig,
    pub ops: DiscretizationOps,
    pub tables: SelfQuadTables,
    pub fat_tables: Option<SelfQuadTables>,
    pub upsampler: Option<Upsampler>,
}

impl Mobility {
    pub fn new(config: MobilityConfig, ops: &DiscretizationOps) -> Result<Self> {
        let p = &ops.params;
        if !(config.eig_floor > 0.0) {
            return Err(Error::InvalidArgument("eigenvalue floor must be positive".into()));
        }
        let n2 = config.n_local_gl.unwrap_or_else(|| local_gl_count(p.eps()));
        let tables = precompute_q_tables(&ops.x_grid, p.hat_radius(), n2)?;
        let needs_up = config.mode != MobilityMode::Local;
        if needs_up && config.n_upsample < ops.n_x() {
            return Err(Error::InvalidArgument(format!(
                "N_u = {} must be at least N_x = {}",
                config.n_upsample,
                ops.n_x()
            )));
        }
        let fat_tables = if config.mode == MobilityMode::FatCorrected {
            if config.hat_eps_fat < p.hat_eps() {
                return Err(Error::InvalidArgument("ε̂* must not be smaller than ε̂".into()));
            }
            let a_fat = config.hat_eps_fat * p.length;
            let n2f = config.n_local_gl.unwrap_or_else(|| local_gl_count(a_fat / hat_ratio() / p.length));
            Some(precompute_q_tables(&ops.x_grid, a_fat, n2f)?)
        } else {
            None
        };
        let upsampler = if needs_up { Some(Upsampler::new(ops, config.n_upsample)?) } else { None };
        Ok(Self { config, ops: ops.clone(), tables, fat_tables, upsampler })
    }

    pub fn mu(&self) -> f64 {
        self.ops.params.mu
    }

    pub fn a_hat(&self) -> f64 {
        self.ops.params.hat_radius()
    }

    /// Radius used by the oversampled sums in the current mode.
    pub fn sum_radius(&self) -> f64 {
        match self.config.mode {
            MobilityMode::FatCorrected => self.config.hat_eps_fat * self.ops.params.length,
            _ => self.a_hat(),
        }
    }

    /// Absolute eigenvalue floor.
    pub fn floor(&self) -> f64 {
        self.config.eig_floor / (8.0 * PI * self.mu() * self.ops.params.length)
    }

    pub fn self_velocity(&self, shape: &FilamentShape, density: &[f64]) -> Vec<f64> {
        self_special_quadrature(&self.tables, shape.positions().as_slice(), density, self.mu())
    }

    /// Symmetrized M W̃⁻¹ before eigenvalue truncation.
    pub fn sqs_untruncated(&self, shape: &FilamentShape, fat: bool) -> DMatrix<f64> {
        let tables = if fat { self.fat_tables.as_ref().unwrap_or(&self.tables) } else { &self.tables };
        let m = special_quadrature_matrix(tables, shape.positions().as_slice(), self.mu());
        let mt = &m * kron3(&self.ops.weights.inverse);
        crate::linalg::symmetrize(&mt)
    }

    /// M̃_SQS: symmetrized, eigenvalues clamped below at the floor.
    pub fn sqs_matrix(&self, shape: &FilamentShape, fat: bool) -> DMatrix<f64> {
        SymEig::new(&self.sqs_untruncated(shape, fat)).clamped_below(self.floor()).matrix()
    }

    /// Dense self block of the oversampled mobility W̃⁻¹E_uᵀW_u M_RPY W_u E_u W̃⁻¹.
    pub fn oversampled_self_block(&self, shape: &FilamentShape, a_hat: f64) -> Result<DMatrix<f64>> {
        let up = self.upsampler.as_ref().ok_or_else(|| Error::InvalidState("no upsampler in this mode".into()))?;
        let pts = up.points(shape);
        let m = blob_matrix(&pts, a_hat, self.mu(), &Domain::FreeSpace);
        let s = kron3(&up.spread);
        let out = s.transpose() * m * &s;
        Ok(crate::linalg::symmetrize(&out))
    }

    pub fn configure<'a>(&'a self, fibers: &[FilamentShape], domain: &Domain) -> ConfiguredMobility<'a> {
        ConfiguredMobility::new(self, fibers, domain)
    }
}

#[derive(Clone, Debug)]
pub struct LocalBlock {
    pub matrix: DMatrix<f64>,
    pub eig: SymEig,
}

/// The mobility evaluated at one configuration. Dense per-fiber pieces and the
/// grand Cholesky factor are built on first use.
pub struct ConfiguredMobility<'a> {
    pub mobility: &'a Mobility,
    pub fibers: Vec<FilamentShape>,
    pub domain: Domain,
    points: Vec<Vector3<f64>>,
    groups: Vec<usize>,
    local: Vec<OnceCell<LocalBlock>>,
    correction: Vec<OnceCell<SymEig>>,
    sqs: Vec<OnceCell<LocalBlock>>,
    cholesky: OnceCell<std::result::Result<DMatrix<f64>, String>>,
}

impl<'a> ConfiguredMobility<'a> {
    pub fn new(mobility: &'a Mobility, fibers: &[FilamentShape], domain: &Domain) -> Self {
        let mut points = Vec::new();
        let mut groups = Vec::new();
        if let Some(up) = &mobility.upsampler {
            for (f, sh) in fibers.iter().enumerate() {
                points.extend(up.points(sh));
                groups.extend(std::iter::repeat_n(f, up.n_u));
            }
        }
        let nf = fibers.len();
        Self {
            mobility,
            fibers: fibers.to_vec(),
            domain: *domain,
            points,
            groups,
            local: (0..nf).map(|_| OnceCell::new()).collect(),
            correction: (0..nf).map(|_| OnceCell::new()).collect(),
            sqs: (0..nf).map(|_| OnceCell::new()).collect(),
            cholesky: OnceCell::new(),
        }
    }

    pub fn n_fibers(&self) -> usize {
        self.fibers.len()
    }

    pub fn fiber_dim(&self) -> usize {
        3 * self.mobility.ops.n_x()
    }

    pub fn dim(&self) -> usize {
        self.fiber_dim() * self.n_fibers()
    }

    pub fn mode(&self) -> MobilityMode {
        self.mobility.config.mode
    }

    fn sqs_block(&self, f: usize) -> &LocalBlock {
        self.sqs[f].get_or_init(|| {
            let eig = SymEig::new(&self.mobility.sqs_untruncated(&self.fibers[f], false)).clamped_below(self.mobility.floor());
            LocalBlock { matrix: eig.matrix(), eig }
        })
    }

    fn sqs(&self, f: usize) -> &DMatrix<f64> {
        &self.sqs_block(f).matrix
    }

    /// Clamped fat correction M̃_SQS − M̃_SQS^{(*)} for fiber f.
    pub fn correction(&self, f: usize) -> &SymEig {
        self.correction[f].get_or_init(|| {
            let fat = self.mobility.sqs_matrix(&self.fibers[f], true);
            let diff = self.sqs(f) - fat;
            let floor = self.mobility.floor();
            let mut e = SymEig::new(&diff);
            e.values.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = floor;
                }
            });
            e
        })
    }

    /// Dense local block M̃^L for fiber f (the block-diagonal part used for
    /// the locally implicit solves and the preconditioner).
    pub fn local_block(&self, f: usize) -> &LocalBlock {
        self.local[f].get_or_init(|| {
            let mob = self.mobility;
            let matrix = match mob.config.mode {
                MobilityMode::Local | MobilityMode::OversampledFirst => return self.sqs_block(f).clone(),
                MobilityMode::Oversampled => {
                    if mob.config.n_upsample <= mob.config.exact_local_max_upsample {
                        self.os_block(f)
                    } else {
                        self.sqs(f).clone()
                    }
                }
                MobilityMode::FatCorrected => self.os_block(f) + self.correction(f).matrix(),
            };
            let eig = SymEig::new(&matrix);
            LocalBlock { matrix, eig }
        })
    }

    fn os_block(&self, f: usize) -> DMatrix<f64> {
        self.mobility
            .oversampled_self_block(&self.fibers[f], self.mobility.sum_radius())
            .expect("oversampled mode carries an upsampler")
    }

    /// Whether the local blocks reproduce the full mobility exactly.
    pub fn is_block_diagonal(&self) -> bool {
        match self.mode() {
            MobilityMode::Local => true,
            MobilityMode::OversampledFirst | MobilityMode::FatCorrected => self.n_fibers() == 1,
            MobilityMode::Oversampled => {
                self.n_fibers() == 1 && self.mobility.config.n_upsample <= self.mobility.config.exact_local_max_upsample
            }
        }
    }

    fn split<'b>(&self, v: &'b [f64]) -> Vec<&'b [f64]> {
        v.chunks(self.fiber_dim()).collect()
    }

    /// Sum over blobs of all fibers: W̃⁻¹E_uᵀW_u M (W_u E_u W̃⁻¹ F).
    fn oversampled_apply(&self, forces: &[f64], select: PairSelect) -> Vec<f64> {
        let mob = self.mobility;
        let up = mob.upsampler.as_ref().expect("oversampled mode carries an upsampler");
        let mut blob_f = Vec::with_capacity(self.points.len());
        for ff in self.split(forces) {
            let s = apply_blockwise(&up.spread, ff);
            blob_f.extend((0..up.n_u).map(|i| Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2])));
        }
        let u = blob_apply(&self.points, &blob_f, &self.groups, select, mob.sum_radius(), mob.mu(), &self.domain);
        let mut out = Vec::with_capacity(forces.len());
        for chunk in u.chunks(up.n_u) {
            let flat: Vec<f64> = chunk.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
            out.extend(apply_blockwise(&up.gather, &flat));
        }
        out
    }

    /// U = M̃ F for the full mobility.
    pub fn apply(&self, forces: &[f64]) -> Vec<f64> {
        assert_eq!(forces.len(), self.dim(), "force vector has the wrong length");
        match self.mode() {
            MobilityMode::Local => self.apply_local(forces),
            MobilityMode::Oversampled => self.oversampled_apply(forces, PairSelect::All),
            MobilityMode::FatCorrected => {
                let mut u = self.oversampled_apply(forces, PairSelect::All);
                for (f, ff) in self.split(forces).into_iter().enumerate() {
                    let c = mat_vec(&self.correction(f).matrix(), ff);
                    let d = self.fiber_dim();
                    for (a, b) in u[f * d..(f + 1) * d].iter_mut().zip(c) {
                        *a += b;
                    }
                }
                u
            }
            MobilityMode::OversampledFirst => {
                let mut u = if self.n_fibers() > 1 {
                    self.oversampled_apply(forces, PairSelect::CrossGroup)
                } else {
                    vec![0.0; forces.len()]
                };
                for (f, ff) in self.split(forces).into_iter().enumerate() {
                    let c = mat_vec(self.sqs(f), ff);
                    let d = self.fiber_dim();
                    for (a, b) in u[f * d..(f + 1) * d].iter_mut().zip(c) {
                        *a += b;
                    }
                }
                u
            }
        }
    }

    /// Block-diagonal part M̃^L F.
    pub fn apply_local(&self, forces: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(forces.len());
        for (f, ff) in self.split(forces).into_iter().enumerate() {
            out.extend(mat_vec(&self.local_block(f).matrix, ff));
        }
        out
    }

    /// M̃^{NL} F = M̃F − M̃^L F.
    pub fn apply_nonlocal(&self, forces: &[f64]) -> Vec<f64> {
        if self.is_block_diagonal() {
            return vec![0.0; forces.len()];
        }
        let full = self.apply(forces);
        let loc = self.apply_local(forces);
        full.iter().zip(loc).map(|(a, b)| a - b).collect()
    }

    /// Length of the standard-normal vector consumed by [`Self::sqrt_apply`].
    pub fn noise_dim(&self) -> usize {
        match self.mode() {
            MobilityMode::Local => self.dim(),
            MobilityMode::Oversampled => 3 * self.points.len(),
            MobilityMode::FatCorrected => 3 * self.points.len() + self.dim(),
            MobilityMode::OversampledFirst => 0,
        }
    }

    fn grand_cholesky(&self) -> Result<&DMatrix<f64>> {
        let r = self.cholesky.get_or_init(|| {
            let m = blob_matrix(&self.points, self.mobility.sum_radius(), self.mobility.mu(), &self.domain);
            Cholesky::<f64, Dyn>::new(m)
                .map(|c| c.unpack())
                .ok_or_else(|| "grand RPY matrix is not positive definite".to_string())
        });
        r.as_ref().map_err(|e| Error::Numerical(e.clone()))
    }

    /// Oversampled square-root factor W̃⁻¹E_uᵀW_u G applied to w, with GGᵀ the
    /// grand RPY matrix.
    fn oversampled_sqrt(&self, w: &[f64]) -> Result<Vec<f64>> {
        let g = self.grand_cholesky()?;
        let up = self.mobility.upsampler.as_ref().expect("upsampler");
        let gw = mat_vec(g, w);
        let mut out = Vec::with_capacity(self.dim());
        for chunk in gw.chunks(3 * up.n_u) {
            out.extend(apply_blockwise(&up.gather, chunk));
        }
        Ok(out)
    }

    /// M̃^{1/2} w in the sense that the covariance of the output is M̃ when w
    /// is standard normal of length [`Self::noise_dim`].
    pub fn sqrt_apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.noise_dim() {
            return Err(Error::InvalidArgument("noise vector has the wrong length".into()));
        }
        match self.mode() {
            MobilityMode::Local => {
                let mut out = Vec::with_capacity(self.dim());
                for (f, ww) in self.split(w).into_iter().enumerate() {
                    out.extend(mat_vec(&self.local_sqrt(f), ww));
                }
                Ok(out)
            }
            MobilityMode::Oversampled => self.oversampled_sqrt(w),
            MobilityMode::FatCorrected => {
                let n1 = 3 * self.points.len();
                let mut u = self.oversampled_sqrt(&w[..n1])?;
                let d = self.fiber_dim();
                for f in 0..self.n_fibers() {
                    let c = mat_vec(&self.correction(f).sqrt(), &w[n1 + f * d..n1 + (f + 1) * d]);
                    for (a, b) in u[f * d..(f + 1) * d].iter_mut().zip(c) {
                        *a += b;
                    }
                }
                Ok(u)
            }
            MobilityMode::OversampledFirst => Err(Error::InvalidState(
                "the oversampled-first mobility is not SPD and has no square root".into(),
            )),
        }
    }

    pub fn local_sqrt(&self, f: usize) -> DMatrix<f64> {
        self.local_block(f).eig.sqrt()
    }

    pub fn noise_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let w: Vec<f64> = (0..self.noise_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sqrt_apply(&w)
    }

    /// Dense M̃ by probing with unit forces.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filament::{build_discretization, FilamentParams};
    use crate::spectral::cheb_t;

    fn ops(n_x: usize, hat_eps: f64) -> DiscretizationOps {
        build_discretization(&FilamentParams::from_hat_eps(1.0, hat_eps, 1.0, 1.0, n_x - 1).unwrap()).unwrap()
    }

    fn curved(o: &DiscretizationOps) -> FilamentShape {
        let tau = o
            .tau_grid
            .nodes
            .iter()
            .map(|s| {
                let th = 0.3 + 1.1 * s - 0.8 * s * s;
                let ph = 0.4 * s;
                Vector3::new(th.cos() * ph.cos(), th.sin() * ph.cos(), ph.sin())
            })
            .collect();
        FilamentShape::new(tau, Vector3::zeros(), o).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn density(o: &DiscretizationOps) -> Vec<f64> {
        o.x_grid.nodes.iter().flat_map(|s| [1.0 + s, (3.0 * s).sin(), 0.5 - s * s]).collect()
    }

    #[test]
    fn stokes_moment_zero_is_signed_measure() {
        let o = ops(17, 1e-2);
        let t = precompute_q_tables(&o.x_grid, 1e-2, 8).unwrap();
        for (i, (lo, hi)) in t.split.iter().enumerate() {
            let mut expect = 0.0;
            if *lo > -1.0 {
                expect -= lo + 1.0;
            }
            if *hi < 1.0 {
                expect += 1.0 - hi;
            }
            assert!((t.q_stokes[(i, 0)] - expect).abs() < 1e-14);
            // T₁ = η: antiderivative η²/2 on each piece.
            let mut e1 = 0.0;
            if *lo > -1.0 {
                e1 -= 0.5 * (lo * lo - 1.0);
            }
            if *hi < 1.0 {
                e1 += 0.5 * (1.0 - hi * hi);
            }
            assert!((t.q_stokes[(i, 1)] - e1).abs() < 1e-14);
        }
    }

    #[test]
    fn doublet_moments_match_composite_simpson() {
        let o = ops(9, 2e-2);
        let t = precompute_q_tables(&o.x_grid, 2e-2, 8).unwrap();
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let m = 1_000_000;
            let h = (b - a) / m as f64;
            let mut acc = f(a) + f(b);
            for k in 1..m {
                acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        for i in [0, 3, 8] {
            let eta = o.x_grid.x[i];
            let (lo, hi) = t.split[i];
            for k in [0, 1, 4, 8] {
                let f = |x: f64| cheb_t(k, x) * (x - eta) / (x - eta).abs().powi(3);
                let mut v = 0.0;
                if lo > -1.0 {
                    v += simpson(&f, -1.0, lo);
                }
                if hi < 1.0 {
                    v += simpson(&f, hi, 1.0);
                }
                assert!((t.q_doublet[(i, k)] - v).abs() < 1e-8 * (1.0 + v.abs()), "i={i} k={k}");
            }
        }
    }

    #[test]
    fn matrix_assembly_matches_direct_apply() {
        let o = ops(13, 1e-2);
        let sh = curved(&o);
        let t = precompute_q_tables(&o.x_grid, 1e-2, 8).unwrap();
        let f = density(&o);
        let direct = self_special_quadrature(&t, sh.positions().as_slice(), &f, 1.0);
        let m = special_quadrature_matrix(&t, sh.positions().as_slice(), 1.0);
        let via = quadrature::apply_matrix(&m, &f);
        assert!(rel(&via, &direct) < 1e-12);
        let zero = self_special_quadrature(&t, sh.positions().as_slice(), &vec![0.0; f.len()], 1.0);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sqs_matrix_before_truncation_reproduces_apply() {
        let o = ops(13, 1e-2);
        let sh = curved(&o);
        let cfg = MobilityConfig { eig_floor: 1e-12, ..Default::default() };
        let mob = Mobility::new(cfg, &o).unwrap();
        let m = mob.sqs_untruncated(&sh, false);
        let f = density(&o);
        let forces = o.weigh(&f);
        let direct = mob.self_velocity(&sh, &f);
        let full = mat_vec(&m, &forces);
        // Symmetrization alters the operator; compare against the unsymmetrized product.
        let raw = special_quadrature_matrix(&mob.tables, sh.positions().as_slice(), 1.0)
            * kron3(&o.weights.inverse);
        assert!(rel(&mat_vec(&raw, &forces), &direct) < 1e-10);
        assert!(rel(&full, &direct) < 5e-2);
        let sqs = mob.sqs_matrix(&sh, false);
        assert!((&sqs - sqs.transpose()).amax() < 1e-14 * sqs.amax());
        assert!(SymEig::new(&sqs).min() >= mob.floor() * (1.0 - 1e-9));
    }

    /// Exact RPY line integral for a straight fiber along x̂ with constant density.
    fn straight_exact(o: &DiscretizationOps, f: [f64; 3]) -> Vec<f64> {
        let a = o.params.hat_radius();
        let l = o.params.length;
        let pre = 1.0 / (8.0 * PI * o.params.mu);
        o.x_grid
            .nodes
            .iter()
            .flat_map(|&s| {
                let (mut par, mut perp) = (0.0, 0.0);
                for d in [s, l - s] {
                    if d > 2.0 * a {
                        let lg = (d / (2.0 * a)).ln();
                        let inv = 1.0 / (8.0 * a * a) - 1.0 / (2.0 * d * d);
                        par += 2.0 * lg - (4.0 * a * a / 3.0) * inv;
                        perp += lg + (2.0 * a * a / 3.0) * inv;
                    }
                    let h = d.min(2.0 * a);
                    par += (4.0 / (3.0 * a)) * h - h * h / (8.0 * a * a);
                    perp += (4.0 / (3.0 * a)) * h - 3.0 * h * h / (16.0 * a * a);
                }
                [f[0] * par * pre, f[1] * perp * pre, f[2] * perp * pre]
            })
            .collect()
    }

    fn weighted_rel(o: &DiscretizationOps, a: &[f64], b: &[f64]) -> f64 {
        let wn = |v: &[f64]| v.iter().zip(o.weigh(v)).map(|(x, y)| x * y).sum::<f64>().sqrt();
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        wn(&d) / wn(b)
    }

    #[test]
    fn straight_fiber_matches_analytic_line_integral() {
        for nx in [9, 25] {
            let o = ops(nx, 1e-3);
            let sh = FilamentShape::straight(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), &o).unwrap();
            let f: Vec<f64> = (0..nx).flat_map(|_| [0.3, 1.0, -0.2]).collect();
            let mob = Mobility::new(MobilityConfig::default(), &o).unwrap();
            assert!(rel(&mob.self_velocity(&sh, &f), &straight_exact(&o, [0.3, 1.0, -0.2])) < 1e-12);
        }
    }

    #[test]
    fn straight_fiber_matches_oversampled_reference() {
        let o = ops(25, 1e-3);
        let sh = FilamentShape::straight(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), &o).unwrap();
        let f: Vec<f64> = (0..25).flat_map(|_| [0.3, 1.0, -0.2]).collect();
        let cfg = MobilityConfig { mode: MobilityMode::Oversampled, n_upsample: 2000, ..Default::default() };
        let mob = Mobility::new(cfg, &o).unwrap();
        let sq = mob.self_velocity(&sh, &f);
        let os = mob.configure(&[sh.clone()], &Domain::FreeSpace).apply(&o.weigh(&f));
        let e = weighted_rel(&o, &sq, &os);
        assert!(e <= 5e-3, "relative L2 error {e}");
    }

    #[test]
    fn axial_force_gives_axial_velocity() {
        let o = ops(13, 1e-2);
        let sh = FilamentShape::straight(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros(), &o).unwrap();
        let cfg = MobilityConfig { mode: MobilityMode::Oversampled, n_upsample: 100, ..Default::default() };
        let mob = Mobility::new(cfg, &o).unwrap();
        let conf = mob.configure(&[sh], &Domain::FreeSpace);
        let u = conf.apply(&o.uniform_density_force(&Vector3::new(0.0, 0.0, 1.0)));
        for i in 0..13 {
            assert!(u[3 * i].abs() < 1e-14 && u[3 * i + 1].abs() < 1e-14);
            assert!(u[3 * i + 2] > 0.0);
        }
        assert!(conf.apply(&vec![0.0; 39]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn velocity_scales_inversely_with_viscosity() {
        let o1 = ops(13, 1e-2);
        let p2 = FilamentParams { mu: 2.0, ..o1.params };
        let o2 = build_discretization(&p2).unwrap();
        let sh = curved(&o1);
        let f = density(&o1);
        for mode in [MobilityMode::Local, MobilityMode::Oversampled, MobilityMode::FatCorrected] {
            let cfg = MobilityConfig { mode, n_upsample: 60, hat_eps_fat: 3e-2, ..Default::default() };
            let m1 = Mobility::new(cfg.clone(), &o1).unwrap();
            let m2 = Mobility::new(cfg, &o2).unwrap();
            let u1 = m1.configure(&[sh.clone()], &Domain::FreeSpace).apply(&f);
            let u2 = m2.configure(&[sh.clone()], &Domain::FreeSpace).apply(&f);
            for (a, b) in u1.iter().zip(&u2) {
                assert!((a - 2.0 * b).abs() <= 1e-12 * a.abs().max(1e-3), "{mode:?}");
            }
        }
    }

    #[test]
    fn fat_corrected_single_fiber_close_to_sqs() {
        let o = ops(17, 1e-3);
        let sh = curved(&o);
        let cfg = MobilityConfig {
            mode: MobilityMode::FatCorrected,
            hat_eps_fat: 1e-2,
            n_upsample: 100,
            ..Default::default()
        };
        let mob = Mobility::new(cfg, &o).unwrap();
        let conf = mob.configure(&[sh.clone()], &Domain::FreeSpace);
        let forces = o.weigh(&density(&o));
        let u = conf.apply(&forces);
        let sqs = mat_vec(&mob.sqs_matrix(&sh, false), &forces);
        assert!(rel(&u, &sqs) <= 1e-2, "{}", rel(&u, &sqs));
    }

    #[test]
    fn correction_is_positive_semidefinite_before_clamping() {
        let o = ops(25, 1e-3);
        let sh = curved(&o);
        for fat in [2e-3, 5e-3, 1e-2] {
            let cfg = MobilityConfig { mode: MobilityMode::FatCorrected, hat_eps_fat: fat, n_upsample: 100, ..Default::default() };
            let mob = Mobility::new(cfg, &o).unwrap();
            let d = mob.sqs_matrix(&sh, false) - mob.sqs_matrix(&sh, true);
            let e = SymEig::new(&d);
            assert!(e.min() >= -1e-12 * mob.sqs_matrix(&sh, false).norm(), "ε̂* = {fat}: {}", e.min());
        }
    }

    #[test]
    fn oversampled_first_is_not_spd_sqrt() {
        let o = ops(9, 1e-2);
        let sh = curved(&o);
        let cfg = MobilityConfig { mode: MobilityMode::OversampledFirst, n_upsample: 40, ..Default::default() };
        let mob = Mobility::new(cfg, &o).unwrap();
        let conf = mob.configure(&[sh], &Domain::FreeSpace);
        assert!(conf.sqrt_apply(&[]).is_err());
    }
}
