//! Time integration of constrained filaments.

pub mod mcmc;
pub mod saddle;

use crate::app::domain::Domain;
use crate::error::{Error, Result};
use crate::filament::{rotate_and_integrate, FilamentShape};
use crate::linalg::{apply_blockwise, mat_vec, GmresConfig, GmresOutcome};
use crate::mobility::{ConfiguredMobility, Mobility, MobilityMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use mcmc::{mcmc_equilibrium_sampler, McmcConfig, McmcSamples};
pub use saddle::{SaddleSolution, SaddleSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    DeterministicFull,
    DeterministicLagged,
    Brownian,
}

/// How the mobility drift term of the Brownian scheme is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftMode {
    /// Random finite difference.
    Rfd,
    /// Dense (M̃^{n+1/2,*} − M̃ⁿ)M̃ⁿ^{-T/2}η; local mobility only.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub gmres_tol: f64,
    pub gmres_max_iters: usize,
    /// GMRES iteration cap of the residual solve in the lagged scheme.
    pub lagged_max_iters: usize,
    pub rfd_delta: f64,
    pub drift: DriftMode,
    pub kbt: f64,
    pub seed: u64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::DeterministicFull,
            gmres_tol: 1e-3,
            gmres_max_iters: 200,
            lagged_max_iters: 10,
            rfd_delta: 1e-5,
            drift: DriftMode::Rfd,
            kbt: 0.0,
            seed: 0,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("Δt must be positive, got {}", self.dt)));
        }
        if !(self.gmres_tol > 0.0 && self.gmres_tol < 1.0) {
            return Err(Error::InvalidArgument("GMRES tolerance must lie in (0, 1)".into()));
        }
        if !(self.kbt >= 0.0) || !(self.rfd_delta > 0.0) {
            return Err(Error::InvalidArgument("k_BT must be nonnegative and δ positive".into()));
        }
        Ok(())
    }

    fn gmres(&self) -> GmresConfig {
        GmresConfig { tol: self.gmres_tol, max_iters: self.gmres_max_iters, ..GmresConfig::default() }
    }
}

/// Purpose tags of the per-step random substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Brownian = 0,
    Rfd = 1,
    Mbe = 2,
    CrossLink = 3,
    Init = 4,
}

/// Independent generator for (seed, step, purpose): ChaCha8 keyed by the
/// master seed, with the stream number encoding step and purpose.
pub fn substream(seed: u64, step: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}

/// The three independent normal streams of one Brownian step.
pub struct StepNoise<R> {
    pub brownian: R,
    pub rfd: R,
    pub mbe: R,
}

impl StepNoise<ChaCha8Rng> {
    pub fn for_step(seed: u64, step: u64) -> Self {
        Self {
            brownian: substream(seed, step, Purpose::Brownian),
            rfd: substream(seed, step, Purpose::Rfd),
            mbe: substream(seed, step, Purpose::Mbe),
        }
    }
}

pub fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub fibers: Vec<FilamentShape>,
    pub lambda: Vec<f64>,
    pub gmres: GmresOutcome,
}

fn positions(fibers: &[FilamentShape]) -> Vec<f64> {
    fibers.iter().flat_map(|f| f.positions().iter().copied()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn check_forces(forces: &[f64], cm: &ConfiguredMobility) -> Result<()> {
    if forces.len() != cm.dim() {
        return Err(Error::InvalidArgument(format!("force vector has length {}, expected {}", forces.len(), cm.dim())));
    }
    Ok(())
}

fn advance(fibers: &[FilamentShape], alpha: &[Vec<f64>], scale: f64, mob: &Mobility) -> Result<Vec<FilamentShape>> {
    fibers
        .iter()
        .zip(alpha)
        .map(|(f, a)| {
            let step: Vec<f64> = a.iter().map(|v| v * scale).collect();
            rotate_and_integrate(f, &step, &mob.ops)
        })
        .collect()
}

/// Linearized backward Euler with everything implicit, one GMRES solve.
pub fn deterministic_step(
    mob: &Mobility,
    fibers: &[FilamentShape],
    forces: &[f64],
    domain: &Domain,
    cfg: &StepperConfig,
) -> Result<StepResult> {
    cfg.validate()?;
    let cm = mob.configure(fibers, domain);
    check_forces(forces, &cm)?;
    let sys = SaddleSystem::new(&cm, cfg.dt)?;
    let total = add(&sys.bending_forces(&positions(fibers)), forces);
    let sol = sys.solve(&cm.apply(&total), &cfg.gmres())?;
    let next = advance(fibers, &sol.alpha, cfg.dt, mob)?;
    Ok(StepResult { fibers: next, lambda: sol.lambda, gmres: sol.gmres })
}

/// Locally implicit step with lagged nonlocal constraint forces, followed by
/// a capped GMRES solve of the residual system. Without Λⁿ⁻¹ this is the
/// fully implicit step.
pub fn time_lagged_step(
    mob: &Mobility,
    fibers: &[FilamentShape],
    forces: &[f64],
    lambda_prev: Option<&[f64]>,
    domain: &Domain,
    cfg: &StepperConfig,
) -> Result<StepResult> {
    let Some(prev) = lambda_prev else {
        return deterministic_step(mob, fibers, forces, domain, cfg);
    };
    cfg.validate()?;
    let cm = mob.configure(fibers, domain);
    check_forces(forces, &cm)?;
    if prev.len() != cm.dim() {
        return Err(Error::InvalidArgument("lagged Λ has the wrong length".into()));
    }
    let sys = SaddleSystem::new(&cm, cfg.dt)?;
    let total = add(&sys.bending_forces(&positions(fibers)), forces);
    let mut top = cm.apply(&total);
    let lag = cm.apply_nonlocal(prev);
    top.iter_mut().zip(&lag).for_each(|(t, l)| *t += l);
    let local = sys.solve_local(&top);

    // Residual right side M̃ᴺᴸ(−ΔtLKα̃ + Λ̃ − Λⁿ⁻¹).
    let ka = sys.velocities(&local);
    let lka: Vec<f64> = ka.chunks(cm.fiber_dim()).flat_map(|x| apply_blockwise(&mob.ops.bending, x)).collect();
    let v: Vec<f64> =
        lka.iter().zip(&local.lambda).zip(prev).map(|((l, lam), p)| -cfg.dt * l + lam - p).collect();
    let rtop = cm.apply_nonlocal(&v);
    let capped = GmresConfig { tol: cfg.gmres_tol, max_iters: cfg.lagged_max_iters, ..GmresConfig::default() };
    let delta = sys.solve_capped(&rtop, &capped);
    let lambda = add(&local.lambda, &delta.lambda);
    let alpha: Vec<Vec<f64>> = local.alpha.iter().zip(&delta.alpha).map(|(a, b)| add(a, b)).collect();
    let next = advance(fibers, &alpha, cfg.dt, mob)?;
    Ok(StepResult { fibers: next, lambda, gmres: delta.gmres })
}

/// Velocity pieces of one Brownian step, exposed for testing.
#[derive(Clone, Debug)]
pub struct BrownianTerms {
    pub u_brownian: Vec<f64>,
    pub u_drift: Vec<f64>,
    pub u_mbe: Vec<f64>,
    pub midpoint: Vec<FilamentShape>,
}

/// Steps 1 to 5: Brownian velocity, midpoint configuration, drift and
/// modified-backward-Euler velocities.
pub fn brownian_terms<R: Rng>(
    mob: &Mobility,
    cm: &ConfiguredMobility,
    cfg: &StepperConfig,
    noise: &mut StepNoise<R>,
) -> Result<BrownianTerms> {
    let fibers = &cm.fibers;
    let ops = &mob.ops;
    let dim = cm.dim();
    let d = cm.fiber_dim();
    if cfg.kbt == 0.0 {
        return Ok(BrownianTerms {
            u_brownian: vec![0.0; dim],
            u_drift: vec![0.0; dim],
            u_mbe: vec![0.0; dim],
            midpoint: fibers.clone(),
        });
    }
    if cm.mode() == MobilityMode::OversampledFirst {
        return Err(Error::InvalidState("Brownian steps need an SPD mobility".into()));
    }
    // 1. U_B = √(2k_BT/Δt) M̃^{1/2} η.
    let eta = normals(&mut noise.brownian, cm.noise_dim());
    let amp = (2.0 * cfg.kbt / cfg.dt).sqrt();
    let u_brownian: Vec<f64> = cm.sqrt_apply(&eta)?.into_iter().map(|v| v * amp).collect();
    // 2-3. α* = K†U_B and the half-step midpoint configuration.
    let mut alpha_star = Vec::with_capacity(fibers.len());
    for (f, shape) in fibers.iter().enumerate() {
        let k = crate::filament::kinematic_matrix(shape, ops)?;
        alpha_star.push(k.weighted_pinv(&u_brownian[f * d..(f + 1) * d], ops)?);
    }
    let midpoint = advance(fibers, &alpha_star, 0.5 * cfg.dt, mob)?;
    // 4. Mobility drift.
    let u_drift = match cfg.drift {
        DriftMode::Dense => dense_drift(mob, cm, &midpoint, &eta, amp)?,
        DriftMode::Rfd => rfd_drift(mob, cm, cfg, &mut noise.rfd)?,
    };
    // 5. U_MBE = √k_BT M̃ L^{1/2} η̃.
    let eta_t = normals(&mut noise.mbe, dim);
    let l_half: Vec<f64> = eta_t.chunks(d).flat_map(|x| apply_blockwise(&ops.bending_sqrt, x)).collect();
    let u_mbe: Vec<f64> = cm.apply(&l_half).into_iter().map(|v| v * cfg.kbt.sqrt()).collect();
    Ok(BrownianTerms { u_brownian, u_drift, u_mbe, midpoint })
}

/// √(2k_BT/Δt)(M̃^{n+1/2,*} − M̃ⁿ)M̃ⁿ^{-1/2}η, with the symmetric local square
/// root (so M̃^{-T/2} = M̃^{-1/2}).
pub fn dense_drift(
    mob: &Mobility,
    cm: &ConfiguredMobility,
    midpoint: &[FilamentShape],
    eta: &[f64],
    amp: f64,
) -> Result<Vec<f64>> {
    if cm.mode() != MobilityMode::Local {
        return Err(Error::InvalidState("dense drift needs the local mobility".into()));
    }
    let d = cm.fiber_dim();
    let mut w = Vec::with_capacity(cm.dim());
    for f in 0..cm.n_fibers() {
        w.extend(mat_vec(&cm.local_block(f).eig.inv_sqrt(), &eta[f * d..(f + 1) * d]));
    }
    let mid = mob.configure(midpoint, &cm.domain);
    let a = mid.apply(&w);
    let b = cm.apply(&w);
    Ok(a.iter().zip(&b).map(|(x, y)| amp * (x - y)).collect())
}

/// Random finite difference k_BT/(δL) (M̃(X^RFD) − M̃ⁿ) η^RFD with
/// X^RFD = RotateAndIntegrate(Xⁿ, δL K†η^RFD).
pub fn rfd_drift<R: Rng + ?Sized>(
    mob: &Mobility,
    cm: &ConfiguredMobility,
    cfg: &StepperConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let ops = &mob.ops;
    let d = cm.fiber_dim();
    let eta = normals(rng, cm.dim());
    let dl = cfg.rfd_delta * ops.params.length;
    let mut moved = Vec::with_capacity(cm.n_fibers());
    for (f, shape) in cm.fibers.iter().enumerate() {
        let k = crate::filament::kinematic_matrix(shape, ops)?;
        let a: Vec<f64> = k.weighted_pinv(&eta[f * d..(f + 1) * d], ops)?.into_iter().map(|v| v * dl).collect();
        moved.push(rotate_and_integrate(shape, &a, ops)?);
    }
    let rfd = mob.configure(&moved, &cm.domain);
    let a = rfd.apply(&eta);
    let b = cm.apply(&eta);
    Ok(a.iter().zip(&b).map(|(x, y)| cfg.kbt / dl * (x - y)).collect())
}

/// The midpoint Brownian scheme. `forces` are external forces at Xⁿ.
pub fn brownian_step<R: Rng>(
    mob: &Mobility,
    fibers: &[FilamentShape],
    forces: &[f64],
    domain: &Domain,
    cfg: &StepperConfig,
    noise: &mut StepNoise<R>,
) -> Result<StepResult> {
    cfg.validate()?;
    let cm = mob.configure(fibers, domain);
    check_forces(forces, &cm)?;
    let terms = brownian_terms(mob, &cm, cfg, noise)?;
    // 6. Saddle solve at the midpoint with −M̃^{n+1/2,*}LXⁿ + U_ext.
    let mid = if cfg.kbt == 0.0 { cm } else { mob.configure(&terms.midpoint, domain) };
    let sys = SaddleSystem::new(&mid, cfg.dt)?;
    let total = add(&sys.bending_forces(&positions(fibers)), forces);
    let mut top = mid.apply(&total);
    for (i, t) in top.iter_mut().enumerate() {
        *t += terms.u_brownian[i] + terms.u_mbe[i] + terms.u_drift[i];
    }
    let sol = sys.solve(&top, &cfg.gmres())?;
    // 7. Full step from Xⁿ.
    let next = advance(fibers, &sol.alpha, cfg.dt, mob)?;
    Ok(StepResult { fibers: next, lambda: sol.lambda, gmres: sol.gmres })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filament::{build_discretization, DiscretizationOps, FilamentParams};
    use crate::mobility::MobilityConfig;
    use nalgebra::Vector3;

    fn local(n: usize) -> Mobility {
        let ops = build_discretization(&FilamentParams::from_hat_eps(1.0, 1e-2, 0.01, 1.0, n).unwrap()).unwrap();
        Mobility::new(MobilityConfig::default(), &ops).unwrap()
    }

    fn bent(ops: &DiscretizationOps, amp: f64, mid: Vector3<f64>) -> FilamentShape {
        let tau = ops
            .tau_grid
            .nodes
            .iter()
            .map(|s| Vector3::new(1.0, amp * (2.0 * s - 1.0), 0.3 * amp * s * s).normalize())
            .collect();
        FilamentShape::new(tau, mid, ops).unwrap()
    }

    fn energy(mob: &Mobility, fibers: &[FilamentShape]) -> f64 {
        fibers.iter().map(|f| mob.ops.bending_energy(f.positions())).sum()
    }

    #[test]
    fn straight_fiber_without_force_is_stationary() {
        let mob = local(8);
        let f = vec![FilamentShape::straight(Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.1, 0.0, 0.0), &mob.ops).unwrap()];
        let cfg = StepperConfig { dt: 1e-2, ..StepperConfig::default() };
        let out = deterministic_step(&mob, &f, &vec![0.0; 3 * mob.ops.n_x()], &Domain::FreeSpace, &cfg).unwrap();
        let err = (out.fibers[0].positions() - f[0].positions()).amax();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn bending_energy_decays() {
        let mob = local(12);
        let mut f = vec![bent(&mob.ops, 1.5, Vector3::zeros())];
        let cfg = StepperConfig { dt: 5e-2, ..StepperConfig::default() };
        let zero = vec![0.0; 3 * mob.ops.n_x()];
        let mut e = energy(&mob, &f);
        for _ in 0..40 {
            f = deterministic_step(&mob, &f, &zero, &Domain::FreeSpace, &cfg).unwrap().fibers;
            let en = energy(&mob, &f);
            assert!(en <= e * (1.0 + 1e-10), "{en} > {e}");
            e = en;
            for t in f[0].tau() {
                assert!((t.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(e < 0.9 * energy(&mob, &[bent(&mob.ops, 1.5, Vector3::zeros())]));
    }

    fn relax(mob: &Mobility, dt: f64, t_end: f64) -> Vec<f64> {
        let mut f = vec![bent(&mob.ops, 1.0, Vector3::zeros())];
        let cfg = StepperConfig { dt, gmres_tol: 1e-12, ..StepperConfig::default() };
        let g = mob.ops.uniform_density_force(&Vector3::new(0.0, 0.0, -0.05));
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            f = deterministic_step(mob, &f, &g, &Domain::FreeSpace, &cfg).unwrap().fibers;
        }
        f[0].positions().as_slice().to_vec()
    }

    #[test]
    fn first_order_self_convergence() {
        let mob = local(10);
        let t = 4e-3;
        let reference = relax(&mob, t / 64.0, t);
        let err = |dt: f64| {
            let x = relax(&mob, dt, t);
            x.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let (e1, e2) = (err(t / 4.0), err(t / 8.0));
        let ratio = e1 / e2;
        assert!(ratio > 1.6 && ratio < 2.6, "ratio {ratio} ({e1}, {e2})");
    }

    #[test]
    fn lagged_equals_full_for_block_diagonal() {
        let mob = local(10);
        let f = vec![bent(&mob.ops, 0.8, Vector3::zeros()), bent(&mob.ops, -0.5, Vector3::new(0.0, 0.3, 0.0))];
        let cfg = StepperConfig { dt: 1e-3, gmres_tol: 1e-12, ..StepperConfig::default() };
        let forces = vec![0.1; 2 * 3 * mob.ops.n_x()];
        let full = deterministic_step(&mob, &f, &forces, &Domain::FreeSpace, &cfg).unwrap();
        let lagged = time_lagged_step(&mob, &f, &forces, Some(&full.lambda), &Domain::FreeSpace, &cfg).unwrap();
        for (a, b) in full.fibers.iter().zip(&lagged.fibers) {
            assert!((a.positions() - b.positions()).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_temperature_brownian_equals_deterministic() {
        let mob = local(10);
        let f = vec![bent(&mob.ops, 0.8, Vector3::zeros())];
        let cfg = StepperConfig { dt: 1e-3, scheme: Scheme::Brownian, kbt: 0.0, ..StepperConfig::default() };
        let forces = mob.ops.uniform_density_force(&Vector3::new(0.0, 0.0, -1.0));
        let det = deterministic_step(&mob, &f, &forces, &Domain::FreeSpace, &cfg).unwrap();
        let mut noise = StepNoise::for_step(5, 0);
        let br = brownian_step(&mob, &f, &forces, &Domain::FreeSpace, &cfg, &mut noise).unwrap();
        assert_eq!(det.fibers[0].positions(), br.fibers[0].positions());
    }

    #[test]
    fn brownian_steps_keep_unit_tangents_and_are_reproducible() {
        let mob = local(8);
        let start = vec![bent(&mob.ops, 0.3, Vector3::zeros())];
        let cfg = StepperConfig { dt: 1e-4, scheme: Scheme::Brownian, kbt: 0.01, ..StepperConfig::default() };
        let zero = vec![0.0; 3 * mob.ops.n_x()];
        let run = || {
            let mut f = start.clone();
            for step in 0..20 {
                let mut noise = StepNoise::for_step(42, step);
                f = brownian_step(&mob, &f, &zero, &Domain::FreeSpace, &cfg, &mut noise).unwrap().fibers;
                for t in f[0].tau() {
                    assert!((t.norm() - 1.0).abs() < 1e-12);
                }
            }
            f
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].positions(), b[0].positions());
        assert!((a[0].positions() - start[0].positions()).amax() > 0.0);
    }

    #[test]
    fn substreams_differ_by_step_and_purpose() {
        let a: Vec<f64> = normals(&mut substream(1, 0, Purpose::Brownian), 4);
        let b: Vec<f64> = normals(&mut substream(1, 1, Purpose::Brownian), 4);
        let c: Vec<f64> = normals(&mut substream(1, 0, Purpose::Rfd), 4);
        let a2: Vec<f64> = normals(&mut substream(1, 0, Purpose::Brownian), 4);
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
