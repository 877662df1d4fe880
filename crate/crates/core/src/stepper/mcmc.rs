//! Metropolis sampler of a single free fiber from exp(−E_bend/k_BT) with unit
//! tangent vectors.
//!
//! A move rotates one randomly chosen τ_p about a uniformly random axis by an
//! angle uniform in [−θ, θ]; the proposal is symmetric with respect to the
//! uniform measure on the sphere. The bending energy is the quadratic form
//! ½ Σ G_pq τ_p·τ_q with G = 𝔛ᵀL𝔛 (the midpoint drops out because L kills
//! constants), so each move costs O(N).

use crate::error::{Error, Result};
use crate::filament::{DiscretizationOps, FilamentShape};
use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub n_samples: usize,
    /// Sweeps (N proposals each) used to adapt the step and equilibrate.
    pub burn_in_sweeps: usize,
    /// Sweeps of the pilot run that measures the autocorrelation time.
    pub pilot_sweeps: usize,
    /// Fixed thinning in sweeps; measured from the pilot run when `None`.
    pub thinning: Option<usize>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { n_samples: 2000, burn_in_sweeps: 2000, pilot_sweeps: 5000, thinning: None }
    }
}

#[derive(Clone, Debug)]
pub struct McmcSamples {
    pub shapes: Vec<FilamentShape>,
    pub end_to_end: Vec<f64>,
    pub acceptance: f64,
    pub step_angle: f64,
    /// Sweeps between retained samples.
    pub thinning: usize,
}

struct Chain<'a> {
    ops: &'a DiscretizationOps,
    gram: DMatrix<f64>,
    tau: Vec<Vector3<f64>>,
    /// h_p = Σ_q G_pq τ_q.
    field: Vec<Vector3<f64>>,
    beta: f64,
    angle: f64,
    accepted: usize,
    proposed: usize,
}

impl<'a> Chain<'a> {
    fn new(ops: &'a DiscretizationOps, kbt: f64) -> Self {
        let n = ops.n_tangent();
        let x = ops.xmap.columns(0, n).into_owned();
        let gram = x.transpose() * &ops.bending * &x;
        let tau = vec![Vector3::x(); n];
        let field = (0..n).map(|p| Vector3::x() * gram.row(p).sum()).collect();
        let beta = if kbt > 0.0 { 1.0 / kbt } else { f64::INFINITY };
        Self { ops, gram, tau, field, beta, angle: 0.5, accepted: 0, proposed: 0 }
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.tau.len();
        for _ in 0..n {
            let p = rng.random_range(0..n);
            let axis: [f64; 3] = UnitSphere.sample(rng);
            let theta = self.angle * (2.0 * rng.random::<f64>() - 1.0);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), theta);
            let new = (rot * self.tau[p]).normalize();
            let delta = new - self.tau[p];
            let de = self.field[p].dot(&delta) + 0.5 * self.gram[(p, p)] * delta.norm_squared();
            self.proposed += 1;
            let accept = de <= 0.0 || rng.random::<f64>() < (-self.beta * de).exp();
            if accept {
                self.accepted += 1;
                self.tau[p] = new;
                for q in 0..n {
                    self.field[q] += delta * self.gram[(q, p)];
                }
            }
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    fn end_to_end(&self) -> f64 {
        let n = self.tau.len();
        let nx = n + 1;
        let mut d = Vector3::zeros();
        for (p, t) in self.tau.iter().enumerate() {
            d += t * (self.ops.xmap[(nx - 1, p)] - self.ops.xmap[(0, p)]);
        }
        d.norm()
    }
}

/// Integrated autocorrelation time with Sokal's automatic window (c = 5).
pub fn autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / ((n - lag) as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

pub fn mcmc_equilibrium_sampler<R: Rng + ?Sized>(
    ops: &DiscretizationOps,
    kbt: f64,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<McmcSamples> {
    if !(kbt >= 0.0) {
        return Err(Error::InvalidArgument("k_BT must be nonnegative".into()));
    }
    let mut chain = Chain::new(ops, kbt);
    // Adapt the step angle toward 40% acceptance during burn-in.
    let block = 50;
    for b in 0..cfg.burn_in_sweeps.div_ceil(block) {
        chain.reset_counts();
        for _ in 0..block {
            chain.sweep(rng);
        }
        let rate = chain.rate();
        if b > 0 || rate > 0.0 {
            chain.angle = (chain.angle * (rate / 0.4).clamp(0.5, 2.0)).clamp(1e-4, std::f64::consts::PI);
        }
    }
    chain.reset_counts();
    let thinning = match cfg.thinning {
        Some(t) => t.max(1),
        None => {
            let pilot: Vec<f64> = (0..cfg.pilot_sweeps)
                .map(|_| {
                    chain.sweep(rng);
                    chain.end_to_end()
                })
                .collect();
            (2.0 * autocorrelation_time(&pilot)).ceil() as usize
        }
    };
    let mut shapes = Vec::with_capacity(cfg.n_samples);
    let mut end_to_end = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        for _ in 0..thinning {
            chain.sweep(rng);
        }
        let shape = FilamentShape::new(chain.tau.clone(), Vector3::zeros(), ops)?;
        end_to_end.push(shape.end_to_end());
        shapes.push(shape);
    }
    Ok(McmcSamples { shapes, end_to_end, acceptance: chain.rate(), step_angle: chain.angle, thinning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filament::{build_discretization, FilamentParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(n: usize, kappa: f64) -> DiscretizationOps {
        build_discretization(&FilamentParams::new(1.0, 0.01, kappa, 1.0, n).unwrap()).unwrap()
    }

    #[test]
    fn incremental_energy_matches_direct() {
        let o = ops(12, 1.0);
        let mut chain = Chain::new(&o, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            chain.sweep(&mut rng);
        }
        let direct = o.bending_energy(&o.positions(&chain.tau, &Vector3::zeros()));
        let quad: f64 = (0..12)
            .map(|p| 0.5 * chain.tau[p].dot(&(0..12).map(|q| chain.tau[q] * chain.gram[(p, q)]).sum::<Vector3<f64>>()))
            .sum();
        let from_field: f64 = (0..12).map(|p| 0.5 * chain.tau[p].dot(&chain.field[p])).sum();
        assert!((direct - quad).abs() < 1e-9 * direct.max(1.0));
        assert!((direct - from_field).abs() < 1e-9 * direct.max(1.0));
    }

    #[test]
    fn rigid_limit_stays_straight() {
        let o = ops(12, 1.0);
        let cfg = McmcConfig { n_samples: 200, burn_in_sweeps: 200, pilot_sweeps: 0, thinning: Some(2) };
        let s = mcmc_equilibrium_sampler(&o, 1e-9, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.end_to_end.iter().all(|d| (d - 1.0).abs() < 1e-3));
    }

    #[test]
    fn zero_stiffness_gives_independent_tangents() {
        let o = ops(8, 0.0);
        let cfg = McmcConfig { n_samples: 4000, burn_in_sweeps: 100, pilot_sweeps: 0, thinning: Some(1) };
        let s = mcmc_equilibrium_sampler(&o, 1.0, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (p, q) in [(0, 1), (2, 5), (3, 7)] {
            let v: Vec<f64> = s.shapes.iter().map(|sh| sh.tau()[p].dot(&sh.tau()[q])).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            // Var(τ_p·τ_q) = 1/3 for independent uniform unit vectors.
            let se = (1.0 / 3.0 / v.len() as f64).sqrt();
            assert!(m.abs() < 4.0 * se, "pair ({p},{q}) mean {m}");
        }
    }

    #[test]
    fn autocorrelation_of_white_noise_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let t = autocorrelation_time(&x);
        assert!(t < 1.3, "{t}");
    }
}
