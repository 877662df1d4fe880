//! Simulation driver: initial conditions, per-step forces, scheme dispatch and
//! trajectory output.

use crate::app::config::{Preset, SimConfig, StericAlgorithm};
use crate::app::domain::Domain;
use crate::app::trajectory::{FiberState, FrameDiagnostics, NetworkSnapshot, TrajectoryFrame, TrajectoryHeader, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::filament::{build_discretization, DiscretizationOps, FilamentShape};
use crate::mobility::Mobility;
use crate::network::{crosslink_forces, CrossLinkNetwork, SiteGeometry};
use crate::sterics::{segment_steric_forces, uniform_steric_forces};
use crate::stepper::{
    brownian_step, deterministic_step, substream, time_lagged_step, Purpose, Scheme, StepNoise, StepResult,
};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use std::path::{Path, PathBuf};

/// Default output directory when neither `--output` nor the config gives one.
pub const OUTPUT_DIR_ENV: &str = "SLENDER_OUTPUT_DIR";
pub const TRAJECTORY_FILE: &str = "trajectory.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Straight fibers with uniformly random orientation and midpoints uniform in
/// the box (in [0, 1]³·L when free). Overlaps are allowed.
pub fn random_straight_fibers<R: Rng + ?Sized>(
    n: usize,
    ops: &DiscretizationOps,
    domain: &Domain,
    rng: &mut R,
) -> Result<Vec<FilamentShape>> {
    let edge = match domain {
        Domain::Periodic { edge } => *edge,
        Domain::FreeSpace => ops.params.length,
    };
    (0..n)
        .map(|_| {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let mid = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * edge;
            FilamentShape::straight(Vector3::from(dir), mid, ops)
        })
        .collect()
}

/// Horizontal fibers along x. Two fibers are stacked in the xz plane, the
/// first one on top, `separation`·L apart.
pub fn sedimentation_layout(n: usize, separation: f64, ops: &DiscretizationOps) -> Result<Vec<FilamentShape>> {
    let gap = separation * ops.params.length;
    match n {
        1 => Ok(vec![FilamentShape::straight(Vector3::x(), Vector3::zeros(), ops)?]),
        2 => Ok(vec![
            FilamentShape::straight(Vector3::x(), Vector3::new(0.0, 0.0, 0.5 * gap), ops)?,
            FilamentShape::straight(Vector3::x(), Vector3::new(0.0, 0.0, -0.5 * gap), ops)?,
        ]),
        _ => Err(Error::Config("the sedimentation layout holds one or two fibers".into())),
    }
}

/// Mutable state of a running simulation.
pub struct Simulation {
    pub config: SimConfig,
    pub mobility: Mobility,
    pub fibers: Vec<FilamentShape>,
    pub network: Option<CrossLinkNetwork>,
    pub lambda_prev: Option<Vec<f64>>,
    pub step: u64,
    pub time: f64,
    pub diagnostics: FrameDiagnostics,
}

impl Simulation {
    /// Preset initial condition.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let ops = build_discretization(&config.filament)?;
        let fibers = match config.preset {
            Preset::Sedimentation => sedimentation_layout(config.n_fibers, config.separation, &ops)?,
            Preset::Equilibrium | Preset::Bundling => {
                let mut rng = substream(config.stepper.seed, 0, Purpose::Init);
                random_straight_fibers(config.n_fibers, &ops, &config.domain, &mut rng)?
            }
        };
        Self::with_fibers(config, fibers)
    }

    pub fn with_fibers(config: SimConfig, fibers: Vec<FilamentShape>) -> Result<Self> {
        if fibers.len() != config.n_fibers {
            return Err(Error::InvalidArgument(format!("{} fibers given, config asks for {}", fibers.len(), config.n_fibers)));
        }
        let ops = build_discretization(&config.filament)?;
        let mobility = Mobility::new(config.mobility.clone(), &ops)?;
        let network = config.crosslinks.as_ref().map(|p| CrossLinkNetwork::new(config.n_fibers, p.n_sites));
        Ok(Self {
            config,
            mobility,
            fibers,
            network,
            lambda_prev: None,
            step: 0,
            time: 0.0,
            diagnostics: FrameDiagnostics::default(),
        })
    }

    pub fn ops(&self) -> &DiscretizationOps {
        &self.mobility.ops
    }

    /// Gravity, steric and cross-linker forces at the current configuration.
    /// Advances the cross-linker network by one step first.
    fn external_forces(&mut self) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let ops = &self.mobility.ops;
        let nx3 = 3 * ops.n_x();
        let mut total = vec![0.0; nx3 * self.fibers.len()];
        let mut add = |f: usize, v: &[f64]| total[f * nx3..(f + 1) * nx3].iter_mut().zip(v).for_each(|(t, x)| *t += x);
        if cfg.gravity != 0.0 {
            let g = ops.uniform_density_force(&Vector3::new(0.0, 0.0, -cfg.gravity));
            for f in 0..self.fibers.len() {
                add(f, &g);
            }
        }
        self.diagnostics.newton_failures = 0;
        self.diagnostics.contacts = 0;
        if let Some(st) = &cfg.sterics {
            let per_fiber = match st.algorithm {
                StericAlgorithm::Uniform => {
                    let spacing = st.params.delta / st.params.n_delta;
                    let n_u = (ops.params.length / spacing).ceil() as usize + 1;
                    uniform_steric_forces(&self.fibers, ops, n_u, &cfg.domain, &st.params)?
                }
                StericAlgorithm::Segment => {
                    let out = segment_steric_forces(&self.fibers, ops, &cfg.domain, &st.params)?;
                    self.diagnostics.newton_failures = out.contacts.newton_failures as u32;
                    self.diagnostics.contacts = out.contacts.contact_count() as u32;
                    out.forces
                }
            };
            for (f, v) in per_fiber.iter().enumerate() {
                add(f, v);
            }
        }
        if let (Some(p), Some(net)) = (&cfg.crosslinks, self.network.as_mut()) {
            let geom = SiteGeometry::new(&self.fibers, ops, p, &cfg.domain)?;
            let mut rng = substream(cfg.stepper.seed, self.step, Purpose::CrossLink);
            net.gillespie_update(&geom, cfg.stepper.dt, ops.params.length, p, &mut rng)?;
            for (f, v) in crosslink_forces(net, &geom, p).iter().enumerate() {
                add(f, v);
            }
        }
        Ok(total)
    }

    /// One time step with the configured scheme.
    pub fn advance(&mut self) -> Result<()> {
        let forces = self.external_forces()?;
        let cfg = &self.config;
        let StepResult { fibers, lambda, gmres } = match cfg.stepper.scheme {
            Scheme::DeterministicFull => deterministic_step(&self.mobility, &self.fibers, &forces, &cfg.domain, &cfg.stepper)?,
            Scheme::DeterministicLagged => time_lagged_step(
                &self.mobility,
                &self.fibers,
                &forces,
                self.lambda_prev.as_deref(),
                &cfg.domain,
                &cfg.stepper,
            )?,
            Scheme::Brownian => {
                let mut noise = StepNoise::for_step(cfg.stepper.seed, self.step);
                brownian_step(&self.mobility, &self.fibers, &forces, &cfg.domain, &cfg.stepper, &mut noise)?
            }
        };
        self.fibers = fibers;
        self.lambda_prev = Some(lambda);
        self.diagnostics.gmres_iterations = gmres.iterations as u32;
        self.diagnostics.gmres_residual = gmres.residual;
        self.step += 1;
        self.time = self.step as f64 * cfg.stepper.dt;
        Ok(())
    }

    pub fn frame(&self) -> TrajectoryFrame {
        let network = self
            .network
            .as_ref()
            .map(|n| NetworkSnapshot {
                singly: n.singly.iter().map(|&s| s as u32).collect(),
                doubly: n.doubly.iter().map(|&(a, b)| (a as u32, b as u32)).collect(),
            })
            .unwrap_or_default();
        TrajectoryFrame {
            step: self.step,
            time: self.time,
            fibers: self.fibers.iter().map(FiberState::from_shape).collect(),
            diagnostics: self.diagnostics,
            network,
        }
    }

    pub fn header(&self) -> TrajectoryHeader {
        TrajectoryHeader {
            version: crate::app::trajectory::VERSION,
            n_fibers: self.config.n_fibers as u32,
            n_tangent: self.config.filament.n_tangent as u32,
            n_sites: self.config.crosslinks.as_ref().map_or(0, |p| p.n_sites as u32),
            config: self.config.to_text(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub trajectory: PathBuf,
    pub manifest: PathBuf,
    pub frames: usize,
    pub steps: u64,
}

/// Output directory: explicit argument, then the environment variable, then
/// `./output`.
pub fn resolve_output_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("output"))
}

fn write_manifest(path: &Path, config: &SimConfig, status: &str, steps: u64, frames: usize) -> Result<()> {
    let text = format!(
        "# run manifest\ncode_version = {}\nseed = {}\nstatus = {}\nsteps_completed = {}\nframes = {}\n# config\n{}",
        env!("CARGO_PKG_VERSION"),
        config.stepper.seed,
        status,
        steps,
        frames,
        config.to_text()
    );
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs `config.steps` steps, storing frame 0 and every `output_every`-th
/// step. On a solver failure the frames so far are kept, the manifest
/// records the failure and the error is returned.
pub fn run_simulation(config: SimConfig, output_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(output_dir)?;
    let trajectory = output_dir.join(TRAJECTORY_FILE);
    let manifest = output_dir.join(MANIFEST_FILE);
    let mut sim = Simulation::new(config)?;
    let mut writer = TrajectoryWriter::create(&trajectory, sim.header())?;
    writer.write_frame(&sim.frame())?;
    let every = sim.config.output_every as u64;
    let mut failure = None;
    for _ in 0..sim.config.steps {
        if let Err(e) = sim.advance() {
            failure = Some(e);
            break;
        }
        if sim.step % every == 0 {
            writer.write_frame(&sim.frame())?;
        }
    }
    let frames = writer.finish()?;
    let status = match &failure {
        None => "complete".to_string(),
        Some(e) => format!("failed at step {}: {e}", sim.step + 1),
    };
    write_manifest(&manifest, &sim.config, &status, sim.step, frames)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(RunSummary { trajectory, manifest, frames, steps: sim.step }),
    }
}
