//! Flat `key = value` simulation configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are errors. Every key
//! has a default that depends on the preset, so a file may be as short as
//! `preset = equilibrium`. See [`KEYS`] for the full list.

use crate::app::domain::Domain;
use crate::error::{Error, Result};
use crate::filament::FilamentParams;
use crate::mobility::{MobilityConfig, MobilityMode};
use crate::network::CLParams;
use crate::sterics::StericParams;
use crate::stepper::{DriftMode, Scheme, StepperConfig};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Equilibrium,
    Sedimentation,
    Bundling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StericAlgorithm {
    Uniform,
    Segment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StericSettings {
    pub params: StericParams,
    pub algorithm: StericAlgorithm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub preset: Preset,
    pub filament: FilamentParams,
    pub mobility: MobilityConfig,
    pub sterics: Option<StericSettings>,
    pub crosslinks: Option<CLParams>,
    pub stepper: StepperConfig,
    pub domain: Domain,
    pub n_fibers: usize,
    pub steps: usize,
    /// Steps between stored frames.
    pub output_every: usize,
    /// Gravitational force density (along −z).
    pub gravity: f64,
    /// Initial midpoint spacing of the two-fiber sedimentation layout, in units of L.
    pub separation: f64,
}

/// Documented keys: (name, meaning).
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "equilibrium | sedimentation | bundling"),
    ("fibers", "number of fibers F"),
    ("length", "fiber length L"),
    ("radius", "fiber radius a (alternative to hat_eps)"),
    ("hat_eps", "regularized aspect ratio â/L"),
    ("kappa", "bending modulus κ"),
    ("mu", "viscosity μ"),
    ("n_tangent", "tangent vectors per fiber N"),
    ("domain", "free | periodic"),
    ("box", "periodic box edge L_d"),
    ("mobility", "local | oversampled | fat | oversampled_first"),
    ("hat_eps_fat", "fattened aspect ratio ε̂* (fat mode)"),
    ("n_upsample", "oversampled points per fiber N_u"),
    ("eig_floor", "eigenvalue floor in units of 1/(8πμL)"),
    ("scheme", "deterministic | lagged | brownian"),
    ("dt", "time step Δt"),
    ("dt_fund", "time step in units of τ_fund (overrides dt)"),
    ("steps", "number of time steps"),
    ("output_every", "steps between frames"),
    ("kbt", "thermal energy k_BT"),
    ("persistence", "persistence length ℓ_p = κ/k_BT (overrides kbt)"),
    ("gmres_tol", "GMRES relative tolerance"),
    ("gmres_max_iters", "GMRES iteration limit"),
    ("lagged_max_iters", "iteration cap of the lagged residual solve"),
    ("rfd_delta", "random finite difference step δ"),
    ("drift", "rfd | dense"),
    ("seed", "master random seed"),
    ("gravity", "gravitational force density g"),
    ("beta", "elasto-gravitational number gL³/κ (overrides gravity)"),
    ("separation", "initial midpoint spacing d/L of the two-fiber layout"),
    ("sterics", "off | uniform | segment"),
    ("steric_e0", "steric force scale E₀"),
    ("steric_e0_kbt", "steric force scale in units of k_BT (overrides steric_e0)"),
    ("steric_n_delta", "quadrature points per Gaussian width N_δ"),
    ("steric_n_seg", "pieces per fiber of the segment algorithm"),
    ("crosslinks", "off | on"),
    ("cl_sites", "binding sites per fiber"),
    ("cl_stiffness", "linker stiffness K_c"),
    ("cl_rest_length", "linker rest length ℓ_c"),
    ("cl_k_on", "free-end binding rate per unit length"),
    ("cl_k_off", "singly-bound unbinding rate"),
    ("cl_k_on_s", "second-end binding rate k_on,s⁰"),
    ("cl_k_off_s", "per-end unbinding rate of doubly-bound linkers"),
];

fn preset_defaults(preset: Preset) -> BTreeMap<&'static str, String> {
    let mut m: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut set = |k: &'static str, v: &str| {
        m.insert(k, v.to_string());
    };
    set("length", "1");
    set("kappa", "1");
    set("mu", "1");
    set("gmres_tol", "1e-3");
    set("gmres_max_iters", "200");
    set("lagged_max_iters", "10");
    set("rfd_delta", "1e-5");
    set("drift", "rfd");
    set("seed", "1");
    set("hat_eps_fat", "1e-2");
    set("n_upsample", "100");
    set("eig_floor", "1e-3");
    set("output_every", "100");
    set("sterics", "off");
    set("crosslinks", "off");
    set("steric_n_delta", "1");
    set("steric_n_seg", "10");
    set("gravity", "0");
    set("separation", "0.5");
    match preset {
        Preset::Equilibrium => {
            set("fibers", "5");
            set("hat_eps", "1e-3");
            set("n_tangent", "12");
            set("domain", "periodic");
            set("box", "2");
            set("mobility", "local");
            set("scheme", "brownian");
            set("persistence", "1");
            set("dt_fund", "1e-3");
            set("steps", "1000");
        }
        Preset::Sedimentation => {
            set("fibers", "1");
            set("hat_eps", "1e-3");
            set("n_tangent", "16");
            set("domain", "free");
            set("box", "10");
            set("mobility", "local");
            set("scheme", "deterministic");
            set("kbt", "0");
            set("beta", "100");
            set("dt", "2e-4");
            set("steps", "500");
        }
        Preset::Bundling => {
            set("fibers", "20");
            set("hat_eps", "1e-2");
            set("n_tangent", "12");
            set("domain", "periodic");
            set("box", "2");
            set("mobility", "local");
            set("scheme", "brownian");
            set("persistence", "1");
            set("dt_fund", "1e-3");
            set("steps", "200");
            set("sterics", "segment");
            set("steric_e0_kbt", "1000");
            set("crosslinks", "on");
            set("cl_sites", "13");
            set("cl_stiffness", "10");
            set("cl_rest_length", "0.05");
            set("cl_k_on", "10");
            set("cl_k_off", "1");
            set("cl_k_on_s", "10");
            set("cl_k_off_s", "1");
        }
    }
    m
}

fn parse_preset(v: &str) -> Result<Preset> {
    match v {
        "equilibrium" => Ok(Preset::Equilibrium),
        "sedimentation" => Ok(Preset::Sedimentation),
        "bundling" => Ok(Preset::Bundling),
        _ => Err(Error::Config(format!("unknown preset '{v}'"))),
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Equilibrium => "equilibrium",
        Preset::Sedimentation => "sedimentation",
        Preset::Bundling => "bundling",
    }
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn has(&self, k: &str) -> bool {
        self.map.contains_key(k)
    }

    fn str(&self, k: &str) -> Result<&str> {
        self.map.get(k).map(String::as_str).ok_or_else(|| Error::Config(format!("missing key '{k}'")))
    }

    fn f64(&self, k: &str) -> Result<f64> {
        let v = self.str(k)?;
        v.parse().map_err(|_| Error::Config(format!("key '{k}': '{v}' is not a number")))
    }

    fn usize(&self, k: &str) -> Result<usize> {
        let v = self.str(k)?;
        v.parse().map_err(|_| Error::Config(format!("key '{k}': '{v}' is not a nonnegative integer")))
    }
}

/// Splits `key = value` lines; rejects unknown keys and duplicates.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.iter().any(|(name, _)| *name == k) {
            return Err(Error::Config(format!("line {}: unknown key '{k}'", no + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", no + 1)));
        }
    }
    Ok(out)
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(parse_entries(text)?)
    }

    pub fn preset(preset: Preset) -> Result<Self> {
        let mut m = BTreeMap::new();
        m.insert("preset".to_string(), preset_name(preset).to_string());
        Self::from_entries(m)
    }

    /// Builds a config from explicit entries layered over the preset defaults.
    pub fn from_entries(user: BTreeMap<String, String>) -> Result<Self> {
        let preset = parse_preset(user.get("preset").map(String::as_str).unwrap_or("equilibrium"))?;
        let mut map: BTreeMap<String, String> =
            preset_defaults(preset).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        // Explicit keys that override a derived default drop the competing default.
        for (a, b) in [("kbt", "persistence"), ("dt", "dt_fund"), ("gravity", "beta"), ("radius", "hat_eps"), ("steric_e0", "steric_e0_kbt")] {
            if user.contains_key(a) && !user.contains_key(b) {
                map.remove(b);
            }
            if user.contains_key(b) && !user.contains_key(a) {
                map.remove(a);
            }
        }
        map.extend(user);
        let e = Entries { map };

        let length = e.f64("length")?;
        let kappa = e.f64("kappa")?;
        let mu = e.f64("mu")?;
        let n = e.usize("n_tangent")?;
        let filament = if e.has("radius") {
            FilamentParams::new(length, e.f64("radius")?, kappa, mu, n)?
        } else {
            FilamentParams::from_hat_eps(length, e.f64("hat_eps")?, kappa, mu, n)?
        };
        let mode = match e.str("mobility")? {
            "local" => MobilityMode::Local,
            "oversampled" => MobilityMode::Oversampled,
            "fat" => MobilityMode::FatCorrected,
            "oversampled_first" => MobilityMode::OversampledFirst,
            v => return Err(Error::Config(format!("unknown mobility '{v}'"))),
        };
        let mobility = MobilityConfig {
            mode,
            hat_eps_fat: e.f64("hat_eps_fat")?,
            n_upsample: e.usize("n_upsample")?,
            eig_floor: e.f64("eig_floor")?,
            ..MobilityConfig::default()
        };
        let domain = match e.str("domain")? {
            "free" => Domain::FreeSpace,
            "periodic" => Domain::Periodic { edge: e.f64("box")? },
            v => return Err(Error::Config(format!("unknown domain '{v}'"))),
        };
        let kbt = if e.has("persistence") { kappa / e.f64("persistence")? } else { e.f64("kbt")? };
        let scheme = match e.str("scheme")? {
            "deterministic" => Scheme::DeterministicFull,
            "lagged" => Scheme::DeterministicLagged,
            "brownian" => Scheme::Brownian,
            v => return Err(Error::Config(format!("unknown scheme '{v}'"))),
        };
        let drift = match e.str("drift")? {
            "rfd" => DriftMode::Rfd,
            "dense" => DriftMode::Dense,
            v => return Err(Error::Config(format!("unknown drift '{v}'"))),
        };
        let tau_fund = fundamental_time(&filament);
        let dt = if e.has("dt_fund") { e.f64("dt_fund")? * tau_fund } else { e.f64("dt")? };
        let stepper = StepperConfig {
            dt,
            scheme,
            gmres_tol: e.f64("gmres_tol")?,
            gmres_max_iters: e.usize("gmres_max_iters")?,
            lagged_max_iters: e.usize("lagged_max_iters")?,
            rfd_delta: e.f64("rfd_delta")?,
            drift,
            kbt,
            seed: e.str("seed")?.parse().map_err(|_| Error::Config("seed must be an unsigned integer".into()))?,
        };
        stepper.validate()?;
        let gravity = if e.has("beta") { e.f64("beta")? * kappa / length.powi(3) } else { e.f64("gravity")? };
        let sterics = match e.str("sterics")? {
            "off" => None,
            alg @ ("uniform" | "segment") => {
                let e0 = if e.has("steric_e0_kbt") { e.f64("steric_e0_kbt")? * kbt } else { e.f64("steric_e0")? };
                let params = StericParams::new(e0, filament.radius)?
                    .with_n_delta(e.f64("steric_n_delta")?)
                    .with_n_seg(e.usize("steric_n_seg")?);
                params.validate()?;
                let algorithm = if alg == "uniform" { StericAlgorithm::Uniform } else { StericAlgorithm::Segment };
                Some(StericSettings { params, algorithm })
            }
            v => return Err(Error::Config(format!("unknown steric mode '{v}'"))),
        };
        let crosslinks = match e.str("crosslinks")? {
            "off" => None,
            "on" => {
                let p = CLParams {
                    n_sites: e.usize("cl_sites")?,
                    stiffness: e.f64("cl_stiffness")?,
                    rest_length: e.f64("cl_rest_length")?,
                    k_on: e.f64("cl_k_on")?,
                    k_off: e.f64("cl_k_off")?,
                    k_on_s: e.f64("cl_k_on_s")?,
                    k_off_s: e.f64("cl_k_off_s")?,
                    kbt,
                };
                p.validate()?;
                Some(p)
            }
            v => return Err(Error::Config(format!("unknown crosslinks mode '{v}'"))),
        };
        let cfg = Self {
            preset,
            filament,
            mobility,
            sterics,
            crosslinks,
            stepper,
            domain,
            n_fibers: e.usize("fibers")?,
            steps: e.usize("steps")?,
            output_every: e.usize("output_every")?.max(1),
            gravity,
            separation: e.f64("separation")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fibers == 0 {
            return Err(Error::Config("need at least one fiber".into()));
        }
        if let Domain::Periodic { edge } = self.domain {
            if !(edge > 0.0) {
                return Err(Error::Config("box edge must be positive".into()));
            }
        }
        if self.preset == Preset::Sedimentation && self.n_fibers > 2 {
            return Err(Error::Config("the sedimentation preset places one or two fibers".into()));
        }
        Ok(())
    }

    /// β = gL³/κ.
    pub fn beta(&self) -> f64 {
        self.gravity * self.filament.length.powi(3) / self.filament.kappa
    }

    /// t̄ = L⁴μ/κ.
    pub fn elastic_time(&self) -> f64 {
        elastic_time(&self.filament)
    }

    pub fn tau_fund(&self) -> f64 {
        fundamental_time(&self.filament)
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let f = &self.filament;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("preset", preset_name(self.preset).into());
        put("fibers", self.n_fibers.to_string());
        put("length", format!("{:e}", f.length));
        put("radius", format!("{:e}", f.radius));
        put("kappa", format!("{:e}", f.kappa));
        put("mu", format!("{:e}", f.mu));
        put("n_tangent", f.n_tangent.to_string());
        match self.domain {
            Domain::FreeSpace => put("domain", "free".into()),
            Domain::Periodic { edge } => {
                put("domain", "periodic".into());
                put("box", format!("{edge:e}"));
            }
        }
        let mode = match self.mobility.mode {
            MobilityMode::Local => "local",
            MobilityMode::Oversampled => "oversampled",
            MobilityMode::FatCorrected => "fat",
            MobilityMode::OversampledFirst => "oversampled_first",
        };
        put("mobility", mode.into());
        put("hat_eps_fat", format!("{:e}", self.mobility.hat_eps_fat));
        put("n_upsample", self.mobility.n_upsample.to_string());
        put("eig_floor", format!("{:e}", self.mobility.eig_floor));
        let st = &self.stepper;
        let scheme = match st.scheme {
            Scheme::DeterministicFull => "deterministic",
            Scheme::DeterministicLagged => "lagged",
            Scheme::Brownian => "brownian",
        };
        put("scheme", scheme.into());
        put("dt", format!("{:e}", st.dt));
        put("steps", self.steps.to_string());
        put("output_every", self.output_every.to_string());
        put("kbt", format!("{:e}", st.kbt));
        put("gmres_tol", format!("{:e}", st.gmres_tol));
        put("gmres_max_iters", st.gmres_max_iters.to_string());
        put("lagged_max_iters", st.lagged_max_iters.to_string());
        put("rfd_delta", format!("{:e}", st.rfd_delta));
        put("drift", if st.drift == DriftMode::Rfd { "rfd" } else { "dense" }.into());
        put("seed", st.seed.to_string());
        put("gravity", format!("{:e}", self.gravity));
        put("separation", format!("{:e}", self.separation));
        match &self.sterics {
            None => put("sterics", "off".into()),
            Some(s) => {
                put("sterics", if s.algorithm == StericAlgorithm::Uniform { "uniform" } else { "segment" }.into());
                put("steric_e0", format!("{:e}", s.params.e0));
                put("steric_n_delta", format!("{:e}", s.params.n_delta));
                put("steric_n_seg", s.params.n_seg.to_string());
            }
        }
        match &self.crosslinks {
            None => put("crosslinks", "off".into()),
            Some(c) => {
                put("crosslinks", "on".into());
                put("cl_sites", c.n_sites.to_string());
                put("cl_stiffness", format!("{:e}", c.stiffness));
                put("cl_rest_length", format!("{:e}", c.rest_length));
                put("cl_k_on", format!("{:e}", c.k_on));
                put("cl_k_off", format!("{:e}", c.k_off));
                put("cl_k_on_s", format!("{:e}", c.k_on_s));
                put("cl_k_off_s", format!("{:e}", c.k_off_s));
            }
        }
        s
    }
}

pub fn elastic_time(f: &FilamentParams) -> f64 {
    f.length.powi(4) * f.mu / f.kappa
}

/// τ_fund = 0.003 · 4πμL⁴/(κ ln(1/ε̂)).
pub fn fundamental_time(f: &FilamentParams) -> f64 {
    0.003 * 4.0 * PI * f.mu * f.length.powi(4) / (f.kappa * (1.0 / f.hat_eps()).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for p in [Preset::Equilibrium, Preset::Sedimentation, Preset::Bundling] {
            let c = SimConfig::preset(p).unwrap();
            let again = SimConfig::parse(&c.to_text()).unwrap();
            assert_eq!(c.to_text(), again.to_text());
            assert_eq!(c.n_fibers, again.n_fibers);
            assert!((c.stepper.dt - again.stepper.dt).abs() <= 1e-15 * c.stepper.dt);
        }
    }

    #[test]
    fn unknown_and_malformed_keys_are_errors() {
        assert!(matches!(SimConfig::parse("preset = equilibrium\nfoo = 1\n"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("fibers 3\n"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("fibers = x\n"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("fibers = 2\nfibers = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn derived_quantities_follow_primitives() {
        let c = SimConfig::parse("preset = sedimentation\nbeta = 500\nkappa = 2\nlength = 1\n# comment\n").unwrap();
        assert!((c.gravity - 1000.0).abs() < 1e-12);
        assert!((c.beta() - 500.0).abs() < 1e-12);
        assert!((c.elastic_time() - 0.5).abs() < 1e-15);
        let e = SimConfig::parse("persistence = 2\nkappa = 0.5\ndt_fund = 1e-4").unwrap();
        assert!((e.stepper.kbt - 0.25).abs() < 1e-15);
        assert!((e.stepper.dt - 1e-4 * e.tau_fund()).abs() < 1e-18);
    }
}
