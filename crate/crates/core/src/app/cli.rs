//! Command-line interface.

use crate::app::analysis::{bundle_detection, end_to_end_stats, sedimentation_metrics};
use crate::app::config::SimConfig;
use crate::app::driver::{resolve_output_dir, run_simulation};
use crate::app::trajectory::{read_trajectory, write_positions_csv, Trajectory};
use crate::error::{Error, Result};
use crate::filament::{build_discretization, DiscretizationOps};
use crate::validation::{run_suite, Suite};
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "slender", version, about = "Slender fiber suspensions with hydrodynamics, sterics and cross-linkers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a simulation from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $SLENDER_OUTPUT_DIR, then ./output).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Analyze a trajectory file.
    Analyze {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum)]
        report: Report,
        /// Report file (default: next to the trajectory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frames with time below this are skipped (end-to-end report).
        #[arg(long, default_value_t = 0.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Run acceptance checks.
    Validate {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Report {
    EndToEnd,
    Sedimentation,
    Bundles,
    Csv,
}

impl Report {
    fn file_name(self) -> &'static str {
        match self {
            Report::EndToEnd => "end_to_end.csv",
            Report::Sedimentation => "sedimentation.csv",
            Report::Bundles => "bundles.csv",
            Report::Csv => "positions.csv",
        }
    }
}

fn load(traj: &Trajectory) -> Result<(SimConfig, DiscretizationOps)> {
    let cfg = SimConfig::parse(&traj.header.config)?;
    let ops = build_discretization(&cfg.filament)?;
    Ok((cfg, ops))
}

fn volume(cfg: &SimConfig) -> f64 {
    match cfg.domain {
        crate::app::domain::Domain::Periodic { edge } => edge.powi(3),
        crate::app::domain::Domain::FreeSpace => f64::NAN,
    }
}

/// Writes the requested report and returns its path.
pub fn analyze(trajectory: &Path, report: Report, out: Option<&Path>, burn_in: f64, bins: usize) -> Result<PathBuf> {
    let traj = read_trajectory(trajectory)?;
    let (cfg, ops) = load(&traj)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| trajectory.with_file_name(report.file_name()));
    let mut s = String::new();
    match report {
        Report::EndToEnd => {
            if bins == 0 {
                return Err(Error::InvalidArgument("need at least one bin".into()));
            }
            let st = end_to_end_stats(&traj.frames, &ops, burn_in, bins)?;
            let _ = writeln!(s, "# samples = {}, mean = {}, variance = {}, mean_se = {}", st.samples.len(), st.mean, st.variance, st.mean_se);
            s.push_str("bin_lo,bin_hi,probability,density\n");
            let w = st.histogram.width();
            for (k, (m, d)) in st.histogram.mass.iter().zip(st.histogram.density()).enumerate() {
                let lo = st.histogram.lo + k as f64 * w;
                let _ = writeln!(s, "{},{},{},{}", lo, lo + w, m, d);
            }
        }
        Report::Sedimentation => {
            s.push_str("time");
            for f in 0..cfg.n_fibers {
                let _ = write!(s, ",h{}", f + 1);
            }
            s.push_str(",d,dh\n");
            for m in sedimentation_metrics(&traj.frames, &ops)? {
                let _ = write!(s, "{}", m.time);
                for h in &m.h {
                    let _ = write!(s, ",{h}");
                }
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                let _ = writeln!(s, ",{},{}", opt(m.d), opt(m.dh));
            }
        }
        Report::Bundles => {
            s.push_str("time,bundles,fraction_in_bundles,bundle_density,component_density\n");
            for fr in &traj.frames {
                let r = bundle_detection(&fr.network, cfg.n_fibers, traj.header.n_sites as usize, ops.params.length, volume(&cfg));
                let _ = writeln!(s, "{},{},{},{},{}", fr.time, r.bundles.len(), r.fraction_in_bundles, r.bundle_density, r.component_density);
            }
        }
        Report::Csv => {
            write_positions_csv(&traj, &ops, &out)?;
            return Ok(out);
        }
    }
    std::fs::write(&out, s)?;
    Ok(out)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, output, steps } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = SimConfig::parse(&text)?;
            if let Some(s) = seed {
                cfg.stepper.seed = s;
            }
            if let Some(n) = steps {
                cfg.steps = n;
            }
            let dir = resolve_output_dir(output.as_deref());
            let summary = run_simulation(cfg, &dir)?;
            println!("wrote {} frames ({} steps) to {}", summary.frames, summary.steps, summary.trajectory.display());
            Ok(true)
        }
        Command::Analyze { trajectory, report, out, burn_in, bins } => {
            let path = analyze(&trajectory, report, out.as_deref(), burn_in, bins)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Validate { suite } => {
            let results = run_suite(suite);
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.pass))
        }
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
