//! Command-line front end: subcommands, artifact writing and run metadata.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{self, parse_config, ConfigDocument};
use crate::error::{Error, Result};
use crate::harness::{
    averaged_energy_study, column_stats, energy_law_study, extract_zero_level_set, fmt_time, simulate_all, spatial_error_study,
    strong_error_study, EnergySeries, EnergyTrace, RecordOptions,
};
use crate::selftest;
use crate::spectral::SpectralField;

#[derive(Debug, Parser)]
#[command(name = "ssav-ch", version, about = "Stochastic Cahn-Hilliard simulator (exponential Euler SAV)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run paths and store snapshots at the configured output times.
    Simulate(RunArgs),
    /// Strong errors against a fine time step on common noise paths.
    ConvergeTime(RunArgs),
    /// Strong errors against a fine spectral resolution on common noise paths.
    ConvergeSpace(RunArgs),
    /// Averaged energies of several schemes and the energy-law remainder.
    Energy(RunArgs),
    /// Zero level sets at the output times.
    Interface(RunArgs),
    /// Run the built-in invariant suites.
    Selftest,
    /// List the bundled presets.
    Presets,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file, or `preset:NAME` for a bundled preset.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Output directory (overrides run.output_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs, and returns the exit code.
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
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Selftest => {
            let suites = selftest::run_all();
            let mut ok = true;
            for s in &suites {
                println!("{:<12} {}/{} passed", s.name, s.passed, s.total);
                for f in &s.failures {
                    println!("  FAILED {f}");
                }
                ok &= s.passed == s.total;
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Numeric("self-test failures".into()))
            }
        }
        Command::Simulate(a) => execute("simulate", a),
        Command::ConvergeTime(a) => execute("converge-time", a),
        Command::ConvergeSpace(a) => execute("converge-space", a),
        Command::Energy(a) => execute("energy", a),
        Command::Interface(a) => execute("interface", a),
    }
}

/// Loads a config and applies command-line overrides, validating the result.
pub fn load_config(args: &RunArgs) -> Result<ConfigDocument> {
    let text = match args.config.strip_prefix("preset:") {
        Some(name) => config::preset_text(name)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}' (see `ssav-ch presets`)")))?
            .to_string(),
        None => fs::read_to_string(&args.config)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config)))?,
    };
    let mut doc = parse_config(&text)?;
    if let Some(s) = args.seed {
        doc.run.seed = s;
    }
    if let Some(p) = args.paths {
        doc.run.paths = p;
    }
    if let Some(o) = &args.out {
        doc.run.output_dir = o.to_string_lossy().into_owned();
    }
    parse_config(&doc.serialize())
}

fn check_kind(doc: &ConfigDocument, command: &str) -> Result<()> {
    match &doc.study {
        Some(s) if s.kind != command && command != "simulate" => Err(Error::Config(format!(
            "study.kind is '{}' but the subcommand is '{command}'",
            s.kind
        ))),
        None if command == "converge-time" || command == "converge-space" => {
            Err(Error::Config(format!("{command} needs a [study] section with its grids")))
        }
        _ => Ok(()),
    }
}

/// In-memory artifact set; nothing touches the disk until a run has finished.
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn snapshot(&mut self, name: String, field: &SpectralField) -> Result<()> {
        let mut buf = Vec::new();
        field.to_nodal().write_snapshot(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    /// Writes every artifact plus `run.meta`; on failure removes what was written.
    fn commit(self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        let created_dir = !dir.exists();
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            fs::create_dir_all(dir)?;
            let mut sums = serde_json::Map::new();
            for (name, bytes) in &self.files {
                let path = dir.join(name);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                written.push(path.clone());
                fs::write(&path, bytes)?;
                sums.insert(name.clone(), json!(hex::encode(Sha256::digest(bytes))));
            }
            let mut meta = meta;
            meta["artifacts"] = serde_json::Value::Object(sums);
            let path = dir.join("run.meta");
            written.push(path.clone());
            fs::write(&path, serde_json::to_vec_pretty(&meta).expect("metadata serializes"))?;
            Ok(())
        })();
        if result.is_err() {
            for p in written.iter().rev() {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir_all(dir);
            }
        }
        result
    }
}

fn metadata(doc: &ConfigDocument, command: &str) -> Result<serde_json::Value> {
    let params = doc.scheme_params()?;
    Ok(json!({
        "program": "ssav-ch",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": command,
        "seed": doc.run.seed,
        "paths": doc.run.paths,
        "threads": rayon::current_num_threads(),
        "config": doc,
        "config_toml": doc.serialize(),
        "resolved": {
            "surf_scale": params.surf_scale(),
            "pot_scale": params.potential().scale(),
            "theta_effective": params.potential().theta(),
            "noise_amplitude_effective": doc.effective_amplitude(),
            "steps": doc.run_config()?.num_steps()?,
            "rng": "ChaCha8, seed_from_u64(seed), stream = path index, standard normal draws",
        },
    }))
}

fn execute(command: &str, args: &RunArgs) -> Result<()> {
    let doc = load_config(args)?;
    check_kind(&doc, command)?;
    let cfg = doc.run_config()?;
    let meta = metadata(&doc, command)?;
    let mut art = Artifacts::new();

    match command {
        "simulate" => {
            let steps: Vec<usize> = cfg
                .output_times
                .iter()
                .map(|&t| (t / cfg.params.tau()).round() as usize)
                .collect();
            let recs = simulate_all(&cfg, &RecordOptions { snapshot_steps: steps, energy_stride: 1, energy_law: false })?;
            let mut diag = String::from("path,max_sav_residual,max_energy_residual,max_solve_residual\n");
            for r in &recs {
                diag.push_str(&format!(
                    "{},{:.3e},{:.3e},{:.3e}\n",
                    r.path_index, r.max_sav_residual, r.max_energy_residual, r.max_solve_residual
                ));
                for (t, x) in &r.snapshots {
                    art.snapshot(format!("snapshots/path{:04}_t{}.fld", r.path_index, fmt_time(*t)), x)?;
                }
            }
            art.add("diagnostics.csv", diag.into_bytes());
            let rows: Vec<Vec<f64>> = recs.iter().map(|r| r.energies.iter().map(|e| e.1).collect()).collect();
            let (mean, stderr) = column_stats(&rows);
            let times = recs[0].energies.iter().map(|e| e.0).collect();
            let trace = EnergyTrace { times, series: vec![EnergySeries { scheme: cfg.scheme, mean, stderr }] };
            art.add("energy.csv", trace.to_csv().into_bytes());
        }
        "converge-time" => {
            let s = doc.study.as_ref().expect("checked");
            let table = strong_error_study(&cfg, s.tau_grid.as_ref().expect("validated"), s.tau_ref.expect("validated"))?;
            art.add("errors.csv", table.to_csv().into_bytes());
            println!("least-squares order: {}", table.slope.map(|s| format!("{s:.4}")).unwrap_or("n/a".into()));
        }
        "converge-space" => {
            let s = doc.study.as_ref().expect("checked");
            let table = spatial_error_study(&cfg, s.mode_grid.as_ref().expect("validated"), s.mode_ref.expect("validated"))?;
            art.add("errors.csv", table.to_csv().into_bytes());
        }
        "energy" => {
            let schemes = doc.study_schemes()?;
            let refinement = doc.study.as_ref().and_then(|s| s.reference_refinement).unwrap_or(10);
            let trace = averaged_energy_study(&cfg, &schemes, refinement)?;
            art.add("energy.csv", trace.to_csv().into_bytes());
            if let Some(taus) = doc.study.as_ref().and_then(|s| s.law_taus.clone()) {
                let laws = energy_law_study(&cfg, &taus)?;
                let mut summary = String::from("tau,remainder,remainder_cv\n");
                for (tau, law) in &laws {
                    summary.push_str(&format!(
                        "{tau},{:.6e},{:.6e}\n",
                        law.remainder.last().copied().unwrap_or(0.0),
                        law.remainder_cv.last().copied().unwrap_or(0.0)
                    ));
                    art.add(format!("energy_law_tau{tau}.csv"), law.to_csv().into_bytes());
                }
                art.add("energy_law_summary.csv", summary.into_bytes());
            }
        }
        "interface" => {
            let steps: Vec<usize> = cfg
                .output_times
                .iter()
                .map(|&t| (t / cfg.params.tau()).round() as usize)
                .collect();
            if steps.is_empty() {
                return Err(Error::Config("interface needs run.output_times".into()));
            }
            let recs = simulate_all(&cfg, &RecordOptions { snapshot_steps: steps, energy_stride: 0, energy_law: false })?;
            let mut csv = String::from("time,polyline_id,x1,x2\n");
            for (t, x) in &recs[0].snapshots {
                extract_zero_level_set(&x.to_nodal(), *t)?.to_csv_rows(&mut csv);
                art.snapshot(format!("snapshots/path0000_t{}.fld", fmt_time(*t)), x)?;
            }
            art.add("levelset.csv", csv.into_bytes());
            if recs.len() > 1 {
                let mut mean_csv = String::from("time,polyline_id,x1,x2\n");
                for (k, (t, _)) in recs[0].snapshots.iter().enumerate() {
                    let mut acc = SpectralField::zeros(cfg.params.grid());
                    for r in &recs {
                        acc = acc.add(&r.snapshots[k].1)?;
                    }
                    let mean = acc.scale(1.0 / recs.len() as f64);
                    extract_zero_level_set(&mean.to_nodal(), *t)?.to_csv_rows(&mut mean_csv);
                }
                art.add("levelset_mean.csv", mean_csv.into_bytes());
            }
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    art.commit(Path::new(&doc.run.output_dir), meta)
}
