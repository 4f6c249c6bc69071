use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use adampnp::geometry::{ca_rmsd, to_pdb};
use adampnp::harness::{
    config_schema, emit_tables, validate_invariants, Combo, Experiment, ExperimentConfig,
    SweepOutput,
};
use adampnp::prior::unconditional_sample;
use adampnp::sampler::{trace_labels, write_trace_csv};
use adampnp::{Error, Result};

#[derive(Parser)]
#[command(name = "adampnp", version, about = "Guided diffusion reconstruction of protein backbones from P, D and E data")]
struct Cli {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the per-step trace CSV (reconstruct only).
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct the ground truth from one simulated measurement set.
    Reconstruct {
        /// Modality combination, e.g. P+D.
        #[arg(long, default_value = "P+D")]
        combo: String,
        /// Noise std; defaults to the first configured level.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Every configured combination at every noise level and seed.
    SweepCombos,
    /// The paired count grid with the sparsity combination.
    SweepSparsity,
    /// Estimated against true D noise.
    NoiseReport,
    /// Draw unconditional samples from the prior.
    SamplePrior {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run the numerical invariant checks.
    Validate,
    /// Print the effective configuration.
    Config {
        /// Print every field with its default and description instead.
        #[arg(long)]
        schema: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn sweep(cfg: ExperimentConfig, run: fn(&Experiment) -> Result<SweepOutput>) -> Result<serde_json::Value> {
    let dir = cfg.output_dir.clone();
    let exp = Experiment::new(cfg)?;
    let out = run(&exp)?;
    create_dir(&dir)?;
    emit_tables(&out, &dir)?;
    let failed = out.records.iter().filter(|r| r.error.is_some()).count();
    Ok(json!({
        "output_dir": dir,
        "rows": out.records.len(),
        "failed_rows": failed,
        "summary": dir.join("summary.csv"),
    }))
}

fn run(cli: &Cli) -> Result<(serde_json::Value, bool)> {
    let cfg = load_config(cli)?;
    let ok = |v| Ok((v, true));
    match &cli.command {
        Command::Config { schema } => {
            if *schema {
                ok(config_schema())
            } else {
                ok(serde_json::to_value(&cfg)?)
            }
        }
        Command::SweepCombos => ok(sweep(cfg, Experiment::run_combo_sweep)?),
        Command::SweepSparsity => ok(sweep(cfg, Experiment::run_sparsity_sweep)?),
        Command::NoiseReport => ok(sweep(cfg, Experiment::run_noise_estimation_report)?),
        Command::Validate => {
            let exp = Experiment::new(cfg)?;
            let checks = validate_invariants(&exp)?;
            let passed = checks.iter().all(|c| c.passed);
            Ok((json!({ "passed": passed, "checks": checks }), passed))
        }
        Command::SamplePrior { count } => {
            let dir = cfg.output_dir.clone();
            let seed = cfg.seeds[0];
            let exp = Experiment::new(cfg)?;
            create_dir(&dir)?;
            let mut files = Vec::new();
            for k in 0..*count {
                let b = unconditional_sample(
                    exp.denoiser(),
                    exp.schedule(),
                    &exp.config().langevin,
                    exp.covariance(),
                    seed.wrapping_add(k as u64),
                )?;
                let path = dir.join(format!("sample_{k:04}.pdb"));
                write(&path, to_pdb(&b))?;
                files.push(json!({ "file": path, "rmsd_to_truth": ca_rmsd(&b, exp.truth())? }));
            }
            ok(json!({ "samples": files }))
        }
        Command::Reconstruct { combo, sigma } => {
            let combo: Combo = combo.parse()?;
            let sigma = sigma.or(cfg.noise_levels.first().copied()).ok_or_else(|| {
                Error::InvalidArgument("no noise level given".into())
            })?;
            let dir = cfg.output_dir.clone();
            let seed = cfg.seeds[0];
            let exp = Experiment::new(cfg)?;
            let ms = exp.measurements(&combo, sigma, exp.base_counts(), seed)?;
            let sel = exp.reconstruct(&ms, seed, cli.trace)?;
            let rec = &sel.reconstruction;
            create_dir(&dir)?;
            write(&dir.join("structure.pdb"), to_pdb(&rec.structure))?;
            write(&dir.join("structure.json"), pretty(&json!(rec.structure.coords())))?;
            if cli.trace {
                let names: Vec<&str> = ms.iter().map(|m| m.modality().name()).collect();
                let path = dir.join("trace.csv");
                let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
                write_trace_csv(file, &trace_labels(&names), &rec.trace)?;
            }
            let sigma_hat: Vec<f64> = rec.sigma_sq.iter().map(|s| s.sqrt()).collect();
            let summary = json!({
                "combo": combo.to_string(),
                "sigma": sigma,
                "seed": seed,
                "rmsd": ca_rmsd(&rec.structure, exp.truth())?,
                "sigma_hat": sigma_hat,
                "weights": rec.weights,
                "selected_sample": sel.sample,
                "failed_samples": sel.failed,
                "degenerate_pairs": rec.degenerate_pairs,
            });
            write(&dir.join("summary.json"), pretty(&summary))?;
            ok(summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((value, passed)) => {
            print!("{}", pretty(&value));
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprint!("{}", pretty(&json!({ "error": e.kind(), "message": e.to_string() })));
            ExitCode::FAILURE
        }
    }
}
