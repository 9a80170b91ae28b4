use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gam_dpg::experiment::{ExperimentConfig, OUT_DIR_ENV};
use gam_dpg::sweep::{exit_code, exit_code_for, run_sweep};
use gam_dpg::GamError;

/// Motif-filtered sequence experiments: fit a global autoregressive model,
/// project it onto a policy, report cross-entropy and motif-frequency ratios.
#[derive(Parser, Debug)]
#[command(name = "gam-dpg", version)]
struct Args {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated motifs.
    #[arg(long)]
    motif: Option<String>,
    /// Comma-separated training-set sizes.
    #[arg(long = "d-size")]
    d_size: Option<String>,
    /// Comma-separated master seeds.
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated feature masks, e.g. `1001111,Mv1001111`.
    #[arg(long)]
    mask: Option<String>,
    /// Training-1 method: snis or rs.
    #[arg(long)]
    t1: Option<String>,
    /// Comma-separated Training-2 methods: distill, dpg_off, dpg_on, pg.
    #[arg(long)]
    t2: Option<String>,
    /// Target potential: gam or wn_f.
    #[arg(long)]
    potential: Option<String>,
    #[arg(long = "out-dir", env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Worker threads; each point runs on one.
    #[arg(long)]
    jobs: Option<usize>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the points and exit.
    #[arg(long)]
    dry_run: bool,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, GamError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| GamError::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k, v)?;
    }
    let flags = [
        ("motifs", &args.motif),
        ("d_sizes", &args.d_size),
        ("seeds", &args.seed),
        ("masks", &args.mask),
        ("t1", &args.t1),
        ("t2", &args.t2),
        ("potential", &args.potential),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gam-dpg: {e}");
            return ExitCode::from(exit_code_for(&e) as u8);
        }
    };
    if args.dry_run {
        for p in config.points() {
            let methods: Vec<String> = config.t2.iter().map(|m| m.to_string()).collect();
            println!("{} {}", p.name(), methods.join(","));
        }
        return ExitCode::SUCCESS;
    }
    match run_sweep(&config, &config.out_dir) {
        Ok(result) => {
            eprintln!(
                "gam-dpg: {} rows, {} points reused, {} failed; results in {}",
                result.rows.len(),
                result.reused,
                result.failures.len(),
                config.out_dir.display()
            );
            for f in &result.failures {
                eprintln!("gam-dpg: {} failed: {}", f.point, f.error);
            }
            ExitCode::from(exit_code(&result) as u8)
        }
        Err(e) => {
            eprintln!("gam-dpg: {e}");
            let record = serde_json::json!({ "error": e.to_string(), "config_error": e.is_config() });
            let _ = std::fs::create_dir_all(&config.out_dir);
            let _ = std::fs::write(config.out_dir.join("error.json"), record.to_string());
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
