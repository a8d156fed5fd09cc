use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multigoal_dwr::adaptivity::RunConfig;
use multigoal_dwr::cli::{
    cmd_mesh_dump, cmd_report, cmd_run, exit_code, load_config, preset, resolve_out_dir, Overrides, RunOptions, EXIT_CONFIG,
    PRESET_NAMES,
};
use multigoal_dwr::Error;

#[derive(Parser)]
#[command(name = "mgdwr", about = "Adaptive multigoal error estimation for nonlinear problems")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Source {
    /// Built-in experiment
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_levels: Option<usize>,
    #[arg(long)]
    max_dofs: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the adaptive loop and write CSV/gnuplot tables
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also run with uniform refinement for comparison
        #[arg(long)]
        uniform: bool,
        /// Write one VTK file per level
        #[arg(long)]
        vtk: bool,
    },
    /// Print convergence rates and a comparison table for CSV files
    Report { csv: Vec<PathBuf> },
    /// Write the initial mesh of a preset or config as VTK
    MeshDump {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn resolve(source: &Source) -> Result<(String, RunConfig), Error> {
    let (name, mut cfg) = match (&source.preset, &source.config) {
        (Some(p), None) => (p.clone(), preset(p)?.config),
        (None, Some(path)) => {
            let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            (stem, load_config(path)?)
        }
        _ => {
            return Err(Error::Config(format!(
                "pass --preset <name> or --config <file>; presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Overrides { seed: source.seed, max_levels: source.max_levels, max_dofs: source.max_dofs }.apply(&mut cfg);
    cfg.validate()?;
    Ok((name, cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let result = match cli.verb {
        Verb::Run { source, out_dir, uniform, vtk } => resolve(&source).and_then(|(name, cfg)| {
            let opts = RunOptions { out_dir: resolve_out_dir(out_dir), uniform, vtk };
            let out = cmd_run(&name, &cfg, &opts)?;
            for r in &out.adaptive {
                println!(
                    "level {:>2}  dofs {:>8}  J_E_error {:.6e}  eta_h {:.6e}  I_eff {}",
                    r.level,
                    r.dofs,
                    r.j_e_error,
                    r.eta_h,
                    r.i_eff.map_or("n/a".into(), |v| format!("{v:.3}"))
                );
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }),
        Verb::Report { csv } => cmd_report(&csv).map(|s| print!("{s}")),
        Verb::MeshDump { source, out_dir } => resolve(&source).and_then(|(name, cfg)| {
            let path = resolve_out_dir(out_dir).join(format!("{name}_mesh.vtk"));
            cmd_mesh_dump(&cfg, &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
