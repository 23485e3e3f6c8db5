use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpe_core::harness::{run_benchmark, run_repeats};
use cpe_core::synth::{generate, SynthSpec};
use cpe_core::{run_ablation, AblationAxis, Error, MatchConfig, Matcher};

#[derive(Parser)]
#[command(name = "cpe", version, about = "Set-to-set image classification over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every image in a manifest and write a report.
    Classify(RunArgs),
    /// Sweep one setting and write a comparison table.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rerun with several crop seeds and report mean and spread.
    Repeats {
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        /// JSON file with generator settings; omitted fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    matcher: Option<Matcher>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> Result<MatchConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => MatchConfig::load(p)?,
            None => MatchConfig::default(),
        };
        if let Some(m) = self.matcher {
            cfg.matcher = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Classify(args) => {
            let cfg = args.config()?;
            let run = run_benchmark(&args.manifest, &cfg)?;
            run.write(&args.out)?;
            print!("{}", run.report.to_table());
        }
        Command::Ablate { axis, values, run } => {
            let cfg = run.config()?;
            let table = run_ablation(&run.manifest, &cfg, axis, &values)?;
            write(&run.out, "ablation.json", &serde_json::to_string_pretty(&table)?)?;
            write(&run.out, "ablation.txt", &table.to_table())?;
            print!("{}", table.to_table());
        }
        Command::Repeats { seeds, run } => {
            let cfg = run.config()?;
            let summary = run_repeats(&run.manifest, &cfg, &seeds)?;
            write(&run.out, "repeats.json", &serde_json::to_string_pretty(&summary)?)?;
            write(&run.out, "repeats.txt", &summary.to_table())?;
            print!("{}", summary.to_table());
        }
        Command::Synth { spec, seed, out } => {
            let mut spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let path = generate(&spec, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
