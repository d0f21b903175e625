use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use devae_core::data::{generate_dataset, FactorSpec};
use devae_core::metrics::{EvalConfig, LatentMode};

use devae_lab::io::{dataset_to_bytes, write_atomic, Checkpoint};
use devae_lab::run::{self, parse_sweep_values, SweepMode, TrainOptions, TraverseOptions};
use devae_lab::{LabError, LabResult, RunConfig};

#[derive(Parser)]
#[command(name = "devae", version, about = "Hierarchical latent-space disentanglement lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a factor dataset to a file.
    GenData {
        #[arg(long, default_value = "posX:16,posY:16,scale:4")]
        factors: String,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Save and exit after this iteration.
        #[arg(long)]
        stop_after: Option<u64>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Compute the metric report of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value = "mean")]
        latent_mode: String,
        #[arg(long, default_value_t = devae_core::metrics::FACTORVAE_VOTES)]
        votes: usize,
        /// Skip the majority-vote classifier metric.
        #[arg(long)]
        no_factorvae: bool,
    },
    /// Latent traversals of the highest-KL dimensions as a P5 grid.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        min: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        max: f64,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Decode prior samples as a P5 grid.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, short, default_value_t = 16)]
        n: usize,
    },
    /// Train the four variants with matched seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds (default: `--seed`).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// One run per pressure assignment and seed.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// beta_x | beta_1_x | beta_x_40 | ladder
        #[arg(long)]
        mode: String,
        /// `1,5,10` for scalar modes; `1,10;1,10,40` for ladders.
        #[arg(long)]
        values: String,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, short)]
        verbose: bool,
    },
}

/// Flags mirroring the config keys; they override `--config`.
#[derive(Args)]
struct RunArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    betas: Option<String>,
    #[arg(long)]
    strict_betas: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long)]
    latent_dim: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    adam_beta1: Option<String>,
    #[arg(long)]
    adam_beta2: Option<String>,
    #[arg(long)]
    adam_eps: Option<String>,
    #[arg(long)]
    kl_warmup: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    eval_points: Option<String>,
    #[arg(long)]
    latent_mode: Option<String>,
    #[arg(long)]
    shared_noise: Option<String>,
}

impl RunArgs {
    fn config(&self) -> LabResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(LabError::io(p))?)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("variant", &self.variant),
            ("betas", &self.betas),
            ("strict_betas", &self.strict_betas),
            ("arch", &self.arch),
            ("hidden", &self.hidden),
            ("resolution", &self.resolution),
            ("latent_dim", &self.latent_dim),
            ("factors", &self.factors),
            ("dataset", &self.dataset),
            ("iterations", &self.iterations),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("adam_eps", &self.adam_eps),
            ("kl_warmup", &self.kl_warmup),
            ("eval_every", &self.eval_every),
            ("eval_points", &self.eval_points),
            ("latent_mode", &self.latent_mode),
            ("shared_noise", &self.shared_noise),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.seed = self.seed;
        cfg.out = self.out.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn seed_list(text: Option<&str>, fallback: u64) -> LabResult<Vec<u64>> {
    match text {
        None => Ok(vec![fallback]),
        Some(t) => {
            t.split(',').map(|s| s.trim().parse().map_err(|_| LabError::Config(format!("bad seed `{s}`")))).collect()
        }
    }
}

fn ensure_parent(path: &Path) -> LabResult<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(LabError::io(dir)),
        None => Ok(()),
    }
}

fn provenance(ck: &Checkpoint, extra: &str) -> Vec<String> {
    vec![ck.config.to_text(), format!("iteration = {}", ck.iteration), extra.to_string()]
}

fn execute(cmd: Command) -> LabResult<()> {
    match cmd {
        Command::GenData { factors, resolution, seed, out } => {
            let specs = FactorSpec::parse_list(&factors)?;
            let ds = generate_dataset(&specs, resolution, seed)?;
            ensure_parent(&out)?;
            write_atomic(&out, &dataset_to_bytes(&ds, seed))?;
            println!("{} images of {resolution}x{resolution} written to {}", ds.len(), out.display());
        }
        Command::Train { run, resume, stop_after, verbose } => {
            let cfg = run.config()?;
            let summary = run::train(&cfg, &TrainOptions { resume, stop_after, verbose })?;
            match &summary.report {
                Some(report) => {
                    for s in &report.spaces {
                        println!("space {}: mig {:.4} recon {:.3}", s.space, s.mig, s.recon_error);
                    }
                }
                None => println!("stopped at iteration {}", summary.iteration),
            }
        }
        Command::Eval { checkpoint, seed, out, points, latent_mode, votes, no_factorvae } => {
            let eval = EvalConfig {
                points,
                mode: LatentMode::parse(&latent_mode)?,
                votes,
                factorvae: !no_factorvae,
                ..EvalConfig::default()
            };
            let report = run::eval_checkpoint(&checkpoint, &eval, seed, &out)?;
            for s in &report.spaces {
                println!("space {}: mig {:.4} recon {:.3}", s.space, s.mig, s.recon_error);
            }
        }
        Command::Traverse { checkpoint, seed, out, min, max, steps, top_k, seeds } => {
            let (ck, model, ds) = run::open_checkpoint(&checkpoint)?;
            let opts = TraverseOptions { range: (min, max), steps, top_k, seeds, seed };
            let mut t = run::traverse(&model, &ds, &opts)?;
            t.grid.comments = provenance(&ck, &format!("traverse seed = {seed}\ndims = {:?}", t.dims));
            t.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            ensure_parent(&out)?;
            t.grid.save(&out)?;
            println!("dimensions {:?} written to {}", t.dims, out.display());
        }
        Command::Sample { checkpoint, seed, out, n } => {
            let (ck, model, _) = run::open_checkpoint(&checkpoint)?;
            if let Some(mut grid) = run::sample_prior(&model, n, seed)? {
                grid.comments = provenance(&ck, &format!("sample seed = {seed}"));
                ensure_parent(&out)?;
                grid.save(&out)?;
            }
        }
        Command::Ablate { run, seeds, verbose } => {
            let cfg = run.config()?;
            let seeds = seed_list(seeds.as_deref(), cfg.seed)?;
            for (variant, seed, s) in run::ablate(&cfg, &seeds, &TrainOptions { verbose, ..Default::default() })? {
                println!("{} seed {seed}: mig {:?} recon {:?}", variant.name(), s.mig, s.recon);
            }
        }
        Command::Sweep { run, mode, values, seeds, verbose } => {
            let cfg = run.config()?;
            let mode = SweepMode::parse(&mode)?;
            let values = parse_sweep_values(mode, &values)?;
            let seeds = seed_list(seeds.as_deref(), cfg.seed)?;
            for p in run::sweep(&cfg, mode, &values, &seeds, &TrainOptions { verbose, ..Default::default() })? {
                println!("betas {:?} seed {}: mig {:?} recon {:?}", p.betas, p.seed, p.scores.mig, p.scores.recon);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
