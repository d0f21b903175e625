//! Training runs and the experiments built from them.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use devae_core::data::{generate_dataset, FactorDataset};
use devae_core::metrics::{
    collect_latents, evaluate, mi_table, mig_from_table, nmi_from_table, sample_rows, EvalConfig, MetricsReport,
    ModelSpace, Representation, KL_PRUNE, MI_BINS,
};
use devae_core::model::{Model, ModelVariant};
use devae_core::rng::RngStreams;
use devae_core::train::{StepRecord, Trainer};
use devae_core::Tensor;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{LabError, LabResult};
use crate::io::{dataset_from_bytes, write_atomic, Checkpoint, Grid};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.txt";

pub fn load_dataset(cfg: &RunConfig) -> LabResult<FactorDataset> {
    let ds = match &cfg.dataset {
        Some(path) => dataset_from_bytes(&fs::read(path).map_err(LabError::io(path))?)?,
        None => generate_dataset(&cfg.factor_specs()?, cfg.resolution, cfg.seed)?,
    };
    if ds.resolution() != cfg.resolution {
        return Err(LabError::Config(format!(
            "dataset resolution {} does not match configured {}",
            ds.resolution(),
            cfg.resolution
        )));
    }
    Ok(ds)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `out/checkpoint.bin` if present.
    pub resume: bool,
    /// Stop (with a checkpoint) after this iteration, as if interrupted.
    pub stop_after: Option<u64>,
    /// Print evaluation lines to stderr.
    pub verbose: bool,
}

/// One metrics checkpoint of the NMI tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub iteration: u64,
    pub mig: f64,
    pub top_dim: usize,
    pub nmi_row: Vec<f64>,
    /// `nmi[j][k]` for every latent dimension `j` and factor `k`.
    pub nmi: Vec<Vec<f64>>,
    pub kl_per_dim: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: RunConfig,
    pub iteration: u64,
    pub losses: Vec<f64>,
    pub track: Vec<TrackPoint>,
    /// Present when the run reached its configured iteration count.
    pub report: Option<MetricsReport>,
}

impl RunSummary {
    pub fn out(&self) -> &Path {
        &self.config.out
    }
}

/// The serialized config as `#` lines, the provenance preamble of every CSV.
fn config_preamble(cfg: &RunConfig) -> String {
    cfg.to_text().lines().map(|l| format!("# {l}\n")).collect()
}

fn csv_header(cfg: &RunConfig, factor_names: &[&str]) -> String {
    let k = cfg.betas.len();
    let mut h = config_preamble(cfg);
    h.push_str("iteration,total");
    (0..k).for_each(|i| write!(h, ",recon_{i}").unwrap());
    (0..k).for_each(|i| write!(h, ",kl_{i}").unwrap());
    for i in 0..k {
        (0..cfg.latent_dim).for_each(|j| write!(h, ",kl_{i}_{j}").unwrap());
    }
    h.push_str(",mig_0,nmi_top_dim");
    factor_names.iter().for_each(|f| write!(h, ",nmi_{f}").unwrap());
    h
}

fn csv_row(rec: &StepRecord, track: Option<&TrackPoint>, factors: usize) -> String {
    let l = &rec.loss;
    let mut r = format!("{},{}", rec.iteration, l.total);
    l.recon.iter().chain(&l.kl).chain(l.kl_per_dim.iter().flatten()).for_each(|v| write!(r, ",{v}").unwrap());
    match track {
        Some(t) => {
            write!(r, ",{},{}", t.mig, t.top_dim).unwrap();
            t.nmi_row.iter().for_each(|v| write!(r, ",{v}").unwrap());
        }
        None => (0..factors + 2).for_each(|_| r.push(',')),
    }
    r
}

/// Space-0 MIG and the NMI row of the highest-KL dimension.
pub fn track_point(model: &Model, ds: &FactorDataset, cfg: &RunConfig, iteration: u64) -> LabResult<TrackPoint> {
    let streams = RngStreams::new(cfg.seed);
    let rep = ModelSpace { model, space: 0 };
    let set = collect_latents(&rep, ds, cfg.eval_points, cfg.latent_mode, &mut streams.stream("track", iteration))?;
    let table = mi_table(&set, MI_BINS)?;
    let mig = mig_from_table(&table)?.score;
    let nmi = nmi_from_table(&table);
    let kl = &set.kl_per_dim;
    let top_dim = (0..kl.len()).fold(0, |b, j| if kl[j] > kl[b] { j } else { b });
    Ok(TrackPoint { iteration, mig, top_dim, nmi_row: nmi[top_dim].clone(), nmi, kl_per_dim: kl.clone() })
}

/// Truncate `metrics.csv` to the preamble, the header and rows up to `iteration`.
fn rewind_csv(path: &Path, iteration: u64) -> LabResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(LabError::io(path))?;
    let mut kept = Vec::new();
    let mut header_seen = false;
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || !header_seen {
            header_seen |= !line.starts_with('#');
            kept.push(line.to_string());
            continue;
        }
        let it: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LabError::Data(format!("{}: malformed row {}", path.display(), n + 1)))?;
        if it <= iteration {
            kept.push(line.to_string());
        }
    }
    Ok(kept)
}

fn report_json(cfg: &RunConfig, iteration: u64, report: &MetricsReport, ds: &FactorDataset) -> serde_json::Value {
    let spaces: Vec<_> = report
        .spaces
        .iter()
        .map(|s| {
            json!({
                "space": s.space,
                "mig": s.mig,
                "dci_disentanglement": s.dci,
                "factor_vae_score": s.factor_vae,
                "recon_error": s.recon_error,
                "kl_per_dim": s.kl_per_dim,
                "nmi": s.nmi,
                "top_kl_dim": s.top_dim,
            })
        })
        .collect();
    let factors: Vec<_> = ds.space().specs().iter().map(|f| f.short()).collect();
    json!({
        "config": cfg.to_text(),
        "seed": cfg.seed,
        "iteration": iteration,
        "factors": factors,
        "spaces": spaces,
        "with_replacement": report.with_replacement,
        "notes": report.notes,
    })
}

fn final_eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig { points: cfg.eval_points, mode: cfg.latent_mode, ..EvalConfig::default() }
}

/// Run (or resume) training as configured, writing checkpoint, CSV and report into `cfg.out`.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> LabResult<RunSummary> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(LabError::io(out))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let csv_path = out.join(METRICS_FILE);
    let factor_names: Vec<&str> = ds.space().specs().iter().map(|f| f.name()).collect();

    let (mut trainer, mut lines) = if opts.resume && ckpt_path.exists() {
        let ck = Checkpoint::load(&ckpt_path)?;
        let mut saved = ck.config.clone();
        saved.iterations = cfg.iterations;
        if saved != *cfg {
            return Err(LabError::Config("checkpoint was written by a different configuration".into()));
        }
        let model = Model::from_params(cfg.model_config()?, ck.params)?;
        let trainer = Trainer::resume(model, ck.adam, cfg.train_config(), cfg.seed)?;
        (trainer, rewind_csv(&csv_path, ck.iteration)?)
    } else {
        let model = Model::new(cfg.model_config()?, &mut RngStreams::new(cfg.seed).stream("init", 0))?;
        (Trainer::new(model, cfg.train_config(), cfg.seed)?, vec![csv_header(cfg, &factor_names)])
    };
    fs::write(out.join(CONFIG_FILE), cfg.to_text()).map_err(LabError::io(out.join(CONFIG_FILE)))?;
    let mut losses = Vec::new();
    let mut track = Vec::new();
    // The CSV is rewritten from memory at every checkpoint so it never runs ahead of it.
    let flush = |lines: &[String]| write_atomic(&csv_path, (lines.join("\n") + "\n").as_bytes());
    let save = |t: &Trainer| {
        let (model, adam) = (t.model(), t.adam());
        Checkpoint {
            config: cfg.clone(),
            iteration: t.iteration(),
            params: model.params().to_vec(),
            adam: adam.clone(),
        }
        .save(&ckpt_path)
    };

    while trainer.iteration() < cfg.iterations {
        let rec = match trainer.step(&ds) {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("{e}\nlast good iteration: {}\n", trainer.iteration());
                fs::write(out.join("abort.txt"), &msg).map_err(LabError::io(out.join("abort.txt")))?;
                flush(&lines)?;
                return Err(e.into());
            }
        };
        let it = rec.iteration;
        losses.push(rec.loss.total);
        let tp = if cfg.is_eval_point(it) { Some(track_point(trainer.model(), &ds, cfg, it)?) } else { None };
        lines.push(csv_row(&rec, tp.as_ref(), factor_names.len()));
        if let Some(tp) = tp {
            if opts.verbose {
                eprintln!(
                    "[{}] it {it} loss {:.3} mig {:.3} top dim {} nmi {:?}",
                    out.display(),
                    rec.loss.total,
                    tp.mig,
                    tp.top_dim,
                    tp.nmi_row.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                );
            }
            track.push(tp);
            save(&trainer)?;
            flush(&lines)?;
        }
        if opts.stop_after == Some(it) {
            save(&trainer)?;
            flush(&lines)?;
            return Ok(RunSummary { config: cfg.clone(), iteration: it, losses, track, report: None });
        }
    }
    save(&trainer)?;
    flush(&lines)?;
    let report = evaluate(trainer.model(), &ds, &final_eval_config(cfg), cfg.seed)?;
    let doc = report_json(cfg, trainer.iteration(), &report, &ds);
    write_atomic(&out.join(REPORT_FILE), serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    Ok(RunSummary { config: cfg.clone(), iteration: trainer.iteration(), losses, track, report: Some(report) })
}

/// Model and dataset stored behind a checkpoint.
pub fn open_checkpoint(path: &Path) -> LabResult<(Checkpoint, Model, FactorDataset)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::from_params(ck.config.model_config()?, ck.params.clone())?;
    let ds = load_dataset(&ck.config)?;
    Ok((ck, model, ds))
}

/// Full metric report for a checkpoint, written as JSON to `out`.
pub fn eval_checkpoint(path: &Path, eval: &EvalConfig, seed: u64, out: &Path) -> LabResult<MetricsReport> {
    let (ck, model, ds) = open_checkpoint(path)?;
    let report = evaluate(&model, &ds, eval, seed)?;
    let doc = report_json(&ck.config, ck.iteration, &report, &ds);
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    }
    write_atomic(out, serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    Ok(report)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone)]
pub struct TraverseOptions {
    pub range: (f64, f64),
    pub steps: usize,
    pub top_k: usize,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for TraverseOptions {
    fn default() -> Self {
        TraverseOptions { range: (-2.0, 2.0), steps: 9, top_k: 5, seeds: 3, seed: 0 }
    }
}

pub struct Traversal {
    pub grid: Grid,
    /// Traversed dimensions, highest KL first.
    pub dims: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Values of one traversal axis.
pub fn traversal_values(range: (f64, f64), steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![0.5 * (range.0 + range.1)],
        n => (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Decode seed latents with dimension `dim` replaced by each value; one row per seed.
pub fn traversal_rows(model: &Model, seeds: &[Vec<f64>], dim: usize, values: &[f64]) -> LabResult<Vec<Vec<Vec<f64>>>> {
    let d = model.latent_dim();
    let mut rows = Vec::with_capacity(seeds.len());
    for z0 in seeds {
        let mut zs = Vec::with_capacity(values.len() * d);
        for &v in values {
            let mut z = z0.clone();
            z[dim] = v;
            zs.extend(z);
        }
        let out = model.decode(&Tensor::new(vec![values.len(), d], zs)?, 0)?;
        let px = out.len() / values.len().max(1);
        rows.push(out.data().chunks_exact(px).map(|img| img.iter().map(|&l| sigmoid(l)).collect()).collect());
    }
    Ok(rows)
}

/// Dimensions ordered by aggregate KL (space 0), keeping those above the pruning threshold.
pub fn active_dims_by_kl(model: &Model, ds: &FactorDataset, seed: u64) -> LabResult<Vec<(usize, f64)>> {
    let (rows, _) = sample_rows(ds.len(), ds.len().min(10_000), &mut RngStreams::new(seed).stream("kl-rank", 0))?;
    let kl = ModelSpace { model, space: 0 }.represent(ds, &rows)?.kl_per_dim();
    let mut dims: Vec<(usize, f64)> = kl.into_iter().enumerate().filter(|&(_, v)| v > KL_PRUNE).collect();
    dims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(dims)
}

pub fn traverse(model: &Model, ds: &FactorDataset, opts: &TraverseOptions) -> LabResult<Traversal> {
    let mut warnings = Vec::new();
    let dims: Vec<usize> =
        active_dims_by_kl(model, ds, opts.seed)?.into_iter().map(|(j, _)| j).take(opts.top_k).collect();
    if dims.len() < opts.top_k {
        warnings.push(format!("only {} of the requested {} dimensions are active", dims.len(), opts.top_k));
    }
    let (rows, _) = sample_rows(ds.len(), opts.seeds, &mut RngStreams::new(opts.seed).stream("traverse", 0))?;
    let seeds: Vec<Vec<f64>> = model.encode(&ds.batch(&rows))?.into_iter().map(|p| p.mean).collect();
    let values = traversal_values(opts.range, opts.steps);
    let res = ds.resolution();
    let mut grid = Grid::new(dims.len() * seeds.len(), values.len(), res);
    for (di, &dim) in dims.iter().enumerate() {
        for (si, row) in traversal_rows(model, &seeds, dim, &values)?.into_iter().enumerate() {
            for (c, img) in row.iter().enumerate() {
                grid.put(di * seeds.len() + si, c, img);
            }
        }
    }
    Ok(Traversal { grid, dims, warnings })
}

/// Decode `n` draws from the prior with the space-0 indicator. `None` when `n == 0`.
pub fn sample_prior(model: &Model, n: usize, seed: u64) -> LabResult<Option<Grid>> {
    if n == 0 {
        return Ok(None);
    }
    let z = model.draw_noise(n, &mut RngStreams::new(seed).stream("prior", 0)).swap_remove(0);
    let out = model.decode(&z, 0)?;
    let res = model.config().arch.resolution;
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut grid = Grid::new(n.div_ceil(cols), cols, res);
    for (i, img) in out.data().chunks_exact(res * res).enumerate() {
        let probs: Vec<f64> = img.iter().map(|&l| sigmoid(l)).collect();
        grid.put(i / cols, i % cols, &probs);
    }
    Ok(Some(grid))
}

/// Per-space scores of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceScores {
    pub mig: Vec<f64>,
    pub recon: Vec<f64>,
}

impl SpaceScores {
    pub fn of(summary: &RunSummary) -> LabResult<Self> {
        let report = summary.report.as_ref().ok_or_else(|| LabError::Config("run did not finish".into()))?;
        Ok(SpaceScores {
            mig: report.spaces.iter().map(|s| s.mig).collect(),
            recon: report.spaces.iter().map(|s| s.recon_error).collect(),
        })
    }
}

fn csv_append(path: &Path, base: &RunConfig, header: &str, line: &str) -> LabResult<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(LabError::io(path))?;
    let text = if fresh { format!("{}{header}\n{line}\n", config_preamble(base)) } else { format!("{line}\n") };
    f.write_all(text.as_bytes()).map_err(LabError::io(path))
}

fn fmt_betas(b: &[f64]) -> String {
    b.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// The four-variant comparison: β-VAE with `β = [1]`, the others with three spaces `[1, 10, 40]`.
pub fn ablate(
    base: &RunConfig,
    seeds: &[u64],
    opts: &TrainOptions,
) -> LabResult<Vec<(ModelVariant, u64, SpaceScores)>> {
    let table = base.out.join("ablation.csv");
    let mut rows = Vec::new();
    for &variant in &ModelVariant::ALL {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.betas = if variant == ModelVariant::BetaVAE { vec![1.0] } else { vec![1.0, 10.0, 40.0] };
            cfg.seed = seed;
            cfg.out = base.out.join(format!("{}_seed{seed}", variant.name()));
            let s = SpaceScores::of(&train(&cfg, opts)?)?;
            for (i, (m, r)) in s.mig.iter().zip(&s.recon).enumerate() {
                csv_append(
                    &table,
                    base,
                    "variant,seed,space,mig,recon_error",
                    &format!("{},{seed},{i},{m},{r}", variant.name()),
                )?;
            }
            rows.push((variant, seed, s));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// One space with pressure `x`.
    BetaX,
    /// `[1, x]`.
    Beta1X,
    /// `[x, 40]`.
    BetaX40,
    /// Each value is a full pressure list.
    Ladder,
}

impl SweepMode {
    pub fn parse(s: &str) -> LabResult<Self> {
        match s {
            "beta_x" => Ok(SweepMode::BetaX),
            "beta_1_x" => Ok(SweepMode::Beta1X),
            "beta_x_40" => Ok(SweepMode::BetaX40),
            "ladder" => Ok(SweepMode::Ladder),
            other => Err(LabError::Config(format!("unknown sweep mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepMode::BetaX => "beta_x",
            SweepMode::Beta1X => "beta_1_x",
            SweepMode::BetaX40 => "beta_x_40",
            SweepMode::Ladder => "ladder",
        }
    }

    /// Pressure list for one sweep value.
    pub fn betas(self, value: &[f64]) -> LabResult<Vec<f64>> {
        let one = || match value {
            [x] => Ok(*x),
            _ => Err(LabError::Config(format!("{} takes single values", self.name()))),
        };
        Ok(match self {
            SweepMode::BetaX => vec![one()?],
            SweepMode::Beta1X => vec![1.0, one()?],
            SweepMode::BetaX40 => vec![one()?, 40.0],
            SweepMode::Ladder => value.to_vec(),
        })
    }
}

/// Parse sweep values: `1,5,10` for scalar modes, `1,10;1,10,40` for ladders.
pub fn parse_sweep_values(mode: SweepMode, text: &str) -> LabResult<Vec<Vec<f64>>> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad sweep value `{s}`")));
    let groups: Vec<&str> =
        if mode == SweepMode::Ladder { text.split(';').collect() } else { text.split(',').collect() };
    groups
        .into_iter()
        .filter(|g| !g.trim().is_empty())
        .map(|g| g.trim().trim_matches(|c| c == '[' || c == ']').split(',').map(num).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub betas: Vec<f64>,
    pub seed: u64,
    pub scores: SpaceScores,
    pub track: Vec<TrackPoint>,
}

/// One training run per (value, seed); rows go to `frontier.csv` under `base.out`.
pub fn sweep(
    base: &RunConfig,
    mode: SweepMode,
    values: &[Vec<f64>],
    seeds: &[u64],
    opts: &TrainOptions,
) -> LabResult<Vec<SweepPoint>> {
    let table = base.out.join("frontier.csv");
    let mut points = Vec::new();
    for value in values {
        let betas = mode.betas(value)?;
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.betas = betas.clone();
            cfg.strict_betas = false;
            cfg.variant = match (betas.len(), base.variant) {
                (1, _) => ModelVariant::BetaVAE,
                (_, ModelVariant::BetaVAE) => ModelVariant::DeVAE,
                (_, v) => v,
            };
            cfg.seed = seed;
            cfg.out = base.out.join(format!("{}_{}_seed{seed}", mode.name(), fmt_betas(&betas).replace(';', "-")));
            let summary = train(&cfg, opts)?;
            let scores = SpaceScores::of(&summary)?;
            let last = scores.mig.len() - 1;
            csv_append(
                &table,
                base,
                "mode,betas,seed,mig_0,recon_0,mig_last,recon_last",
                &format!(
                    "{},{},{seed},{},{},{},{}",
                    mode.name(),
                    fmt_betas(&betas),
                    scores.mig[0],
                    scores.recon[0],
                    scores.mig[last],
                    scores.recon[last]
                ),
            )?;
            points.push(SweepPoint { betas: betas.clone(), seed, scores, track: summary.track });
        }
    }
    Ok(points)
}
