//! Run configuration as flat `key = value` text.
//!
//! Every key has a default (the desk profile). The serialized form is written
//! into every artifact a run produces and parses back to an equal config.

use std::fmt::Write as _;
use std::path::PathBuf;

use devae_core::data::FactorSpec;
use devae_core::latent::{HierarchyConfig, LATENT_DIM};
use devae_core::metrics::LatentMode;
use devae_core::model::{ArchitectureConfig, EncoderKind, ModelConfig, ModelVariant};
use devae_core::optim::AdamConfig;
use devae_core::train::TrainConfig;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub betas: Vec<f64>,
    /// Reject tied pressures. Sweeps switch this off to reach points like `[1, 1]`.
    pub strict_betas: bool,
    pub arch: EncoderKind,
    pub hidden: Vec<usize>,
    pub resolution: usize,
    pub latent_dim: usize,
    pub factors: String,
    /// Read images from this file instead of generating `factors`.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub iterations: u64,
    pub batch: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub kl_warmup: u64,
    pub eval_every: u64,
    pub eval_points: usize,
    pub latent_mode: LatentMode,
    pub shared_noise: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: ModelVariant::DeVAE,
            betas: vec![1.0, 40.0],
            strict_betas: true,
            arch: EncoderKind::Mlp,
            hidden: vec![64, 64],
            resolution: 16,
            latent_dim: LATENT_DIM,
            factors: String::from("posX:16,posY:16,scale:4"),
            dataset: None,
            seed: 0,
            iterations: 20_000,
            batch: 64,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            kl_warmup: 1_000,
            eval_every: 500,
            eval_points: 10_000,
            latent_mode: LatentMode::Mean,
            shared_noise: false,
            out: PathBuf::from("run"),
        }
    }
}

/// Keys in serialization order, with a one-line description for `--help` text and docs.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "beta_vae | multi_space | his_linear | devae"),
    ("betas", "comma-separated pressures, one per latent space"),
    ("strict_betas", "require strictly increasing pressures"),
    ("arch", "mlp | conv (conv needs resolution 64)"),
    ("hidden", "comma-separated hidden widths of the mlp encoder"),
    ("resolution", "image side in pixels"),
    ("latent_dim", "latent dimensions per space"),
    ("factors", "generated dataset spec, e.g. posX:16,posY:16,scale:4"),
    ("dataset", "dataset file to load instead of generating (empty: generate)"),
    ("seed", "run seed"),
    ("iterations", "training iterations"),
    ("batch", "batch size"),
    ("lr", "Adam learning rate"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam epsilon"),
    ("kl_warmup", "iterations over which pressures ramp up from 0 (0: off)"),
    ("eval_every", "iterations between metric checkpoints (0: only at the end)"),
    ("eval_points", "latent samples for mutual-information estimates"),
    ("latent_mode", "mean | sample: latents used by the metrics"),
    ("shared_noise", "reuse one noise draw for every space"),
    ("out", "output directory"),
];

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> LabResult<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| LabError::Config(format!("{key}: cannot parse `{s}`"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> LabResult<T> {
    v.trim().parse().map_err(|_| LabError::Config(format!("{key}: cannot parse `{v}`")))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> LabResult<()> {
        let v = value.trim();
        match key {
            "variant" => self.variant = ModelVariant::parse(v)?,
            "betas" => self.betas = parse_list(key, v)?,
            "strict_betas" => self.strict_betas = parse_one(key, v)?,
            "arch" => self.arch = EncoderKind::parse(v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "resolution" => self.resolution = parse_one(key, v)?,
            "latent_dim" => self.latent_dim = parse_one(key, v)?,
            "factors" => self.factors = v.to_string(),
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = parse_one(key, v)?,
            "iterations" => self.iterations = parse_one(key, v)?,
            "batch" => self.batch = parse_one(key, v)?,
            "lr" => self.lr = parse_one(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_one(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_one(key, v)?,
            "adam_eps" => self.adam_eps = parse_one(key, v)?,
            "kl_warmup" => self.kl_warmup = parse_one(key, v)?,
            "eval_every" => self.eval_every = parse_one(key, v)?,
            "eval_points" => self.eval_points = parse_one(key, v)?,
            "latent_mode" => self.latent_mode = LatentMode::parse(v)?,
            "shared_noise" => self.shared_noise = parse_one(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(LabError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> LabResult<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> LabResult<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(LabError::Config(format!("line {}: key `{k}` given twice", n + 1)));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            let v = match *key {
                "variant" => self.variant.name().to_string(),
                "betas" => join(&self.betas),
                "strict_betas" => self.strict_betas.to_string(),
                "arch" => self.arch.name().to_string(),
                "hidden" => join(&self.hidden),
                "resolution" => self.resolution.to_string(),
                "latent_dim" => self.latent_dim.to_string(),
                "factors" => self.factors.clone(),
                "dataset" => self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "seed" => self.seed.to_string(),
                "iterations" => self.iterations.to_string(),
                "batch" => self.batch.to_string(),
                "lr" => self.lr.to_string(),
                "adam_beta1" => self.adam_beta1.to_string(),
                "adam_beta2" => self.adam_beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "kl_warmup" => self.kl_warmup.to_string(),
                "eval_every" => self.eval_every.to_string(),
                "eval_points" => self.eval_points.to_string(),
                "latent_mode" => self.latent_mode.name().to_string(),
                "shared_noise" => self.shared_noise.to_string(),
                "out" => self.out.display().to_string(),
                _ => unreachable!("every key is serialized"),
            };
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }

    pub fn hierarchy(&self) -> LabResult<HierarchyConfig> {
        let h = if self.strict_betas {
            HierarchyConfig::new(self.betas.clone())
        } else {
            HierarchyConfig::new_non_decreasing(self.betas.clone())
        };
        Ok(h?)
    }

    pub fn factor_specs(&self) -> LabResult<Vec<FactorSpec>> {
        Ok(FactorSpec::parse_list(&self.factors)?)
    }

    pub fn model_config(&self) -> LabResult<ModelConfig> {
        let arch = ArchitectureConfig {
            kind: self.arch,
            hidden: self.hidden.clone(),
            resolution: self.resolution,
            channels: 1,
            latent_dim: self.latent_dim,
        };
        let mut mc = ModelConfig::new(self.variant, arch, self.hierarchy()?)?;
        mc.shared_noise = self.shared_noise;
        Ok(mc)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            adam: AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps },
            kl_warmup: self.kl_warmup,
        }
    }

    /// Check everything that can be checked before touching data.
    pub fn validate(&self) -> LabResult<()> {
        self.model_config()?;
        if self.dataset.is_none() {
            self.factor_specs()?;
        }
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decays must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.eval_points < 2 {
            return bad("eval_points must be at least 2");
        }
        Ok(())
    }

    /// Iterations at which metrics are computed: every `eval_every` plus the last.
    pub fn is_eval_point(&self, it: u64) -> bool {
        it == self.iterations || (self.eval_every > 0 && it.is_multiple_of(self.eval_every))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("betas", "1,10,40").unwrap();
        c.set("lr", "0.0001").unwrap();
        c.set("dataset", "/tmp/x.bin").unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("nope = 1"), Err(LabError::Config(_))));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(LabError::Config(_))));
        assert!(matches!(RunConfig::parse("seed 1"), Err(LabError::Config(_))));
    }

    #[test]
    fn rejects_bad_hierarchies() {
        let c = RunConfig::parse("betas = 40, 1").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("variant = beta_vae\nbetas = 1,40").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("betas = 1, 1\nstrict_betas = false").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# desk run\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
    }
}
