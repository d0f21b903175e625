//! Disentanglement and reconstruction metrics.
//!
//! Mutual information uses the plug-in estimator on 20-bin equal-width
//! histograms of 10,000 sampled latents. Bins span each column's sampled
//! range, so a positive rescaling of a latent leaves its bin codes and every
//! MI-based score unchanged.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is in the graph
use num_traits::Float;

use crate::data::{sample_fixed_factor_batch, FactorDataset};
use crate::error::{Error, Result};
use crate::model::{Model, ReconLoss};
use crate::tape::bce_term;
use crate::tensor::Tensor;

pub const MI_POINTS: usize = 10_000;
pub const MI_BINS: usize = 20;
pub const FACTORVAE_VOTES: usize = 800;
pub const FACTORVAE_BATCH: usize = 100;
/// Dimensions whose aggregate KL is below this are inactive for the FactorVAE metric.
pub const KL_PRUNE: f64 = 0.01;
/// Ridge penalty of the DCI regressor, on standardized variables.
pub const DCI_RIDGE: f64 = 1e-12;

const ENCODE_CHUNK: usize = 256;

/// Flat `n×d` posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub d: usize,
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Batch-mean KL to N(0, I) per dimension.
    pub fn kl_per_dim(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut kl = vec![0.0; self.d];
        for (mr, lr) in self.mean.chunks_exact(self.d).zip(self.logvar.chunks_exact(self.d)) {
            for ((k, &m), &l) in kl.iter_mut().zip(mr).zip(lr) {
                *k += 0.5 * (m * m + l.exp() - 1.0 - l);
            }
        }
        kl.iter_mut().for_each(|k| *k /= n);
        kl
    }
}

/// Anything that maps dataset rows to diagonal-Gaussian posteriors.
pub trait Representation {
    fn latent_dim(&self) -> usize;
    fn represent(&self, dataset: &FactorDataset, rows: &[usize]) -> Result<Posterior>;
}

/// One latent space of a trained model.
#[derive(Debug, Clone, Copy)]
pub struct ModelSpace<'a> {
    pub model: &'a Model,
    pub space: usize,
}

impl Representation for ModelSpace<'_> {
    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn represent(&self, dataset: &FactorDataset, rows: &[usize]) -> Result<Posterior> {
        let d = self.latent_dim();
        let mut out =
            Posterior { d, mean: Vec::with_capacity(rows.len() * d), logvar: Vec::with_capacity(rows.len() * d) };
        for chunk in rows.chunks(ENCODE_CHUNK) {
            for p in self.model.space_params(&dataset.batch(chunk), self.space)? {
                out.mean.extend_from_slice(&p.mean);
                out.logvar.extend_from_slice(&p.logvar);
            }
        }
        Ok(out)
    }
}

/// Oracle code: latent `j` carries the label index of factor `factors[j]`
/// times `scales[j]`, or is constant zero when `factors[j]` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationCode {
    pub factors: Vec<Option<usize>>,
    pub scales: Vec<f64>,
}

impl PermutationCode {
    /// Latent `j` encodes factor `j` for `j < num_factors`; the rest are zero.
    pub fn identity(num_factors: usize, d: usize) -> Self {
        PermutationCode { factors: (0..d).map(|j| (j < num_factors).then_some(j)).collect(), scales: vec![1.0; d] }
    }
}

impl Representation for PermutationCode {
    fn latent_dim(&self) -> usize {
        self.factors.len()
    }

    fn represent(&self, dataset: &FactorDataset, rows: &[usize]) -> Result<Posterior> {
        let d = self.latent_dim();
        let mut mean = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let labels = dataset.labels(r);
            for (f, s) in self.factors.iter().zip(&self.scales) {
                mean.push(match *f {
                    Some(k) => f64::from(labels[k]) * s,
                    None => 0.0,
                });
            }
        }
        Ok(Posterior { d, logvar: vec![0.0; mean.len()], mean })
    }
}

/// Oracle code independent of every factor: per-row standard-normal means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseCode {
    pub d: usize,
    pub seed: u64,
}

impl Representation for NoiseCode {
    fn latent_dim(&self) -> usize {
        self.d
    }

    fn represent(&self, _dataset: &FactorDataset, rows: &[usize]) -> Result<Posterior> {
        let streams = crate::rng::RngStreams::new(self.seed);
        let mut mean = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            // Keyed by row so a row always gets the same code.
            let mut rng = streams.stream("noise-code", r as u64);
            mean.extend((0..self.d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        Ok(Posterior { d: self.d, logvar: vec![0.0; mean.len()], mean })
    }
}

/// Whether latents are posterior means or reparameterized samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    Mean,
    Sample,
}

impl LatentMode {
    pub fn name(self) -> &'static str {
        match self {
            LatentMode::Mean => "mean",
            LatentMode::Sample => "sample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LatentMode::Mean),
            "sample" => Ok(LatentMode::Sample),
            other => Err(Error::config(format!("unknown latent mode `{other}`"))),
        }
    }
}

/// Latents of `n` dataset rows with their factor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSampleSet {
    pub n: usize,
    pub d: usize,
    /// Row-major `n×d`.
    pub z: Vec<f64>,
    /// Row-major `n×F`.
    pub labels: Vec<u32>,
    pub cardinalities: Vec<usize>,
    pub kl_per_dim: Vec<f64>,
    /// Set when `n` exceeded the dataset and rows were drawn with replacement.
    pub with_replacement: bool,
}

impl LatentSampleSet {
    pub fn num_factors(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn latent_column(&self, j: usize) -> Vec<f64> {
        self.z.iter().skip(j).step_by(self.d).copied().collect()
    }

    pub fn label_column(&self, k: usize) -> Vec<u32> {
        self.labels.iter().skip(k).step_by(self.num_factors()).copied().collect()
    }

    /// Multiply latent column `j` by `scales[j]`.
    pub fn scaled(&self, scales: &[f64]) -> Self {
        let mut out = self.clone();
        for row in out.z.chunks_exact_mut(self.d) {
            for (v, s) in row.iter_mut().zip(scales) {
                *v *= s;
            }
        }
        out
    }
}

/// Rows to evaluate: `n` distinct rows, or `n` rows with replacement when the
/// dataset is smaller (second value `true`).
pub fn sample_rows<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<(Vec<usize>, bool)> {
    if len == 0 {
        return Err(Error::data("empty dataset"));
    }
    if n <= len {
        Ok((rand::seq::index::sample(rng, len, n).into_vec(), false))
    } else {
        Ok(((0..n).map(|_| rng.random_range(0..len)).collect(), true))
    }
}

pub fn collect_latents<R: Rng + ?Sized>(
    rep: &dyn Representation,
    dataset: &FactorDataset,
    n: usize,
    mode: LatentMode,
    rng: &mut R,
) -> Result<LatentSampleSet> {
    let (rows, with_replacement) = sample_rows(dataset.len(), n, rng)?;
    let post = rep.represent(dataset, &rows)?;
    let z = match mode {
        LatentMode::Mean => post.mean.clone(),
        LatentMode::Sample => post
            .mean
            .iter()
            .zip(&post.logvar)
            .map(|(&m, &l)| m + (0.5 * l).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let labels = rows.iter().flat_map(|&r| dataset.labels(r).iter().copied()).collect();
    Ok(LatentSampleSet {
        n,
        d: post.d,
        z,
        labels,
        cardinalities: dataset.space().cardinalities(),
        kl_per_dim: post.kl_per_dim(),
        with_replacement,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discretized {
    pub codes: Vec<u32>,
    /// The column was constant; every value sits in bin 0.
    pub degenerate: bool,
}

/// Equal-width binning over the column's `[min, max]`; the maximum lands in the last bin.
pub fn discretize(column: &[f64], bins: usize) -> Result<Discretized> {
    if column.len() < 2 {
        return Err(Error::usage("discretize needs at least two values"));
    }
    if bins == 0 {
        return Err(Error::usage("discretize needs at least one bin"));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("discretize"));
    }
    let (lo, hi) = column.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Ok(Discretized { codes: vec![0; column.len()], degenerate: true });
    }
    let width = hi - lo;
    let last = (bins - 1) as u32;
    let codes = column
        .iter()
        .map(|&v| {
            let b = ((v - lo) / width * bins as f64).floor();
            (b as u32).min(last)
        })
        .collect();
    Ok(Discretized { codes, degenerate: false })
}

/// Map arbitrary codes to `0..k`, preserving order.
fn densify(a: &[u32]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<u32> = a.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let map: BTreeMap<u32, usize> = uniq.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (a.iter().map(|v| map[v]).collect(), uniq.len())
}

fn entropy_of_counts(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in entropy in nats.
pub fn entropy(a: &[u32]) -> f64 {
    let (codes, k) = densify(a);
    let mut counts = vec![0usize; k];
    codes.iter().for_each(|&c| counts[c] += 1);
    entropy_of_counts(&counts, a.len())
}

/// Plug-in mutual information in nats, clamped to `[0, min(H(a), H(b))]`.
pub fn mutual_info_discrete(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::usage("mutual information of empty vectors"));
    }
    // A fixed argument order makes the result exactly symmetric.
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let n = a.len();
    let (ca, ka) = densify(a);
    let (cb, kb) = densify(b);
    let mut joint = vec![0usize; ka * kb];
    let mut na = vec![0usize; ka];
    let mut nb = vec![0usize; kb];
    for (&i, &j) in ca.iter().zip(&cb) {
        joint[i * kb + j] += 1;
        na[i] += 1;
        nb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = joint[i * kb + j];
            if c > 0 {
                let ratio = (c as f64 * nf) / (na[i] as f64 * nb[j] as f64);
                mi += c as f64 / nf * ratio.ln();
            }
        }
    }
    let cap = entropy_of_counts(&na, n).min(entropy_of_counts(&nb, n));
    Ok(mi.max(0.0).min(cap))
}

/// MI of every latent (binned) with every factor, plus factor entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct MiTable {
    /// `mi[j][k]` in nats.
    pub mi: Vec<Vec<f64>>,
    pub factor_entropy: Vec<f64>,
    pub degenerate_dims: Vec<usize>,
}

pub fn mi_table(samples: &LatentSampleSet, bins: usize) -> Result<MiTable> {
    let factors: Vec<Vec<u32>> = (0..samples.num_factors()).map(|k| samples.label_column(k)).collect();
    let factor_entropy = factors.iter().map(|c| entropy(c)).collect();
    let mut mi = Vec::with_capacity(samples.d);
    let mut degenerate_dims = Vec::new();
    for j in 0..samples.d {
        let disc = discretize(&samples.latent_column(j), bins)?;
        if disc.degenerate {
            degenerate_dims.push(j);
            mi.push(vec![0.0; factors.len()]);
            continue;
        }
        mi.push(factors.iter().map(|c| mutual_info_discrete(&disc.codes, c)).collect::<Result<_>>()?);
    }
    Ok(MiTable { mi, factor_entropy, degenerate_dims })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigScore {
    pub score: f64,
    /// Per-factor normalized gap; `None` for factors with zero entropy.
    pub per_factor: Vec<Option<f64>>,
}

pub fn mig_from_table(t: &MiTable) -> Result<MigScore> {
    let per_factor: Vec<Option<f64>> = t
        .factor_entropy
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            if h <= 0.0 {
                return None;
            }
            let (mut first, mut second) = (0.0f64, 0.0f64);
            for row in &t.mi {
                let v = row[k];
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            Some(((first - second) / h).clamp(0.0, 1.0))
        })
        .collect();
    let used: Vec<f64> = per_factor.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::MetricUndefined(String::from("every factor is constant")));
    }
    Ok(MigScore { score: used.iter().sum::<f64>() / used.len() as f64, per_factor })
}

pub fn mig(samples: &LatentSampleSet) -> Result<MigScore> {
    mig_from_table(&mi_table(samples, MI_BINS)?)
}

/// `NMI[j][k] = I(z_j; c_k) / H(c_k)`, zero for constant factors.
pub fn nmi_from_table(t: &MiTable) -> Vec<Vec<f64>> {
    t.mi.iter()
        .map(|row| {
            row.iter()
                .zip(&t.factor_entropy)
                .map(|(&i, &h)| if h > 0.0 { (i / h).clamp(0.0, 1.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmiTrack {
    pub matrix: Vec<Vec<f64>>,
    /// Dimension with the largest aggregate KL (lowest index on ties).
    pub top_dim: usize,
    pub top_row: Vec<f64>,
}

pub fn nmi_track(samples: &LatentSampleSet) -> Result<NmiTrack> {
    let matrix = nmi_from_table(&mi_table(samples, MI_BINS)?);
    Ok(track_from_matrix(matrix, &samples.kl_per_dim))
}

fn track_from_matrix(matrix: Vec<Vec<f64>>, kl: &[f64]) -> NmiTrack {
    let top_dim = kl.iter().enumerate().fold(0, |best, (j, &v)| if v > kl[best] { j } else { best });
    let top_row = matrix.get(top_dim).cloned().unwrap_or_default();
    NmiTrack { matrix, top_dim, top_row }
}

fn standardize(col: &mut [f64]) -> bool {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        col.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let sd = var.sqrt();
    col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct DciScore {
    pub score: f64,
    /// `importance[j][k]` = |ridge coefficient| of latent `j` for factor `k`.
    pub importance: Vec<Vec<f64>>,
    /// Per-latent disentanglement, `None` for all-zero importance rows.
    pub per_dim: Vec<Option<f64>>,
}

/// DCI disentanglement with a ridge regressor on standardized latents and factors.
pub fn dci_disentanglement(samples: &LatentSampleSet) -> Result<DciScore> {
    let (n, d) = (samples.n, samples.d);
    if n < 2 {
        return Err(Error::usage("DCI needs at least two samples"));
    }
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| samples.latent_column(j)).collect();
    let active: Vec<bool> = cols.iter_mut().map(|c| standardize(c)).collect();
    let mut targets = Vec::new();
    for k in 0..samples.num_factors() {
        let mut y: Vec<f64> = samples.label_column(k).iter().map(|&v| f64::from(v)).collect();
        if standardize(&mut y) {
            targets.push(y);
        }
    }
    let f = targets.len();
    if f < 2 {
        return Err(Error::MetricUndefined(String::from("DCI needs at least two non-constant factors")));
    }
    let nf = n as f64;
    let mut gram = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let v = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum::<f64>() / nf;
            gram[a * d + b] = v;
            gram[b * d + a] = v;
        }
        gram[a * d + a] += DCI_RIDGE;
    }
    let mut importance = vec![vec![0.0; f]; d];
    for (k, y) in targets.iter().enumerate() {
        let rhs: Vec<f64> = cols.iter().map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / nf).collect();
        let w = crate::linalg::solve_spd(&gram, &rhs, d).ok_or_else(|| Error::numerical("dci ridge solve"))?;
        for j in 0..d {
            importance[j][k] = if active[j] { w[j].abs() } else { 0.0 };
        }
    }
    let total: f64 = importance.iter().flatten().sum();
    if total <= 0.0 {
        return Err(Error::MetricUndefined(String::from("all importances are zero")));
    }
    let log_f = (f as f64).ln();
    let mut score = 0.0;
    let per_dim = importance
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return None;
            }
            let h: f64 = row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / s;
                    -p * p.ln()
                })
                .sum::<f64>()
                / log_f;
            let dj = (1.0 - h).clamp(0.0, 1.0);
            score += s / total * dj;
            Some(dj)
        })
        .collect();
    Ok(DciScore { score: score.clamp(0.0, 1.0), importance, per_dim })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorVaeScore {
    pub accuracy: f64,
    pub active_dims: Vec<usize>,
    /// Factors skipped because they are constant in the dataset.
    pub skipped_factors: Vec<usize>,
    pub votes: usize,
}

/// Majority-vote accuracy of predicting the fixed factor from the
/// lowest-variance (globally normalized) active latent dimension.
pub fn factorvae_metric<R: Rng + ?Sized>(
    rep: &dyn Representation,
    dataset: &FactorDataset,
    votes: usize,
    l: usize,
    rng: &mut R,
) -> Result<FactorVaeScore> {
    if votes == 0 {
        return Err(Error::usage("factorvae metric needs at least one vote"));
    }
    let d = rep.latent_dim();
    let (rows, _) = sample_rows(dataset.len(), dataset.len().min(MI_POINTS), rng)?;
    let global = rep.represent(dataset, &rows)?;
    let kl = global.kl_per_dim();
    let n = global.len() as f64;
    let mut global_sd = vec![0.0; d];
    for (j, sd) in global_sd.iter_mut().enumerate() {
        let col: Vec<f64> = global.mean.iter().skip(j).step_by(d).copied().collect();
        let m = col.iter().sum::<f64>() / n;
        *sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    }
    let active_dims: Vec<usize> = (0..d).filter(|&j| kl[j] >= KL_PRUNE && global_sd[j] > 0.0).collect();
    if active_dims.is_empty() {
        return Err(Error::MetricUndefined(String::from("every latent dimension is pruned")));
    }
    let cards = dataset.space().cardinalities();
    let usable: Vec<usize> = (0..cards.len()).filter(|&k| cards[k] >= 2).collect();
    let skipped_factors = (0..cards.len()).filter(|&k| cards[k] < 2).collect();
    if usable.is_empty() {
        return Err(Error::MetricUndefined(String::from("every factor is constant")));
    }
    let mut counts = vec![vec![0usize; cards.len()]; d];
    for _ in 0..votes {
        let k = usable[rng.random_range(0..usable.len())];
        let batch = sample_fixed_factor_batch(dataset.space(), k, l, rng)?;
        let post = rep.represent(dataset, &batch)?;
        let lf = l as f64;
        let mut best = (f64::INFINITY, active_dims[0]);
        for &j in &active_dims {
            let col = post.mean.iter().skip(j).step_by(d).map(|v| v / global_sd[j]);
            let (s, s2) = col.fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
            let mean = s / lf;
            let var = (s2 / lf - mean * mean).max(0.0);
            if var < best.0 {
                best = (var, j);
            }
        }
        counts[best.1][k] += 1;
    }
    let correct: usize = counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(FactorVaeScore { accuracy: correct as f64 / votes as f64, active_dims, skipped_factors, votes })
}

/// Mean per-image pixel-summed reconstruction loss, decoding the posterior
/// mean of `space`.
pub fn reconstruction_error(model: &Model, dataset: &FactorDataset, space: usize, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::usage("reconstruction error over zero rows"));
    }
    let d = model.latent_dim();
    let mut total = 0.0;
    for chunk in rows.chunks(ENCODE_CHUNK) {
        let x = dataset.batch(chunk);
        let params = model.space_params(&x, space)?;
        let z: Vec<f64> = params.iter().flat_map(|p| p.mean.iter().copied()).collect();
        let out = model.decode(&Tensor::new(vec![chunk.len(), d], z)?, space)?;
        total += match model.config().recon_loss {
            ReconLoss::Bernoulli => out.data().iter().zip(x.data()).map(|(&l, &t)| bce_term(l, t)).sum::<f64>(),
            ReconLoss::Gaussian => out.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        };
    }
    let v = total / rows.len() as f64;
    if !v.is_finite() {
        return Err(Error::numerical("reconstruction error"));
    }
    Ok(v)
}

/// Evaluation knobs; defaults are the artifact constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub points: usize,
    pub mode: LatentMode,
    pub votes: usize,
    pub batch: usize,
    pub recon_points: usize,
    pub factorvae: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            points: MI_POINTS,
            mode: LatentMode::Mean,
            votes: FACTORVAE_VOTES,
            batch: FACTORVAE_BATCH,
            recon_points: 1000,
            factorvae: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceReport {
    pub space: usize,
    pub mig: f64,
    pub dci: Option<f64>,
    pub factor_vae: Option<f64>,
    pub recon_error: f64,
    pub kl_per_dim: Vec<f64>,
    pub nmi: Vec<Vec<f64>>,
    pub top_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub spaces: Vec<SpaceReport>,
    pub with_replacement: bool,
    /// Notes on estimator choices (encoding mode, regressor, warnings).
    pub notes: Vec<String>,
}

/// Evaluate every space of `model`. Each space sees the same rows and the same
/// vote batches so per-space differences come from the representation alone.
pub fn evaluate(model: &Model, dataset: &FactorDataset, cfg: &EvalConfig, seed: u64) -> Result<MetricsReport> {
    let streams = crate::rng::RngStreams::new(seed);
    let mut notes = vec![
        format!("latents: posterior {}", cfg.mode.name()),
        format!("mi: plug-in, {MI_BINS} equal-width bins over the sampled range, {} points", cfg.points),
        format!("dci: ridge regression (lambda {DCI_RIDGE:e}) on standardized latents and factors"),
    ];
    let mut spaces = Vec::with_capacity(model.spaces());
    let mut with_replacement = false;
    for space in 0..model.spaces() {
        let rep = ModelSpace { model, space };
        let set = collect_latents(&rep, dataset, cfg.points, cfg.mode, &mut streams.stream("eval-rows", 0))?;
        with_replacement |= set.with_replacement;
        let table = mi_table(&set, MI_BINS)?;
        let mig = mig_from_table(&table)?.score;
        let dci = match dci_disentanglement(&set) {
            Ok(s) => Some(s.score),
            Err(Error::MetricUndefined(why)) => {
                notes.push(format!("space {space}: dci undefined: {why}"));
                None
            }
            Err(e) => return Err(e),
        };
        let factor_vae = if cfg.factorvae {
            match factorvae_metric(&rep, dataset, cfg.votes, cfg.batch, &mut streams.stream("eval-votes", 0)) {
                Ok(s) => Some(s.accuracy),
                Err(Error::MetricUndefined(why)) => {
                    notes.push(format!("space {space}: factorvae undefined: {why}"));
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let (rows, _) =
            sample_rows(dataset.len(), cfg.recon_points.min(dataset.len()), &mut streams.stream("eval-recon", 0))?;
        let recon_error = reconstruction_error(model, dataset, space, &rows)?;
        let track = track_from_matrix(nmi_from_table(&table), &set.kl_per_dim);
        spaces.push(SpaceReport {
            space,
            mig,
            dci,
            factor_vae,
            recon_error,
            kl_per_dim: set.kl_per_dim,
            nmi: track.matrix,
            top_dim: track.top_dim,
        });
    }
    if with_replacement {
        notes.push(String::from("dataset smaller than the point count: rows drawn with replacement"));
    }
    Ok(MetricsReport { spaces, with_replacement, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, FactorKind, FactorSpec};
    use crate::rng::RngStreams;

    fn grid_dataset(cards: &[(FactorKind, usize)]) -> FactorDataset {
        let specs: Vec<FactorSpec> = cards.iter().map(|&(k, n)| FactorSpec::with_cardinality(k, n).unwrap()).collect();
        generate_dataset(&specs, 16, 0).unwrap()
    }

    #[test]
    fn discretize_examples() {
        let grid: Vec<f64> = (0..20).map(f64::from).collect();
        let d = discretize(&grid, 20).unwrap();
        assert_eq!(d.codes, (0..20).collect::<Vec<u32>>());
        assert!(!d.degenerate);
        let c = discretize(&[3.0; 5], 20).unwrap();
        assert!(c.degenerate && c.codes.iter().all(|&v| v == 0));
        assert!(discretize(&[1.0], 20).is_err());
    }

    #[test]
    fn mi_examples() {
        let a: Vec<u32> = (0..1000).map(|i| i % 8).collect();
        let i = mutual_info_discrete(&a, &a).unwrap();
        assert!((i - 8f64.ln()).abs() < 1e-12);
        let b: Vec<u32> = (0..1000).map(|i| (i / 8) % 5).collect();
        let ab = mutual_info_discrete(&a, &b).unwrap();
        assert_eq!(ab.to_bits(), mutual_info_discrete(&b, &a).unwrap().to_bits());
        assert!(mutual_info_discrete(&a, &b[..10]).is_err());
    }

    #[test]
    fn entropy_uniform() {
        let a: Vec<u32> = (0..600).map(|i| i % 6).collect();
        assert!((entropy(&a) - 6f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[4, 4, 4]), 0.0);
    }

    #[test]
    fn permutation_code_scores_are_perfect() {
        let ds = grid_dataset(&[(FactorKind::PosX, 6), (FactorKind::PosY, 6), (FactorKind::Scale, 3)]);
        let code = PermutationCode { factors: vec![Some(2), None, Some(0), Some(1)], scales: vec![1.0; 4] };
        let set =
            collect_latents(&code, &ds, ds.len(), LatentMode::Mean, &mut RngStreams::new(1).stream("r", 0)).unwrap();
        assert!(mig(&set).unwrap().score > 0.999);
        assert!((dci_disentanglement(&set).unwrap().score - 1.0).abs() < 1e-9);
        let fv = factorvae_metric(&code, &ds, 60, 20, &mut RngStreams::new(2).stream("v", 0)).unwrap();
        assert_eq!(fv.accuracy, 1.0);
        assert_eq!(fv.active_dims, vec![0, 2, 3]);
    }

    #[test]
    fn constant_representation_is_undefined_for_factorvae() {
        let ds = grid_dataset(&[(FactorKind::PosX, 4), (FactorKind::PosY, 4)]);
        let code = PermutationCode { factors: vec![None; 3], scales: vec![1.0; 3] };
        let r = factorvae_metric(&code, &ds, 10, 5, &mut RngStreams::new(2).stream("v", 0));
        assert!(matches!(r, Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn nmi_identity_is_one() {
        let ds = grid_dataset(&[(FactorKind::PosX, 5), (FactorKind::PosY, 7)]);
        let code = PermutationCode::identity(2, 2);
        let set =
            collect_latents(&code, &ds, ds.len(), LatentMode::Mean, &mut RngStreams::new(1).stream("r", 0)).unwrap();
        let t = nmi_track(&set).unwrap();
        assert!((t.matrix[0][0] - 1.0).abs() < 1e-12);
        assert!((t.matrix[1][1] - 1.0).abs() < 1e-12);
        assert!(t.matrix[0][1].abs() < 1e-12);
        // Dimension 1 carries larger label values, hence larger KL.
        assert_eq!(t.top_dim, 1);
    }

    #[test]
    fn sampling_flags_replacement() {
        let mut rng = RngStreams::new(3).stream("r", 0);
        let (rows, rep) = sample_rows(10, 25, &mut rng).unwrap();
        assert!(rep && rows.len() == 25 && rows.iter().all(|&r| r < 10));
        let (rows, rep) = sample_rows(10, 10, &mut rng).unwrap();
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        assert!(!rep && sorted == (0..10).collect::<Vec<_>>());
    }
}
