//! Diagonal-Gaussian latent spaces and the transforms that connect them.
//!
//! Space 0 is produced by the encoder. Space `i+1` is obtained from space `i`
//! by a positive diagonal rescaling of the mean and of the standard deviation,
//! `μ' = e^{w¹}⊙μ` and `σ' = e^{w²}⊙σ`. Standard deviations are stored as
//! log-variances, so the σ-scaling becomes `logvar' = logvar + 2·w²`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is in the graph
use num_traits::Float;

use crate::error::{Error, Result};

/// Default latent width.
pub const LATENT_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::usage(format!("mean has {} entries, logvar {}", mean.len(), logvar.len())));
        }
        if !logvar.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("logvar"));
        }
        Ok(GaussianParams { mean, logvar })
    }

    /// The unit normal prior in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        GaussianParams { mean: vec![0.0; d], logvar: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.logvar.iter().map(|l| (0.5 * l).exp()).collect()
    }
}

/// Learnable log-scales between consecutive spaces: `w1[i]` scales means and
/// `w2[i]` standard deviations on the transition `i → i+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiTChain {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

impl DiTChain {
    /// All-zero log-scales: every space coincides with space 0.
    pub fn identity(spaces: usize, d: usize) -> Self {
        let n = spaces.saturating_sub(1);
        DiTChain { w1: vec![vec![0.0; d]; n], w2: vec![vec![0.0; d]; n] }
    }

    pub fn new(w1: Vec<Vec<f64>>, w2: Vec<Vec<f64>>) -> Result<Self> {
        if w1.len() != w2.len() {
            return Err(Error::usage("w1 and w2 must have one entry per transition"));
        }
        let d = w1.first().map_or(0, Vec::len);
        if w1.iter().chain(&w2).any(|w| w.len() != d) {
            return Err(Error::usage("all log-scale vectors must share one length"));
        }
        if w1.iter().chain(&w2).flatten().any(|v| !v.is_finite()) {
            return Err(Error::numerical("dit log-scale"));
        }
        Ok(DiTChain { w1, w2 })
    }

    pub fn transitions(&self) -> usize {
        self.w1.len()
    }

    /// Number of spaces this chain connects.
    pub fn spaces(&self) -> usize {
        self.w1.len() + 1
    }

    /// `(Σ_{j<i} w1_j, Σ_{j<i} w2_j)`.
    pub fn cumulative(&self, i: usize, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if i > self.transitions() {
            return Err(Error::usage(format!("space index {i} out of range for {} spaces", self.spaces())));
        }
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        for (a, b) in self.w1[..i].iter().zip(&self.w2[..i]) {
            if a.len() != d {
                return Err(Error::usage(format!("log-scale width {} vs latent width {d}", a.len())));
            }
            for k in 0..d {
                s1[k] += a[k];
                s2[k] += b[k];
            }
        }
        Ok((s1, s2))
    }
}

/// Number of spaces and the KL pressure on each.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    betas: Vec<f64>,
}

impl HierarchyConfig {
    /// Strictly increasing pressures, as required of a decremental bottleneck.
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        Self::check_common(&betas)?;
        if let Some(w) = betas.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::config(format!("betas must be strictly increasing, got {} then {}", w[0], w[1])));
        }
        Ok(HierarchyConfig { betas })
    }

    /// Non-decreasing pressures. Sweeps that tie two spaces (the β-VAE
    /// diagonal of a pressure sweep) go through here.
    pub fn new_non_decreasing(betas: Vec<f64>) -> Result<Self> {
        Self::check_common(&betas)?;
        if let Some(w) = betas.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::config(format!("betas must not decrease, got {} then {}", w[0], w[1])));
        }
        Ok(HierarchyConfig { betas })
    }

    fn check_common(betas: &[f64]) -> Result<()> {
        if betas.is_empty() {
            return Err(Error::config("at least one latent space is required"));
        }
        if betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::config(format!("betas must be finite and non-negative: {betas:?}")));
        }
        Ok(())
    }

    pub fn spaces(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig { betas: vec![1.0, 40.0] }
    }
}

/// `z = μ + exp(logvar/2) ⊙ ε`.
pub fn reparameterize(params: &GaussianParams, noise: &[f64]) -> Vec<f64> {
    params.mean.iter().zip(&params.logvar).zip(noise).map(|((m, l), e)| m + (0.5 * l).exp() * e).collect()
}

/// One transition of the chain.
pub fn dit_apply(params: &GaussianParams, w1: &[f64], w2: &[f64]) -> GaussianParams {
    GaussianParams {
        mean: params.mean.iter().zip(w1).map(|(m, w)| w.exp() * m).collect(),
        logvar: params.logvar.iter().zip(w2).map(|(l, w)| l + 2.0 * w).collect(),
    }
}

/// Parameters of space `i` from space 0 and the cumulative log-scales.
pub fn cascade_params(params0: &GaussianParams, chain: &DiTChain, i: usize) -> Result<GaussianParams> {
    let (s1, s2) = chain.cumulative(i, params0.dim())?;
    Ok(dit_apply(params0, &s1, &s2))
}

/// KL divergence to the unit normal prior, per dimension and summed.
#[derive(Debug, Clone, PartialEq)]
pub struct KlTerms {
    pub per_dim: Vec<f64>,
    pub total: f64,
}

/// `½(μ² + σ² − 1 − ln σ²)` per dimension.
pub fn kl_standard(params: &GaussianParams) -> KlTerms {
    let per_dim: Vec<f64> =
        params.mean.iter().zip(&params.logvar).map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l)).collect();
    let total = per_dim.iter().sum();
    KlTerms { per_dim, total }
}

/// [`kl_standard`] averaged over a batch of samples.
pub fn kl_batch(batch: &[GaussianParams]) -> KlTerms {
    let d = batch.first().map_or(0, GaussianParams::dim);
    let mut per_dim = vec![0.0; d];
    for p in batch {
        for (acc, v) in per_dim.iter_mut().zip(kl_standard(p).per_dim) {
            *acc += v;
        }
    }
    let n = batch.len().max(1) as f64;
    per_dim.iter_mut().for_each(|v| *v /= n);
    let total = per_dim.iter().sum();
    KlTerms { per_dim, total }
}

/// KL of space `i` written directly in space-0 parameters and the summed
/// log-scales, without materializing the space-`i` Gaussian:
///
/// `½ Σ_d ( e^{2S¹}μ₀² + e^{2S²}σ₀² − 1 − 2S² − 2 ln σ₀ )`, with `S = Σ_{j<i} w_j`.
///
/// Returned with the non-negative sign.
pub fn kl_chain(params0: &GaussianParams, chain: &DiTChain, i: usize) -> Result<f64> {
    let (s1, s2) = chain.cumulative(i, params0.dim())?;
    let mut total = 0.0;
    for k in 0..params0.dim() {
        let mu0 = params0.mean[k];
        let log_sigma0 = 0.5 * params0.logvar[k];
        let sigma0 = log_sigma0.exp();
        total += 0.5
            * ((2.0 * s1[k]).exp() * mu0 * mu0 + (2.0 * s2[k]).exp() * sigma0 * sigma0
                - 1.0
                - 2.0 * s2[k]
                - 2.0 * log_sigma0);
    }
    Ok(total)
}

/// Minimized objective: `Σ recon_i + Σ β_i·KL_i`.
pub fn devae_loss(recon_terms: &[f64], kl_terms: &[f64], betas: &[f64]) -> Result<f64> {
    if recon_terms.len() != kl_terms.len() || kl_terms.len() != betas.len() {
        return Err(Error::usage(format!(
            "devae_loss: {} recon, {} kl, {} betas",
            recon_terms.len(),
            kl_terms.len(),
            betas.len()
        )));
    }
    let recon: f64 = recon_terms.iter().sum();
    let kl: f64 = kl_terms.iter().zip(betas).map(|(k, b)| b * k).sum();
    Ok(recon + kl)
}

/// Pearson correlation matrix of the columns of an `n×d` sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub d: usize,
    /// Row-major `d×d`.
    pub matrix: Vec<f64>,
    /// Columns with zero variance; their rows and columns are reported as 0.
    pub degenerate: Vec<bool>,
}

impl Correlation {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.d + j]
    }
}

pub fn correlation_matrix(z: &[f64], n: usize, d: usize) -> Result<Correlation> {
    if n < 2 {
        return Err(Error::usage("correlation needs at least two samples"));
    }
    if z.len() != n * d {
        return Err(Error::usage(format!("{} values do not form a {n}×{d} matrix", z.len())));
    }
    let col = |j: usize| z.iter().skip(j).step_by(d).copied();
    let mut centered = vec![0.0; n * d];
    let mut degenerate = vec![false; d];
    for j in 0..d {
        let (lo, hi) = col(j).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        degenerate[j] = lo == hi;
        let mean = col(j).sum::<f64>() / n as f64;
        for (r, v) in col(j).enumerate() {
            centered[r * d + j] = v - mean;
        }
    }
    let mut cov = vec![0.0; d * d];
    for row in centered.chunks_exact(d) {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    let mut matrix = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let r = if degenerate[i] || degenerate[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                cov[i * d + j] / (cov[i * d + i] * cov[j * d + j]).sqrt()
            };
            matrix[i * d + j] = r;
            matrix[j * d + i] = r;
        }
    }
    Ok(Correlation { d, matrix, degenerate })
}
