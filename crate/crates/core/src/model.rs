//! Encoder/decoder assembly and the per-batch objective for every variant.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is in the graph
use num_traits::Float;

use crate::error::{Error, Result};
use crate::latent::{DiTChain, GaussianParams, HierarchyConfig, LATENT_DIM};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// The 64×64 convolutional stack: four stride-2 4×4 convolutions, FC 256, FC 2d.
    Conv,
    /// Fully connected layers on flattened pixels.
    Mlp,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Conv => "conv",
            EncoderKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(EncoderKind::Conv),
            "mlp" => Ok(EncoderKind::Mlp),
            other => Err(Error::config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub kind: EncoderKind,
    /// Hidden widths of the mlp encoder; the decoder mirrors them. Ignored by `conv`.
    pub hidden: Vec<usize>,
    pub resolution: usize,
    pub channels: usize,
    pub latent_dim: usize,
}

impl ArchitectureConfig {
    pub fn conv(channels: usize) -> Self {
        ArchitectureConfig { kind: EncoderKind::Conv, hidden: vec![], resolution: 64, channels, latent_dim: LATENT_DIM }
    }

    pub fn mlp(resolution: usize, hidden: Vec<usize>) -> Self {
        ArchitectureConfig { kind: EncoderKind::Mlp, hidden, resolution, channels: 1, latent_dim: LATENT_DIM }
    }

    /// Desk default: 16×16 binary input, two hidden layers of 64.
    pub fn desk() -> Self {
        Self::mlp(16, vec![64, 64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.channels == 0 {
            return Err(Error::config("latent_dim and channels must be positive"));
        }
        match self.kind {
            EncoderKind::Conv if self.resolution != 64 => {
                Err(Error::config(format!("conv architecture needs 64×64 input, got {}", self.resolution)))
            }
            EncoderKind::Mlp if self.resolution < 8 => Err(Error::config("mlp architecture needs resolution ≥ 8")),
            EncoderKind::Mlp if self.hidden.contains(&0) => Err(Error::config("hidden widths must be positive")),
            _ => Ok(()),
        }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.resolution * self.resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// One space; the plain β-weighted objective.
    BetaVAE,
    /// K independent encoders of identical architecture, no transform between spaces.
    MultiSpace,
    /// Hierarchy whose transitions are full matrices on means and log-variances.
    HiSLinear,
    /// Hierarchy connected by positive diagonal rescaling.
    DeVAE,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] =
        [ModelVariant::BetaVAE, ModelVariant::MultiSpace, ModelVariant::HiSLinear, ModelVariant::DeVAE];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::BetaVAE => "beta_vae",
            ModelVariant::MultiSpace => "multi_space",
            ModelVariant::HiSLinear => "his_linear",
            ModelVariant::DeVAE => "devae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }

    pub fn check_spaces(self, k: usize) -> Result<()> {
        match (self, k) {
            (ModelVariant::BetaVAE, 1) => Ok(()),
            (ModelVariant::BetaVAE, _) => Err(Error::config("beta_vae takes exactly one beta")),
            // A one-space DeVAE is the β-VAE special case.
            (ModelVariant::DeVAE, k) if k >= 1 => Ok(()),
            (_, k) if k >= 2 => Ok(()),
            (v, _) => Err(Error::config(format!("{} needs at least two spaces", v.name()))),
        }
    }
}

/// Reconstruction likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconLoss {
    /// Binary cross-entropy on logits (binary images).
    Bernoulli,
    /// Squared error on linear outputs (RGB images).
    Gaussian,
}

/// One-hot space index fed to the shared decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceIndicator {
    pub index: usize,
    pub spaces: usize,
}

impl SpaceIndicator {
    pub fn new(index: usize, spaces: usize) -> Result<Self> {
        if index >= spaces {
            return Err(Error::usage(format!("space {index} out of range for {spaces} spaces")));
        }
        Ok(SpaceIndicator { index, spaces })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.spaces];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub arch: ArchitectureConfig,
    pub hierarchy: HierarchyConfig,
    pub recon_loss: ReconLoss,
    /// Reuse one noise draw for every space instead of independent draws.
    pub shared_noise: bool,
}

impl ModelConfig {
    pub fn new(variant: ModelVariant, arch: ArchitectureConfig, hierarchy: HierarchyConfig) -> Result<Self> {
        let c = ModelConfig { variant, arch, hierarchy, recon_loss: ReconLoss::Bernoulli, shared_noise: false };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.variant.check_spaces(self.hierarchy.spaces())
    }

    pub fn spaces(&self) -> usize {
        self.hierarchy.spaces()
    }

    /// The space indicator is only concatenated when there is more than one space.
    fn indicator_width(&self) -> usize {
        if self.spaces() > 1 {
            self.spaces()
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Affine { w: usize, b: usize },
    Conv { k: usize, b: usize },
    Deconv { k: usize, b: usize },
    Relu,
    Flatten,
    Unflatten([usize; 3]),
}

#[derive(Debug, Clone, PartialEq)]
struct Network {
    layers: Vec<Layer>,
}

impl Network {
    fn run(&self, tape: &mut Tape, vars: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = match *layer {
                Layer::Affine { w, b } => tape.affine(x, vars[w], vars[b])?,
                Layer::Conv { k, b } => tape.conv2d(x, vars[k], vars[b], 2, 1)?,
                Layer::Deconv { k, b } => tape.deconv2d(x, vars[k], vars[b], 2, 1)?,
                Layer::Relu => tape.relu(x)?,
                Layer::Flatten => {
                    let s = tape.value(x).shape();
                    let (b, rest) = (s[0], s[1..].iter().product::<usize>());
                    tape.reshape(x, &[b, rest])?
                }
                Layer::Unflatten([c, h, w]) => {
                    let b = tape.value(x).shape()[0];
                    tape.reshape(x, &[b, c, h, w])?
                }
            };
        }
        Ok(x)
    }
}

/// Transition parameters between consecutive spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Transition {
    /// Indices of the `w1`, `w2` log-scale vectors.
    Diagonal { w1: usize, w2: usize },
    /// Indices of the `M1`, `M2` matrices.
    Linear { m1: usize, m2: usize },
}

/// Builds the parameter list in a fixed order.
struct ParamBuilder<'r, R: Rng + ?Sized> {
    params: Vec<Tensor>,
    names: Vec<String>,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> ParamBuilder<'_, R> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.params.len() - 1
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    fn affine(&mut self, prefix: &str, inp: usize, out: usize) -> Layer {
        let w = self.uniform(format!("{prefix}.w"), &[inp, out], inp);
        let b = self.push(format!("{prefix}.b"), Tensor::zeros(&[out]));
        Layer::Affine { w, b }
    }

    fn conv(&mut self, prefix: &str, inp: usize, out: usize) -> Layer {
        let k = self.uniform(format!("{prefix}.k"), &[out, inp, 4, 4], inp * 16);
        let b = self.push(format!("{prefix}.b"), Tensor::zeros(&[out]));
        Layer::Conv { k, b }
    }

    fn deconv(&mut self, prefix: &str, inp: usize, out: usize) -> Layer {
        let k = self.uniform(format!("{prefix}.k"), &[inp, out, 4, 4], inp * 16);
        let b = self.push(format!("{prefix}.b"), Tensor::zeros(&[out]));
        Layer::Deconv { k, b }
    }
}

fn encoder<R: Rng + ?Sized>(pb: &mut ParamBuilder<'_, R>, arch: &ArchitectureConfig, prefix: &str) -> Network {
    let d2 = 2 * arch.latent_dim;
    let mut layers = Vec::new();
    match arch.kind {
        EncoderKind::Conv => {
            let chans = [arch.channels, 32, 32, 64, 64];
            for (i, w) in chans.windows(2).enumerate() {
                layers.push(pb.conv(&format!("{prefix}.conv{i}"), w[0], w[1]));
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Flatten);
            layers.push(pb.affine(&format!("{prefix}.fc0"), 64 * 4 * 4, 256));
            layers.push(Layer::Relu);
            layers.push(pb.affine(&format!("{prefix}.head"), 256, d2));
        }
        EncoderKind::Mlp => {
            layers.push(Layer::Flatten);
            let mut width = arch.pixels();
            for (i, &h) in arch.hidden.iter().enumerate() {
                layers.push(pb.affine(&format!("{prefix}.fc{i}"), width, h));
                layers.push(Layer::Relu);
                width = h;
            }
            layers.push(pb.affine(&format!("{prefix}.head"), width, d2));
        }
    }
    Network { layers }
}

fn decoder<R: Rng + ?Sized>(pb: &mut ParamBuilder<'_, R>, arch: &ArchitectureConfig, input: usize) -> Network {
    let mut layers = Vec::new();
    match arch.kind {
        EncoderKind::Conv => {
            layers.push(pb.affine("dec.fc0", input, 256));
            layers.push(Layer::Relu);
            layers.push(pb.affine("dec.fc1", 256, 4 * 4 * 64));
            layers.push(Layer::Relu);
            layers.push(Layer::Unflatten([64, 4, 4]));
            let chans = [64, 64, 32, 32, arch.channels];
            for (i, w) in chans.windows(2).enumerate() {
                layers.push(pb.deconv(&format!("dec.deconv{i}"), w[0], w[1]));
                if i + 2 < chans.len() {
                    layers.push(Layer::Relu);
                }
            }
        }
        EncoderKind::Mlp => {
            let mut width = input;
            for (i, &h) in arch.hidden.iter().rev().enumerate() {
                layers.push(pb.affine(&format!("dec.fc{i}"), width, h));
                layers.push(Layer::Relu);
                width = h;
            }
            layers.push(pb.affine("dec.out", width, arch.pixels()));
            layers.push(Layer::Unflatten([arch.channels, arch.resolution, arch.resolution]));
        }
    }
    Network { layers }
}

/// Scalars of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Per-space reconstruction negative log-likelihood (summed over pixels, mean over batch).
    pub recon: Vec<f64>,
    /// Per-space KL (summed over dimensions, mean over batch).
    pub kl: Vec<f64>,
    /// `kl_per_dim[i][j]`: batch-mean KL of dimension `j` in space `i`.
    pub kl_per_dim: Vec<Vec<f64>>,
}

/// A recorded forward pass, ready for [`Tape::backward`].
pub struct TapedLoss {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

impl TapedLoss {
    /// Gradients for every model parameter, in parameter order.
    pub fn param_grads(&self) -> Result<Vec<Tensor>> {
        let g = self.tape.backward(self.loss)?;
        Ok(self.param_vars.iter().map(|&v| g.get_or_zeros(v, self.tape.value(v))).collect())
    }
}

fn context(e: Error, term: &str) -> Error {
    match e {
        Error::Numerical { iteration, term: op } => Error::Numerical { iteration, term: format!("{term}/{op}") },
        other => other,
    }
}

/// Per-sample rows of a `[B×d]` tensor.
fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.rows().map(<[f64]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    encoders: Vec<Network>,
    decoder: Network,
    transitions: Vec<Transition>,
}

impl Model {
    /// Fresh model; weights are fan-in scaled uniform, biases zero, diagonal
    /// log-scales zero and linear transitions the identity.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let arch = config.arch.clone();
        let d = arch.latent_dim;
        let k = config.spaces();
        let mut pb = ParamBuilder { params: Vec::new(), names: Vec::new(), rng };
        let n_enc = if config.variant == ModelVariant::MultiSpace { k } else { 1 };
        let encoders = (0..n_enc).map(|i| encoder(&mut pb, &arch, &format!("enc{i}"))).collect();
        let decoder = decoder(&mut pb, &arch, d + config.indicator_width());
        let mut transitions = Vec::new();
        for i in 0..k.saturating_sub(1) {
            match config.variant {
                ModelVariant::DeVAE => {
                    let w1 = pb.push(format!("dit{i}.w1"), Tensor::zeros(&[d]));
                    let w2 = pb.push(format!("dit{i}.w2"), Tensor::zeros(&[d]));
                    transitions.push(Transition::Diagonal { w1, w2 });
                }
                ModelVariant::HiSLinear => {
                    let mut eye = Tensor::zeros(&[d, d]);
                    for j in 0..d {
                        eye.data_mut()[j * d + j] = 1.0;
                    }
                    let m1 = pb.push(format!("lin{i}.m1"), eye.clone());
                    let m2 = pb.push(format!("lin{i}.m2"), eye);
                    transitions.push(Transition::Linear { m1, m2 });
                }
                _ => {}
            }
        }
        let ParamBuilder { params, names, .. } = pb;
        Ok(Model { config, params, names, encoders, decoder, transitions })
    }

    /// Rebuild a model around stored parameters (checkpoint load).
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let mut rng = crate::rng::RngStreams::new(0).stream("shape-probe", 0);
        let mut model = Model::new(config, &mut rng)?;
        if params.len() != model.params.len() {
            return Err(Error::data(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((slot, p), name) in model.params.iter_mut().zip(params).zip(&model.names) {
            if slot.shape() != p.shape() {
                return Err(Error::data(format!("parameter {name}: shape {:?} vs {:?}", p.shape(), slot.shape())));
            }
            if !p.is_finite() {
                return Err(Error::data(format!("parameter {name} holds non-finite values")));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn spaces(&self) -> usize {
        self.config.spaces()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.arch.latent_dim
    }

    /// Width of the decoder input (latent plus indicator).
    pub fn decoder_input_width(&self) -> usize {
        self.latent_dim() + self.config.indicator_width()
    }

    /// The diagonal chain of a DeVAE model.
    pub fn dit_chain(&self) -> Option<DiTChain> {
        if self.config.variant != ModelVariant::DeVAE {
            return None;
        }
        let (w1, w2) = self
            .transitions
            .iter()
            .map(|t| match *t {
                Transition::Diagonal { w1, w2 } => (self.params[w1].data().to_vec(), self.params[w2].data().to_vec()),
                Transition::Linear { .. } => unreachable!("devae has diagonal transitions"),
            })
            .unzip();
        Some(DiTChain { w1, w2 })
    }

    /// Overwrite the diagonal chain (DeVAE only).
    pub fn set_dit_chain(&mut self, chain: &DiTChain) -> Result<()> {
        if self.config.variant != ModelVariant::DeVAE || chain.transitions() != self.transitions.len() {
            return Err(Error::usage("chain does not fit this model"));
        }
        for (t, (a, b)) in self.transitions.clone().iter().zip(chain.w1.iter().zip(&chain.w2)) {
            if let Transition::Diagonal { w1, w2 } = *t {
                self.params[w1] = Tensor::vector(a);
                self.params[w2] = Tensor::vector(b);
            }
        }
        Ok(())
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let a = &self.config.arch;
        match x.shape() {
            [_, c, h, w] if *c == a.channels && *h == a.resolution && *w == a.resolution => Ok(()),
            s => Err(Error::config(format!(
                "input {s:?} does not match architecture {}×{}×{}",
                a.channels, a.resolution, a.resolution
            ))),
        }
    }

    fn leaves(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) }).collect()
    }

    /// (mean, logvar) nodes for every space.
    fn space_nodes(&self, tape: &mut Tape, vars: &[Var], x: Var, upto: usize) -> Result<Vec<(Var, Var)>> {
        let d = self.latent_dim();
        let split = |tape: &mut Tape, head: Var| -> Result<(Var, Var)> {
            Ok((tape.slice_cols(head, 0, d)?, tape.slice_cols(head, d, d)?))
        };
        let mut out = Vec::with_capacity(upto + 1);
        match self.config.variant {
            ModelVariant::MultiSpace => {
                for enc in &self.encoders[..=upto] {
                    let head = enc.run(tape, vars, x)?;
                    out.push(split(tape, head)?);
                }
            }
            _ => {
                let head = self.encoders[0].run(tape, vars, x)?;
                let (m0, l0) = split(tape, head)?;
                out.push((m0, l0));
                let mut sums: Option<(Var, Var)> = None;
                for t in &self.transitions[..upto] {
                    let (m_prev, l_prev) = *out.last().expect("space 0 present");
                    let next = match *t {
                        Transition::Diagonal { w1, w2 } => {
                            let (s1, s2) = match sums {
                                None => (vars[w1], vars[w2]),
                                Some((a, b)) => (tape.add(a, vars[w1])?, tape.add(b, vars[w2])?),
                            };
                            sums = Some((s1, s2));
                            let scale = tape.exp(s1)?;
                            let shift = tape.scale(s2, 2.0)?;
                            (tape.mul_row(m0, scale)?, tape.add_row(l0, shift)?)
                        }
                        Transition::Linear { m1, m2 } => {
                            (tape.matmul_t(m_prev, vars[m1])?, tape.matmul_t(l_prev, vars[m2])?)
                        }
                    };
                    out.push(next);
                }
            }
        }
        Ok(out)
    }

    fn decode_node(&self, tape: &mut Tape, vars: &[Var], z: Var, space: usize) -> Result<Var> {
        let input = if self.config.indicator_width() > 0 {
            let b = tape.value(z).shape()[0];
            let hot = SpaceIndicator::new(space, self.spaces())?.one_hot();
            let data = (0..b).flat_map(|_| hot.iter().copied()).collect();
            let ind = tape.constant(Tensor::new(vec![b, hot.len()], data)?);
            tape.concat_cols(z, ind)?
        } else {
            z
        };
        self.decoder.run(tape, vars, input)
    }

    /// Record the full objective for one batch.
    ///
    /// `noise[i]` is the `[B×d]` standard-normal draw for space `i`.
    pub fn forward_loss(&self, batch: &Tensor, noise: &[Tensor]) -> Result<TapedLoss> {
        self.forward_loss_scaled(batch, noise, 1.0)
    }

    /// As [`Model::forward_loss`] with every pressure multiplied by `kl_scale`
    /// (KL warm-up). The reported `total` is the scaled objective.
    pub fn forward_loss_scaled(&self, batch: &Tensor, noise: &[Tensor], kl_scale: f64) -> Result<TapedLoss> {
        if !(kl_scale >= 0.0 && kl_scale.is_finite()) {
            return Err(Error::usage(format!("kl scale {kl_scale} must be finite and nonnegative")));
        }
        self.check_images(batch)?;
        let k = self.spaces();
        let b = batch.shape()[0];
        if b == 0 {
            return Err(Error::usage("empty batch"));
        }
        if noise.len() != k || noise.iter().any(|n| n.shape() != [b, self.latent_dim()]) {
            return Err(Error::usage(format!("need {k} noise tensors of shape [{b}×{}]", self.latent_dim())));
        }
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape, true);
        let x = tape.constant(batch.clone());
        let spaces = self.space_nodes(&mut tape, &vars, x, k - 1).map_err(|e| context(e, "encoder"))?;

        let mut recon = Vec::with_capacity(k);
        let mut kl = Vec::with_capacity(k);
        let mut kl_per_dim = Vec::with_capacity(k);
        let mut total: Option<Var> = None;
        for (i, (&(mean, logvar), eps)) in spaces.iter().zip(noise).enumerate() {
            let term = |name: &str| format!("{name}[{i}]");
            let eps = tape.constant(eps.clone());
            let z = (|| {
                let half = tape.scale(logvar, 0.5)?;
                let std = tape.exp(half)?;
                let spread = tape.mul(std, eps)?;
                tape.add(mean, spread)
            })()
            .map_err(|e| context(e, &term("sample")))?;
            let out = self.decode_node(&mut tape, &vars, z, i).map_err(|e| context(e, &term("decoder")))?;
            let r = match self.config.recon_loss {
                ReconLoss::Bernoulli => tape.bce_with_logits(out, x),
                ReconLoss::Gaussian => tape.squared_error(out, x),
            }
            .map_err(|e| context(e, &term("recon")))?;
            let kv = tape.kl_standard(mean, logvar).map_err(|e| context(e, &term("kl")))?;
            let weighted = tape.scale(kv, kl_scale * self.config.hierarchy.betas()[i])?;
            let space_loss = tape.add(r, weighted)?;
            total = Some(match total {
                None => space_loss,
                Some(t) => tape.add(t, space_loss).map_err(|e| context(e, "total"))?,
            });
            recon.push(tape.value(r).item());
            kl.push(tape.value(kv).item());
            kl_per_dim.push(batch_kl_per_dim(tape.value(mean), tape.value(logvar)));
        }
        let loss = total.expect("at least one space");
        let breakdown = LossBreakdown { total: tape.value(loss).item(), recon, kl, kl_per_dim };
        Ok(TapedLoss { tape, param_vars: vars, loss, breakdown })
    }

    /// Draw reparameterization noise for one batch.
    pub fn draw_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Tensor> {
        let d = self.latent_dim();
        let mut draw = || {
            let data = (0..batch * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::new(vec![batch, d], data).expect("shape")
        };
        if self.config.shared_noise {
            let n = draw();
            vec![n; self.spaces()]
        } else {
            (0..self.spaces()).map(|_| draw()).collect()
        }
    }

    /// Space-0 posterior parameters for each image.
    pub fn encode(&self, images: &Tensor) -> Result<Vec<GaussianParams>> {
        self.space_params(images, 0)
    }

    /// Posterior parameters of space `i` for each image.
    pub fn space_params(&self, images: &Tensor, space: usize) -> Result<Vec<GaussianParams>> {
        self.check_images(images)?;
        if space >= self.spaces() {
            return Err(Error::usage(format!("space {space} out of range for {} spaces", self.spaces())));
        }
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape, false);
        let x = tape.constant(images.clone());
        let nodes = self.space_nodes(&mut tape, &vars, x, space)?;
        let (m, l) = nodes[space];
        Ok(rows_of(tape.value(m))
            .into_iter()
            .zip(rows_of(tape.value(l)))
            .map(|(mean, logvar)| GaussianParams { mean, logvar })
            .collect())
    }

    /// Decoder output (logits for Bernoulli data) for latent rows `z` `[B×d]` in space `space`.
    pub fn decode(&self, z: &Tensor, space: usize) -> Result<Tensor> {
        if z.ndim() != 2 || z.shape()[1] != self.latent_dim() {
            return Err(Error::usage(format!("latent batch {:?} vs width {}", z.shape(), self.latent_dim())));
        }
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.decode_node(&mut tape, &vars, zv, space)?;
        Ok(tape.value(out).clone())
    }
}

/// Batch-mean KL per latent dimension.
pub fn batch_kl_per_dim(mean: &Tensor, logvar: &Tensor) -> Vec<f64> {
    let d = *mean.shape().last().unwrap_or(&0);
    let b = (mean.len() / d.max(1)).max(1) as f64;
    let mut out = vec![0.0; d];
    for (mr, lr) in mean.rows().zip(logvar.rows()) {
        for ((o, &m), &l) in out.iter_mut().zip(mr).zip(lr) {
            *o += 0.5 * (m * m + l.exp() - 1.0 - l);
        }
    }
    out.iter_mut().for_each(|v| *v /= b);
    out
}

/// `mean' = M1·mean`, `logvar' = M2·logvar` with row-major `d×d` matrices.
pub fn linear_transition_apply(params: &GaussianParams, m1: &[f64], m2: &[f64]) -> Result<GaussianParams> {
    let d = params.dim();
    if m1.len() != d * d || m2.len() != d * d {
        return Err(Error::usage(format!("transition matrices must be {d}×{d}")));
    }
    let apply = |m: &[f64], v: &[f64]| -> Vec<f64> {
        m.chunks_exact(d).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    };
    Ok(GaussianParams { mean: apply(m1, &params.mean), logvar: apply(m2, &params.logvar) })
}
