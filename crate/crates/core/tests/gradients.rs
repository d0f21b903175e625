//! Analytic gradients against central finite differences.

use devae_core::data::{generate_dataset, FactorSpec};
use devae_core::latent::{DiTChain, HierarchyConfig};
use devae_core::model::{ArchitectureConfig, Model, ModelConfig, ModelVariant};
use devae_core::tape::Tape;
use devae_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Differences below the roundoff of a central difference of a loss of size
/// `loss` (about `ε·|loss|/STEP`) count as agreement.
fn rel_err(a: f64, n: f64, loss: f64) -> f64 {
    let diff = (a - n).abs();
    if diff <= 4.0 * f64::EPSILON * (1.0 + loss.abs()) / STEP {
        0.0
    } else {
        diff / a.abs().max(n.abs())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Check `coords` random coordinates of `params` for a scalar function given
/// as a tape builder.
fn check_tape<F>(params: &[Tensor], coords: usize, seed: u64, build: F)
where
    F: Fn(&mut Tape, &[devae_core::tape::Var]) -> devae_core::tape::Var,
{
    let eval = |ps: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<_> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        let g = tape.backward(loss).unwrap();
        let grads = vars.iter().map(|&v| g.get_or_zeros(v, tape.value(v))).collect();
        (tape.value(loss).item(), grads)
    };
    let (value, grads) = eval(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..coords {
        let t = rng.random_range(0..params.len());
        let k = rng.random_range(0..params[t].len());
        let mut plus = params.to_vec();
        plus[t].data_mut()[k] += STEP;
        let mut minus = params.to_vec();
        minus[t].data_mut()[k] -= STEP;
        let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);
        let analytic = grads[t].data()[k];
        assert!(
            rel_err(analytic, numeric, value) <= REL_TOL,
            "param {t} coord {k}: analytic {analytic} numeric {numeric}"
        );
    }
}

#[test]
fn affine_relu_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps = vec![
        random_tensor(&mut rng, &[4, 6], 1.0),
        random_tensor(&mut rng, &[6, 5], 0.5),
        random_tensor(&mut rng, &[5], 0.5),
        random_tensor(&mut rng, &[5, 3], 0.5),
        random_tensor(&mut rng, &[3], 0.5),
    ];
    check_tape(&ps, 60, 2, |t, v| {
        let h = t.affine(v[0], v[1], v[2]).unwrap();
        let h = t.relu(h).unwrap();
        let o = t.affine(h, v[3], v[4]).unwrap();
        let sq = t.mul(o, o).unwrap();
        t.sum(sq).unwrap()
    });
}

#[test]
fn relu_gradient_is_the_positive_mask() {
    let x = Tensor::vector(&[-1.5, -0.2, 0.3, 2.0, -3.0, 0.7]);
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let r = tape.relu(v).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap();
    let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    assert_eq!(g.get(v).unwrap().data(), &mask[..]);
    check_tape(&[x], 20, 3, |t, v| {
        let r = t.relu(v[0]).unwrap();
        t.sum(r).unwrap()
    });
}

#[test]
fn conv_and_deconv_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ps = vec![
        random_tensor(&mut rng, &[2, 2, 8, 8], 1.0),
        random_tensor(&mut rng, &[3, 2, 4, 4], 0.3),
        random_tensor(&mut rng, &[3], 0.3),
        random_tensor(&mut rng, &[3, 2, 4, 4], 0.3),
        random_tensor(&mut rng, &[2], 0.3),
        random_tensor(&mut rng, &[2, 2, 8, 8], 1.0),
    ];
    check_tape(&ps, 80, 5, |t, v| {
        let h = t.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
        let h = t.relu(h).unwrap();
        let o = t.deconv2d(h, v[3], v[4], 2, 1).unwrap();
        let p = t.mul(o, v[5]).unwrap();
        t.sum(p).unwrap()
    });
}

#[test]
fn elementwise_row_and_column_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ps = vec![
        random_tensor(&mut rng, &[3, 4], 1.0),
        random_tensor(&mut rng, &[4], 0.5),
        random_tensor(&mut rng, &[4], 0.5),
        random_tensor(&mut rng, &[4, 4], 0.5),
        random_tensor(&mut rng, &[3, 6], 1.0),
    ];
    check_tape(&ps, 60, 7, |t, v| {
        let e = t.exp(v[1]).unwrap();
        let a = t.mul_row(v[0], e).unwrap();
        let b = t.add_row(a, v[2]).unwrap();
        let c = t.matmul_t(b, v[3]).unwrap();
        let s = t.slice_cols(v[4], 1, 2).unwrap();
        let j = t.concat_cols(c, s).unwrap();
        let j = t.scale(j, 0.7).unwrap();
        let k = t.add(j, v[4]).unwrap();
        let r = t.reshape(k, &[18]).unwrap();
        let sq = t.mul(r, r).unwrap();
        t.sum(sq).unwrap()
    });
}

#[test]
fn loss_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mean = random_tensor(&mut rng, &[3, 4], 1.5);
    let logvar = random_tensor(&mut rng, &[3, 4], 1.5);
    let logits = random_tensor(&mut rng, &[3, 5], 3.0);
    let target = Tensor::new(vec![3, 5], (0..15).map(|i| (i % 3) as f64 / 2.0).collect()).unwrap();
    check_tape(&[mean, logvar, logits.clone()], 40, 9, |t, v| {
        let kl = t.kl_standard(v[0], v[1]).unwrap();
        let tgt = t.constant(target.clone());
        let bce = t.bce_with_logits(v[2], tgt).unwrap();
        let se = t.squared_error(v[2], tgt).unwrap();
        let a = t.add(kl, bce).unwrap();
        t.add(a, se).unwrap()
    });
}

fn toy_batch(resolution: usize, rows: &[usize]) -> Tensor {
    let specs = FactorSpec::parse_list("posX:4,posY:4,scale:2").unwrap();
    generate_dataset(&specs, resolution, 0).unwrap().batch(rows)
}

/// Central difference of the full objective along one coordinate.
fn central_difference(model: &mut Model, batch: &Tensor, noise: &[Tensor], t: usize, k: usize, h: f64) -> f64 {
    let orig = model.params()[t].data()[k];
    model.params_mut()[t].data_mut()[k] = orig + h;
    let up = model.forward_loss(batch, noise).unwrap().breakdown.total;
    model.params_mut()[t].data_mut()[k] = orig - h;
    let down = model.forward_loss(batch, noise).unwrap().breakdown.total;
    model.params_mut()[t].data_mut()[k] = orig;
    (up - down) / (2.0 * h)
}

/// Random coordinates of a model's full objective; the first pass takes one
/// coordinate of every parameter tensor so every layer type is visited.
///
/// A ReLU whose pre-activation lies within the stencil makes the objective
/// non-smooth there; such coordinates are recognised by differences at `STEP`
/// and `STEP/4` disagreeing, and are replaced by fresh draws.
fn check_model(model: &mut Model, batch: &Tensor, coords: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = model.draw_noise(batch.shape()[0], &mut rng);
    let taped = model.forward_loss(batch, &noise).unwrap();
    let (value, grads) = (taped.breakdown.total, taped.param_grads().unwrap());
    let n = model.params().len();
    let (mut checked, mut skipped) = (0, 0);
    while checked < coords {
        let t = if checked < n { checked } else { rng.random_range(0..n) };
        let k = rng.random_range(0..model.params()[t].len());
        let numeric = central_difference(model, batch, &noise, t, k, STEP);
        let fine = central_difference(model, batch, &noise, t, k, STEP / 4.0);
        if rel_err(numeric, fine, value) > REL_TOL / 4.0 {
            skipped += 1;
            assert!(skipped <= coords / 2, "too many non-smooth coordinates");
            continue;
        }
        let analytic = grads[t].data()[k];
        assert!(
            rel_err(analytic, numeric, value) <= REL_TOL,
            "{}[{k}]: analytic {analytic} numeric {numeric}",
            model.param_names()[t]
        );
        checked += 1;
    }
}

/// Move off the initialization: zero biases put blank-window pre-activations
/// exactly on the ReLU kink, where central differences see half the slope.
fn jitter_biases(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = model.param_names().to_vec();
    for (p, name) in model.params_mut().iter_mut().zip(names) {
        if name.ends_with(".b") {
            p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        }
    }
}

fn randomize_chain(model: &mut Model, seed: u64) {
    jitter_biases(model, seed + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, d) = (model.spaces(), model.latent_dim());
    let mut draw = || (0..k - 1).map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
    let chain = DiTChain::new(draw(), draw()).unwrap();
    model.set_dit_chain(&chain).unwrap();
}

#[test]
fn devae_mlp_objective() {
    let cfg = ModelConfig::new(
        ModelVariant::DeVAE,
        ArchitectureConfig::mlp(16, vec![32, 16]),
        HierarchyConfig::new(vec![1.0, 10.0, 40.0]).unwrap(),
    )
    .unwrap();
    let mut model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    randomize_chain(&mut model, 11);
    check_model(&mut model, &toy_batch(16, &[0, 5, 17, 30]), 60, 12);
}

#[test]
fn ablation_variant_objectives() {
    for (variant, seed) in [(ModelVariant::MultiSpace, 20), (ModelVariant::HiSLinear, 21), (ModelVariant::BetaVAE, 22)]
    {
        let betas = if variant == ModelVariant::BetaVAE { vec![4.0] } else { vec![1.0, 10.0] };
        let cfg = ModelConfig::new(variant, ArchitectureConfig::mlp(8, vec![16]), HierarchyConfig::new(betas).unwrap())
            .unwrap();
        let mut model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        jitter_biases(&mut model, seed);
        check_model(&mut model, &toy_batch(8, &[1, 9, 22]), 40, seed + 100);
    }
}

#[test]
fn devae_conv_objective() {
    let cfg = ModelConfig::new(
        ModelVariant::DeVAE,
        ArchitectureConfig::conv(1),
        HierarchyConfig::new(vec![1.0, 40.0]).unwrap(),
    )
    .unwrap();
    let mut model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    randomize_chain(&mut model, 31);
    check_model(&mut model, &toy_batch(64, &[3, 20]), 30, 32);
}

#[test]
fn deconv_is_the_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for (c_in, c_out, side) in [(1, 2, 4), (2, 3, 8), (3, 1, 6)] {
        let x = random_tensor(&mut rng, &[2, c_in, side, side], 1.0);
        let k = random_tensor(&mut rng, &[c_out, c_in, 4, 4], 1.0);
        let y = random_tensor(&mut rng, &[2, c_out, side / 2, side / 2], 1.0);
        let mut tape = Tape::new();
        let (xv, kv, yv) = (tape.constant(x.clone()), tape.constant(k), tape.constant(y.clone()));
        let zero_out = tape.constant(Tensor::zeros(&[c_out]));
        let zero_in = tape.constant(Tensor::zeros(&[c_in]));
        let cx = tape.conv2d(xv, kv, zero_out, 2, 1).unwrap();
        let dy = tape.deconv2d(yv, kv, zero_in, 2, 1).unwrap();
        let lhs = tape.value(cx).dot(&y);
        let rhs = x.dot(tape.value(dy));
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}
