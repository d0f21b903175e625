use devae_core::data::{desk_specs, generate_dataset, sample_fixed_factor_batch, FactorDataset};
use devae_core::latent::{correlation_matrix, GaussianParams, HierarchyConfig};
use devae_core::metrics::{
    collect_latents, dci_disentanglement, discretize, mi_table, mig, mig_from_table, mutual_info_discrete,
    reconstruction_error, sample_rows, LatentMode, ModelSpace, NoiseCode, Representation,
};
use devae_core::model::{linear_transition_apply, ArchitectureConfig, Model, ModelConfig, ModelVariant};
use devae_core::optim::AdamConfig;
use devae_core::rng::RngStreams;
use devae_core::train::{TrainConfig, Trainer};
use devae_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn desk() -> FactorDataset {
    generate_dataset(&desk_specs(), 16, 0).unwrap()
}

fn model(variant: ModelVariant, betas: Vec<f64>, hidden: Vec<usize>, seed: u64) -> Model {
    let cfg =
        ModelConfig::new(variant, ArchitectureConfig::mlp(16, hidden), HierarchyConfig::new(betas).unwrap()).unwrap();
    Model::new(cfg, &mut RngStreams::new(seed).stream("init", 0)).unwrap()
}

fn train_config(batch: usize) -> TrainConfig {
    TrainConfig { batch, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, kl_warmup: 0 }
}

#[test]
fn single_space_devae_is_beta_vae_bitwise() {
    let ds = desk();
    let mut a = Trainer::new(model(ModelVariant::BetaVAE, vec![6.0], vec![32], 5), train_config(16), 5).unwrap();
    let mut b = Trainer::new(model(ModelVariant::DeVAE, vec![6.0], vec![32], 5), train_config(16), 5).unwrap();
    for _ in 0..40 {
        let (ra, rb) = (a.step(&ds).unwrap(), b.step(&ds).unwrap());
        assert_eq!(ra.loss.total.to_bits(), rb.loss.total.to_bits());
        assert_eq!(ra.loss.kl_per_dim, rb.loss.kl_per_dim);
    }
    assert!(a.model().params().iter().zip(b.model().params()).all(|(x, y)| x.bitwise_eq(y)));
}

#[test]
fn loss_decreases_over_a_hundred_iterations() {
    let ds = desk();
    let mut t =
        Trainer::new(model(ModelVariant::DeVAE, vec![1.0, 40.0], vec![64, 64], 1), train_config(32), 1).unwrap();
    let losses: Vec<f64> = (0..100).map(|_| t.step(&ds).unwrap().loss.total).collect();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "first ten {head}, last ten {tail}");
}

#[test]
fn untrained_reconstruction_is_near_pixel_count_times_ln2() {
    let ds = desk();
    let m = model(ModelVariant::DeVAE, vec![1.0, 40.0], vec![64, 64], 2);
    let rows: Vec<usize> = (0..ds.len()).step_by(7).collect();
    let recon = reconstruction_error(&m, &ds, 0, &rows).unwrap();
    let baseline = 256.0 * std::f64::consts::LN_2;
    assert!((recon - baseline).abs() < 0.05 * baseline, "{recon} vs {baseline}");
}

#[test]
fn conv_layout_shapes() {
    let cfg = ModelConfig::new(
        ModelVariant::DeVAE,
        ArchitectureConfig::conv(1),
        HierarchyConfig::new(vec![1.0, 40.0]).unwrap(),
    )
    .unwrap();
    let m = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ds = generate_dataset(&devae_core::data::FactorSpec::parse_list("posX:2,posY:2").unwrap(), 64, 0).unwrap();
    let post = m.encode(&ds.batch(&[0, 3])).unwrap();
    assert_eq!(post.len(), 2);
    assert!(post.iter().all(|p| p.mean.len() == 10 && p.logvar.len() == 10));
    let out = m.decode(&Tensor::zeros(&[2, 10]), 1).unwrap();
    assert_eq!(out.shape(), &[2, 1, 64, 64]);
}

#[test]
fn recorded_forward_pass_replays_bitwise() {
    let ds = desk();
    let m = model(ModelVariant::HiSLinear, vec![1.0, 10.0], vec![32], 3);
    let noise = m.draw_noise(4, &mut ChaCha8Rng::seed_from_u64(1));
    let taped = m.forward_loss(&ds.batch(&[0, 10, 200, 900]), &noise).unwrap();
    assert!(taped.tape.replay_matches().unwrap());
}

#[test]
fn full_linear_transition_changes_correlations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (2000, 3);
    let samples: Vec<GaussianParams> = (0..n)
        .map(|_| {
            let mean = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            GaussianParams::new(mean, vec![0.0; d]).unwrap()
        })
        .collect();
    let m1 = [1.0, 0.8, 0.0, 0.0, 1.0, -0.6, 0.3, 0.0, 1.0];
    let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let z: Vec<f64> = samples.iter().flat_map(|p| p.mean.clone()).collect();
    let zt: Vec<f64> = samples.iter().flat_map(|p| linear_transition_apply(p, &m1, &ident).unwrap().mean).collect();
    let before = correlation_matrix(&z, n, d).unwrap();
    let after = correlation_matrix(&zt, n, d).unwrap();
    let shift = before.matrix.iter().zip(&after.matrix).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(shift > 0.3, "largest correlation change {shift}");
}

#[test]
fn fixed_factor_batches_are_uniform_elsewhere() {
    let ds = desk();
    let space = ds.space();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = sample_fixed_factor_batch(space, 0, 10_000, &mut rng).unwrap();
    let fixed = ds.labels(rows[0])[0];
    // Joint of posY (16) and scale (4): 64 cells, 63 degrees of freedom.
    let mut counts = [0usize; 64];
    for &r in &rows {
        let l = ds.labels(r);
        assert_eq!(l[0], fixed);
        counts[(l[1] * 4 + l[2]) as usize] += 1;
    }
    let expected = 10_000.0 / 64.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.1% point of chi-squared with 63 degrees of freedom.
    assert!(chi2 < 103.4, "chi2 {chi2}");
}

#[test]
fn mutual_information_of_independent_codes_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a: Vec<u32> = (0..10_000).map(|_| rng.random_range(0..20)).collect();
    let b: Vec<u32> = (0..10_000).map(|_| rng.random_range(0..20)).collect();
    let mi = mutual_info_discrete(&a, &b).unwrap();
    assert!(mi <= 0.02, "{mi}");
    let same = mutual_info_discrete(&a, &a).unwrap();
    assert!((same - 20f64.ln()).abs() < 0.01, "{same}");
}

#[test]
fn sampled_latents_average_to_posterior_means() {
    let ds = desk();
    let m = model(ModelVariant::DeVAE, vec![1.0, 40.0], vec![32], 4);
    let rep = ModelSpace { model: &m, space: 1 };
    let n = 5000;
    let means = collect_latents(&rep, &ds, n, LatentMode::Mean, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let draws = collect_latents(&rep, &ds, n, LatentMode::Sample, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    // Rows are drawn before any noise, so both sets cover the same rows.
    assert_eq!(means.labels, draws.labels);
    let (rows, _) = sample_rows(ds.len(), n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let post = rep.represent(&ds, &rows).unwrap();
    for j in 0..means.d {
        let mu = means.latent_column(j).iter().sum::<f64>() / n as f64;
        let z = draws.latent_column(j).iter().sum::<f64>() / n as f64;
        let var = post.logvar.iter().skip(j).step_by(post.d).map(|l| l.exp()).sum::<f64>() / n as f64;
        let bound = 3.0 * (var / n as f64).sqrt();
        assert!((z - mu).abs() <= bound, "dim {j}: {z} vs {mu} (bound {bound})");
    }
}

#[test]
fn metrics_ignore_positive_rescaling() {
    let ds = desk();
    let m = model(ModelVariant::DeVAE, vec![1.0, 40.0], vec![32], 6);
    let mut t = Trainer::new(m, train_config(32), 6).unwrap();
    for _ in 0..200 {
        t.step(&ds).unwrap();
    }
    let rep = ModelSpace { model: t.model(), space: 0 };
    let set = collect_latents(&rep, &ds, 5000, LatentMode::Mean, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scales: Vec<f64> = (0..set.d).map(|_| (rng.random_range(-3.0..3.0f64)).exp()).collect();
    let scaled = set.scaled(&scales);
    for j in 0..set.d {
        assert_eq!(discretize(&set.latent_column(j), 20).unwrap(), discretize(&scaled.latent_column(j), 20).unwrap());
    }
    assert_eq!(mig(&set).unwrap().score.to_bits(), mig(&scaled).unwrap().score.to_bits());
    let (ta, tb) = (mi_table(&set, 20).unwrap(), mi_table(&scaled, 20).unwrap());
    assert_eq!(mig_from_table(&ta).unwrap(), mig_from_table(&tb).unwrap());
    let (da, db) = (dci_disentanglement(&set).unwrap().score, dci_disentanglement(&scaled).unwrap().score);
    assert!((da - db).abs() <= 1e-9, "{da} vs {db}");
}

#[test]
fn noise_code_has_no_gap() {
    let ds = desk();
    let rep = NoiseCode { d: 10, seed: 4 };
    let set = collect_latents(&rep, &ds, 10_000, LatentMode::Mean, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!(set.with_replacement);
    let score = mig(&set).unwrap().score;
    assert!(score <= 0.05, "{score}");
}
