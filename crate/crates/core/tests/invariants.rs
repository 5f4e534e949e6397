use proptest::prelude::*;
use rnoise::infodiag::aux_entropy;
use rnoise::interpolant::interpolate;
use rnoise::model::{delta_rn_velocity, noise_head_eval, ModelConfig, NoiseFamily, NoiseGenerator, VelocityModel};
use rnoise::numerics::{Linear, Rng, Tensor};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

proptest! {
    #[test]
    fn interpolation_is_affine_in_time(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, lambda in 0.0f64..=1.0) {
        let mut rng = Rng::new(seed);
        let x_star = rng.sample_normal(&[4, 3]);
        let x0 = rng.sample_normal(&[4, 3]);
        let mixed = interpolate(&x_star, &x0, lambda * a + (1.0 - lambda) * b).unwrap().x_t;
        let xa = interpolate(&x_star, &x0, a).unwrap().x_t;
        let xb = interpolate(&x_star, &x0, b).unwrap().x_t;
        for ((m, pa), pb) in mixed.data().iter().zip(xa.data()).zip(xb.data()) {
            prop_assert!((m - (lambda * pa + (1.0 - lambda) * pb)).abs() < 1e-12);
        }
    }

    #[test]
    fn aux_entropy_has_slope_one_half(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        prop_assume!((a - b).abs() > 1e-3);
        let slope = (aux_entropy(a) - aux_entropy(b)) / (a - b);
        prop_assert!((slope - 0.5).abs() < 1e-9, "slope {}", slope);
    }
}

#[test]
fn gumbel_base_mean_is_euler_mascheroni() {
    let mut rng = Rng::new(17);
    let n = 1_000_000;
    let mean = (0..n).map(|_| NoiseFamily::Gumbel.base_draw(&mut rng)).sum::<f64>() / n as f64;
    assert!((mean - EULER_MASCHERONI).abs() < 0.005, "{mean}");
}

#[test]
fn gaussian_noisy_velocity_centres_on_location() {
    let mut rng = Rng::new(23);
    let cfg = ModelConfig { hidden: 16, depth: 1, res_blocks: 0, ..ModelConfig::default() };
    let mut model = VelocityModel::new(2, 0, &cfg, &mut rng);
    model.head = Linear::new(16, 2, &mut rng);
    let mut gen = NoiseGenerator::for_model(&model, NoiseFamily::Gaussian, 0, &mut rng);
    gen.loc_head = Linear::new(16, 2, &mut rng);
    gen.gate = Tensor::scalar(0.8);

    let x = Tensor::matrix(1, 2, vec![0.4, -1.1]);
    let t = 0.35;
    let v = model.velocity_eval(&x, t, None).unwrap();
    let params = noise_head_eval(&gen, &model.backbone_features(&x, &[t], &[None]).unwrap(), x.shape()).unwrap();
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let z = delta_rn_velocity(&model, &gen, &x, t, &mut rng, None).unwrap().sub(&v).unwrap();
        sum[0] += z.data()[0];
        sum[1] += z.data()[1];
    }
    for k in 0..2 {
        let bound = 4.0 * params.scale.data()[k] / (n as f64).sqrt();
        let err = (sum[k] / n as f64 - params.loc.data()[k]).abs();
        assert!(params.scale.data()[k] > 0.0 && err < bound, "dim {k}: {err} vs {bound}");
    }
}
