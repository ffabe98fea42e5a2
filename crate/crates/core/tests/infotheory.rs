use modhealth_core::infotheory::{
    estimate_cmi, estimate_mi, normalize, standardize_values, white_noise, DEFAULT_K,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const N: usize = 2000;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn z(v: &[f64]) -> Vec<f64> {
    standardize_values(v).unwrap()
}

/// F -> H -> G with unit-variance additive noise at each step.
fn markov_chain(n: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let h: Vec<f64> = f.iter().map(|x| x + noise * normal(&mut rng)).collect();
    let g: Vec<f64> = h.iter().map(|x| x + noise * normal(&mut rng)).collect();
    (z(&f), z(&g), z(&h))
}

fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[test]
fn bivariate_gaussian_matches_closed_form() {
    let rho = 0.6;
    let expected = gaussian_mi(rho);
    assert!((expected - 0.2231).abs() < 1e-4);
    let mut total = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut x = Vec::with_capacity(N);
        let mut y = Vec::with_capacity(N);
        for _ in 0..N {
            let a = normal(&mut rng);
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng));
        }
        total += estimate_mi(&z(&x), &z(&y), DEFAULT_K, seed).unwrap();
    }
    let mean = total / 10.0;
    assert!((mean - expected).abs() < 0.03, "mean {mean} vs {expected}");
}

#[test]
fn independent_gaussians_give_zero_cmi() {
    let mut total = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let f: Vec<f64> = (0..N).map(|_| normal(&mut rng)).collect();
        let g: Vec<f64> = (0..N).map(|_| normal(&mut rng)).collect();
        let h = white_noise(N, 300 + seed);
        total += estimate_cmi(&z(&f), &z(&g), &h, DEFAULT_K).unwrap();
    }
    let mean = total / 10.0;
    assert!(mean.abs() < 0.02, "mean {mean}");
}

#[test]
fn independent_uniforms_give_zero_mi() {
    let mut total = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let f: Vec<f64> = (0..N).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..N).map(|_| rng.gen::<f64>()).collect();
        total += estimate_mi(&z(&f), &z(&g), DEFAULT_K, seed).unwrap();
    }
    let mean = total / 10.0;
    assert!(mean.abs() < 0.02, "mean {mean}");
}

#[test]
fn markov_chain_is_conditionally_independent() {
    let noise: f64 = 1.0;
    // corr(F, G) = 1 / sqrt(1 + 2 s^2)
    let rho = 1.0 / (1.0 + 2.0 * noise * noise).sqrt();
    assert!(gaussian_mi(rho) > 0.1);
    let (f, g, h) = markov_chain(N, noise, 7);
    let cmi = estimate_cmi(&f, &g, &h, DEFAULT_K).unwrap();
    let mi = estimate_mi(&f, &g, DEFAULT_K, 1).unwrap();
    assert!(cmi.abs() < 0.03, "cmi {cmi}");
    assert!(mi > 0.1, "mi {mi}");
}

#[test]
fn conditioning_on_the_mediator_lowers_normalized_information() {
    let (f, g, h) = markov_chain(N, 1.0, 7);
    let seed = 1;
    let self_f = estimate_mi(&f, &f, DEFAULT_K, seed).unwrap();
    let self_g = estimate_mi(&g, &g, DEFAULT_K, seed).unwrap();
    let mi = normalize(estimate_mi(&f, &g, DEFAULT_K, seed).unwrap(), self_f, self_g).unwrap();
    let cmi = normalize(estimate_cmi(&f, &g, &h, DEFAULT_K).unwrap(), self_f, self_g).unwrap();
    assert!(mi - cmi >= 0.05, "normalized mi {mi}, cmi {cmi}");
}

#[test]
fn identical_columns_saturate_above_two_nats() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = z(&(0..N).map(|_| normal(&mut rng)).collect::<Vec<_>>());
    let small = estimate_mi(&f[..500], &f[..500], 3, 2).unwrap();
    let full = estimate_mi(&f, &f, 3, 2).unwrap();
    assert!(full > 2.0, "{full}");
    assert!(full > small, "{small} -> {full}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mi_symmetric_for_any_data(seed in 0u64..10_000, rho in -0.9f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..120).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|a| rho * a + normal(&mut rng)).collect();
        let (x, y) = (z(&x), z(&y));
        let a = estimate_mi(&x, &y, 5, seed).unwrap();
        let b = estimate_mi(&y, &x, 5, seed).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn normalized_values_stay_in_unit_interval(raw in -5.0f64..5.0, a in 0.01f64..5.0, b in 0.01f64..5.0) {
        let v = normalize(raw, a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
