use rayon::prelude::*;
use stereokin::fitting::{fit_single_beta, synthesize_two_body};

const REPLICAS: u64 = 400;

#[test]
fn single_rate_intervals_cover_the_truth() {
    let (n0, beta) = (1e11, 2e-10);
    let times: Vec<f64> = (0..15).map(|i| 0.2 * i as f64).collect();
    let hits: usize = (0..REPLICAS)
        .into_par_iter()
        .map(|seed| {
            let ts = synthesize_two_body("mc", n0, beta, &times, 0.05, seed).unwrap();
            let fit = fit_single_beta(&ts).unwrap();
            let (b, s) = (fit.estimate("beta1").unwrap(), fit.std_error("beta1").unwrap());
            usize::from((b - beta).abs() <= 1.96 * s)
        })
        .sum();
    let coverage = hits as f64 / REPLICAS as f64;
    assert!(coverage >= 0.90, "coverage {coverage}");
}

#[test]
fn single_rate_estimates_are_unbiased_at_low_noise() {
    let (n0, beta) = (1e11, 2e-10);
    let times: Vec<f64> = (0..15).map(|i| 0.2 * i as f64).collect();
    let mean: f64 = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let ts = synthesize_two_body("mc", n0, beta, &times, 0.01, seed).unwrap();
            fit_single_beta(&ts).unwrap().estimate("beta1").unwrap()
        })
        .sum::<f64>()
        / 200.0;
    assert!((mean - beta).abs() < 0.005 * beta, "mean {mean}");
}
