#![allow(dead_code)]

use addbart::data::{Dataset, ResponseKind};
use addbart::rng;
use addbart::BartConfig;

pub fn short_config(trees: usize, burn: usize, draws: usize, seed: u64) -> BartConfig {
    BartConfig {
        trees,
        burn_in: burn,
        draws,
        seed,
        ..BartConfig::default()
    }
}

pub fn normals(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..p)
        .map(|_| (0..n).map(|_| rng::std_normal(&mut r)).collect())
        .collect()
}

pub fn dataset(y: Vec<f64>, columns: Vec<Vec<f64>>, kind: ResponseKind) -> Dataset<f64> {
    let names = (1..=columns.len()).map(|j| format!("x{j}")).collect();
    Dataset::new(y, columns, names, "y", kind).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

fn normal_log_pdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v)
}

/// y_i ~ N(μ, 1), μ ~ N(0, τ²). Returns the harmonic-mean CPO estimate from
/// `draws` exact posterior draws and the closed-form leave-one-out predictive.
pub fn conjugate_cpo_case(y: &[f64], tau2: f64, draws: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len() as f64;
    let v = 1.0 / (n + 1.0 / tau2);
    let m = v * y.iter().sum::<f64>();
    let mut r = rng::seeded(seed);
    let log_lik: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let mu = m + v.sqrt() * rng::std_normal(&mut r);
            y.iter().map(|&yi| normal_log_pdf(yi, mu, 1.0)).collect()
        })
        .collect();
    let est = addbart::compute_cpo(&log_lik).unwrap().cpo();
    let exact = (0..y.len())
        .map(|i| {
            let rest: f64 = y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).sum();
            let v_i = 1.0 / (n - 1.0 + 1.0 / tau2);
            normal_log_pdf(y[i], v_i * rest, 1.0 + v_i).exp()
        })
        .collect();
    (est, exact)
}
