//! Independent oracles for the integration tests: naive loops, closed-form
//! small inversions and a derivative-free optimiser. Nothing here calls the
//! estimators under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use noisevec::synth::GaussianStream;
use noisevec::{FeatureMatrix, Label, NoisePrior, SadLabels};

pub fn rng(seed: u64, stream: u64) -> GaussianStream {
    GaussianStream::new(seed, stream)
}

pub fn uniform_usize(rng: &mut GaussianStream, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

pub fn random_features(rng: &mut GaussianStream, frames: usize, dim: usize, scale: f64) -> FeatureMatrix {
    let data = (0..frames * dim).map(|_| scale * rng.standard_normal()).collect();
    FeatureMatrix::new(frames, dim, data).unwrap()
}

pub fn random_labels(rng: &mut GaussianStream, frames: usize, p_speech: f64) -> SadLabels {
    (0..frames)
        .map(|_| {
            if rng.uniform() < p_speech {
                Label::Speech
            } else {
                Label::Silence
            }
        })
        .collect()
}

pub fn rows(features: &FeatureMatrix) -> Vec<Vec<f64>> {
    features.frames().map(|f| f.to_vec()).collect()
}

/// Per-class means by explicit summation; zero for an absent class.
pub fn naive_class_means(rows: &[Vec<f64>], labels: &[Label], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for (row, &label) in rows.iter().zip(labels) {
        let k = match label {
            Label::Speech => 0,
            Label::Silence => 1,
        };
        counts[k] += 1;
        for j in 0..dim {
            sums[k][j] += row[j];
        }
    }
    let [s, n] = sums;
    let mean = |mut v: Vec<f64>, c: usize| {
        if c > 0 {
            for x in &mut v {
                *x /= c as f64;
            }
        }
        v
    };
    (mean(s, counts[0]), mean(n, counts[1]))
}

pub fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

pub fn random_spd(rng: &mut GaussianStream, dim: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
    (&a * a.transpose()) / dim as f64 + DMatrix::identity(dim, dim) * floor
}

pub fn random_prior(rng: &mut GaussianStream, dim: usize) -> NoisePrior {
    let mu_n = DVector::from_fn(dim, |_, _| rng.standard_normal());
    let a = DVector::from_fn(dim, |_, _| 1.0 + rng.standard_normal());
    let b = DMatrix::from_fn(dim, dim, |_, _| 0.5 * rng.standard_normal());
    let lambda_s = random_spd(rng, dim, 0.5);
    let lambda_n = random_spd(rng, dim, 0.5);
    NoisePrior::new(mu_n, a, b, lambda_s, lambda_n, 1.0, 1.0).unwrap()
}

fn quad(x: &[f64], m: &[f64], lambda: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (x[i] - m[i]) * lambda[(i, j)] * (x[j] - m[j]);
        }
    }
    acc
}

/// Log posterior of `[mu_s; mu_n]` up to an additive constant, summed frame
/// by frame from the stated densities.
pub fn explicit_log_posterior(
    rows: &[Vec<f64>],
    labels: &[Label],
    prior: &NoisePrior,
    r_s: f64,
    r_n: f64,
    mu: &[f64],
) -> f64 {
    let d = prior.dim();
    let (mu_s, mu_n) = mu.split_at(d);
    let mut total = 0.0;
    for (x, &label) in rows.iter().zip(labels) {
        total -= match label {
            Label::Speech => 0.5 * r_s * quad(x, mu_s, prior.lambda_s()),
            Label::Silence => 0.5 * r_n * quad(x, mu_n, prior.lambda_n()),
        };
    }
    let cond: Vec<f64> = (0..d)
        .map(|i| prior.a()[i] + (0..d).map(|j| prior.b()[(i, j)] * mu_n[j]).sum::<f64>())
        .collect();
    total -= 0.5 * quad(mu_s, &cond, prior.lambda_s());
    let prior_mu_n: Vec<f64> = prior.mu_n().iter().copied().collect();
    total -= 0.5 * quad(mu_n, &prior_mu_n, prior.lambda_n());
    total
}

/// Nelder-Mead minimiser with restarts from the best vertex.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, restarts: usize) -> Vec<f64> {
    let n = x0.len();
    let mut best = x0.to_vec();
    let mut scale = step;
    for _ in 0..=restarts {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += scale;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            if (values[n] - values[0]).abs() <= 1e-15 * (1.0 + values[0].abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let towards = |t: f64| -> Vec<f64> {
                (0..n)
                    .map(|j| centroid[j] + t * (simplex[n][j] - centroid[j]))
                    .collect()
            };
            let reflected = towards(-1.0);
            let fr = f(&reflected);
            if fr < values[0] {
                let expanded = towards(-2.0);
                let fe = f(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
            } else {
                let contracted = if fr < values[n] { towards(-0.5) } else { towards(0.5) };
                let fc = f(&contracted);
                if fc < values[n].min(fr) {
                    simplex[n] = contracted;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n)
                            .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                            .collect();
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        best = simplex[i].clone();
        scale *= 0.1;
    }
    best
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `|a - b| / max(|b|, floor)` over coefficients.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_frobenius(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
