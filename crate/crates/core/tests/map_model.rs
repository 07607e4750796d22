mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use noisevec::map_model::{
    accumulate_stats, em_update_scaling, estimate_global_scaling, fit_scaling, log_posterior, map_estimate, read_prior,
    reconstruct_joint, train_prior, write_prior, EmConfig, MapPosterior, PriorConfig, RPolicy, ScalingFactors,
    StreamingMap, SufficientStats, R_MAX,
};
use noisevec::synth::{utterance_id, Sampler, SynthConfig};
use noisevec::{Error, FeatureMatrix, Label, LabeledUtterance, NoisePrior, SadLabels};
use proptest::prelude::*;

fn utterance(id: usize, speech: &[f64], silence: &[f64], dim: usize) -> LabeledUtterance {
    let mut data = speech.to_vec();
    data.extend_from_slice(silence);
    let (ns, nn) = (speech.len() / dim, silence.len() / dim);
    let labels: SadLabels = std::iter::repeat_n(Label::Speech, ns)
        .chain(std::iter::repeat_n(Label::Silence, nn))
        .collect();
    LabeledUtterance::new(
        format!("u{id}"),
        FeatureMatrix::new(ns + nn, dim, data).unwrap(),
        labels,
    )
    .unwrap()
}

fn synth(prior: NoisePrior, r: f64, utts: usize, frames: usize, seed: u64) -> Vec<LabeledUtterance> {
    let config = SynthConfig {
        prior,
        r: ScalingFactors::new(r, r).unwrap(),
        num_utterances: utts,
        frames_per_utterance: frames,
        speech_fraction: 0.5,
        segment_mean_length: 15.0,
        seed,
    };
    let sampler = Sampler::new(&config).unwrap();
    (0..utts)
        .map(|i| {
            let u = sampler.sample(i);
            LabeledUtterance::new(utterance_id(i), u.features, u.labels).unwrap()
        })
        .collect()
}

fn random_stats(g: &mut noisevec::synth::GaussianStream, d: usize, ns: usize, nn: usize) -> (FeatureMatrix, SadLabels) {
    let f = random_features(g, ns + nn, d, 1.5);
    let labels = std::iter::repeat_n(Label::Speech, ns)
        .chain(std::iter::repeat_n(Label::Silence, nn))
        .collect();
    (f, labels)
}

#[test]
fn worked_example_reconstructs() {
    let corpus: Vec<_> = [(1.0, 0.0), (3.0, 2.0), (2.0, 4.0)]
        .iter()
        .enumerate()
        .map(|(i, &(s, n))| utterance(i, &[s], &[n], 1))
        .collect();
    let config = PriorConfig {
        min_class_frames: 1,
        ridge_scale: 0.0,
        ..PriorConfig::default()
    };
    let (joint, prior) = train_prior(&corpus, &config).unwrap();
    let want_cov = [[2.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 8.0 / 3.0]];
    let want_prec = inv2(want_cov);
    for i in 0..2 {
        assert!((joint.mean[i] - 2.0).abs() < 1e-12);
        for j in 0..2 {
            assert!((joint.covariance[(i, j)] - want_cov[i][j]).abs() < 1e-12);
            assert!((joint.precision[(i, j)] - want_prec[i][j]).abs() < 1e-12);
        }
    }
    let back = reconstruct_joint(&prior).unwrap();
    assert!((back.precision[(1, 1)] - 0.5).abs() < 1e-12);
    assert!((&back.precision - &joint.precision).amax() < 1e-12);
}

#[test]
fn identical_means_give_ridge_only() {
    let corpus: Vec<_> = (0..7)
        .map(|i| utterance(i, &[1.0, 2.0, 1.0, 2.0], &[-1.0, 0.5], 2))
        .collect();
    let config = PriorConfig {
        min_class_frames: 1,
        ..PriorConfig::default()
    };
    let (joint, prior) = train_prior(&corpus, &config).unwrap();
    let eps = config.ridge_scale;
    assert!((&joint.covariance - DMatrix::identity(4, 4) * eps).amax() < 1e-20);
    assert!(prior.b().amax() < 1e-12);
    assert!((prior.a() - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-12);
}

#[test]
fn too_few_utterances() {
    let corpus: Vec<_> = (0..4).map(|i| utterance(i, &[i as f64], &[1.0], 1)).collect();
    match train_prior(&corpus, &PriorConfig::default()) {
        Err(Error::InsufficientData(msg)) => assert!(msg.contains("0 of 4"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn independent_blocks_when_b_is_zero() {
    let mut g = rng(30, 0);
    let ls = random_spd(&mut g, 3, 0.5);
    let ln = random_spd(&mut g, 3, 0.5);
    let prior = NoisePrior::new(
        DVector::from_vec(vec![1.0, 2.0, 3.0]),
        DVector::from_vec(vec![-1.0, 0.0, 1.0]),
        DMatrix::zeros(3, 3),
        ls.clone(),
        ln.clone(),
        1.0,
        1.0,
    )
    .unwrap();
    let joint = reconstruct_joint(&prior).unwrap();
    assert_eq!(joint.precision_block(0, 0), ls);
    assert_eq!(joint.precision_block(1, 1), ln);
    assert_eq!(joint.precision_block(0, 1), DMatrix::zeros(3, 3));
}

#[test]
fn joint_precision_inverts_covariance() {
    let mut g = rng(30, 1);
    let corpus = synth(random_prior(&mut g, 3), 2.0, 60, 100, 31);
    let (joint, _) = train_prior(&corpus, &PriorConfig::default()).unwrap();
    let id = &joint.precision * &joint.covariance;
    assert!((id - DMatrix::identity(6, 6)).amax() < 1e-8);
    assert_eq!(joint.precision_block(1, 0), joint.precision_block(0, 1).transpose());
}

#[test]
fn training_is_deterministic() {
    let mut g = rng(30, 2);
    let corpus = synth(random_prior(&mut g, 2), 1.0, 80, 60, 32);
    let (_, a) = train_prior(&corpus, &PriorConfig::default()).unwrap();
    let (_, b) = train_prior(&corpus, &PriorConfig::default()).unwrap();
    assert_eq!(a.to_text(), b.to_text());
}

#[test]
fn global_scaling_recovered_from_corpus() {
    let mut g = rng(30, 3);
    let corpus = synth(random_prior(&mut g, 2), 2.5, 300, 200, 33);
    let (_, prior) = train_prior(&corpus, &PriorConfig::default()).unwrap();
    let r = prior.global_scaling();
    assert!((r.r_s - 2.5).abs() / 2.5 < 0.1, "{r:?}");
    assert!((r.r_n - 2.5).abs() / 2.5 < 0.1, "{r:?}");
}

#[test]
fn prior_file_round_trip_and_errors() {
    let mut g = rng(30, 4);
    let prior = random_prior(&mut g, 3)
        .with_global_scaling(ScalingFactors::new(0.3, 7.0).unwrap())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.txt");
    write_prior(&prior, &path).unwrap();
    assert_eq!(read_prior(&path).unwrap(), prior);

    let text = prior.to_text();
    assert!(NoisePrior::parse(&text.replace("NVPRIOR1", "NVPRIOR2"), "m").is_err());
    assert!(NoisePrior::parse(&text.replace("[lambda_n]", "[lambda_x]"), "m").is_err());
    let not_pd = text.replacen("[lambda_s]\n", "[lambda_s]\n-", 1);
    assert!(matches!(
        NoisePrior::parse(&not_pd, "m"),
        Err(Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn precision_is_exactly_symmetric() {
    for i in 0..20 {
        let mut g = rng(31, i);
        let d = uniform_usize(&mut g, 1, 6);
        let prior = random_prior(&mut g, d);
        let (ns, nn) = (uniform_usize(&mut g, 0, 20), uniform_usize(&mut g, 0, 20));
        let (f, l) = random_stats(&mut g, d, ns, nn);
        let stats = accumulate_stats(&f, &l).unwrap();
        let r = ScalingFactors::new(0.1 + g.uniform(), 0.1 + 3.0 * g.uniform()).unwrap();
        let post = map_estimate(&stats, &prior, r).unwrap();
        assert_eq!(post.precision, post.precision.transpose());
        assert!((&post.precision * &post.covariance - DMatrix::identity(2 * d, 2 * d)).amax() < 1e-8);
    }
}

#[test]
fn continuous_in_r() {
    let mut g = rng(32, 0);
    let prior = random_prior(&mut g, 2);
    let (f, l) = random_stats(&mut g, 2, 6, 4);
    let stats = accumulate_stats(&f, &l).unwrap();
    let at = |rs: f64, rn: f64| {
        map_estimate(&stats, &prior, ScalingFactors::new(rs, rn).unwrap())
            .unwrap()
            .mean
    };
    let base = at(1.3, 0.7);
    let delta = 1e-6;
    for (ds, dn) in [(delta, 0.0), (0.0, delta)] {
        let one = (&at(1.3 + ds, 0.7 + dn) - &base).norm();
        let two = (&at(1.3 + 2.0 * ds, 0.7 + 2.0 * dn) - &base).norm();
        assert!(one < 1e-4, "{one}");
        assert!((two / one - 2.0).abs() < 1e-3, "{}", two / one);
    }
}

#[test]
fn mode_is_a_local_maximum_of_the_explicit_density() {
    let mut g = rng(33, 0);
    let prior = random_prior(&mut g, 2);
    let (f, l) = random_stats(&mut g, 2, 5, 5);
    let stats = accumulate_stats(&f, &l).unwrap();
    let (r_s, r_n) = (0.8, 1.7);
    let post = map_estimate(&stats, &prior, ScalingFactors::new(r_s, r_n).unwrap()).unwrap();
    let rs = rows(&f);
    let mode: Vec<f64> = post.mean.iter().copied().collect();
    let best = explicit_log_posterior(&rs, l.as_slice(), &prior, r_s, r_n, &mode);
    for _ in 0..1000 {
        let eta: Vec<f64> = (0..4).map(|_| g.standard_normal()).collect();
        let norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
        let radius = 0.1 * g.uniform();
        let x: Vec<f64> = mode.iter().zip(&eta).map(|(m, e)| m + radius * e / norm).collect();
        assert!(explicit_log_posterior(&rs, l.as_slice(), &prior, r_s, r_n, &x) <= best);
    }
}

#[test]
fn library_log_posterior_differs_from_oracle_by_a_constant() {
    let mut g = rng(33, 1);
    let prior = random_prior(&mut g, 2);
    let (f, l) = random_stats(&mut g, 2, 4, 6);
    let stats = accumulate_stats(&f, &l).unwrap();
    let r = ScalingFactors::new(1.2, 0.6).unwrap();
    let rs = rows(&f);
    let offsets: Vec<f64> = (0..10)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|_| g.standard_normal()).collect();
            log_posterior(&stats, &prior, r, &DVector::from_vec(x.clone())).unwrap()
                - explicit_log_posterior(&rs, l.as_slice(), &prior, r.r_s, r.r_n, &x)
        })
        .collect();
    for o in &offsets {
        assert!((o - offsets[0]).abs() < 1e-9);
    }
}

#[test]
fn em_update_unit_variance_example() {
    let lambda = DMatrix::identity(1, 1);
    let prior = NoisePrior::new(
        DVector::zeros(1),
        DVector::zeros(1),
        DMatrix::zeros(1, 1),
        lambda.clone(),
        lambda,
        1.0,
        1.0,
    )
    .unwrap();
    let f = FeatureMatrix::new(2, 1, vec![-1.0, 1.0]).unwrap();
    let stats = accumulate_stats(&f, &"SS".parse().unwrap()).unwrap();
    let point_mass = MapPosterior {
        mean: DVector::zeros(2),
        precision: DMatrix::identity(2, 2),
        covariance: DMatrix::zeros(2, 2),
    };
    let up = em_update_scaling(&stats, &prior, &point_mass, ScalingFactors::new(3.0, 5.0).unwrap()).unwrap();
    assert!((up.factors.r_s - 1.0).abs() < 1e-15);
    assert_eq!(up.factors.r_n, 5.0);
    assert!(!up.speech_degenerate);
}

#[test]
fn em_update_clamps_constant_data() {
    let prior = NoisePrior::new(
        DVector::zeros(1),
        DVector::zeros(1),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        1.0,
        1.0,
    )
    .unwrap();
    let f = FeatureMatrix::new(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
    let stats = accumulate_stats(&f, &"SSS".parse().unwrap()).unwrap();
    let point_mass = MapPosterior {
        mean: DVector::zeros(2),
        precision: DMatrix::identity(2, 2),
        covariance: DMatrix::zeros(2, 2),
    };
    let up = em_update_scaling(&stats, &prior, &point_mass, ScalingFactors::ONE).unwrap();
    assert_eq!(up.factors.r_s, R_MAX);
    assert!(up.speech_degenerate);
}

#[test]
fn global_scaling_of_one_and_duplicated_corpus() {
    let mut g = rng(34, 0);
    let prior = random_prior(&mut g, 3);
    let (f, l) = random_stats(&mut g, 3, 12, 9);
    let stats = accumulate_stats(&f, &l).unwrap();
    let r = ScalingFactors::new(0.7, 1.9).unwrap();
    let post = map_estimate(&stats, &prior, r).unwrap();
    let single = em_update_scaling(&stats, &prior, &post, r).unwrap().factors;
    let one = estimate_global_scaling(std::slice::from_ref(&stats), std::slice::from_ref(&post), &prior).unwrap();
    let two = estimate_global_scaling(&[stats.clone(), stats.clone()], &[post.clone(), post.clone()], &prior).unwrap();
    for got in [one.factors, two.factors] {
        assert!((got.r_s - single.r_s).abs() < 1e-12 * single.r_s);
        assert!((got.r_n - single.r_n).abs() < 1e-12 * single.r_n);
    }
    assert!(estimate_global_scaling(&[SufficientStats::zeros(3)], &[post], &prior).is_err());
}

#[test]
fn em_recovers_true_r_per_utterance() {
    let mut g = rng(35, 0);
    let prior = random_prior(&mut g, 2);
    let u = &synth(prior.clone(), 4.0, 1, 100_000, 35)[0];
    let stats = accumulate_stats(u.features(), u.labels()).unwrap();
    let fit = fit_scaling(&stats, &prior, ScalingFactors::ONE, &EmConfig::default()).unwrap();
    assert!(fit.converged);
    assert!((fit.factors.r_s - 4.0).abs() / 4.0 < 0.1, "{:?}", fit.factors);
    assert!((fit.factors.r_n - 4.0).abs() / 4.0 < 0.1, "{:?}", fit.factors);
}

#[test]
fn streaming_map_matches_batch() {
    let mut g = rng(36, 0);
    let prior = random_prior(&mut g, 3)
        .with_global_scaling(ScalingFactors::new(0.5, 2.0).unwrap())
        .unwrap();
    let (f, _) = random_stats(&mut g, 3, 20, 20);
    let l = random_labels(&mut g, 40, 0.4);
    for policy in [RPolicy::FixedOne, RPolicy::Global] {
        let mut s = StreamingMap::new(prior.clone(), policy);
        for (frame, label) in f.frames().zip(l.iter()) {
            s.push(frame, label).unwrap();
        }
        let stats = accumulate_stats(&f, &l).unwrap();
        let batch = map_estimate(&stats, &prior, policy.initial(&prior)).unwrap();
        let got = s.estimate().unwrap().to_vec();
        assert!(max_abs_diff(&got, batch.mean.as_slice()) < 1e-10);
    }
    let mut s = StreamingMap::new(prior, RPolicy::Global);
    assert!(s.push(&[1.0, 2.0], Label::Speech).is_err());
}

proptest! {
    #[test]
    fn em_update_ignores_frame_order(seed in 0u64..1000) {
        let mut g = rng(37, seed);
        let prior = random_prior(&mut g, 2);
        let f = random_features(&mut g, 30, 2, 2.0);
        let l = random_labels(&mut g, 30, 0.5);
        let rev_rows: Vec<Vec<f64>> = rows(&f).into_iter().rev().collect();
        let rev_f = FeatureMatrix::from_rows(&rev_rows, 2).unwrap();
        let rev_l: SadLabels = l.as_slice().iter().rev().copied().collect();
        let r = ScalingFactors::ONE;
        let update = |f: &FeatureMatrix, l: &SadLabels| {
            let s = accumulate_stats(f, l).unwrap();
            let p = map_estimate(&s, &prior, r).unwrap();
            em_update_scaling(&s, &prior, &p, r).unwrap().factors
        };
        let (a, b) = (update(&f, &l), update(&rev_f, &rev_l));
        prop_assert!((a.r_s - b.r_s).abs() <= 1e-10 * a.r_s);
        prop_assert!((a.r_n - b.r_n).abs() <= 1e-10 * a.r_n);
    }
}
