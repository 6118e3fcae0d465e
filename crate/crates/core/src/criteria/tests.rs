use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::matrix::softmax_row;
use crate::netcore::ModelSpec;

fn random_logits(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Matrix<f64> {
    Matrix::from_vec(t, n, (0..t * n).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn fd_check(logits: &Matrix<f64>, grad: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) {
    let eps = 1e-5;
    for i in 0..logits.as_slice().len() {
        let mut p = logits.clone();
        p.as_mut_slice()[i] += eps;
        let mut m = logits.clone();
        m.as_mut_slice()[i] -= eps;
        let fd = (f(&p) - f(&m)) / (2.0 * eps);
        let g = grad.as_slice()[i];
        assert!((fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1.0), "entry {i}: {g} vs {fd}");
    }
}

#[test]
fn kl_examples() {
    let p = [0.2, 0.3, 0.5];
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-15);
    assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    assert!(kl_divergence(&[0.6, 0.6], &[0.5, 0.5]).is_err());
}

#[test]
fn kl_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(2..8);
        let (p, q) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let mut direct = 0.0;
        for i in 0..n {
            if p[i] > 0.0 {
                direct += p[i] * (p[i] / q[i].max(1e-12)).ln();
            }
        }
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl >= 0.0);
        assert!((kl - direct).abs() < 1e-12);
    }
}

#[test]
fn soft_ce_with_one_hot_teacher_is_hard_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let logits = random_logits(&mut rng, 6, 4);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
        let soft = soft_ce_loss(&Posteriorgram::one_hot(&labels, 4).unwrap(), &logits).unwrap();
        let hard = hard_ce_loss(&labels, &logits).unwrap();
        assert!((soft.value - hard.value).abs() < 1e-12);
        for (a, b) in soft.grad.as_slice().iter().zip(hard.grad.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn soft_ce_stationary_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = random_logits(&mut rng, 5, 6);
    let teacher = Posteriorgram::from_logits(&logits);
    let loss = soft_ce_loss(&teacher, &logits).unwrap();
    assert!(loss.grad.as_slice().iter().all(|g| g.abs() < 1e-15));
    assert!((loss.value - posteriorgram_entropy(&teacher)).abs() < 1e-12);
}

#[test]
fn soft_ce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let logits = random_logits(&mut rng, 4, 5);
        let teacher = Posteriorgram::from_logits(&random_logits(&mut rng, 4, 5));
        let loss = soft_ce_loss(&teacher, &logits).unwrap();
        fd_check(&logits, &loss.grad, |l| soft_ce_loss(&teacher, l).unwrap().value);
    }
    assert!(soft_ce_loss(&Posteriorgram::one_hot(&[0], 2).unwrap(), &Matrix::zeros(1, 3)).is_err());
}

#[test]
fn soft_ce_minus_entropy_is_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (t, n) = (rng.gen_range(1..8), rng.gen_range(2..7));
        let logits = random_logits(&mut rng, t, n);
        let teacher = Posteriorgram::from_logits(&random_logits(&mut rng, t, n).map(|v| v * 2.0));
        let ce = soft_ce_loss(&teacher, &logits).unwrap().value;
        let student = Posteriorgram::from_logits(&logits);
        let kl: f64 = (0..t).map(|f| kl_divergence(teacher.row(f), student.row(f)).unwrap()).sum();
        assert!((ce - posteriorgram_entropy(&teacher) - kl).abs() < 1e-9);
    }
}

#[test]
fn hard_ce_examples() {
    let loss = hard_ce_loss(&[0, 3, 1], &Matrix::zeros(3, 4)).unwrap();
    assert!((loss.value - 3.0 * 4f64.ln()).abs() < 1e-12);
    let peaked = Matrix::from_rows(&[vec![50.0, 0.0], vec![0.0, 50.0]]);
    assert!(hard_ce_loss(&[0, 1], &peaked).unwrap().value < 1e-20);
    assert!(matches!(hard_ce_loss(&[2], &Matrix::zeros(1, 2)), Err(CriterionError::Label { .. })));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let logits = random_logits(&mut rng, 4, 5);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        let loss = hard_ce_loss(&labels, &logits).unwrap();
        fd_check(&logits, &loss.grad, |l| hard_ce_loss(&labels, l).unwrap().value);
    }
}

#[test]
fn interpolation_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random_logits(&mut rng, 3, 4);
    let teacher = Posteriorgram::from_logits(&random_logits(&mut rng, 3, 4));
    let labels = [1, 2, 0];
    let soft = soft_ce_loss(&teacher, &logits).unwrap();
    let hard = hard_ce_loss(&labels, &logits).unwrap();
    assert_eq!(interpolated_loss(1.0, &teacher, None, &logits).unwrap(), soft);
    let zero = interpolated_loss(0.0, &teacher, Some(&labels), &logits).unwrap();
    assert!((zero.value - hard.value).abs() < 1e-12);
    let half = interpolated_loss(0.5, &teacher, Some(&labels), &logits).unwrap();
    assert!((half.value - 0.5 * (soft.value + hard.value)).abs() < 1e-12);
    assert!(interpolated_loss(0.5, &teacher, None, &logits).is_err());
}

fn features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
    FeatureSequence::new(
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0f32)).collect()),
        10.0,
    )
    .unwrap()
}

fn teacher(seed: u64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::new(3, 1, 4, 2, 4).with_peepholes(true);
    let n = crate::netcore::param_count(&spec);
    Network::from_params(spec, (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap()
}

#[test]
fn ts_adaptation_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = teacher(1);
    for _ in 0..20 {
        let t = rng.gen_range(1..7);
        let pair = ParallelPair::new(features(&mut rng, t, 3), features(&mut rng, t, 3)).unwrap();
        let logits = random_logits(&mut rng, t, 4);
        let loss = ts_adaptation_loss(&net, &logits, &pair).unwrap();
        let explicit = soft_ce_loss(&net.posteriors(pair.source()).unwrap(), &logits).unwrap();
        assert_eq!(loss, explicit);
        fd_check(&logits, &loss.grad, |l| ts_adaptation_loss(&net, l, &pair).unwrap().value);
    }
}

#[test]
fn ts_adaptation_fixed_point_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = teacher(2);
    let x = features(&mut rng, 5, 3);
    let pair = ParallelPair::new(x.clone(), x.clone()).unwrap();
    let logits = net.forward_features(&x).unwrap().logits;
    let loss = ts_adaptation_loss(&net, &logits, &pair).unwrap();
    assert!(loss.grad.as_slice().iter().all(|g| g.abs() < 1e-15));
    let short = features(&mut rng, 4, 3);
    assert!(matches!(ParallelPair::new(x.clone(), short), Err(CriterionError::Unpaired { .. })));
    assert!(ts_adaptation_loss(&net, &Matrix::zeros(5, 3), &pair).is_err());
}

#[test]
fn losses_add_over_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let logits = random_logits(&mut rng, 6, 3);
    let labels = [0, 1, 2, 2, 1, 0];
    let whole = hard_ce_loss(&labels, &logits).unwrap().value;
    let split: f64 = (0..6)
        .map(|t| hard_ce_loss(&labels[t..t + 1], &Matrix::from_rows(&[logits.row(t).to_vec()])).unwrap().value)
        .sum();
    assert!((whole - split).abs() < 1e-12);
    let mut p = vec![0.0; 3];
    softmax_row(logits.row(0), &mut p);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
