use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::matrix::Matrix;

fn random_input(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Matrix<f64> {
    Matrix::from_vec(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_net(spec: ModelSpec, seed: u64, scale: f64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = param_count(&spec);
    let params = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Network::from_params(spec, params).unwrap()
}

/// Pulls a named segment out of a flat parameter vector as a dense
/// `rows x cols` block, multiplying factors when the block is factorized.
fn dense(net: &Network<f64>, name: &str, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let segs = net.layout().segments(net.spec());
    let find = |n: &str| segs.iter().find(|s| s.0 == n).map(|s| &net.params()[s.1..s.1 + s.2]);
    if let Some(w) = find(name) {
        return (0..rows).map(|r| w[r * cols..(r + 1) * cols].to_vec()).collect();
    }
    let a = find(&format!("{name}.a")).unwrap();
    let b = find(&format!("{name}.b")).unwrap();
    let k = a.len() / rows;
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| (0..k).map(|i| a[r * k + i] * b[i * cols + c]).sum())
                .collect()
        })
        .collect()
}

fn seg(net: &Network<f64>, name: &str) -> Vec<f64> {
    let s = net.layout().segments(net.spec()).into_iter().find(|s| s.0 == name).unwrap();
    net.params()[s.1..s.1 + s.2].to_vec()
}

/// Straight scalar transcription of the LSTM recurrence.
fn oracle_logits(net: &Network<f64>, x: &Matrix<f64>) -> Vec<Vec<f64>> {
    let spec = net.spec();
    let (h, rd) = (spec.hidden, spec.recurrent_dim());
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut seq: Vec<Vec<f64>> = x.iter_rows().map(|r| r.to_vec()).collect();
    for l in 0..spec.layers {
        let nin = spec.layer_input_dim(l);
        let w = dense(net, &format!("lstm{l}.gates"), nin + rd, 4 * h);
        let bias = seg(net, &format!("lstm{l}.bias"));
        let peep = if spec.peepholes { seg(net, &format!("lstm{l}.peephole")) } else { vec![0.0; 3 * h] };
        let proj = (spec.projection > 0).then(|| dense(net, &format!("lstm{l}.proj"), h, rd));
        let mut r = vec![0.0; rd];
        let mut c = vec![0.0; h];
        let mut out = Vec::new();
        for xt in &seq {
            let input: Vec<f64> = xt.iter().chain(r.iter()).copied().collect();
            let z: Vec<f64> = (0..4 * h)
                .map(|j| bias[j] + input.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>())
                .collect();
            let mut m = vec![0.0; h];
            for j in 0..h {
                let ig = sig(z[j] + peep[j] * c[j]);
                let fg = sig(z[h + j] + peep[h + j] * c[j]);
                let g = z[2 * h + j].tanh();
                c[j] = fg * c[j] + ig * g;
                let og = sig(z[3 * h + j] + peep[2 * h + j] * c[j]);
                m[j] = og * c[j].tanh();
            }
            r = match &proj {
                None => m,
                Some(p) => (0..rd).map(|o| (0..h).map(|j| m[j] * p[j][o]).sum()).collect(),
            };
            out.push(r.clone());
        }
        seq = out;
    }
    let w = dense(net, "output", rd, spec.output_dim);
    let b = seg(net, "output.bias");
    seq.iter()
        .map(|r| (0..spec.output_dim).map(|o| b[o] + (0..rd).map(|i| r[i] * w[i][o]).sum::<f64>()).collect())
        .collect()
}

fn variants() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(3, 1, 4, 0, 3),
        ModelSpec::new(3, 2, 4, 2, 3).with_peepholes(true),
        ModelSpec::new(4, 2, 3, 2, 5)
            .with_peepholes(true)
            .with_rank(BlockId::Gates(0), 2)
            .with_rank(BlockId::Projection(1), 1)
            .with_rank(BlockId::Output, 2),
    ]
}

#[test]
fn zero_network_gives_uniform_posteriors() {
    let net = Network::<f64>::zeros(ModelSpec::new(3, 2, 4, 2, 5)).unwrap();
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(1), 7, 3);
    let post = net.forward(&x).unwrap().posteriors();
    for t in 0..7 {
        for i in 0..5 {
            assert!((post.get(t, i) - 0.2).abs() < 1e-15);
        }
    }
}

#[test]
fn forward_matches_scalar_recurrence() {
    for (i, spec) in variants().into_iter().enumerate() {
        let net = random_net(spec.clone(), 10 + i as u64, 0.5);
        let x = random_input(&mut ChaCha8Rng::seed_from_u64(i as u64), 6, spec.input_dim);
        let pass = net.forward(&x).unwrap();
        let want = oracle_logits(&net, &x);
        assert_eq!(pass.logits.rows(), 6);
        assert_eq!(pass.logits.cols(), spec.output_dim);
        for (t, row) in want.iter().enumerate() {
            for (o, &v) in row.iter().enumerate() {
                assert!((pass.logits.get(t, o) - v).abs() < 1e-12, "variant {i} t={t} o={o}");
            }
        }
        let post = pass.posteriors();
        Posteriorgram::new(post.matrix().clone()).unwrap();
    }
}

#[test]
fn input_width_is_checked() {
    let net = Network::<f64>::zeros(ModelSpec::new(3, 1, 2, 0, 2)).unwrap();
    assert!(matches!(net.forward(&Matrix::zeros(4, 5)), Err(NetError::Dimension(_))));
}

fn loss_logits(net: &Network<f64>, x: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    let p = net.forward(x).unwrap();
    p.logits.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

fn loss_post(net: &Network<f64>, x: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    let p = net.forward(x).unwrap().posteriors();
    p.matrix().as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

fn check_gradient(spec: ModelSpec, seed: u64, through_softmax: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_net(spec.clone(), seed ^ 0xabc, 0.6);
    let t = rng.gen_range(1..6);
    let x = random_input(&mut rng, t, spec.input_dim);
    let w = random_input(&mut rng, t, spec.output_dim);
    let pass = net.forward(&x).unwrap();
    let up = if through_softmax { Upstream::Posteriors(&w) } else { Upstream::Logits(&w) };
    let grad = net.backward(&pass, up).unwrap();
    let loss = if through_softmax { loss_post } else { loss_logits };
    let eps = 1e-4;
    for i in 0..net.num_params() {
        let mut plus = net.clone();
        plus.params_mut()[i] += eps;
        let mut minus = net.clone();
        minus.params_mut()[i] -= eps;
        let fd = (loss(&plus, &x, &w) - loss(&minus, &x, &w)) / (2.0 * eps);
        let scale = fd.abs().max(grad[i].abs()).max(1e-2);
        assert!(
            (fd - grad[i]).abs() <= 1e-4 * scale,
            "param {i}: analytic {} numeric {fd} (seed {seed})",
            grad[i]
        );
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (i, spec) in variants().into_iter().enumerate() {
        check_gradient(spec.clone(), i as u64, false);
        check_gradient(spec, 100 + i as u64, true);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradients_match_finite_differences_random(seed in 0u64..10_000, variant in 0usize..3, soft in any::<bool>()) {
        check_gradient(variants()[variant].clone(), seed, soft);
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let net = random_net(variants()[2].clone(), 5, 0.5);
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(2), 5, 4);
    let pass = net.forward(&x).unwrap();
    let grad = net.backward(&pass, Upstream::Logits(&Matrix::zeros(5, 5))).unwrap();
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn gradients_add_over_utterances() {
    let net = random_net(variants()[1].clone(), 9, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (xa, xb) = (random_input(&mut rng, 4, 3), random_input(&mut rng, 6, 3));
    let (wa, wb) = (random_input(&mut rng, 4, 3), random_input(&mut rng, 6, 3));
    let ga = net.backward(&net.forward(&xa).unwrap(), Upstream::Logits(&wa)).unwrap();
    let gb = net.backward(&net.forward(&xb).unwrap(), Upstream::Logits(&wb)).unwrap();
    let eps = 1e-5;
    for i in 0..net.num_params() {
        let mut plus = net.clone();
        plus.params_mut()[i] += eps;
        let mut minus = net.clone();
        minus.params_mut()[i] -= eps;
        let total = |n: &Network<f64>| loss_logits(n, &xa, &wa) + loss_logits(n, &xb, &wb);
        let fd = (total(&plus) - total(&minus)) / (2.0 * eps);
        assert!((fd - (ga[i] + gb[i])).abs() < 1e-6 * fd.abs().max(1.0));
    }
}

#[test]
fn stale_cache_is_rejected() {
    let mut net = random_net(variants()[0].clone(), 1, 0.5);
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(4), 3, 3);
    let pass = net.forward(&x).unwrap();
    net.params_mut()[0] += 1.0;
    let w = Matrix::zeros(3, 3);
    assert!(matches!(net.backward(&pass, Upstream::Logits(&w)), Err(NetError::StaleCache)));
}

#[test]
fn upstream_shape_is_checked() {
    let net = random_net(variants()[0].clone(), 1, 0.5);
    let pass = net.forward(&Matrix::zeros(3, 3)).unwrap();
    let w = Matrix::zeros(2, 3);
    assert!(matches!(net.backward(&pass, Upstream::Logits(&w)), Err(NetError::Dimension(_))));
}

#[test]
fn full_rank_svd_preserves_outputs() {
    let spec = ModelSpec::new(5, 2, 4, 3, 4).with_peepholes(true);
    let net = random_net(spec.clone(), 21, 0.4);
    let mut ranks = BTreeMap::new();
    for id in spec.blocks() {
        let (m, n) = spec.block_shape(id);
        ranks.insert(id, m.min(n));
    }
    let small = svd_compress(&net, &ranks).unwrap();
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(8), 9, 5);
    let a = net.forward(&x).unwrap().logits;
    let b = small.forward(&x).unwrap().logits;
    for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((u - v).abs() < 1e-5);
    }
}

#[test]
fn rank_one_block_is_reproduced_exactly() {
    let spec = ModelSpec::new(3, 1, 2, 0, 4);
    let mut net = random_net(spec.clone(), 2, 0.4);
    let out = net.layout().output;
    let (u, v) = ([0.3, -0.7], [1.0, 0.5, -0.25, 2.0]);
    for r in 0..2 {
        for c in 0..4 {
            net.params_mut()[out.offset + r * 4 + c] = u[r] * v[c];
        }
    }
    let small = svd_compress(&net, &BTreeMap::from([(BlockId::Output, 1)])).unwrap();
    let f = small.layout().output;
    let p = small.params();
    for r in 0..2 {
        for c in 0..4 {
            let got = p[f.first()][r] * p[f.second()][c];
            assert!((got - u[r] * v[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn svd_rank_bounds_are_checked() {
    let net = random_net(ModelSpec::new(3, 1, 2, 0, 4), 2, 0.4);
    let err = svd_compress(&net, &BTreeMap::from([(BlockId::Output, 3)])).unwrap_err();
    assert!(matches!(err, NetError::Rank { max: 2, .. }));
    let err = svd_compress(&net, &BTreeMap::from([(BlockId::Projection(0), 1)])).unwrap_err();
    assert!(matches!(err, NetError::Spec(_)));
}

#[test]
fn rank_selection_respects_budget() {
    let spec = ModelSpec::new(12, 2, 8, 4, 3).with_peepholes(true);
    let net = random_net(spec.clone(), 4, 0.3);
    let blocks = [BlockId::Gates(0), BlockId::Gates(1)];
    let full = param_count(&spec);
    let budget = full * 2 / 3;
    let ranks = select_svd_ranks(&net, &blocks, 0.9, Some(budget)).unwrap();
    let small = svd_compress(&net, &ranks).unwrap();
    assert!(small.num_params() <= budget);
    // Energy-only selection keeps every rank within bounds.
    let ranks = select_svd_ranks(&net, &blocks, 1.0, None).unwrap();
    for (id, k) in ranks {
        let (m, n) = spec.block_shape(id);
        assert_eq!(k, m.min(n));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let spec = variants()[2].clone();
    let net = random_net(spec, 33, 0.5).cast::<f32>();
    let bytes = write_checkpoint(&net);
    let back: Network<f32> = read_checkpoint(&bytes).unwrap();
    assert_eq!(back.spec(), net.spec());
    let same = back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);
    assert!(matches!(read_checkpoint::<f64>(&bytes), Err(NetError::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint::<f32>(&bad).is_err());
    assert!(read_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn posteriorgram_validation() {
    assert!(Posteriorgram::new(Matrix::from_rows(&[vec![0.5, 0.5]])).is_ok());
    assert!(Posteriorgram::new(Matrix::from_rows(&[vec![0.5, 0.6]])).is_err());
    assert!(Posteriorgram::new(Matrix::from_rows(&[vec![1.5, -0.5]])).is_err());
    let p = Posteriorgram::one_hot(&[1, 0], 3).unwrap();
    assert_eq!(p.argmax(), vec![1, 0]);
}
