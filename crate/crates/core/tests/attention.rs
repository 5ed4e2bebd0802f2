//! Attention block against a plain-loop reference, and softmax row
//! properties over random masked instances.

use lamp_core::autodiff::{Graph, Tensor, LAYER_NORM_EPS};
use lamp_core::{MpnnBlockParams, NeighborhoodMask, ParamStore, Rng};
use proptest::prelude::*;

struct Fixture {
    store: ParamStore<f64>,
    block: MpnnBlockParams,
}

fn fixture(d: usize, heads: usize, seed: u64) -> Fixture {
    let mut rng = Rng::seed(seed);
    let mut store = ParamStore::new();
    let block = MpnnBlockParams::init(&mut store, "blk", d, heads, &mut rng).unwrap();
    // non-trivial biases and gains so the reference exercises every term
    for id in [block.b1, block.b2, block.ln1_gain, block.ln1_bias, block.ln2_gain, block.ln2_bias] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.uniform_range(-0.5, 1.5);
        }
    }
    Fixture { store, block }
}

fn random_nodes(b: usize, n: usize, d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..b * n * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// `x · W` for row-major `x: n×d`, `W: d×e`.
fn matmul(x: &[f64], w: &[f64], n: usize, d: usize, e: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * e];
    for i in 0..n {
        for j in 0..e {
            for k in 0..d {
                out[i * e + j] += x[i * d + k] * w[k * e + j];
            }
        }
    }
    out
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = gain.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        for j in 0..d {
            out.push((row[j] - mean) / (var + LAYER_NORM_EPS).sqrt() * gain[j] + bias[j]);
        }
    }
    out
}

/// One batch item of `step` with dropout off, written as loops.
/// Returns the output states and the attention weights `[K][R][C]`.
fn reference_step(f: &Fixture, recv: &[f64], send: &[f64], r: usize, c: usize, mask: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let (d, heads) = (f.block.d, f.block.heads);
    let dh = d / heads;
    let p = |id| f.store.get(id).data();
    let q = matmul(recv, p(f.block.wq), r, d, d);
    let k = matmul(send, p(f.block.wu), c, d, d);
    let v = matmul(send, p(f.block.wv), c, d, d);
    let mut alpha = vec![0.0; heads * r * c];
    let mut merged = vec![0.0; r * d];
    for h in 0..heads {
        for i in 0..r {
            let mut scores = vec![f64::NEG_INFINITY; c];
            for j in 0..c {
                if mask[i * c + j] {
                    let dot: f64 = (0..dh).map(|t| q[i * d + h * dh + t] * k[j * d + h * dh + t]).sum();
                    scores[j] = dot / (d as f64).sqrt();
                }
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..c {
                let a = (scores[j] - max).exp() / z;
                alpha[(h * r + i) * c + j] = a;
                for t in 0..dh {
                    merged[i * d + h * dh + t] += a * v[j * d + h * dh + t];
                }
            }
        }
    }
    let attn = matmul(&merged, p(f.block.wc), r, d, d);
    let pre1: Vec<f64> = recv.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let h1 = layer_norm(&pre1, p(f.block.ln1_gain), p(f.block.ln1_bias));
    let mut hidden = matmul(&h1, p(f.block.wr), r, d, d);
    for (i, x) in hidden.iter_mut().enumerate() {
        *x = (*x + p(f.block.b1)[i % d]).max(0.0);
    }
    let mut mlp = matmul(&hidden, p(f.block.wb), r, d, d);
    for (i, x) in mlp.iter_mut().enumerate() {
        *x += p(f.block.b2)[i % d];
    }
    let pre2: Vec<f64> = h1.iter().zip(&mlp).map(|(a, b)| a + b).collect();
    (layer_norm(&pre2, p(f.block.ln2_gain), p(f.block.ln2_bias)), alpha)
}

fn random_mask(b: usize, r: usize, c: usize, rng: &mut Rng) -> NeighborhoodMask {
    let mut data: Vec<bool> = (0..b * r * c).map(|_| rng.bernoulli(0.6)).collect();
    for row in data.chunks_mut(c) {
        if !row.iter().any(|&m| m) {
            row[rng.below(c)] = true;
        }
    }
    NeighborhoodMask::new(b, r, c, data).unwrap()
}

#[test]
fn step_matches_loop_reference() {
    let mut rng = Rng::seed(40);
    for (case, &(d, heads, b, r, c)) in [(8, 2, 2, 3, 5), (6, 3, 1, 4, 4), (4, 1, 3, 2, 1), (8, 4, 2, 5, 3)].iter().enumerate() {
        let f = fixture(d, heads, case as u64);
        let recv = random_nodes(b, r, d, &mut rng);
        let send = random_nodes(b, c, d, &mut rng);
        let mask = random_mask(b, r, c, &mut rng);

        let mut g = Graph::new();
        let pv = f.store.bind(&mut g, false);
        let rv = g.constant(Tensor::new([b, r, d], recv.clone()).unwrap());
        let sv = g.constant(Tensor::new([b, c, d], send.clone()).unwrap());
        let (out, alpha) = f.block.step(&mut g, &pv, rv, sv, &mask, 0.3, false, &mut rng).unwrap();
        let (out, alpha) = (g.value(out).data(), g.value(alpha).data());

        for item in 0..b {
            let (want_out, want_alpha) = reference_step(
                &f,
                &recv[item * r * d..(item + 1) * r * d],
                &send[item * c * d..(item + 1) * c * d],
                r,
                c,
                &mask.data()[item * r * c..(item + 1) * r * c],
            );
            let got_out = &out[item * r * d..(item + 1) * r * d];
            let got_alpha = &alpha[item * heads * r * c..(item + 1) * heads * r * c];
            for (x, y) in got_out.iter().zip(&want_out) {
                assert!((x - y).abs() < 1e-12, "case {case}: state {x} vs {y}");
            }
            for (x, y) in got_alpha.iter().zip(&want_alpha) {
                assert!((x - y).abs() < 1e-12, "case {case}: weight {x} vs {y}");
            }
        }
    }
}

#[test]
fn attend_messages_adds_the_receivers() {
    let f = fixture(4, 2, 9);
    let mut rng = Rng::seed(3);
    let recv = random_nodes(1, 2, 4, &mut rng);
    let send = random_nodes(1, 3, 4, &mut rng);
    let mask = NeighborhoodMask::full(1, 2, 3);
    let mut g = Graph::new();
    let pv = f.store.bind(&mut g, false);
    let rv = g.constant(Tensor::new([1, 2, 4], recv.clone()).unwrap());
    let sv = g.constant(Tensor::new([1, 3, 4], send).unwrap());
    let (core, _) = f.block.attention_core(&mut g, &pv, rv, sv, &mask).unwrap();
    let (msg, _) = f.block.attend_messages(&mut g, &pv, rv, sv, &mask).unwrap();
    for ((m, c), x) in g.value(msg).data().iter().zip(g.value(core).data()).zip(&recv) {
        assert_eq!(*m, c + x);
    }
}

#[test]
fn single_neighbour_gets_all_the_weight() {
    let f = fixture(8, 4, 2);
    let mut rng = Rng::seed(5);
    let mask = NeighborhoodMask::from_fn(1, 3, 4, |_, r, c| r == c);
    let mut g = Graph::new();
    let pv = f.store.bind(&mut g, false);
    let rv = g.constant(Tensor::new([1, 3, 8], random_nodes(1, 3, 8, &mut rng)).unwrap());
    let sv = g.constant(Tensor::new([1, 4, 8], random_nodes(1, 4, 8, &mut rng)).unwrap());
    let (_, alpha) = f.block.attention_core(&mut g, &pv, rv, sv, &mask).unwrap();
    for (i, &a) in g.value(alpha).data().iter().enumerate() {
        let (r, c) = ((i / 4) % 3, i % 4);
        assert_eq!(a, if r == c { 1.0 } else { 0.0 });
    }
}

#[test]
fn mask_shape_mismatch_is_rejected() {
    let f = fixture(4, 2, 1);
    let mut g = Graph::new();
    let pv = f.store.bind(&mut g, false);
    let rv = g.constant(Tensor::zeros([1, 2, 4]));
    let sv = g.constant(Tensor::zeros([1, 3, 4]));
    let mask = NeighborhoodMask::full(1, 3, 2);
    assert!(f.block.attention_core(&mut g, &pv, rv, sv, &mask).is_err());
}

/// Every row of `c` weights sums to one within 1e-6.
fn check_rows(alpha: &[f64], c: usize) -> Result<(), TestCaseError> {
    for (row, weights) in alpha.chunks(c).enumerate() {
        let sum: f64 = weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6, "row {} sums to {}", row, sum);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn masked_rows_are_distributions(
        seed in any::<u64>(),
        b in 1usize..4,
        r in 1usize..6,
        c in 1usize..7,
        shape in prop::sample::select(vec![(4usize, 1usize), (4, 2), (8, 2), (8, 4), (6, 3)]),
        spread in prop::sample::select(vec![0.1f64, 1.0, 10.0]),
    ) {
        let (d, heads) = shape;
        let f = fixture(d, heads, seed);
        let mut rng = Rng::seed(seed ^ 0x9e37);
        let mask = random_mask(b, r, c, &mut rng);
        let recv: Vec<f64> = random_nodes(b, r, d, &mut rng).iter().map(|v| v * spread).collect();
        let send: Vec<f64> = random_nodes(b, c, d, &mut rng).iter().map(|v| v * spread).collect();
        let mut g = Graph::new();
        let pv = f.store.bind(&mut g, false);
        let rv = g.constant(Tensor::new([b, r, d], recv).unwrap());
        let sv = g.constant(Tensor::new([b, c, d], send).unwrap());
        let (_, alpha) = f.block.attention_core(&mut g, &pv, rv, sv, &mask).unwrap();
        let alpha = g.value(alpha).data();
        let expanded = mask.per_head(heads);
        prop_assert_eq!(alpha.len(), expanded.len());
        for (i, (&a, &m)) in alpha.iter().zip(&expanded).enumerate() {
            if !m {
                prop_assert!(a == 0.0 && a.is_sign_positive(), "masked entry {} is {}", i, a);
            }
        }
        check_rows(alpha, c)?;
    }
}
