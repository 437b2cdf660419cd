use super::gradcheck::{check, random_tensor, weighted_sum};
use super::*;

fn weights_for(shape: &[usize], seed: u64) -> Vec<f64> {
    random_tensor(shape, 1.0, seed).into_data()
}

#[test]
fn matmul_identity_and_hand_case() {
    let g = Graph::new();
    let id = g.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    let m = Tensor::from_rows(&[vec![2.0, -1.0], vec![0.5, 3.0]]).unwrap();
    let mv = g.leaf(m.clone()).unwrap();
    assert_eq!(*g.value(g.matmul(id, mv).unwrap()), m);

    let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let b = g.leaf(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap()).unwrap();
    assert_eq!(g.value(g.matmul(a, b).unwrap()).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(crate::Error::Shape { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let inputs = [random_tensor(&[3, 4], 1.0, 1), random_tensor(&[4, 2], 1.0, 2)];
    let r = check(&inputs, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        g.sum(y)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn non_finite_values_are_rejected() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(1000.0)).unwrap();
    let y = g.exp(x);
    assert!(matches!(y, Err(crate::Error::NonFinite { .. })));
    assert!(g.leaf(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn conv1d_identity_kernel() {
    let g = Graph::new();
    let xt = random_tensor(&[5, 3], 1.0, 3);
    let x = g.leaf(xt.clone()).unwrap();
    let mut w = Tensor::zeros(&[1, 3, 3]);
    for i in 0..3 {
        w.data_mut()[i * 3 + i] = 1.0;
    }
    let w = g.leaf(w).unwrap();
    let b = g.leaf(Tensor::zeros(&[3])).unwrap();
    let y = g.conv1d(x, w, b, 1, Padding::Same).unwrap();
    assert_eq!(*g.value(y), xt);
}

#[test]
fn conv1d_shapes() {
    let g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[5, 2])).unwrap();
    let w = g.leaf(Tensor::zeros(&[3, 2, 4])).unwrap();
    let b = g.leaf(Tensor::zeros(&[4])).unwrap();
    assert_eq!(g.shape(g.conv1d(x, w, b, 1, Padding::Same).unwrap()), [5, 4]);
    assert_eq!(g.shape(g.conv1d(x, w, b, 2, Padding::Same).unwrap()), [3, 4]);
    assert_eq!(g.shape(g.conv1d(x, w, b, 1, Padding::Valid).unwrap()), [3, 4]);
    let even = g.leaf(Tensor::zeros(&[2, 2, 4])).unwrap();
    assert!(g.conv1d(x, even, b, 1, Padding::Same).is_err());
    let empty = g.leaf(Tensor::zeros(&[0, 2])).unwrap();
    assert!(g.conv1d(empty, w, b, 1, Padding::Same).is_err());
}

#[test]
fn conv1d_gradient_matches_finite_differences() {
    for (stride, padding, seed) in [(1, Padding::Same, 10), (2, Padding::Same, 11), (2, Padding::Valid, 12)] {
        let inputs = [
            random_tensor(&[7, 3], 1.0, seed),
            random_tensor(&[3, 3, 4], 0.5, seed + 100),
            random_tensor(&[4], 0.5, seed + 200),
        ];
        let r = check(&inputs, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], stride, padding)?;
            let w = weights_for(&g.shape(y), seed + 300);
            weighted_sum(g, y, &w)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "stride {stride} {padding:?}: {r:?}");
    }
}

fn lstm_inputs(d: usize, h: usize, seed: u64) -> Vec<Tensor> {
    vec![
        random_tensor(&[d, 4 * h], 0.5, seed),
        random_tensor(&[h, 4 * h], 0.5, seed + 1),
        random_tensor(&[4 * h], 0.5, seed + 2),
    ]
}

fn bind_lstm(v: &[Var]) -> LstmWeights {
    LstmWeights {
        w_ih: v[0],
        w_hh: v[1],
        bias: v[2],
    }
}

#[test]
fn bilstm_zero_weights_give_zero_output() {
    let g = Graph::new();
    let x = g.leaf(random_tensor(&[4, 3], 1.0, 5)).unwrap();
    let zeros: Vec<Var> = [vec![3, 8], vec![2, 8], vec![8]]
        .iter()
        .map(|s| g.leaf(Tensor::zeros(s)).unwrap())
        .collect();
    let y = g.bilstm(x, bind_lstm(&zeros), bind_lstm(&zeros)).unwrap();
    assert_eq!(g.shape(y), [4, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_time_reversal_symmetry() {
    let (t, d, h) = (5, 3, 2);
    let g = Graph::new();
    let xt = random_tensor(&[t, d], 1.0, 20);
    let fw: Vec<Var> = lstm_inputs(d, h, 21).into_iter().map(|x| g.leaf(x).unwrap()).collect();
    let bw: Vec<Var> = lstm_inputs(d, h, 31).into_iter().map(|x| g.leaf(x).unwrap()).collect();
    let x = g.leaf(xt).unwrap();
    let y = g.value(g.bilstm(x, bind_lstm(&fw), bind_lstm(&bw)).unwrap());
    let xr = g.reverse_rows(x).unwrap();
    let yr = g.value(g.bilstm(xr, bind_lstm(&bw), bind_lstm(&fw)).unwrap());
    for ti in 0..t {
        let a = y.row(ti);
        let b = yr.row(t - 1 - ti);
        assert_eq!(&a[..h], &b[h..]);
        assert_eq!(&a[h..], &b[..h]);
    }
}

#[test]
fn bilstm_gradient_matches_finite_differences() {
    let (t, d, h) = (4, 3, 2);
    let mut inputs = vec![random_tensor(&[t, d], 1.0, 40)];
    inputs.extend(lstm_inputs(d, h, 41));
    inputs.extend(lstm_inputs(d, h, 51));
    let r = check(&inputs, |g, v| {
        let y = g.bilstm(v[0], bind_lstm(&v[1..4]), bind_lstm(&v[4..7]))?;
        let w = weights_for(&g.shape(y), 60);
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn softmax_cases() {
    let g = Graph::new();
    let x = g.leaf(Tensor::from_rows(&[vec![2.0; 4]]).unwrap()).unwrap();
    let (p, _) = g.softmax_logsoftmax(x, 1.0).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = g.leaf(Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap()).unwrap();
    let (p, lp) = g.softmax_logsoftmax(x, 1.0).unwrap();
    let pv = g.value(p);
    assert!((pv.data()[0] - 0.25).abs() < 1e-12 && (pv.data()[1] - 0.75).abs() < 1e-12);
    assert!((g.value(lp).data()[1] - 0.75f64.ln()).abs() < 1e-12);

    let x = g.leaf(random_tensor(&[3, 6], 5.0, 70)).unwrap();
    let (p, _) = g.softmax_logsoftmax(x, 1e3).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-3));

    assert!(g.log_softmax(x, 0.0).is_err());
    assert!(g.log_softmax(x, -1.0).is_err());
}

#[test]
fn softmax_rows_normalized_and_log_consistent() {
    let g = Graph::new();
    let x = g.leaf(random_tensor(&[8, 7], 30.0, 71)).unwrap();
    let (p, lp) = g.softmax_logsoftmax(x, 0.7).unwrap();
    let (pv, lv) = (g.value(p), g.value(lp));
    for r in 0..8 {
        assert!((pv.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for c in 0..7 {
            let pr = pv.at(r, c);
            if pr > 1e-300 {
                assert!((pr.ln() - lv.at(r, c)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn log_softmax_gradient_matches_finite_differences() {
    let inputs = [random_tensor(&[3, 5], 2.0, 80)];
    let r = check(&inputs, |g, v| {
        let (p, lp) = g.softmax_logsoftmax(v[0], 1.7)?;
        let a = weighted_sum(g, lp, &weights_for(&[3, 5], 81))?;
        let b = weighted_sum(g, p, &weights_for(&[3, 5], 82))?;
        g.add_scalars(&[a, b])
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn layernorm_normalizes_rows() {
    let g = Graph::new();
    let x = g.leaf(random_tensor(&[4, 16], 3.0, 90)).unwrap();
    let gamma = g.leaf(Tensor::full(&[16], 1.0)).unwrap();
    let beta = g.leaf(Tensor::zeros(&[16])).unwrap();
    let y = g.value(g.layernorm(x, gamma, beta, 1e-6).unwrap());
    for r in 0..4 {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "mean {mean} var {var}");
    }
}

#[test]
fn layernorm_gradient_matches_finite_differences() {
    let inputs = [
        random_tensor(&[3, 5], 2.0, 91),
        random_tensor(&[5], 1.0, 92),
        random_tensor(&[5], 1.0, 93),
    ];
    let r = check(&inputs, |g, v| {
        let y = g.layernorm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(g, y, &weights_for(&[3, 5], 94))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn attention_single_position_returns_value() {
    let g = Graph::new();
    let q = g.leaf(random_tensor(&[1, 4], 1.0, 100)).unwrap();
    let k = g.leaf(random_tensor(&[1, 4], 1.0, 101)).unwrap();
    let vt = random_tensor(&[1, 6], 1.0, 102);
    let v = g.leaf(vt.clone()).unwrap();
    let y = g.attention(q, k, v, 2, true).unwrap();
    assert!(g.value(y).max_abs_diff(&vt) < 1e-15);
}

#[test]
fn attention_mask_shape_mismatch() {
    let g = Graph::new();
    let q = g.leaf(Tensor::zeros(&[2, 4])).unwrap();
    let k = g.leaf(Tensor::zeros(&[3, 4])).unwrap();
    let v = g.leaf(Tensor::zeros(&[3, 4])).unwrap();
    assert!(g.attention(q, k, v, 2, true).is_err());
    assert!(g.attention(q, k, v, 3, false).is_err());
    assert!(g.attention(q, k, v, 2, false).is_ok());
}

#[test]
fn attention_gradient_matches_finite_differences() {
    for causal in [false, true] {
        let inputs = [
            random_tensor(&[4, 6], 1.0, 110),
            random_tensor(&[4, 6], 1.0, 111),
            random_tensor(&[4, 4], 1.0, 112),
        ];
        let r = check(&inputs, |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2, causal)?;
            weighted_sum(g, y, &weights_for(&[4, 4], 113))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "causal {causal}: {r:?}");
    }
}

#[test]
fn embedding_nll_and_structural_ops_gradients() {
    let inputs = [
        random_tensor(&[5, 3], 1.0, 120),
        random_tensor(&[4, 2], 1.0, 121),
        random_tensor(&[5, 4], 1.0, 122),
        random_tensor(&[4], 1.0, 123),
    ];
    let r = check(&inputs, |g, v| {
        let e = g.embedding(v[0], &[4, 0, 4, 2])?;
        let rev = g.reverse_rows(e)?;
        let cat = g.concat_cols(rev, v[1])?;
        let h = g.relu(cat)?;
        let logits = g.linear(h, v[2], v[3])?;
        let logits = g.scale(logits, 2.0)?;
        let logits = g.take_rows(logits, 3)?;
        let lp = g.log_softmax(logits, 1.0)?;
        g.nll(lp, &[1, 3, 0])
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn nll_and_embedding_reject_out_of_range_ids() {
    let g = Graph::new();
    let lp = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
    assert!(g.nll(lp, &[0, 3]).is_err());
    assert!(g.nll(lp, &[0]).is_err());
    assert!(g.embedding(lp, &[2]).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let g = Graph::inference();
        let x = g.leaf(random_tensor(&[6, 3], 1.0, 130)).unwrap();
        let w: Vec<Var> = lstm_inputs(3, 4, 131).into_iter().map(|t| g.leaf(t).unwrap()).collect();
        let y = g.bilstm(x, bind_lstm(&w), bind_lstm(&w)).unwrap();
        (*g.value(y)).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_graph_yields_no_gradients() {
    let g = Graph::inference();
    let x = g.leaf(Tensor::scalar(2.0)).unwrap();
    let y = g.scale(x, 3.0).unwrap();
    let grads = g.backward(y).unwrap();
    assert!(grads.get(x).is_none());
}
