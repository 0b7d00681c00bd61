//! Finite-difference verification of every differentiable op.
//!
//! Each case builds its op from randomized f64 inputs, projects the output
//! to a scalar through a fixed random weighting (so per-element gradient
//! errors cannot cancel), runs one backward pass, and compares every input
//! gradient against central differences computed by re-running the forward
//! closure. Inputs for kinked ops (ELU, max pooling) are sampled away from
//! their kinks so the difference quotient stays on one branch.

use eeg_deformer::rng::RngState;
use eeg_deformer::tensor::{
    cross_entropy_with_logits, finite_diff_grad, gradient_max_rel_err, weight_norm,
    BatchNormState, Mode, RowStat, Tensor,
};
use eeg_deformer::Result;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-7;

fn rand_tensor(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    Tensor::param(data, shape).unwrap()
}

/// Uniform in ±[margin, 1+margin]: bounded away from zero on both sides.
fn rand_tensor_off_zero(shape: &[usize], margin: f64, rng: &mut RngState) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform(margin, 1.0 + margin)
        })
        .collect();
    Tensor::param(data, shape).unwrap()
}

/// Projects `t` to a scalar with a fixed weighting derived from `seed`.
fn weighted(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = RngState::new(seed ^ 0xD1CE);
    let w: Vec<f64> = (0..t.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let weights = Tensor::from_vec(w, t.shape())?;
    Ok(t.mul(&weights)?.sum())
}

/// Checks analytic gradients of `forward` against finite differences for
/// every tensor in `inputs`.
fn check_grads(
    name: &str,
    inputs: &[&Tensor<f64>],
    forward: impl Fn() -> Result<Tensor<f64>>,
) {
    let loss = weighted(&forward().unwrap(), 99).unwrap();
    for t in inputs {
        t.zero_grad();
    }
    loss.backward().unwrap();
    for (idx, t) in inputs.iter().enumerate() {
        let analytic = t
            .grad()
            .unwrap_or_else(|| panic!("{name}: input {idx} received no gradient"));
        let fd = finite_diff_grad(t, H, |_| Ok(weighted(&forward()?, 99)?.item())).unwrap();
        let err = gradient_max_rel_err(&analytic, &fd, FLOOR);
        assert!(err < TOL, "{name}: input {idx} max rel err {err:.3e}");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = RngState::new(101);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 4], &mut rng);
    check_grads("add", &[&a, &b], || a.add(&b));
    check_grads("sub", &[&a, &b], || a.sub(&b));
    check_grads("mul", &[&a, &b], || a.mul(&b));
    check_grads("scale", &[&a], || Ok(a.scale(-1.7)));
    check_grads("add_scalar", &[&a], || Ok(a.add_scalar(0.3)));
    check_grads("square", &[&a], || Ok(a.square()));

    let bias = rand_tensor(&[4], &mut rng);
    check_grads("add-broadcast-suffix", &[&a, &bias], || a.add(&bias));

    let pos = {
        let data = (0..6).map(|_| rng.uniform(0.2, 2.0)).collect();
        Tensor::param(data, &[2, 3]).unwrap()
    };
    check_grads("ln", &[&pos], || pos.ln());
    check_grads("mean_last", &[&a], || a.mean_last());
}

#[test]
fn matmul_all_rank_pairs() {
    let mut rng = RngState::new(202);
    let a2 = rand_tensor(&[3, 4], &mut rng);
    let b2 = rand_tensor(&[4, 5], &mut rng);
    check_grads("matmul-2x2", &[&a2, &b2], || a2.matmul(&b2));

    let a3 = rand_tensor(&[2, 3, 4], &mut rng);
    check_grads("matmul-3x2-shared-rhs", &[&a3, &b2], || a3.matmul(&b2));

    let b3 = rand_tensor(&[2, 4, 5], &mut rng);
    check_grads("matmul-3x3-batched", &[&a3, &b3], || a3.matmul(&b3));
}

#[test]
fn movement_ops() {
    let mut rng = RngState::new(303);
    let x = rand_tensor(&[2, 3, 4], &mut rng);
    check_grads("reshape", &[&x], || x.reshape(&[4, 6]));
    check_grads("permute", &[&x], || x.permute(&[2, 0, 1]));
    check_grads("transpose_last2", &[&x], || x.transpose_last2());
    check_grads("narrow", &[&x], || x.narrow(1, 1, 2));

    let y = rand_tensor(&[2, 2, 4], &mut rng);
    check_grads("concat", &[&x, &y], || Tensor::concat(&[&x, &y], 1));
}

#[test]
fn convolutions() {
    let mut rng = RngState::new(404);

    // Temporal: batch 2, 2 input kernels, 3 channels, length 8, κ=5.
    let x = rand_tensor(&[2, 2, 3, 8], &mut rng);
    let w = rand_tensor(&[3, 2, 1, 5], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    check_grads("conv_temporal", &[&x, &w, &b], || x.conv_temporal(&w, &b));

    let x3 = rand_tensor(&[2, 3, 8], &mut rng);
    let w1 = rand_tensor(&[4, 2, 1, 3], &mut rng);
    let b1 = rand_tensor(&[4], &mut rng);
    check_grads("conv_temporal-unbatched", &[&x3, &w1, &b1], || {
        x3.conv_temporal(&w1, &b1)
    });

    // Spatial: collapses 3 channels.
    let ws = rand_tensor(&[4, 2, 3, 1], &mut rng);
    let bs = rand_tensor(&[4], &mut rng);
    check_grads("conv_spatial", &[&x, &ws, &bs], || x.conv_spatial(&ws, &bs));

    // 1-D same conv over rows.
    let xr = rand_tensor(&[2, 3, 8], &mut rng);
    let wr = rand_tensor(&[2, 3, 3], &mut rng);
    let br = rand_tensor(&[2], &mut rng);
    check_grads("conv1d_same", &[&xr, &wr, &br], || xr.conv1d_same(&wr, &br));
}

#[test]
fn weight_norm_reparameterization() {
    let mut rng = RngState::new(505);
    let v = rand_tensor_off_zero(&[3, 4], 0.1, &mut rng);
    let g = rand_tensor_off_zero(&[3], 0.1, &mut rng);
    check_grads("weight_norm", &[&v, &g], || weight_norm(&v, &g));
}

#[test]
fn maxpool_away_from_ties() {
    let mut rng = RngState::new(606);
    // Distinct-valued input: pairwise differences far exceed h.
    let mut vals: Vec<f64> = (0..24).map(|i| i as f64 * 0.37).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::param(vals, &[2, 12]).unwrap();
    check_grads("maxpool_half", &[&x], || x.maxpool_half(1));

    let x2 = {
        let mut vals: Vec<f64> = (0..30).map(|i| (i as f64) * 0.21 - 3.0).collect();
        rng.shuffle(&mut vals);
        Tensor::param(vals, &[2, 5, 3]).unwrap()
    };
    check_grads("maxpool_half-interior-axis", &[&x2], || x2.maxpool_half(1));
}

#[test]
fn normalizations() {
    let mut rng = RngState::new(707);
    let x = rand_tensor(&[4, 3, 5], &mut rng);
    let gamma = rand_tensor_off_zero(&[3], 0.2, &mut rng);
    let beta = rand_tensor(&[3], &mut rng);

    let pristine = BatchNormState::<f64>::new(3);
    check_grads("batchnorm-train", &[&x, &gamma, &beta], || {
        // Fresh state per evaluation: the running-stat update must not
        // accumulate across finite-difference probes.
        let mut st = pristine.clone();
        x.batchnorm(&gamma, &beta, &mut st, Mode::Train, 1)
    });

    let mut seeded = BatchNormState::<f64>::new(3);
    for (i, (m, v)) in seeded
        .running_mean
        .iter_mut()
        .zip(seeded.running_var.iter_mut())
        .enumerate()
    {
        *m = 0.1 * i as f64 - 0.05;
        *v = 0.5 + 0.3 * i as f64;
    }
    check_grads("batchnorm-eval", &[&x, &gamma, &beta], || {
        let mut st = seeded.clone();
        x.batchnorm(&gamma, &beta, &mut st, Mode::Eval, 1)
    });

    let g2 = rand_tensor_off_zero(&[5], 0.2, &mut rng);
    let b2 = rand_tensor(&[5], &mut rng);
    check_grads("layernorm", &[&x, &g2, &b2], || x.layernorm(&g2, &b2, 1e-5));
}

#[test]
fn activations_and_softmax() {
    let mut rng = RngState::new(808);
    let x = rand_tensor_off_zero(&[3, 6], 0.05, &mut rng);
    check_grads("elu", &[&x], || Ok(x.elu()));

    let xg = rand_tensor(&[3, 6], &mut rng);
    check_grads("gelu", &[&xg], || Ok(xg.gelu()));

    let logits = rand_tensor(&[2, 4, 3], &mut rng);
    check_grads("softmax-last", &[&logits], || logits.softmax(2));
    check_grads("softmax-interior", &[&logits], || logits.softmax(1));
}

#[test]
fn dropout_with_replayed_mask() {
    let mut rng = RngState::new(909);
    let x = rand_tensor(&[4, 8], &mut rng);
    // The forward closure reseeds its own stream, so every probe sees the
    // identical mask and the op is differentiable along it.
    check_grads("dropout-train", &[&x], || {
        let mut mask_rng = RngState::new(4242);
        x.dropout(0.4, Mode::Train, &mut mask_rng)
    });
    check_grads("dropout-eval-identity", &[&x], || {
        let mut mask_rng = RngState::new(4242);
        x.dropout(0.4, Mode::Eval, &mut mask_rng)
    });
}

#[test]
fn row_statistics() {
    let mut rng = RngState::new(111);
    let x = rand_tensor(&[3, 7], &mut rng);
    check_grads("row-log-power", &[&x], || {
        x.row_stat_last(RowStat::LogPower { eps: 1e-8 })
    });
    check_grads("row-mean", &[&x], || x.row_stat_last(RowStat::Mean));
    check_grads("row-std", &[&x], || x.row_stat_last(RowStat::Std { eps: 1e-8 }));
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = RngState::new(222);
    let logits = rand_tensor(&[5, 4], &mut rng);
    let labels = [0usize, 3, 1, 1, 2];

    let loss = cross_entropy_with_logits(&logits, &labels).unwrap();
    loss.backward().unwrap();
    let analytic = logits.grad().unwrap();
    let fd = finite_diff_grad(&logits, H, |t| {
        Ok(cross_entropy_with_logits(t, &labels)?.item())
    })
    .unwrap();
    let err = gradient_max_rel_err(&analytic, &fd, FLOOR);
    assert!(err < TOL, "cross_entropy max rel err {err:.3e}");
}

#[test]
fn composite_graph_matches_finite_differences() {
    // A small end-to-end graph touching conv, pooling, normalization,
    // attention-style matmuls, and the loss: the op set composes correctly.
    let mut rng = RngState::new(333);
    let x = rand_tensor(&[2, 2, 6], &mut rng);
    let w = rand_tensor(&[2, 2, 3], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    let proj = rand_tensor(&[3, 4], &mut rng);
    let labels = [1usize, 0];

    let forward = || -> Result<f64> {
        let h = x.conv1d_same(&w, &b)?.elu().maxpool_half(2)?; // [2,2,3]
        let att = h.matmul(&proj)?.softmax(2)?; // [2,2,4]
        let pooled = att.reshape(&[2, 2 * 4])?.narrow(1, 0, 2)?; // [2,2]
        cross_entropy_with_logits(&pooled, &labels).map(|t| t.item())
    };

    let h1 = x.conv1d_same(&w, &b).unwrap().elu().maxpool_half(2).unwrap();
    let att = h1.matmul(&proj).unwrap().softmax(2).unwrap();
    let pooled = att.reshape(&[2, 8]).unwrap().narrow(1, 0, 2).unwrap();
    let loss = cross_entropy_with_logits(&pooled, &labels).unwrap();
    loss.backward().unwrap();

    for (name, t) in [("x", &x), ("w", &w), ("b", &b), ("proj", &proj)] {
        let analytic = t.grad().unwrap();
        let fd = finite_diff_grad(t, H, |_| forward()).unwrap();
        let err = gradient_max_rel_err(&analytic, &fd, FLOOR);
        assert!(err < TOL, "composite/{name} max rel err {err:.3e}");
    }
}
