//! Backward rules against central finite differences (64-bit).

use hsnet::gradcheck::{max_relative_error, numeric_gradient};
use hsnet::nn::{BnStats, Mode};
use hsnet::{Result, Rng, Tape, Tensor4, Var};

const TOL: f64 = 1e-4;

fn rand(dims: [usize; 4], seed: u64) -> Tensor4 {
    Tensor4::randn(dims, &mut Rng::new(seed), 1.0).unwrap()
}

/// Builds `sum(op(inputs) * r)` for a fixed random `r`, then compares the
/// backprop gradient of every input against finite differences.
fn check<F>(inputs: &[Tensor4], op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let probe_dims = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let y = op(&mut t, &vars).unwrap();
        t.value(y).dims()
    };
    let r = rand(probe_dims, 999);
    let loss_of = |values: &[Tensor4]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|x| t.constant(x.clone())).collect();
        let y = op(&mut t, &vars)?;
        Ok(t.value(y)
            .data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), true)).collect();
    let y = op(&mut t, &vars).unwrap();
    let rv = t.constant(r.clone());
    let prod = t.mul(y, rv).unwrap();
    let loss = t.sum(prod).unwrap();
    let grads = t.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let numeric = numeric_gradient(
            |probe| {
                let mut vals = inputs.to_vec();
                vals[i] = probe.clone();
                loss_of(&vals)
            },
            &inputs[i],
        )
        .unwrap();
        worst = worst.max(max_relative_error(grads.get(*v).unwrap(), &numeric));
    }
    worst
}

#[test]
fn elementwise_ops() {
    let (a, b) = (rand([2, 3, 2, 2], 1), rand([2, 3, 2, 2], 2));
    assert!(check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1])) < TOL);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])) < TOL);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])) < TOL);
    assert!(check(&[a], |t, v| t.scale(v[0], -2.5)) < TOL);
}

#[test]
fn mul_gradient_is_other_operand() {
    let (x, y) = (rand([1, 2, 3, 3], 3), rand([1, 2, 3, 3], 4));
    let mut t = Tape::new();
    let (xv, yv) = (t.leaf(x, true), t.leaf(y.clone(), false));
    let p = t.mul(xv, yv).unwrap();
    let l = t.sum(p).unwrap();
    assert_eq!(t.backward(l).unwrap().get(xv).unwrap(), &y);
}

#[test]
fn three_layer_composite() {
    // conv -> relu -> linear on random data.
    let x = rand([2, 2, 5, 5], 5);
    let w = rand([3, 2, 3, 3], 6);
    let lw = rand([1, 1, 27, 4], 7);
    let lb = rand([1, 1, 1, 4], 8);
    let err = check(&[x, w, lw, lb], |t, v| {
        let c = t.conv2d(v[0], v[1], None, 2, 1)?;
        let r = t.relu(c)?;
        t.linear(r, v[2], v[3])
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn conv2d_all_inputs() {
    for (stride, pad, k, seed) in [
        (1, 1, 3, 10),
        (2, 0, 3, 11),
        (1, 2, 5, 12),
        (2, 1, 1, 13),
        (1, 0, 1, 14),
    ] {
        let x = rand([2, 3, 6, 7], seed);
        let w = rand([4, 3, k, k], seed + 100);
        let b = rand([1, 4, 1, 1], seed + 200);
        let err = check(&[x, w, b], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
        });
        assert!(err < TOL, "stride {stride} pad {pad} k {k}: {err}");
    }
}

#[test]
fn batch_norm_train_and_eval() {
    let x = rand([3, 2, 3, 3], 20);
    let g = rand([1, 2, 1, 1], 21);
    let b = rand([1, 2, 1, 1], 22);
    for mode in [Mode::Train, Mode::Eval] {
        let err = check(&[x.clone(), g.clone(), b.clone()], |t, v| {
            let mut stats = BnStats::new(2);
            stats.running_mean = vec![0.1, -0.3];
            stats.running_var = vec![0.8, 1.7];
            t.batch_norm(v[0], v[1], v[2], &mut stats, mode)
        });
        assert!(err < TOL, "{mode:?}: {err}");
    }
}

#[test]
fn relu_away_from_kink() {
    let mut x = rand([2, 2, 3, 3], 30);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    }
    assert!(check(&[x], |t, v| t.relu(v[0])) < TOL);
}

#[test]
fn pooling() {
    let x = rand([2, 2, 6, 6], 40);
    assert!(check(std::slice::from_ref(&x), |t, v| t.avg_pool(v[0], 2, 2)) < TOL);
    assert!(check(std::slice::from_ref(&x), |t, v| t.max_pool(v[0], 3, 2, 1)) < TOL);
    assert!(check(&[x], |t, v| t.global_avg_pool(v[0])) < TOL);
}

#[test]
fn linear_layer() {
    let x = rand([3, 2, 2, 2], 50);
    let w = rand([1, 1, 8, 5], 51);
    let b = rand([1, 1, 1, 5], 52);
    assert!(check(&[x, w, b], |t, v| t.linear(v[0], v[1], v[2])) < TOL);
}

#[test]
fn softmax_cross_entropy_gradient() {
    let logits = rand([4, 6, 1, 1], 60);
    let mut target = Tensor4::zeros([4, 6, 1, 1]).unwrap();
    // Mixed, smoothed rows.
    for n in 0..4 {
        for k in 0..6 {
            target.data_mut()[n * 6 + k] = 0.05;
        }
        target.data_mut()[n * 6 + n] += 0.7;
    }
    let err = check(&[logits], |t, v| {
        Ok(t.softmax_cross_entropy(v[0], &target)?.0)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn concat_routes_gradient_slices() {
    let (a, b, c) = (
        rand([2, 1, 3, 3], 70),
        rand([2, 3, 3, 3], 71),
        rand([2, 2, 3, 3], 72),
    );
    let err = check(&[a, b, c], |t, v| t.concat_channels(&[v[0], v[1], v[2]]));
    assert!(err < TOL);
    let x = rand([2, 7, 2, 2], 73);
    let err = check(&[x], |t, v| {
        let parts = t.split_channels(v[0], &[4, 3])?;
        let swapped = t.concat_channels(&[parts[1], parts[0]])?;
        t.scale(swapped, 1.5)
    });
    assert!(err < TOL);
}

#[test]
fn tape_linearity() {
    // backward(l1 + l2) == backward(l1) + backward(l2)
    let x = rand([1, 2, 4, 4], 80);
    let w = rand([2, 2, 3, 3], 81);
    let l1 = |t: &mut Tape, x: Var, w: Var| -> Var {
        let c = t.conv2d(x, w, None, 1, 1).unwrap();
        let r = t.relu(c).unwrap();
        t.sum(r).unwrap()
    };
    let l2 = |t: &mut Tape, x: Var| -> Var {
        let sq = t.mul(x, x).unwrap();
        t.sum(sq).unwrap()
    };
    let grad_of = |which: u8| -> Tensor4 {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), true);
        let wv = t.leaf(w.clone(), false);
        let loss = match which {
            1 => l1(&mut t, xv, wv),
            2 => l2(&mut t, xv),
            _ => {
                let a = l1(&mut t, xv, wv);
                let b = l2(&mut t, xv);
                t.add(a, b).unwrap()
            }
        };
        t.backward(loss).unwrap().get(xv).unwrap().clone()
    };
    let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
    for i in 0..g12.len() {
        assert!((g12.data()[i] - (g1.data()[i] + g2.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn determinism_of_op_sequences() {
    let run = || {
        let mut rng = Rng::new(77);
        let x = Tensor4::randn([2, 3, 5, 5], &mut rng, 1.0).unwrap();
        let w = Tensor4::randn([4, 3, 3, 3], &mut rng, 0.3).unwrap();
        let mut t = Tape::new();
        let (xv, wv) = (t.leaf(x, true), t.leaf(w, true));
        let c = t.conv2d(xv, wv, None, 1, 1).unwrap();
        let mut stats = BnStats::new(4);
        let g = t.constant(Tensor4::full([1, 4, 1, 1], 1.0).unwrap());
        let b = t.constant(Tensor4::zeros([1, 4, 1, 1]).unwrap());
        let n = t.batch_norm(c, g, b, &mut stats, Mode::Train).unwrap();
        let r = t.relu(n).unwrap();
        let p = t.global_avg_pool(r).unwrap();
        let l = t.sum(p).unwrap();
        let grads = t.backward(l).unwrap();
        let mut bits: Vec<u64> = grads
            .get(wv)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        bits.extend(grads.get(xv).unwrap().data().iter().map(|v| v.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}
