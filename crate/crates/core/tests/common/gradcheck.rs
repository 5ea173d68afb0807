//! Central finite-difference gradient checks for every graph op, in f64.

use nucseg_core::error::Result;
use nucseg_core::tensor::{Activation, Graph, Mode, Padding, RunningStats, Var, BN_EPSILON};
use nucseg_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

/// Scalar objective: the op output dotted with fixed weights, so every
/// output element carries a distinct upstream gradient.
fn objective(g: &mut Graph<f64>, inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>, build: &Build) -> Result<(Var, Vec<Var>)> {
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(g, &leaves)?;
    let loss = match weights {
        Some(w) if g.value(out).len() == w.len() => g.weighted_sum(out, w)?,
        _ => out,
    };
    Ok((loss, leaves))
}

/// Normwise relative error `max|a − n| / max(max|a|, max|n|, 1e-12)`,
/// maximised over inputs.
pub fn max_rel_error(inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng, build: &Build) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let probe = build(&mut g, &leaves).expect("forward");
    let out_shape = g.value(probe).shape().to_vec();
    let weights = if g.value(probe).len() == 1 {
        None
    } else {
        let n: usize = out_shape.iter().product();
        Some(Tensor::new(out_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
    };

    let mut g = Graph::new();
    let (loss, leaves) = objective(&mut g, inputs, weights.as_ref(), build).expect("forward");
    let grads = g.backward(loss).expect("backward");
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let (loss, _) = objective(&mut g, xs, weights.as_ref(), build).expect("forward");
        g.value(loss).data()[0]
    };

    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            xs[i].data_mut()[j] = x0 + STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x0 - STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(1e-12f64, |m, v| m.max(v.abs()));
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values 0.05 apart, so a max-pool argmax never flips under a step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn nhwc(rng: &mut ChaCha8Rng, max_hw: usize) -> [usize; 4] {
    [
        rng.random_range(1..=4),
        rng.random_range(1..=max_hw),
        rng.random_range(1..=max_hw),
        rng.random_range(1..=3),
    ]
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_error: f64,
}

/// Runs `cases` random shapes per op and reports the worst error of each.
pub fn suite(cases: usize, seed: u64) -> Vec<OpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |op: &'static str, case: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let max_error = (0..cases).map(|_| case(&mut rng)).fold(0.0, f64::max);
        reports.push(OpReport { op, cases, max_error });
    };

    run("conv2d", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 6);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = padding(rng);
        let (h, w) = (h.max(k), w.max(k));
        let co = rng.random_range(1..=3);
        let bias = rng.random_bool(0.5);
        let mut inputs = vec![random(rng, &[n, h, w, c]), random(rng, &[k, k, c, co])];
        if bias {
            inputs.push(random(rng, &[co]));
        }
        max_rel_error(&inputs, rng, &|g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad))
    });
    run("deconv2d", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 4);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let co = rng.random_range(1..=3);
        let bias = rng.random_bool(0.5);
        let mut inputs = vec![random(rng, &[n, h, w, c]), random(rng, &[k, k, c, co])];
        if bias {
            inputs.push(random(rng, &[co]));
        }
        max_rel_error(&inputs, rng, &|g, v| g.deconv2d(v[0], v[1], v.get(2).copied(), stride))
    });
    run("maxpool2d", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 6);
        let win = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = padding(rng);
        let x = distinct(rng, &[n, h.max(win), w.max(win), c]);
        max_rel_error(&[x], rng, &|g, v| g.maxpool2d(v[0], win, stride, pad))
    });
    run("avgpool2d", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 6);
        let win = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = padding(rng);
        let x = random(rng, &[n, h.max(win), w.max(win), c]);
        max_rel_error(&[x], rng, &|g, v| g.avgpool2d(v[0], win, stride, pad))
    });
    run("upsample2d_nearest", &mut |rng| {
        let shape = nhwc(rng, 4);
        let factor = rng.random_range(1..=3);
        let x = random(rng, &shape);
        max_rel_error(&[x], rng, &|g, v| g.upsample2d_nearest(v[0], factor))
    });
    run("concat_channels", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 5);
        let cb = rng.random_range(1..=3);
        let inputs = [random(rng, &[n, h, w, c]), random(rng, &[n, h, w, cb])];
        max_rel_error(&inputs, rng, &|g, v| g.concat_channels(v[0], v[1]))
    });
    run("batchnorm (train)", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 5);
        let (h, w) = (h.max(2), w.max(2));
        let inputs = [random(rng, &[n, h, w, c]), random(rng, &[c]), random(rng, &[c])];
        max_rel_error(&inputs, rng, &|g, v| {
            let mut stats = RunningStats::new(c);
            g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train, BN_EPSILON)
        })
    });
    run("batchnorm (eval)", &mut |rng| {
        let shape = nhwc(rng, 5);
        let c = shape[3];
        let inputs = [random(rng, &shape), random(rng, &[c]), random(rng, &[c])];
        let stats = RunningStats {
            mean: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
            var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        max_rel_error(&inputs, rng, &|g, v| {
            let mut s = stats.clone();
            g.batchnorm(v[0], v[1], v[2], &mut s, Mode::Eval, BN_EPSILON)
        })
    });
    for (op, kind) in [("elu", Activation::Elu), ("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid)] {
        run(op, &mut |rng| {
            let shape = nhwc(rng, 5);
            let x = off_kink(rng, &shape);
            max_rel_error(&[x], rng, &|g, v| g.activation(v[0], kind))
        });
    }
    run("dropout", &mut |rng| {
        let shape = nhwc(rng, 5);
        let x = random(rng, &shape);
        let rate = rng.random_range(0.1..0.7);
        let mask_seed = rng.random();
        max_rel_error(&[x], rng, &|g, v| {
            g.dropout(v[0], rate, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
        })
    });
    run("bce_loss", &mut |rng| {
        let shape = nhwc(rng, 5);
        let n: usize = shape.iter().product();
        let p = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.3..0.7)).collect()).unwrap();
        let t = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
        max_rel_error(&[p], rng, &|g, v| g.bce_loss(v[0], &t))
    });
    run("sum", &mut |rng| {
        let shape = nhwc(rng, 5);
        let x = random(rng, &shape);
        max_rel_error(&[x], rng, &|g, v| g.sum(v[0]))
    });
    run("conv → batchnorm → sigmoid", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 5);
        let (h, w) = (h.max(2), w.max(2));
        let co = rng.random_range(1..=3);
        let inputs = [random(rng, &[n, h, w, c]), random(rng, &[3, 3, c, co]), random(rng, &[co]), random(rng, &[co])];
        max_rel_error(&inputs, rng, &|g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, Padding::Same)?;
            let mut stats = RunningStats::new(co);
            let y = g.batchnorm(y, v[2], v[3], &mut stats, Mode::Train, BN_EPSILON)?;
            g.activation(y, Activation::Sigmoid)
        })
    });
    run("deconv → concat → sigmoid → bce", &mut |rng| {
        let [n, h, w, c] = nhwc(rng, 3);
        let inputs = [
            random(rng, &[n, h, w, c]),
            random(rng, &[2, 2, c, 2]),
            random(rng, &[n, 2 * h, 2 * w, 1]),
            random(rng, &[1, 1, 3, 1]),
        ];
        let m = n * 4 * h * w;
        let target = Tensor::new(vec![n, 2 * h, 2 * w, 1], (0..m).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
        max_rel_error(&inputs, rng, &|g, v| {
            let y = g.deconv2d(v[0], v[1], None, 2)?;
            let y = g.concat_channels(y, v[2])?;
            let y = g.conv2d(y, v[3], None, 1, Padding::Valid)?;
            let y = g.activation(y, Activation::Sigmoid)?;
            g.bce_loss(y, &target)
        })
    });
    reports
}
