//! Central finite-difference checks for every differentiable op.
//!
//! Each case builds a scalar loss `sum(op(inputs) * R)` for a fixed random
//! `R`, takes the analytic gradient from `backward`, and compares it with
//! `(L(x + eps) - L(x - eps)) / 2eps` evaluated on fresh inference graphs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BatchNormMode, Graph, Padding, Tensor, Var};

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// Builds the op under test from the input variables.
pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub worst_rel: f64,
    /// The worst entry, when it exceeds [`TOL`].
    pub failure: Option<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

/// Values whose magnitude stays at least `margin` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

fn weighted_loss(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    if g.value(out).numel() == 1 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, g.shape(out), -1.0, 1.0);
    let w = g.constant(&w);
    let prod = g.mul(out, w).expect("same shape");
    g.sum(prod)
}

fn eval_loss(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut g = Graph::<f64>::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
    let out = build(&mut g, &vars);
    let l = weighted_loss(&mut g, out, seed);
    g.value(l).data()[0]
}

/// Compares analytic and numeric gradients for every entry of each input
/// flagged in `diff`.
pub fn check(name: &str, build: &Build, inputs: Vec<Tensor<f64>>, diff: &[bool], seed: u64) -> Report {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(diff)
        .map(|(t, &d)| if d { g.param(t) } else { g.constant(t) })
        .collect();
    let out = build(&mut g, &vars);
    let loss = weighted_loss(&mut g, out, seed);
    g.backward(loss).expect("scalar loss");

    let mut worst: Option<Mismatch> = None;
    let mut checked = 0;
    for (k, (t, &d)) in inputs.iter().zip(diff).enumerate() {
        if !d {
            continue;
        }
        let analytic = g.grad(vars[k]).expect("param has a gradient").to_vec();
        for (i, &a) in analytic.iter().enumerate().take(t.numel()) {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            let fd = (eval_loss(build, &plus, seed) - eval_loss(build, &minus, seed)) / (2.0 * EPS);
            let rel = rel_error(a, fd, 1e-8);
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel > w.rel) {
                worst = Some(Mismatch {
                    input: k,
                    index: i,
                    analytic: a,
                    numeric: fd,
                    rel,
                });
            }
        }
    }
    let worst_rel = worst.as_ref().map_or(0.0, |w| w.rel);
    Report {
        name: name.to_string(),
        seed,
        checked,
        worst_rel,
        failure: worst.filter(|w| w.rel >= TOL),
    }
}

/// Runs every op case once per seed.
pub fn op_suite(seeds: &[u64]) -> Vec<Report> {
    let mut out = Vec::new();
    for &seed in seeds {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut run = |name: &str, build: &Build, inputs: Vec<Tensor<f64>>, diff: &[bool]| {
            out.push(check(name, build, inputs, diff, seed));
        };
        let both = [true, true];

        let a = random(rng, &[4, 3], -1.0, 1.0);
        let b = random(rng, &[3, 5], -1.0, 1.0);
        run("matmul", &|g, v| g.matmul(v[0], v[1]).unwrap(), vec![a, b], &both);

        let x = random(rng, &[2, 8, 8, 3], -1.0, 1.0);
        let k = random(rng, &[3, 3, 3, 4], -0.5, 0.5);
        run("conv2d same s1", &|g, v| g.conv2d(v[0], v[1], 1, Padding::Same).unwrap(), vec![x, k], &both);

        let x = random(rng, &[2, 7, 6, 2], -1.0, 1.0);
        let k = random(rng, &[3, 2, 2, 3], -0.5, 0.5);
        let k1 = random(rng, &[1, 1, 2, 3], -0.5, 0.5);
        for (name, stride, pad, kernel) in [
            ("conv2d same s2", 2, Padding::Same, &k),
            ("conv2d valid s2", 2, Padding::Valid, &k),
            ("conv2d same s1 even kernel", 1, Padding::Same, &k),
            ("conv2d valid s1", 1, Padding::Valid, &k),
            ("conv2d pointwise", 1, Padding::Valid, &k1),
            ("conv2d pointwise s2", 2, Padding::Same, &k1),
        ] {
            run(
                name,
                &move |g, v| g.conv2d(v[0], v[1], stride, pad).unwrap(),
                vec![x.clone(), kernel.clone()],
                &both,
            );
        }

        let x = away_from_zero(rng, &[3, 4], 0.05);
        run("relu", &|g, v| g.relu(v[0]), vec![x.clone()], &[true]);
        run("sigmoid", &|g, v| g.sigmoid(v[0]), vec![x.clone()], &[true]);
        run("scale", &|g, v| g.scale(v[0], -1.7), vec![x.clone()], &[true]);
        run("add_scalar", &|g, v| g.add_scalar(v[0], 0.3), vec![x], &[true]);
        let pos = random(rng, &[3, 4], 0.2, 2.0);
        run("log", &|g, v| g.log(v[0]).unwrap(), vec![pos.clone()], &[true]);
        run("log_clamped", &|g, v| g.log_clamped(v[0], 1e-7).unwrap(), vec![pos], &[true]);

        let x = random(rng, &[4, 3], -2.0, 2.0);
        run("softmax", &|g, v| g.softmax(v[0]).unwrap(), vec![x], &[true]);

        let a = random(rng, &[3, 5], -1.0, 1.0);
        let b = random(rng, &[3, 5], -1.0, 1.0);
        let bias = random(rng, &[5], -1.0, 1.0);
        run("add", &|g, v| g.add(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()], &both);
        run("sub", &|g, v| g.sub(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()], &both);
        run("mul", &|g, v| g.mul(v[0], v[1]).unwrap(), vec![a.clone(), b], &both);
        run("mul self", &|g, v| g.mul(v[0], v[0]).unwrap(), vec![a.clone()], &[true]);
        run("add_bias", &|g, v| g.add_bias(v[0], v[1]).unwrap(), vec![a, bias], &both);

        let x = random(rng, &[2, 3, 4, 2], -1.0, 1.0);
        run("sum", &|g, v| g.sum(v[0]), vec![x.clone()], &[true]);
        run("mean", &|g, v| g.mean(v[0]).unwrap(), vec![x.clone()], &[true]);
        run("global_avg_pool", &|g, v| g.global_avg_pool(v[0]).unwrap(), vec![x.clone()], &[true]);
        run("flatten", &|g, v| g.flatten(v[0]).unwrap(), vec![x.clone()], &[true]);
        run("reshape", &|g, v| g.reshape(v[0], &[6, 8]).unwrap(), vec![x.clone()], &[true]);
        run("slice_rows", &|g, v| g.slice_rows(v[0], 1, 1).unwrap(), vec![x], &[true]);

        // distinct values spaced well beyond 2*eps so no window has a near tie
        let mut vals: Vec<f64> = (0..2 * 6 * 6 * 2).map(|i| i as f64 * 0.01).collect();
        vals.shuffle(rng);
        let x = Tensor::from_f64(&[2, 6, 6, 2], &vals).expect("shape matches data");
        run("max_pool2d", &|g, v| g.max_pool2d(v[0], 2, 2).unwrap(), vec![x.clone()], &[true]);
        run("max_pool2d s1", &|g, v| g.max_pool2d(v[0], 3, 1).unwrap(), vec![x], &[true]);

        let x = random(rng, &[3, 2, 2, 4], -1.0, 1.0);
        let gamma = random(rng, &[4], 0.5, 1.5);
        let beta = random(rng, &[4], -0.5, 0.5);
        let all = [true, true, true];
        run(
            "batchnorm train",
            &|g, v| g.batchnorm(v[0], v[1], v[2], BatchNormMode::Train, 1e-5).unwrap().0,
            vec![x.clone(), gamma.clone(), beta.clone()],
            &all,
        );
        let mean = [0.1, -0.2, 0.0, 0.3];
        let var = [0.5, 1.2, 0.9, 2.0];
        run(
            "batchnorm eval",
            &move |g, v| {
                g.batchnorm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var }, 1e-5)
                    .unwrap()
                    .0
            },
            vec![x, gamma, beta],
            &all,
        );

        // conv -> relu -> dense -> softmax -> cross-entropy
        let x = random(rng, &[2, 5, 5, 2], -1.0, 1.0);
        let k = random(rng, &[3, 3, 2, 3], -0.5, 0.5);
        let w = random(rng, &[75, 3], -0.3, 0.3);
        let b = random(rng, &[3], -0.1, 0.1);
        let target = Tensor::from_f64(&[2, 3], &[1.0, 0.0, 0.0, 0.2, 0.5, 0.3]).expect("2x3");
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let h = g.conv2d(v[0], v[1], 1, Padding::Same).unwrap();
            let h = g.relu(h);
            let h = g.flatten(h).unwrap();
            let h = g.matmul(h, v[2]).unwrap();
            let h = g.add_bias(h, v[3]).unwrap();
            let p = g.softmax(h).unwrap();
            let lp = g.log_clamped(p, 1e-7).unwrap();
            let t = g.constant(&target);
            let prod = g.mul(lp, t).unwrap();
            let s = g.sum(prod);
            g.scale(s, -0.5)
        };
        run("composed network", &build, vec![x, k, w, b], &[true; 4]);
    }
    out
}
