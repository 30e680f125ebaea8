//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regroup::engine::{cross_entropy, Conv2d, Layer, LayerPlan, Linear, MaxPool2d, NetworkModel};
use regroup::engine::FeatureTrace;
use regroup::regroup::{EnsembleLayer, GenerativeEnsemble, Mode};
use regroup::tensor::Tensor;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}


// Straight six-loop cross-correlation with explicit zero padding.
pub fn naive_conv(c: &Conv2d<f64>, x: &[f64], [ci, h, w]: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let ho = (h + 2 * c.padding - c.kernel_h) / c.stride + 1;
    let wo = (w + 2 * c.padding - c.kernel_w) / c.stride + 1;
    let mut out = vec![0.0; c.out_channels * ho * wo];
    for o in 0..c.out_channels {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = c.bias[o];
                for q in 0..ci {
                    for u in 0..c.kernel_h {
                        for v in 0..c.kernel_w {
                            let y = (i * c.stride + u) as isize - c.padding as isize;
                            let z = (j * c.stride + v) as isize - c.padding as isize;
                            if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                continue;
                            }
                            let wi = ((o * ci + q) * c.kernel_h + u) * c.kernel_w + v;
                            acc += c.weight[wi] * x[(q * h + y as usize) * w + z as usize];
                        }
                    }
                }
                out[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    (out, [c.out_channels, ho, wo])
}

pub fn naive_linear(l: &Linear<f64>, x: &[f64]) -> Vec<f64> {
    (0..l.out_dim)
        .map(|o| {
            let mut acc = l.bias[o];
            for i in 0..l.in_dim {
                acc += l.weight[o * l.in_dim + i] * x[i];
            }
            acc
        })
        .collect()
}

pub fn naive_pool(p: &MaxPool2d, x: &[f64], [c, h, w]: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let ho = (h - p.window) / p.stride + 1;
    let wo = (w - p.window) / p.stride + 1;
    let mut out = Vec::new();
    for q in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for u in 0..p.window {
                    for v in 0..p.window {
                        m = m.max(x[(q * h + i * p.stride + u) * w + j * p.stride + v]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, [c, ho, wo])
}

/// Independent forward pass returning the pre-activations of every
/// conv/linear layer.
pub fn naive_forward(model: &NetworkModel<f64>, x: &[f64]) -> Vec<Vec<f64>> {
    let mut shape = model.input_shape();
    let mut cur = x.to_vec();
    let mut pre = Vec::new();
    for layer in model.layers() {
        match layer {
            Layer::Conv2d(c) => {
                let (o, s) = naive_conv(c, &cur, shape);
                cur = o;
                shape = s;
                pre.push(cur.clone());
            }
            Layer::Linear(l) => {
                cur = naive_linear(l, &cur);
                pre.push(cur.clone());
            }
            Layer::Relu => cur.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::MaxPool2d(p) => {
                let (o, s) = naive_pool(p, &cur, shape);
                cur = o;
                shape = s;
            }
            Layer::Flatten => {}
        }
    }
    pre
}

pub fn random_plan(rng: &mut ChaCha8Rng) -> (Vec<LayerPlan>, [usize; 3]) {
    use LayerPlan::*;
    let c = rng.gen_range(1..3);
    let mut plan = vec![Conv2d {
        out_channels: rng.gen_range(2..5),
        kernel: rng.gen_range(2..4),
        stride: rng.gen_range(1..3),
        padding: rng.gen_range(0..2),
    }];
    plan.push(Relu);
    if rng.gen_bool(0.5) {
        plan.push(MaxPool2d { window: 2, stride: 2 });
    }
    if rng.gen_bool(0.5) {
        plan.push(Conv2d { out_channels: rng.gen_range(2..4), kernel: 2, stride: 1, padding: 1 });
        plan.push(Relu);
    }
    plan.push(Flatten);
    plan.push(Linear { out_dim: rng.gen_range(3..8) });
    plan.push(Relu);
    plan.push(Linear { out_dim: rng.gen_range(2..5) });
    (plan, [c, 7, 7])
}


/// Compares the analytic input gradient of the cross-entropy with central
/// differences on `coords` random smooth coordinates. Returns the worst
/// relative error, or `None` when too few coordinates were smooth.
pub fn gradient_check(model: &NetworkModel<f64>, x: &Tensor<f64>, label: usize, coords: usize, rng: &mut ChaCha8Rng) -> Option<f64> {
    let h = 1e-5;
    let n = x.len();
    let (loss, grad) = model.loss_and_input_gradient(x, label).unwrap();
    let f = |v: &Tensor<f64>| cross_entropy(&model.logits(v).unwrap(), label);
    if (loss - f(x)).abs() > 1e-12 {
        return Some(f64::INFINITY);
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < coords && attempts < 10 * coords {
        attempts += 1;
        let i = rng.gen_range(0..n);
        let probe = |d: f64| {
            let mut v = x.clone();
            v.data_mut()[i] += d;
            f(&v)
        };
        let (fp, fm) = (probe(h), probe(-h));
        // Skip coordinates where a relu or max switches inside the probe.
        let (right, left) = ((fp - loss) / h, (loss - fm) / h);
        if (right - left).abs() > 1e-4 * (1.0 + right.abs()) {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let a = grad.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        checked += 1;
    }
    (checked == coords).then_some(worst)
}

/// A small ensemble given as plain rows: per layer, `m` positive rows and `m`
/// negative rows of length `d`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub m: usize,
    pub delta: f64,
    pub rows: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    pub preacts: Vec<Tensor<f64>>,
    pub k: usize,
    pub mode: Mode,
}

impl Instance {
    pub fn ensemble(&self) -> GenerativeEnsemble<f64> {
        let layers = self
            .rows
            .iter()
            .enumerate()
            .map(|(l, (p, n))| EnsembleLayer {
                layer: 2 * l,
                dim: p[0].len(),
                positive: p.concat(),
                negative: n.concat(),
            })
            .collect();
        GenerativeEnsemble::new(self.m, self.delta, layers, None).unwrap()
    }

    pub fn trace(&self) -> FeatureTrace<f64> {
        FeatureTrace {
            preactivations: self.preacts.clone(),
            logits: vec![0.0; self.m],
            softmax: vec![1.0 / self.m as f64; self.m],
        }
    }
}


pub fn random_pmf(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = uniform(rng, d, 0.01, 1.0);
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Random instance with up to `max_m` classes, `max_n` layers and `max_d`
/// units per layer. Pre-activations are flat or `d × 2 × 2`.
pub fn random_instance(rng: &mut ChaCha8Rng, max_m: usize, max_n: usize, max_d: usize) -> Instance {
    let m = rng.gen_range(1..=max_m);
    let n = rng.gen_range(1..=max_n);
    let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_d)).collect();
    let rows = dims
        .iter()
        .map(|&d| {
            let p = (0..m).map(|_| random_pmf(rng, d)).collect();
            let q = (0..m).map(|_| random_pmf(rng, d)).collect();
            (p, q)
        })
        .collect();
    let preacts = dims
        .iter()
        .map(|&d| {
            if rng.gen_bool(0.5) {
                Tensor::new(vec![d], uniform(rng, d, -1.0, 1.0)).unwrap()
            } else {
                Tensor::new(vec![d, 2, 2], uniform(rng, 4 * d, -1.0, 1.0)).unwrap()
            }
        })
        .collect();
    Instance {
        m,
        delta: rng.gen_range(1e-9..1e-3),
        rows,
        preacts,
        k: rng.gen_range(1..=n),
        mode: Mode::ALL[rng.gen_range(0..3)],
    }
}

/// Straight-line evaluation of the prediction rule: accumulate, normalize,
/// score by KL, rank by counting, sum Borda points, take the first maximum.
pub fn reference(inst: &Instance) -> (Vec<usize>, usize) {
    let m = inst.m;
    let n = inst.rows.len();
    let mut total = vec![0usize; m];
    for l in n - inst.k..n {
        let t = &inst.preacts[l];
        let d = t.shape()[0];
        let per = t.len() / d;
        let mut pos = vec![0.0; d];
        let mut neg = vec![0.0; d];
        for i in 0..d {
            for j in 0..per {
                let v = t.data()[i * per + j];
                if v > 0.0 {
                    pos[i] += v;
                } else {
                    neg[i] += -v;
                }
            }
        }
        let norm = |acc: Vec<f64>| {
            let acc: Vec<f64> = acc.into_iter().map(|a| a + inst.delta).collect();
            let s: f64 = acc.iter().sum();
            acc.into_iter().map(|a| a / s).collect::<Vec<_>>()
        };
        let (pp, nn) = (norm(pos), norm(neg));
        let (crow_p, crow_n) = &inst.rows[l];
        let mut voters = Vec::new();
        if inst.mode != Mode::Neg {
            voters.push((crow_p, &pp));
        }
        if inst.mode != Mode::Pos {
            voters.push((crow_n, &nn));
        }
        for (rows, test) in voters {
            let score: Vec<f64> = (0..m)
                .map(|y| (0..d).map(|i| rows[y][i] * (rows[y][i] / test[i]).ln()).sum())
                .collect();
            for y in 0..m {
                let above = (0..m).filter(|&z| score[z] < score[y] || (score[z] == score[y] && z < y)).count();
                let rank = above + 1;
                total[y] += m - rank;
            }
        }
    }
    let best = *total.iter().max().unwrap();
    let pred = total.iter().position(|&s| s == best).unwrap();
    (total, pred)
}

