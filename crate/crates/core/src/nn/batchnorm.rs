use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor4;

/// Running statistics and hyper-parameters of one batch-norm layer. The
/// affine `gamma`/`beta` are trainable parameters and live elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub running_mean: Vec<f64>,
    /// Biased (divide-by-count) variance, same convention as batch stats.
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

fn check(x: &Tensor4, gamma: &Tensor4, beta: &Tensor4, channels: usize) -> Result<()> {
    if x.channels() != channels || gamma.len() != channels || beta.len() != channels {
        return Err(Error::Shape(format!(
            "batch_norm: input has {} channels, gamma {}, beta {}, stats {}",
            x.channels(),
            gamma.len(),
            beta.len(),
            channels
        )));
    }
    Ok(())
}

/// Per-channel `(mean, biased var)` over batch and spatial positions.
fn batch_moments(x: &Tensor4) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = x.dims();
    let plane = x.plane();
    let count = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let d = x.data();
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            s += d[base..base + plane].iter().sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            v += d[base..base + plane]
                .iter()
                .map(|x| (x - m) * (x - m))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

fn normalize(x: &Tensor4, mean: &[f64], inv_std: &[f64]) -> Tensor4 {
    let [n, c, _, _] = x.dims();
    let plane = x.plane();
    let mut out = x.clone();
    let d = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for v in &mut d[base..base + plane] {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
    }
    out
}

fn affine(xhat: &Tensor4, gamma: &[f64], beta: &[f64]) -> Tensor4 {
    let [n, c, _, _] = xhat.dims();
    let plane = xhat.plane();
    let mut out = xhat.clone();
    let d = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for v in &mut d[base..base + plane] {
                *v = gamma[ch] * *v + beta[ch];
            }
        }
    }
    out
}

/// Per-channel sums of `a` and of `a * b` over batch and spatial positions.
fn channel_sums(a: &Tensor4, b: &Tensor4) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = a.dims();
    let plane = a.plane();
    let (mut s, mut sp) = (vec![0.0; c], vec![0.0; c]);
    for bi in 0..n {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            let (ra, rb) = (&a.data()[base..base + plane], &b.data()[base..base + plane]);
            s[ch] += ra.iter().sum::<f64>();
            sp[ch] += ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    (s, sp)
}

/// Train-mode normalization. Returns the output and the normalized input
/// before the affine transform; updates running statistics.
pub fn batch_norm_train(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
    stats: &mut BnStats,
) -> Result<(Tensor4, Tensor4)> {
    check(x, gamma, beta, stats.channels())?;
    if x.batch() * x.plane() <= 1 {
        return Err(Error::Degenerate(format!(
            "batch statistics over {} value(s) per channel",
            x.batch() * x.plane()
        )));
    }
    let (mean, var) = batch_moments(x);
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v + stats.epsilon).sqrt())
        .collect();
    let xhat = normalize(x, &mean, &inv_std);
    let out = affine(&xhat, gamma.data(), beta.data());
    let m = stats.momentum;
    for ch in 0..mean.len() {
        stats.running_mean[ch] = (1.0 - m) * stats.running_mean[ch] + m * mean[ch];
        stats.running_var[ch] = (1.0 - m) * stats.running_var[ch] + m * var[ch];
    }
    Ok((out, xhat))
}

/// Eval-mode normalization with running statistics; `stats` is untouched.
pub fn batch_norm_eval(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
    stats: &BnStats,
) -> Result<(Tensor4, Tensor4)> {
    check(x, gamma, beta, stats.channels())?;
    let inv_std: Vec<f64> = stats
        .running_var
        .iter()
        .map(|v| 1.0 / (v + stats.epsilon).sqrt())
        .collect();
    let xhat = normalize(x, &stats.running_mean, &inv_std);
    let out = affine(&xhat, gamma.data(), beta.data());
    Ok((out, xhat))
}

impl Tape {
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        mode: Mode,
    ) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let eps = stats.epsilon;
        let (out, xhat, inv_std) = match mode {
            Mode::Train => {
                let (out, xhat) = batch_norm_train(xv, gv, bv, stats)?;
                // Recover 1/sqrt(var + eps) from the batch moments.
                let (_, var) = batch_moments(xv);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (out, xhat, inv)
            }
            Mode::Eval => {
                let (out, xhat) = batch_norm_eval(xv, gv, bv, stats)?;
                let inv: Vec<f64> = stats
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + eps).sqrt())
                    .collect();
                (out, xhat, inv)
            }
        };
        self.record("batch_norm", out, &[x, gamma, beta], move |ctx| {
            let dy = ctx.grad;
            let gamma = ctx.inputs[1];
            let (sum_dy, sum_dy_xhat) = channel_sums(dy, &xhat);
            let dx = ctx.needs[0].then(|| {
                let [n, c, _, _] = dy.dims();
                let plane = dy.plane();
                let count = (n * plane) as f64;
                let mut dx = dy.clone();
                let d = dx.data_mut();
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let gi = gamma.data()[ch] * inv_std[ch];
                        for (j, v) in d[base..base + plane].iter_mut().enumerate() {
                            *v = match mode {
                                Mode::Eval => gi * *v,
                                Mode::Train => {
                                    gi * (*v
                                        - sum_dy[ch] / count
                                        - xhat.data()[base + j] * sum_dy_xhat[ch] / count)
                                }
                            };
                        }
                    }
                }
                dx
            });
            let per_channel = |v: Vec<f64>, like: &Tensor4| {
                Tensor4::from_vec(like.dims(), v).expect("per-channel dims")
            };
            vec![
                dx,
                ctx.needs[1].then(|| per_channel(sum_dy_xhat.clone(), ctx.inputs[1])),
                ctx.needs[2].then(|| per_channel(sum_dy.clone(), ctx.inputs[2])),
            ]
        })
    }
}
