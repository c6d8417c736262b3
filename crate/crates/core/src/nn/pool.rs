use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::nn::output_size;
use crate::tensor::Tensor4;

/// Windowed mean without padding.
pub fn avg_pool_forward(x: &Tensor4, k: usize, stride: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (output_size(h, k, stride, 0)?, output_size(w, k, stride, 0)?);
    let mut out = Tensor4::zeros([n, c, oh, ow])?;
    let inv = 1.0 / (k * k) as f64;
    let (src, dst) = (x.data(), out.data_mut());
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for i in 0..k {
                    let row = &plane[(oy * stride + i) * w..];
                    for j in 0..k {
                        s += row[ox * stride + j];
                    }
                }
                dst[(p * oh + oy) * ow + ox] = s * inv;
            }
        }
    }
    Ok(out)
}

fn max_pool_with_argmax(
    x: &Tensor4,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (
        output_size(h, k, stride, padding)?,
        output_size(w, k, stride, padding)?,
    );
    let mut out = Tensor4::zeros([n, c, oh, ow])?;
    let mut arg = vec![0usize; out.len()];
    let src = x.data();
    let dst = out.data_mut();
    let pad = padding as isize;
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = usize::MAX;
                for i in 0..k {
                    let iy = (oy * stride + i) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..k {
                        let ix = (ox * stride + j) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = p * h * w + iy as usize * w + ix as usize;
                        if src[at] > best || best_at == usize::MAX {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                dst[o] = best;
                arg[o] = best_at;
            }
        }
    }
    Ok((out, arg))
}

/// Windowed max; padded taps never win.
pub fn max_pool_forward(x: &Tensor4, k: usize, stride: usize, padding: usize) -> Result<Tensor4> {
    max_pool_with_argmax(x, k, stride, padding).map(|(out, _)| out)
}

/// Mean over H x W, giving `(N, C, 1, 1)`.
pub fn global_avg_pool_forward(x: &Tensor4) -> Result<Tensor4> {
    let [n, c, _, _] = x.dims();
    let plane = x.plane();
    let mut out = Tensor4::zeros([n, c, 1, 1])?;
    for (p, o) in out.data_mut().iter_mut().enumerate() {
        *o = x.data()[p * plane..(p + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
    Ok(out)
}

impl Tape {
    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let out = avg_pool_forward(self.value(x), k, stride)?;
        self.record("avg_pool", out, &[x], move |ctx| {
            let [n, c, h, w] = ctx.inputs[0].dims();
            let [_, _, oh, ow] = ctx.grad.dims();
            let mut dx = Tensor4::zeros([n, c, h, w]).expect("live dims");
            let inv = 1.0 / (k * k) as f64;
            let (g, d) = (ctx.grad.data(), dx.data_mut());
            for p in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(p * oh + oy) * ow + ox] * inv;
                        for i in 0..k {
                            for j in 0..k {
                                d[p * h * w + (oy * stride + i) * w + ox * stride + j] += gv;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, arg) = max_pool_with_argmax(self.value(x), k, stride, padding)?;
        self.record("max_pool", out, &[x], move |ctx| {
            let mut dx = Tensor4::zeros(ctx.inputs[0].dims()).expect("live dims");
            let d = dx.data_mut();
            for (&at, &gv) in arg.iter().zip(ctx.grad.data()) {
                d[at] += gv;
            }
            vec![Some(dx)]
        })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_pool_forward(self.value(x))?;
        self.record("global_avg_pool", out, &[x], |ctx| {
            let dims = ctx.inputs[0].dims();
            let plane = dims[2] * dims[3];
            let mut dx = Tensor4::zeros(dims).expect("live dims");
            for (p, chunk) in dx.data_mut().chunks_mut(plane.max(1)).enumerate() {
                chunk.fill(ctx.grad.data()[p] / plane as f64);
            }
            vec![Some(dx)]
        })
    }
}
