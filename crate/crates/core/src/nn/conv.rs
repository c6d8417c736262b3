use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::output_size;
use crate::tensor::Tensor4;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dParams {
    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            output_size(h, self.kernel, self.stride, self.padding)?,
            output_size(w, self.kernel, self.stride, self.padding)?,
        ))
    }
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &Tensor4, weight: &Tensor4, stride: usize, pad: usize) -> Result<Self> {
        let [cout, wcin, kh, kw] = weight.dims();
        if kh != kw {
            return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
        }
        let [batch, cin, h, w] = x.dims();
        if cin != wcin {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        let oh = output_size(h, kh, stride, pad)?;
        let ow = output_size(w, kw, stride, pad)?;
        Ok(Geometry {
            batch,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds image `n` into a `(cin*k*k, oh*ow)` column matrix. Padded
    /// taps are zero.
    fn im2col(&self, x: &[f64], n: usize, col: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let cols = self.cols();
        let img = &x[n * self.cin * self.h * self.w..(n + 1) * self.cin * self.h * self.w];
        for c in 0..self.cin {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ki) as isize - p;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, slot) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            *slot = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Folds a column matrix back into image `n` of `dx`, accumulating.
    fn col2im(&self, col: &[f64], n: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let cols = self.cols();
        let img = &mut dx[n * self.cin * self.h * self.w..(n + 1) * self.cin * self.h * self.w];
        for c in 0..self.cin {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. `weight` is `(cout, cin, k, k)`,
/// `bias` has one entry per output channel.
///
/// Each output is accumulated from 0 over `(cin, ki, kj)` in ascending
/// order with the bias added last, matching a direct nested-loop sum.
pub fn conv2d_forward(
    x: &Tensor4,
    weight: &Tensor4,
    bias: Option<&Tensor4>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let g = Geometry::new(x, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!(
                "conv2d: bias has {} entries for {} output channels",
                b.len(),
                g.cout
            )));
        }
    }
    let mut out = Tensor4::zeros([g.batch, g.cout, g.oh, g.ow])?;
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * cols]
    };
    let wdat = weight.data();
    let xdat = x.data();
    let odat = out.data_mut();
    for n in 0..g.batch {
        let colm: &[f64] = if g.pointwise() {
            &xdat[n * rows * cols..(n + 1) * rows * cols]
        } else {
            g.im2col(xdat, n, &mut col);
            &col
        };
        let obase = n * g.cout * cols;
        for oc in 0..g.cout {
            let orow = &mut odat[obase + oc * cols..obase + (oc + 1) * cols];
            let wrow = &wdat[oc * rows..(oc + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                let crow = &colm[r * cols..(r + 1) * cols];
                for (o, &c) in orow.iter_mut().zip(crow) {
                    *o += wv * c;
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[oc];
                for o in orow.iter_mut() {
                    *o += bv;
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_backward(
    g: &Geometry,
    x: &Tensor4,
    weight: &Tensor4,
    dout: &Tensor4,
    needs: [bool; 3],
) -> [Option<Tensor4>; 3] {
    let (rows, cols) = (g.rows(), g.cols());
    let mut dx = needs[0].then(|| Tensor4::zeros(x.dims()).expect("live dims"));
    let mut dw = needs[1].then(|| Tensor4::zeros(weight.dims()).expect("live dims"));
    let mut db = needs[2].then(|| Tensor4::zeros([1, g.cout, 1, 1]).expect("live dims"));
    let mut col = vec![0.0; if g.pointwise() { 0 } else { rows * cols }];
    let mut dcol = vec![0.0; if dx.is_some() { rows * cols } else { 0 }];
    let (xdat, wdat, gdat) = (x.data(), weight.data(), dout.data());

    for n in 0..g.batch {
        let gbase = n * g.cout * cols;
        if let Some(db) = db.as_mut() {
            for (oc, slot) in db.data_mut().iter_mut().enumerate() {
                *slot += gdat[gbase + oc * cols..gbase + (oc + 1) * cols]
                    .iter()
                    .sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let colm: &[f64] = if g.pointwise() {
                &xdat[n * rows * cols..(n + 1) * rows * cols]
            } else {
                g.im2col(xdat, n, &mut col);
                &col
            };
            let dwd = dw.data_mut();
            for oc in 0..g.cout {
                let grow = &gdat[gbase + oc * cols..gbase + (oc + 1) * cols];
                for r in 0..rows {
                    let crow = &colm[r * cols..(r + 1) * cols];
                    dwd[oc * rows + r] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcol.fill(0.0);
            for oc in 0..g.cout {
                let grow = &gdat[gbase + oc * cols..gbase + (oc + 1) * cols];
                let wrow = &wdat[oc * rows..(oc + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    let drow = &mut dcol[r * cols..(r + 1) * cols];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d += wv * gv;
                    }
                }
            }
            if g.pointwise() {
                let dst = &mut dx.data_mut()[n * rows * cols..(n + 1) * rows * cols];
                for (d, v) in dst.iter_mut().zip(&dcol) {
                    *d += v;
                }
            } else {
                g.col2im(&dcol, n, dx.data_mut());
            }
        }
    }
    [dx, dw, db]
}

impl Tape {
    /// Tape-recorded [`conv2d_forward`].
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("conv2d", out, &inputs, move |ctx| {
            let g = Geometry::new(ctx.inputs[0], ctx.inputs[1], stride, padding)
                .expect("validated in forward");
            let has_bias = ctx.inputs.len() == 3;
            let needs = [ctx.needs[0], ctx.needs[1], has_bias && ctx.needs[2]];
            let [dx, dw, db] = conv2d_backward(&g, ctx.inputs[0], ctx.inputs[1], ctx.grad, needs);
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(db.map(|d| d.reshape(ctx.inputs[2].dims()).expect("bias numel")));
            }
            grads
        })
    }
}
