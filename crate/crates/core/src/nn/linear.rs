use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn dims_of(x: &Tensor4, weight: &Tensor4, bias: &Tensor4) -> Result<(usize, usize, usize)> {
    let n = x.batch();
    let d = x.len().checked_div(n).unwrap_or(0);
    let [_, _, wd, k] = weight.dims();
    if weight.len() != wd * k || wd != d {
        return Err(Error::Shape(format!(
            "linear: input features {d} do not match weight dims {:?}",
            weight.dims()
        )));
    }
    if bias.len() != k {
        return Err(Error::Shape(format!(
            "linear: bias has {} entries for {k} outputs",
            bias.len()
        )));
    }
    Ok((n, d, k))
}

/// `x` flattened to `N x D`, times `weight` stored as `(1, 1, D, K)`, plus
/// `bias` of `K` entries. Output dims are `(N, K, 1, 1)`.
pub fn linear_forward(x: &Tensor4, weight: &Tensor4, bias: &Tensor4) -> Result<Tensor4> {
    let (n, d, k) = dims_of(x, weight, bias)?;
    let mut out = Tensor4::zeros([n, k, 1, 1])?;
    let (xd, wd, od) = (x.data(), weight.data(), out.data_mut());
    for b in 0..n {
        let orow = &mut od[b * k..(b + 1) * k];
        for (i, &xv) in xd[b * d..(b + 1) * d].iter().enumerate() {
            for (o, &wv) in orow.iter_mut().zip(&wd[i * k..(i + 1) * k]) {
                *o += xv * wv;
            }
        }
        for (o, &bv) in orow.iter_mut().zip(bias.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

impl Tape {
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(weight), self.value(bias))?;
        self.record("linear", out, &[x, weight, bias], |ctx| {
            let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
            let (n, d, k) = dims_of(x, w, ctx.inputs[2]).expect("validated in forward");
            let g = ctx.grad.data();
            let dx = ctx.needs[0].then(|| {
                let mut dx = Tensor4::zeros(x.dims()).expect("live dims");
                for b in 0..n {
                    let grow = &g[b * k..(b + 1) * k];
                    for (i, slot) in dx.data_mut()[b * d..(b + 1) * d].iter_mut().enumerate() {
                        let wrow = &w.data()[i * k..(i + 1) * k];
                        *slot = grow.iter().zip(wrow).map(|(p, q)| p * q).sum();
                    }
                }
                dx
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = Tensor4::zeros(w.dims()).expect("live dims");
                let dwd = dw.data_mut();
                for b in 0..n {
                    let grow = &g[b * k..(b + 1) * k];
                    for (i, &xv) in x.data()[b * d..(b + 1) * d].iter().enumerate() {
                        for (o, &gv) in dwd[i * k..(i + 1) * k].iter_mut().zip(grow) {
                            *o += xv * gv;
                        }
                    }
                }
                dw
            });
            let db = ctx.needs[2].then(|| {
                let mut db = Tensor4::zeros(ctx.inputs[2].dims()).expect("live dims");
                for b in 0..n {
                    for (o, &gv) in db.data_mut().iter_mut().zip(&g[b * k..(b + 1) * k]) {
                        *o += gv;
                    }
                }
                db
            });
            vec![dx, dw, db]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_weight_zero_bias() {
        let x = Tensor4::randn([3, 4, 1, 1], &mut Rng::new(1), 1.0).unwrap();
        let mut w = Tensor4::zeros([1, 1, 4, 4]).unwrap();
        for i in 0..4 {
            w.set(0, 0, i, i, 1.0);
        }
        let b = Tensor4::zeros([1, 1, 1, 4]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let x = Tensor4::randn([2, 3, 2, 1], &mut Rng::new(1), 1.0).unwrap();
        let w = Tensor4::zeros([1, 1, 6, 2]).unwrap();
        let b = Tensor4::from_vec([1, 1, 1, 2], vec![0.25, -4.0]).unwrap();
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.dims(), [2, 2, 1, 1]);
        assert_eq!(y.data(), &[0.25, -4.0, 0.25, -4.0]);
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor4::zeros([2, 3, 1, 1]).unwrap();
        let w = Tensor4::zeros([1, 1, 4, 2]).unwrap();
        let b = Tensor4::zeros([1, 1, 1, 2]).unwrap();
        assert!(matches!(linear_forward(&x, &w, &b), Err(Error::Shape(_))));
    }
}
