use crate::autograd::{Gradients, Var};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::tensor::Tensor4;

/// `0.5 * base_lr * (1 + cos(pi * t / total))` for `0 <= t <= total`.
pub fn cosine_lr(t: usize, total: usize, base_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Argument(
            "cosine schedule needs at least one step".into(),
        ));
    }
    if t > total {
        return Err(Error::Argument(format!(
            "step {t} beyond schedule length {total}"
        )));
    }
    Ok(0.5 * base_lr * (1.0 + libm::cos(std::f64::consts::PI * t as f64 / total as f64)))
}

/// One momentum step with L2 decay folded into the gradient:
/// `v <- m v + g + wd p`, then `p <- p - lr v`.
pub fn sgd_step(
    param: &mut Tensor4,
    grad: &Tensor4,
    velocity: &mut Tensor4,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != velocity.dims() {
        return Err(Error::Shape(format!(
            "sgd: param {:?}, grad {:?}, velocity {:?}",
            param.dims(),
            grad.dims(),
            velocity.dims()
        )));
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Also decay batch-norm parameters and biases.
    pub decay_all: bool,
    velocity: Vec<Tensor4>,
}

impl Sgd {
    pub fn new(
        store: &ParamStore,
        momentum: f64,
        weight_decay: f64,
        decay_all: bool,
    ) -> Result<Self> {
        let velocity = store
            .params()
            .iter()
            .map(|p| Tensor4::zeros(p.value.dims()))
            .collect::<Result<_>>()?;
        Ok(Sgd {
            momentum,
            weight_decay,
            decay_all,
            velocity,
        })
    }

    /// `vars[i]` is the tape leaf of parameter `i`. Non-finite gradients are
    /// rejected before any parameter changes.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        vars: &[Var],
        lr: f64,
    ) -> Result<()> {
        if vars.len() != store.params().len() {
            return Err(Error::Shape(format!(
                "{} tape leaves for {} parameters",
                vars.len(),
                store.params().len()
            )));
        }
        for (p, v) in store.params().iter().zip(vars) {
            let g = grads
                .get(*v)
                .ok_or_else(|| Error::Graph(format!("no gradient for `{}`", p.name)))?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "backward",
                    scope: p.name.clone(),
                });
            }
        }
        for ((p, v), vel) in store
            .params_mut()
            .iter_mut()
            .zip(vars)
            .zip(&mut self.velocity)
        {
            let wd = if self.decay_all || p.kind.decays() {
                self.weight_decay
            } else {
                0.0
            };
            // Presence checked above.
            let g = grads.get(*v).expect("gradient present");
            sgd_step(&mut p.value, g, vel, lr, self.momentum, wd)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
        assert!((cosine_lr(5, 10, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(10, 10, 0.1).unwrap().abs() < 1e-15);
        assert!(cosine_lr(11, 10, 0.1).is_err());
        assert!(cosine_lr(0, 0, 0.1).is_err());
    }

    fn scalar(v: f64) -> Tensor4 {
        Tensor4::scalar(v)
    }

    #[test]
    fn reductions() {
        let (mut p, mut v) = (scalar(2.0), scalar(0.0));
        sgd_step(&mut p, &scalar(0.5), &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.data()[0], 2.0 - 0.1 * 0.5);
        let (mut p, mut v) = (scalar(2.0), scalar(0.0));
        sgd_step(&mut p, &scalar(0.0), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.data()[0], 2.0);
        let mut bad = Tensor4::zeros([1, 2, 1, 1]).unwrap();
        assert!(sgd_step(&mut bad, &scalar(0.0), &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn two_steps_on_quadratic() {
        // Independent scalar simulator of f(x) = x^2 / 2 (gradient x).
        fn simulate(mut x: f64, lr: f64, m: f64, wd: f64, steps: usize) -> f64 {
            let mut v = 0.0;
            for _ in 0..steps {
                let g = x;
                v = m * v + g + wd * x;
                x -= lr * v;
            }
            x
        }
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        for _ in 0..2 {
            let g = p.clone();
            sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        }
        // Step 1: v = 1, x = 0.9. Step 2: v = 0.9 + 0.9 = 1.8, x = 0.72.
        assert_eq!(v.data()[0], 1.8);
        assert!((p.data()[0] - 0.72).abs() < 1e-15);
        assert_eq!(p.data()[0], simulate(1.0, 0.1, 0.9, 0.0, 2));

        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        for _ in 0..5 {
            let g = p.clone();
            sgd_step(&mut p, &g, &mut v, 0.05, 0.8, 0.01).unwrap();
        }
        assert_eq!(p.data()[0], simulate(1.0, 0.05, 0.8, 0.01, 5));
    }
}
