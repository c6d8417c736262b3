use crate::autograd::{map, zip_map, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor4;

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    map(x, |v| v.max(0.0))
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = relu_forward(self.value(x));
        self.record("relu", out, &[x], |ctx| {
            vec![Some(zip_map(ctx.grad, ctx.inputs[0], |g, v| {
                if v > 0.0 {
                    g
                } else {
                    0.0
                }
            }))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_to_zero_positive_kept() {
        let neg = Tensor4::full([1, 2, 2, 2], -0.5).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor4::from_vec([1, 1, 1, 3], vec![0.1, 2.0, 3.5]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn backward_masks_by_sign() {
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor4::from_vec([1, 1, 1, 4], vec![-1.0, 2.0, -3.0, 4.0]).unwrap(),
            true,
        );
        let y = t.relu(x).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }
}
