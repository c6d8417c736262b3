//! Layer vocabulary: forward kernels on [`Tensor4`](crate::Tensor4) plus
//! tape-recorded versions with backward rules.

mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;
mod relu;

pub use batchnorm::{batch_norm_eval, batch_norm_train, BnStats};
pub use conv::{conv2d_forward, Conv2dParams};
pub use linear::linear_forward;
pub use loss::{softmax, validate_targets, LossOutput};
pub use pool::{avg_pool_forward, global_avg_pool_forward, max_pool_forward};
pub use relu::relu_forward;

use crate::error::{Error, Result};

/// Whether batch-norm uses batch statistics (and updates running ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `floor((input + 2 * padding - kernel) / stride) + 1`, rejecting empty outputs.
pub fn output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    if kernel == 0 {
        return Err(Error::Geometry("kernel size must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(output_size(32, 3, 1, 1).unwrap(), 32);
        assert_eq!(output_size(32, 3, 2, 1).unwrap(), 16);
        assert_eq!(output_size(7, 1, 2, 0).unwrap(), 4);
        assert_eq!(output_size(224, 7, 2, 3).unwrap(), 112);
        assert!(output_size(2, 5, 1, 1).is_err());
        assert!(output_size(4, 3, 0, 0).is_err());
    }
}
