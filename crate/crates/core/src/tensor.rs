use crate::error::{Error, Result};
use crate::rng::Rng;

/// Extents of a rank-4 NCHW array.
pub type Dims = [usize; 4];

pub(crate) fn numel(dims: Dims) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f64>())
}

/// Dense rank-4 array in row-major NCHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: Dims) -> Result<Self> {
        let n = numel(dims).ok_or(Error::Capacity(dims))?;
        Ok(Tensor4 {
            dims,
            data: vec![0.0; n],
        })
    }

    pub fn full(dims: Dims, value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let n = numel(dims).ok_or(Error::Capacity(dims))?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values cannot fill dims {dims:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    /// I.i.d. Gaussian entries with mean 0 and the given standard deviation.
    pub fn randn(dims: Dims, rng: &mut Rng, std: f64) -> Result<Self> {
        if std.is_nan() || std <= 0.0 || !std.is_finite() {
            return Err(Error::Argument(format!("std must be positive, got {std}")));
        }
        let mut t = Self::zeros(dims)?;
        for v in &mut t.data {
            *v = std * rng.normal();
        }
        Ok(t)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor4 {
            dims: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Number of values in one `(n, c)` plane.
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Same data viewed with different dims of equal element count.
    pub fn reshape(self, dims: Dims) -> Result<Self> {
        if numel(dims) != Some(self.data.len()) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        Ok(Tensor4 {
            dims,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn same_dims(&self, other: &Tensor4, op: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{op}: dims {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rounds every value through 32-bit precision.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_cases() {
        assert_eq!(Tensor4::zeros([1, 1, 1, 1]).unwrap().data(), &[0.0]);
        let empty = Tensor4::zeros([2, 3, 0, 4]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dims(), [2, 3, 0, 4]);
        let z = Tensor4::zeros([1, 2, 2, 2]).unwrap();
        assert_eq!(z.data(), &[0.0; 8]);
    }

    #[test]
    fn zeros_overflow_is_capacity_error() {
        let err = Tensor4::zeros([usize::MAX, 2, 1, 1]).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        let err = Tensor4::zeros([1 << 20, 1 << 20, 1 << 20, 1]).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn randn_is_deterministic() {
        let a = Tensor4::randn([2, 3, 4, 5], &mut Rng::new(9), 1.0).unwrap();
        let b = Tensor4::randn([2, 3, 4, 5], &mut Rng::new(9), 1.0).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn randn_moments() {
        let t = Tensor4::randn([1, 1, 100, 100], &mut Rng::new(42), 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn randn_small_std_bound() {
        let t = Tensor4::randn([1, 1, 100, 100], &mut Rng::new(5), 0.01).unwrap();
        assert!(t.max_abs() < 0.1);
    }

    #[test]
    fn randn_rejects_nonpositive_std() {
        let mut r = Rng::new(0);
        assert!(matches!(
            Tensor4::randn([1, 1, 1, 1], &mut r, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            Tensor4::randn([1, 1, 1, 1], &mut r, -1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor4::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 1, 0, 0), 3.0);
    }
}
