use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn copy_channels(
    src: &Tensor4,
    src_start: usize,
    dst: &mut Tensor4,
    dst_start: usize,
    count: usize,
) {
    let plane = src.plane();
    let (sc, dc) = (src.channels(), dst.channels());
    for n in 0..src.batch() {
        let s = (n * sc + src_start) * plane;
        let d = (n * dc + dst_start) * plane;
        dst.data_mut()[d..d + count * plane].copy_from_slice(&src.data()[s..s + count * plane]);
    }
}

fn channel_slice(x: &Tensor4, start: usize, len: usize) -> Result<Tensor4> {
    let [n, _, h, w] = x.dims();
    let mut out = Tensor4::zeros([n, len, h, w])?;
    copy_channels(x, start, &mut out, 0, len);
    Ok(out)
}

fn check_widths(x: &Tensor4, widths: &[usize]) -> Result<()> {
    let total: usize = widths.iter().sum();
    if total != x.channels() {
        return Err(Error::Shape(format!(
            "split widths {widths:?} sum to {total}, input has {} channels",
            x.channels()
        )));
    }
    Ok(())
}

/// Contiguous channel ranges in order; the first width takes the lowest
/// channel indices.
pub fn split_channels(x: &Tensor4, widths: &[usize]) -> Result<Vec<Tensor4>> {
    check_widths(x, widths)?;
    let mut start = 0;
    widths
        .iter()
        .map(|&len| {
            let part = channel_slice(x, start, len);
            start += len;
            part
        })
        .collect()
}

/// Appends channels of `parts` in argument order. All parts must share
/// batch and spatial extents.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.dims();
    for p in parts {
        let [pn, _, ph, pw] = p.dims();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat: dims {:?} disagree with {:?} outside the channel axis",
                p.dims(),
                first.dims()
            )));
        }
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut out = Tensor4::zeros([n, total, h, w])?;
    let mut at = 0;
    for p in parts {
        copy_channels(p, 0, &mut out, at, p.channels());
        at += p.channels();
    }
    Ok(out)
}

impl Tape {
    /// Channels `[start, start + len)` of `x`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if start + len > src.channels() {
            return Err(Error::Shape(format!(
                "channel range {start}..{} exceeds {} channels",
                start + len,
                src.channels()
            )));
        }
        let out = channel_slice(src, start, len)?;
        self.record("slice_channels", out, &[x], move |ctx| {
            let mut dx = Tensor4::zeros(ctx.inputs[0].dims()).expect("live dims");
            copy_channels(ctx.grad, 0, &mut dx, start, len);
            vec![Some(dx)]
        })
    }

    pub fn split_channels(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
        check_widths(self.value(x), widths)?;
        let mut start = 0;
        let mut parts = Vec::with_capacity(widths.len());
        for &len in widths {
            parts.push(self.slice_channels(x, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let out = {
            let values: Vec<&Tensor4> = parts.iter().map(|&p| self.value(p)).collect();
            concat_channels(&values)?
        };
        self.record("concat_channels", out, parts, |ctx| {
            let mut at = 0;
            ctx.inputs
                .iter()
                .zip(ctx.needs)
                .map(|(p, &need)| {
                    let c = p.channels();
                    let g = need.then(|| channel_slice(ctx.grad, at, c).expect("live dims"));
                    at += c;
                    g
                })
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(dims: [usize; 4], seed: u64) -> Tensor4 {
        Tensor4::randn(dims, &mut Rng::new(seed), 1.0).unwrap()
    }

    #[test]
    fn even_split_takes_contiguous_ranges() {
        let x = rand([2, 20, 3, 3], 1);
        let parts = split_channels(&x, &[4; 5]).unwrap();
        assert_eq!(parts.len(), 5);
        for (i, p) in parts.iter().enumerate() {
            for n in 0..2 {
                for c in 0..4 {
                    assert_eq!(p.at(n, c, 1, 2), x.at(n, 4 * i + c, 1, 2));
                }
            }
        }
    }

    #[test]
    fn uneven_split() {
        let x = rand([1, 7, 2, 2], 2);
        let parts = split_channels(&x, &[4, 3]).unwrap();
        assert_eq!(parts[0].channels(), 4);
        assert_eq!(parts[1].at(0, 0, 0, 0), x.at(0, 4, 0, 0));
        assert_eq!(parts[1].at(0, 2, 1, 1), x.at(0, 6, 1, 1));
    }

    #[test]
    fn whole_width_split_is_identity() {
        let x = rand([2, 5, 2, 3], 3);
        assert_eq!(split_channels(&x, &[5]).unwrap(), vec![x]);
    }

    #[test]
    fn split_width_mismatch() {
        let x = rand([1, 6, 2, 2], 4);
        assert!(matches!(split_channels(&x, &[2, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_single_and_round_trip() {
        let a = rand([2, 3, 4, 4], 5);
        let b = rand([2, 1, 4, 4], 6);
        let c = rand([2, 2, 4, 4], 7);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let joined = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(split_channels(&joined, &[3, 1, 2]).unwrap(), vec![a, b, c]);
    }

    #[test]
    fn concat_spatial_mismatch() {
        let a = rand([1, 2, 4, 4], 8);
        let b = rand([1, 2, 4, 3], 9);
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_width_parts_are_allowed() {
        let x = rand([1, 3, 2, 2], 10);
        let parts = split_channels(&x, &[0, 3, 0]).unwrap();
        assert!(parts[0].is_empty());
        assert_eq!(parts[1], x);
    }
}
