use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Random choices for one image: crop offset into the padded image and a
/// horizontal flip flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

/// Offsets uniform over `{0..=2*pad}^2`; flip with probability `flip_prob`.
pub fn draw_augment(
    n: usize,
    rng: &mut Rng,
    pad: usize,
    flip_prob: f64,
) -> Result<Vec<AugmentDraw>> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::Argument(format!(
            "flip probability {flip_prob} not in [0, 1]"
        )));
    }
    let span = 2 * pad as u64 + 1;
    Ok((0..n)
        .map(|_| AugmentDraw {
            dy: rng.below(span) as usize,
            dx: rng.below(span) as usize,
            flip: rng.uniform() < flip_prob,
        })
        .collect())
}

/// Zero-pads by `pad`, crops back to the original size at each draw's
/// offset, then mirrors the width if flagged.
pub fn apply_augment(images: &Tensor4, draws: &[AugmentDraw], pad: usize) -> Result<Tensor4> {
    let [n, c, h, w] = images.dims();
    if draws.len() != n {
        return Err(Error::Shape(format!(
            "{} draws for {n} images",
            draws.len()
        )));
    }
    let mut out = Tensor4::zeros(images.dims())?;
    for (b, d) in draws.iter().enumerate() {
        if d.dy > 2 * pad || d.dx > 2 * pad {
            return Err(Error::Argument(format!(
                "crop offset {d:?} outside padding {pad}"
            )));
        }
        for ch in 0..c {
            for y in 0..h {
                let sy = (y + d.dy) as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = (x + d.dx) as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let tx = if d.flip { w - 1 - x } else { x };
                    out.set(b, ch, y, tx, images.at(b, ch, sy as usize, sx as usize));
                }
            }
        }
    }
    Ok(out)
}

/// Random crop with zero padding and random horizontal flip.
pub fn augment(images: &Tensor4, rng: &mut Rng, pad: usize, flip_prob: f64) -> Result<Tensor4> {
    let draws = draw_augment(images.batch(), rng, pad, flip_prob)?;
    apply_augment(images, &draws, pad)
}
