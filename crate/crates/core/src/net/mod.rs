//! Whole networks built from a [`NetworkConfig`].

mod config;

pub use config::{BlockType, NetworkConfig, Stem, WidthRule, HS_PRESETS, PRESETS};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::hs::{HsBlockConfig, HsBottleneck, Shortcut};
use crate::layers::{conv_geom, ConvBn, Ctx, Linear, ParamStore};
use crate::nn::{output_size, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Classic ResNet bottleneck: 1x1 reduce, kxk (strided), 1x1 expand.
#[derive(Clone, Debug)]
pub struct PlainBottleneck {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub reduce: ConvBn,
    pub conv: ConvBn,
    pub expand: ConvBn,
    pub shortcut: Shortcut,
}

impl PlainBottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        mid: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pool_shortcut: bool,
        zero_init_expand: bool,
    ) -> Result<Self> {
        let reduce = ConvBn::new(
            store,
            &format!("{name}.reduce"),
            conv_geom(in_channels, mid, 1, 1),
            true,
            false,
        )?;
        let conv = ConvBn::new(
            store,
            &format!("{name}.conv"),
            conv_geom(mid, mid, kernel, stride),
            true,
            false,
        )?;
        let expand = ConvBn::new(
            store,
            &format!("{name}.expand"),
            conv_geom(mid, out_channels, 1, 1),
            false,
            zero_init_expand,
        )?;
        let shortcut = Shortcut::new(
            store,
            name,
            in_channels,
            out_channels,
            stride,
            pool_shortcut,
        )?;
        Ok(PlainBottleneck {
            name: name.to_owned(),
            in_channels,
            out_channels,
            reduce,
            conv,
            expand,
            shortcut,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let main = self.reduce.forward(ctx, x)?;
        let main = self.conv.forward(ctx, main)?;
        let main = self.expand.forward(ctx, main)?;
        let skip = self.shortcut.forward(ctx, x)?;
        ctx.tape.set_scope(format!("{}.add", self.name));
        let sum = ctx.tape.add(skip, main)?;
        ctx.tape.relu(sum)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Plain(PlainBottleneck),
    Hs(HsBottleneck),
}

impl Block {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Block::Plain(b) => b.forward(ctx, x),
            Block::Hs(b) => b.forward(ctx, x),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Block::Plain(b) => &b.name,
            Block::Hs(b) => &b.name,
        }
    }
}

/// Stem convs followed by a 3x3/2 max pool (padding 1).
#[derive(Clone, Debug)]
pub struct StemLayers {
    pub convs: Vec<ConvBn>,
}

impl StemLayers {
    pub const POOL: (usize, usize, usize) = (3, 2, 1);

    fn new(store: &mut ParamStore, kind: Stem, width: usize) -> Result<Self> {
        let convs = match kind {
            Stem::Classic7x7 => vec![ConvBn::new(
                store,
                "stem.conv1",
                conv_geom(3, width, 7, 2),
                true,
                false,
            )?],
            Stem::ResnetD3x3x3 => {
                let half = width / 2;
                vec![
                    ConvBn::new(store, "stem.conv1", conv_geom(3, half, 3, 2), true, false)?,
                    ConvBn::new(
                        store,
                        "stem.conv2",
                        conv_geom(half, half, 3, 1),
                        true,
                        false,
                    )?,
                    ConvBn::new(
                        store,
                        "stem.conv3",
                        conv_geom(half, width, 3, 1),
                        true,
                        false,
                    )?,
                ]
            }
        };
        Ok(StemLayers { convs })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, mut x: Var) -> Result<Var> {
        for c in &self.convs {
            x = c.forward(ctx, x)?;
        }
        ctx.tape.set_scope("stem.pool");
        let (k, s, p) = Self::POOL;
        ctx.tape.max_pool(x, k, s, p)
    }
}

/// Result of [`Network::forward`].
pub struct Forward {
    pub logits: Var,
    /// Tape leaves of every parameter, in store order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub store: ParamStore,
    pub stem: StemLayers,
    pub stages: Vec<Vec<Block>>,
    pub fc: Linear,
}

/// Spatial size after the stem and each stage, rejecting geometries that
/// collapse below one pixel.
pub fn stage_resolutions(cfg: &NetworkConfig) -> Result<[usize; 5]> {
    let mut size = cfg.image_size;
    let geometry = |e: Error| match e {
        Error::Geometry(m) => {
            Error::Config(format!("image size {} too small: {m}", cfg.image_size))
        }
        other => other,
    };
    match cfg.stem {
        Stem::Classic7x7 => size = output_size(size, 7, 2, 3).map_err(geometry)?,
        Stem::ResnetD3x3x3 => size = output_size(size, 3, 2, 1).map_err(geometry)?,
    }
    let (k, s, p) = StemLayers::POOL;
    size = output_size(size, k, s, p).map_err(geometry)?;
    let mut out = [size; 5];
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        if j > 1 {
            size = match cfg.block_type {
                BlockType::HsBottleneck => output_size(size, 2, 2, 0),
                BlockType::PlainBottleneck => output_size(size, cfg.kernel, 2, cfg.kernel / 2),
            }
            .map_err(geometry)?;
        }
        *slot = size;
    }
    Ok(out)
}

impl Network {
    /// Deterministic construction: the same config and seed give
    /// bit-identical parameters.
    pub fn build(cfg: &NetworkConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        stage_resolutions(cfg)?;
        let mut store = ParamStore::new(rng.clone());
        let stem = StemLayers::new(&mut store, cfg.stem, cfg.stem_width)?;
        let widths = cfg.stage_widths();
        let outs = cfg.stage_out_channels();
        let mut in_channels = cfg.stem_width;
        let mut stages = Vec::with_capacity(4);
        for j in 0..4 {
            let mut blocks = Vec::with_capacity(cfg.stage_blocks[j]);
            for b in 0..cfg.stage_blocks[j] {
                let stride = if j > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{}.block{b}", j + 1);
                let block = match cfg.block_type {
                    BlockType::HsBottleneck => {
                        let hs = HsBlockConfig {
                            s: cfg.s,
                            w: widths[j],
                            kernel: cfg.kernel,
                            stride,
                            variant: cfg.variant,
                        };
                        Block::Hs(HsBottleneck::new(
                            &mut store,
                            &name,
                            in_channels,
                            outs[j],
                            hs,
                            cfg.zero_init_last_bn,
                        )?)
                    }
                    BlockType::PlainBottleneck => Block::Plain(PlainBottleneck::new(
                        &mut store,
                        &name,
                        in_channels,
                        cfg.s * widths[j],
                        outs[j],
                        cfg.kernel,
                        stride,
                        cfg.stem == Stem::ResnetD3x3x3,
                        cfg.zero_init_last_bn,
                    )?),
                };
                blocks.push(block);
                in_channels = outs[j];
            }
            stages.push(blocks);
        }
        let fc = store.linear("fc", in_channels, cfg.num_classes)?;
        Ok(Network {
            cfg: cfg.clone(),
            store,
            stem,
            stages,
            fc,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn input_dims(&self, batch: usize) -> [usize; 4] {
        [batch, 3, self.cfg.image_size, self.cfg.image_size]
    }

    /// Records the forward pass on `tape`. In train mode batch-norm uses
    /// batch statistics and updates its running averages.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<Forward> {
        let dims = tape.value(x).dims();
        if dims[1..] != self.input_dims(dims[0])[1..] {
            return Err(Error::Shape(format!(
                "network expects input (N, 3, {s}, {s}), got {dims:?}",
                s = self.cfg.image_size
            )));
        }
        let params = self.store.bind(tape, requires_grad);
        let (stem, stages, fc) = (&self.stem, &self.stages, &self.fc);
        let mut ctx = Ctx {
            tape,
            params: &params,
            stats: self.store.stats_mut(),
            mode,
        };
        let mut h = stem.forward(&mut ctx, x)?;
        for block in stages.iter().flatten() {
            h = block.forward(&mut ctx, h)?;
        }
        ctx.tape.set_scope("head");
        let pooled = ctx.tape.global_avg_pool(h)?;
        let logits = fc.forward(&mut ctx, pooled)?;
        Ok(Forward { logits, params })
    }

    /// Eval-mode logits `(N, num_classes, 1, 1)` without recording gradients.
    pub fn predict(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, Mode::Eval, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// All parameter and statistic names, sorted.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.store.params().iter().map(|p| p.name.clone()).collect();
        for (n, _) in self.store.stats() {
            names.push(format!("{n}.running_mean"));
            names.push(format!("{n}.running_var"));
        }
        names.sort();
        names
    }

    pub fn hs_blocks(&self) -> impl Iterator<Item = &HsBottleneck> {
        self.stages.iter().flatten().filter_map(|b| match b {
            Block::Hs(h) => Some(h),
            Block::Plain(_) => None,
        })
    }
}
