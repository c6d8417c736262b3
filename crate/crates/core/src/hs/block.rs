use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::hs::plan::{ChannelPlan, HsBlockConfig, HsVariant};
use crate::layers::{conv_geom, BatchNorm, ConvBn, Ctx, ParamStore};

/// The split stage alone: `s * w` channels in, `plan.total_out()` out.
///
/// Group 1 goes straight to the output (`BPreserve`, `PProjectW`) or is
/// split with its upper part forwarded (`ASplitFirst`). Group `i >= 2`
/// convolves `x_i ++ forwarded` (raw group first), keeps the lower
/// `out[i-1]` channels and forwards the rest, except the last group which
/// is kept whole. Kept parts are concatenated in group order.
#[derive(Clone, Debug)]
pub struct HsStage {
    pub cfg: HsBlockConfig,
    pub plan: ChannelPlan,
    /// `F_2 ..= F_s`, each conv + batch-norm + ReLU at stride 1.
    pub convs: Vec<ConvBn>,
}

impl HsStage {
    pub fn new(store: &mut ParamStore, name: &str, cfg: HsBlockConfig) -> Result<Self> {
        let plan = ChannelPlan::new(&cfg)?;
        let convs = plan
            .conv_in
            .iter()
            .zip(&plan.conv_out)
            .enumerate()
            .map(|(j, (&cin, &cout))| {
                ConvBn::new(
                    store,
                    &format!("{name}.group{}", j + 2),
                    conv_geom(cin, cout, cfg.kernel, 1),
                    true,
                    false,
                )
            })
            .collect::<Result<_>>()?;
        Ok(HsStage { cfg, plan, convs })
    }

    /// With stride 2 the input is average-pooled 2x2 before the split so
    /// every group sees the same spatial size.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let channels = ctx.tape.value(x).channels();
        if channels != self.plan.total_in() {
            return Err(Error::Shape(format!(
                "hs stage expects {} channels, got {channels}",
                self.plan.total_in()
            )));
        }
        let x = if self.cfg.stride == 2 {
            ctx.tape.avg_pool(x, 2, 2)?
        } else {
            x
        };
        let (s, w) = (self.cfg.s, self.cfg.w);
        let groups = ctx.tape.split_channels(x, &vec![w; s])?;

        let mut kept = Vec::with_capacity(s);
        let mut carry = None;
        if self.cfg.variant == HsVariant::ASplitFirst {
            let halves = ctx
                .tape
                .split_channels(groups[0], &[self.plan.out[0], self.plan.head_fwd])?;
            kept.push(halves[0]);
            carry = Some(halves[1]);
        } else {
            kept.push(groups[0]);
        }
        for i in 2..=s {
            let input = match carry.take() {
                Some(fwd) => ctx.tape.concat_channels(&[groups[i - 1], fwd])?,
                None => groups[i - 1],
            };
            let y = self.convs[i - 2].forward(ctx, input)?;
            if i < s {
                let halves = ctx
                    .tape
                    .split_channels(y, &[self.plan.out[i - 1], self.plan.fwd[i - 2]])?;
                kept.push(halves[0]);
                carry = Some(halves[1]);
            } else {
                kept.push(y);
            }
        }
        ctx.tape.concat_channels(&kept)
    }
}

/// Shortcut branch of a residual block.
#[derive(Clone, Debug)]
pub enum Shortcut {
    Identity,
    /// Optional 2x2 average pool, then 1x1 conv + batch-norm.
    Projection {
        pool: bool,
        proj: ConvBn,
    },
}

impl Shortcut {
    /// Identity when shapes already agree; otherwise a projection. With
    /// `pool_first`, striding is done by a 2x2 average pool in front of a
    /// stride-1 projection; else the 1x1 conv itself strides.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        pool_first: bool,
    ) -> Result<Self> {
        if in_channels == out_channels && stride == 1 {
            return Ok(Shortcut::Identity);
        }
        let pool = pool_first && stride == 2;
        let conv_stride = if pool { 1 } else { stride };
        let proj = ConvBn::new(
            store,
            &format!("{name}.shortcut"),
            conv_geom(in_channels, out_channels, 1, conv_stride),
            false,
            false,
        )?;
        Ok(Shortcut::Projection { pool, proj })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Shortcut::Identity => Ok(x),
            Shortcut::Projection { pool, proj } => {
                let x = if *pool {
                    ctx.tape.avg_pool(x, 2, 2)?
                } else {
                    x
                };
                proj.forward(ctx, x)
            }
        }
    }
}

/// ResNet bottleneck whose 3x3 stage is replaced by an [`HsStage`]:
/// `ReLU(shortcut(x) + expand(hs(reduce(x))))`.
#[derive(Clone, Debug)]
pub struct HsBottleneck {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub reduce: ConvBn,
    pub stage: HsStage,
    pub expand: ConvBn,
    pub shortcut: Shortcut,
}

impl HsBottleneck {
    /// `zero_init_expand` starts the expand batch-norm with gamma = 0 so the
    /// block begins as its shortcut.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        cfg: HsBlockConfig,
        zero_init_expand: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let reduce = ConvBn::new(
            store,
            &format!("{name}.reduce"),
            conv_geom(in_channels, cfg.width(), 1, 1),
            true,
            false,
        )?;
        let stage = HsStage::new(store, &format!("{name}.hs"), cfg)?;
        let expand = ConvBn::new(
            store,
            &format!("{name}.expand"),
            conv_geom(stage.plan.total_out(), out_channels, 1, 1),
            false,
            zero_init_expand,
        )?;
        let shortcut = Shortcut::new(store, name, in_channels, out_channels, cfg.stride, true)?;
        Ok(HsBottleneck {
            name: name.to_owned(),
            in_channels,
            out_channels,
            reduce,
            stage,
            expand,
            shortcut,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let channels = ctx.tape.value(x).channels();
        if channels != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expects {} input channels, got {channels}",
                self.name, self.in_channels
            )));
        }
        let main = self.reduce.forward(ctx, x)?;
        let main = self.stage.forward(ctx, main)?;
        let main = self.expand.forward(ctx, main)?;
        let skip = self.shortcut.forward(ctx, x)?;
        ctx.tape.set_scope(format!("{}.add", self.name));
        let sum = ctx.tape.add(skip, main)?;
        ctx.tape.relu(sum)
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut out = vec![&self.reduce.bn];
        out.extend(self.stage.convs.iter().map(|c| &c.bn));
        out.push(&self.expand.bn);
        if let Shortcut::Projection { proj, .. } = &self.shortcut {
            out.push(&proj.bn);
        }
        out
    }
}
