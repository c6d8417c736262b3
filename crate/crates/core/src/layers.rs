//! Parametrized layers and the store that owns their tensors.

use std::collections::HashSet;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BnStats, Conv2dParams, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

impl StatsId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    /// Weight decay applies to conv and linear weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor4,
}

/// Trainable parameters plus batch-norm running statistics, in creation
/// order. Each parameter is initialized from its own substream of the
/// store's generator, keyed by creation index.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<(String, BnStats)>,
    names: HashSet<String>,
    rng: Rng,
}

impl ParamStore {
    pub fn new(rng: Rng) -> Self {
        ParamStore {
            params: Vec::new(),
            stats: Vec::new(),
            names: HashSet::new(),
            rng,
        }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_owned()) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, value: Tensor4) -> Result<ParamId> {
        self.claim(name)?;
        self.params.push(Param {
            name: name.to_owned(),
            kind,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    fn next_stream(&self) -> Rng {
        self.rng.split(self.params.len() as u64)
    }

    /// He (fan-in) Gaussian init, no bias unless asked.
    pub fn conv(&mut self, name: &str, geom: Conv2dParams, bias: bool) -> Result<Conv> {
        let fan_in = geom.in_channels * geom.kernel * geom.kernel;
        let weight = Tensor4::randn(
            geom.weight_dims(),
            &mut self.next_stream(),
            (2.0 / fan_in.max(1) as f64).sqrt(),
        )?;
        let weight = self.add(&format!("{name}.weight"), ParamKind::ConvWeight, weight)?;
        let bias = if bias {
            let b = Tensor4::zeros([1, geom.out_channels, 1, 1])?;
            Some(self.add(&format!("{name}.bias"), ParamKind::Bias, b)?)
        } else {
            None
        };
        Ok(Conv { weight, bias, geom })
    }

    /// Unit gamma (or zero when `zero_gamma`), zero beta, fresh statistics.
    pub fn batch_norm(
        &mut self,
        name: &str,
        channels: usize,
        zero_gamma: bool,
    ) -> Result<BatchNorm> {
        let gamma = Tensor4::full([1, channels, 1, 1], if zero_gamma { 0.0 } else { 1.0 })?;
        let gamma = self.add(&format!("{name}.gamma"), ParamKind::BnGamma, gamma)?;
        let beta = self.add(
            &format!("{name}.beta"),
            ParamKind::BnBeta,
            Tensor4::zeros([1, channels, 1, 1])?,
        )?;
        self.claim(&format!("{name}.running_mean"))?;
        self.claim(&format!("{name}.running_var"))?;
        self.stats.push((name.to_owned(), BnStats::new(channels)));
        Ok(BatchNorm {
            gamma,
            beta,
            stats: StatsId(self.stats.len() - 1),
            channels,
        })
    }

    /// Gaussian weights with std `1/sqrt(D)`, zero bias.
    pub fn linear(
        &mut self,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Linear> {
        let weight = Tensor4::randn(
            [1, 1, in_features, out_features],
            &mut self.next_stream(),
            1.0 / (in_features.max(1) as f64).sqrt(),
        )?;
        let weight = self.add(&format!("{name}.weight"), ParamKind::LinearWeight, weight)?;
        let bias = self.add(
            &format!("{name}.bias"),
            ParamKind::Bias,
            Tensor4::zeros([1, 1, 1, out_features])?,
        )?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn stats(&self) -> &[(String, BnStats)] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [(String, BnStats)] {
        &mut self.stats
    }

    /// Total trainable values.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                tape.set_scope(p.name.as_str());
                tape.leaf(p.value.clone(), requires_grad)
            })
            .collect()
    }
}

/// Per-forward view of the bound parameters and mutable statistics.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [Var],
    pub stats: &'a mut [(String, BnStats)],
    pub mode: Mode,
}

impl Ctx<'_> {
    pub fn var(&self, id: ParamId) -> Var {
        self.params[id.0]
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: Conv2dParams,
}

impl Conv {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), self.bias.map(|b| ctx.var(b)));
        ctx.tape
            .conv2d(x, w, b, self.geom.stride, self.geom.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        let stats = &mut ctx.stats[self.stats.0].1;
        ctx.tape.batch_norm(x, g, b, stats, ctx.mode)
    }
}

/// Convolution, batch-norm and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub name: String,
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        geom: Conv2dParams,
        relu: bool,
        zero_gamma: bool,
    ) -> Result<Self> {
        let conv = store.conv(&format!("{name}.conv"), geom, false)?;
        let bn = store.batch_norm(&format!("{name}.bn"), geom.out_channels, zero_gamma)?;
        Ok(ConvBn {
            name: name.to_owned(),
            conv,
            bn,
            relu,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        ctx.tape.set_scope(self.name.as_str());
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        if self.relu {
            ctx.tape.relu(y)
        } else {
            Ok(y)
        }
    }
}

/// Square conv geometry with "same" padding for odd kernels.
pub fn conv_geom(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Conv2dParams {
    Conv2dParams {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding: kernel / 2,
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.tape.linear(x, w, b)
    }
}
