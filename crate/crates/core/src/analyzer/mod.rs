//! Parameter and FLOP accounting.
//!
//! FLOPs are counted as 2 per multiply-accumulate for convolutions and the
//! linear head. Other layers use fixed per-element costs:
//!
//! | layer              | cost                                   |
//! |--------------------|----------------------------------------|
//! | batch-norm         | 2 per output element (folded scale+shift) |
//! | ReLU               | 1 per output element                   |
//! | residual add       | 1 per output element                   |
//! | bias add           | 1 per output element                   |
//! | k x k average pool | k^2 per output element                 |
//! | k x k max pool     | k^2 - 1 per output element             |
//! | global average pool| H*W per output channel                 |
//!
//! Channel split and concatenation move data and cost nothing.

mod reconcile;

pub use reconcile::{
    reconcile, ReconcileRow, ReconcileTable, SweepWidthRule, PUBLISHED_HS_PARAMS,
    PUBLISHED_RESNET50_PARAMS,
};

use serde::Serialize;

use crate::error::Result;
use crate::hs::{channel_plan, HsBlockConfig, HsVariant, Shortcut};
use crate::layers::ConvBn;
use crate::net::{stage_resolutions, Block, BlockType, Network, NetworkConfig, Stem, StemLayers};
use crate::nn::output_size;

pub const FLOP_CONVENTION: &str = "2·multiply-accumulates per output element";

/// Weights of a dense `k x k` conv over `s*w` channels: `k^2 s^2 w^2`.
pub fn param_normal(k: usize, s: usize, w: usize) -> u64 {
    let (k, s, w) = (k as u64, s as u64, w as u64);
    k * k * s * s * w * w
}

/// `(s-1) k^2 w^2 ((2^(s-1) - 1) / 2^(s-1) + 1)`, the published per-group
/// expression summed over the `s - 1` convolved groups exactly as written,
/// including its fixed exponent.
pub fn param_hs_published_closed_form(k: usize, s: usize, w: usize) -> f64 {
    let p = libm::pow(2.0, s as f64 - 1.0);
    (s as f64 - 1.0) * (k * k * w * w) as f64 * ((p - 1.0) / p + 1.0)
}

/// Conv weights of the group convolutions of one HS stage (batch-norm
/// excluded). For the channel-preserving variant this is `sum k^2 c_i^2`.
pub fn param_hs_exact(cfg: &HsBlockConfig) -> Result<u64> {
    Ok(channel_plan(cfg)?.conv_params(cfg.kernel) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    AvgPool,
    MaxPool,
    GlobalAvgPool,
    Linear,
    Add,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    /// `(C, H, W)` of the layer output.
    pub output: [usize; 3],
    /// Conv and linear weights.
    pub weight_params: u64,
    /// Batch-norm affine parameters and biases.
    pub aux_params: u64,
    pub macs: u64,
    pub flops: u64,
}

impl LayerRow {
    pub fn params(&self) -> u64 {
        self.weight_params + self.aux_params
    }
}

/// Closed-form and exact costs of one HS stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HsStageReport {
    pub block: String,
    pub s: usize,
    pub w: usize,
    pub kernel: usize,
    pub variant: HsVariant,
    /// Sum of the stage's group-conv weight rows.
    pub conv_params: u64,
    pub exact: u64,
    pub closed_form_normal: u64,
    pub closed_form_hs_published: f64,
    /// `(published - exact) / exact`, in percent.
    pub published_vs_exact_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub image_size: usize,
    pub rows: Vec<LayerRow>,
    pub params_total: u64,
    pub params_conv_only: u64,
    pub params_bn_bias: u64,
    pub macs_total: u64,
    pub flops_total: u64,
    pub flop_convention: &'static str,
    pub hs_stages: Vec<HsStageReport>,
    pub closed_form_normal: u64,
    pub closed_form_hs_published: f64,
    pub exact_hs: u64,
}

/// Row accumulator that tracks the running `(C, H, W)`.
struct Walker {
    rows: Vec<LayerRow>,
    shape: [usize; 3],
}

impl Walker {
    fn elements(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    fn push(
        &mut self,
        name: String,
        kind: LayerKind,
        weight: u64,
        aux: u64,
        macs: u64,
        flops: u64,
    ) {
        self.rows.push(LayerRow {
            name,
            kind,
            output: self.shape,
            weight_params: weight,
            aux_params: aux,
            macs,
            flops,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight: u64,
        bias: u64,
    ) -> Result<()> {
        let [cin, h, w] = self.shape;
        self.shape = [
            cout,
            output_size(h, k, stride, pad)?,
            output_size(w, k, stride, pad)?,
        ];
        let macs = self.elements() * (k * k * cin) as u64;
        let bias_flops = if bias > 0 { self.elements() } else { 0 };
        self.push(
            name,
            LayerKind::Conv,
            weight,
            bias,
            macs,
            2 * macs + bias_flops,
        );
        Ok(())
    }

    fn bn(&mut self, name: String, aux: u64) {
        let e = self.elements();
        self.push(name, LayerKind::BatchNorm, 0, aux, 0, 2 * e);
    }

    fn relu(&mut self, name: String) {
        let e = self.elements();
        self.push(name, LayerKind::Relu, 0, 0, 0, e);
    }

    fn add(&mut self, name: String) {
        let e = self.elements();
        self.push(name, LayerKind::Add, 0, 0, 0, e);
    }

    fn avg_pool(&mut self, name: String, k: usize, stride: usize) -> Result<()> {
        let [c, h, w] = self.shape;
        self.shape = [
            c,
            output_size(h, k, stride, 0)?,
            output_size(w, k, stride, 0)?,
        ];
        let e = self.elements();
        self.push(name, LayerKind::AvgPool, 0, 0, 0, e * (k * k) as u64);
        Ok(())
    }

    fn max_pool(&mut self, name: String, k: usize, stride: usize, pad: usize) -> Result<()> {
        let [c, h, w] = self.shape;
        self.shape = [
            c,
            output_size(h, k, stride, pad)?,
            output_size(w, k, stride, pad)?,
        ];
        let e = self.elements();
        self.push(name, LayerKind::MaxPool, 0, 0, 0, e * (k * k - 1) as u64);
        Ok(())
    }

    fn global_pool(&mut self, name: String) {
        let [c, h, w] = self.shape;
        self.shape = [c, 1, 1];
        self.push(name, LayerKind::GlobalAvgPool, 0, 0, 0, (c * h * w) as u64);
    }

    fn linear(&mut self, name: String, out: usize, weight: u64, bias: u64) {
        let d = self.elements();
        self.shape = [out, 1, 1];
        let macs = d * out as u64;
        self.push(
            name,
            LayerKind::Linear,
            weight,
            bias,
            macs,
            2 * macs + out as u64,
        );
    }

    fn finish(
        self,
        image_size: usize,
        hs: Vec<(String, HsBlockConfig)>,
    ) -> Result<ComplexityReport> {
        let sum = |f: fn(&LayerRow) -> u64| self.rows.iter().map(f).sum::<u64>();
        let params_conv_only = sum(|r| r.weight_params);
        let params_bn_bias = sum(|r| r.aux_params);
        let macs_total = sum(|r| r.macs);
        let flops_total = sum(|r| r.flops);
        let mut hs_stages = Vec::with_capacity(hs.len());
        for (block, cfg) in hs {
            let prefix = format!("{block}.hs.");
            let conv_params = self
                .rows
                .iter()
                .filter(|r| r.kind == LayerKind::Conv && r.name.starts_with(&prefix))
                .map(|r| r.weight_params)
                .sum();
            let exact = param_hs_exact(&cfg)?;
            let published = param_hs_published_closed_form(cfg.kernel, cfg.s, cfg.w);
            hs_stages.push(HsStageReport {
                block,
                s: cfg.s,
                w: cfg.w,
                kernel: cfg.kernel,
                variant: cfg.variant,
                conv_params,
                exact,
                closed_form_normal: param_normal(cfg.kernel, cfg.s, cfg.w),
                closed_form_hs_published: published,
                published_vs_exact_pct: pct(published, exact as f64),
            });
        }
        Ok(ComplexityReport {
            image_size,
            params_total: params_conv_only + params_bn_bias,
            params_conv_only,
            params_bn_bias,
            macs_total,
            flops_total,
            flop_convention: FLOP_CONVENTION,
            closed_form_normal: hs_stages.iter().map(|h| h.closed_form_normal).sum(),
            closed_form_hs_published: hs_stages.iter().map(|h| h.closed_form_hs_published).sum(),
            exact_hs: hs_stages.iter().map(|h| h.exact).sum(),
            hs_stages,
            rows: self.rows,
        })
    }
}

/// Signed relative deviation in percent.
pub fn pct(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Exact count of a built network, reading parameter sizes from its store.
/// Spatial sizes are derived for `image_size`, which may differ from the
/// size the network was configured for.
pub fn count(net: &Network, image_size: usize) -> Result<ComplexityReport> {
    let store = &net.store;
    let len = |id: crate::layers::ParamId| store.param(id).value.len() as u64;
    let conv_bn = |wk: &mut Walker, c: &ConvBn| -> Result<()> {
        let g = c.conv.geom;
        let bias = c.conv.bias.map_or(0, len);
        wk.conv(
            format!("{}.conv", c.name),
            g.out_channels,
            g.kernel,
            g.stride,
            g.padding,
            len(c.conv.weight),
            bias,
        )?;
        wk.bn(format!("{}.bn", c.name), len(c.bn.gamma) + len(c.bn.beta));
        if c.relu {
            wk.relu(format!("{}.relu", c.name));
        }
        Ok(())
    };
    let shortcut = |wk: &mut Walker, name: &str, sc: &Shortcut| -> Result<()> {
        if let Shortcut::Projection { pool, proj } = sc {
            if *pool {
                wk.avg_pool(format!("{name}.shortcut.pool"), 2, 2)?;
            }
            conv_bn(wk, proj)?;
        }
        Ok(())
    };

    let mut wk = Walker {
        rows: Vec::new(),
        shape: [3, image_size, image_size],
    };
    for c in &net.stem.convs {
        conv_bn(&mut wk, c)?;
    }
    let (k, s, p) = StemLayers::POOL;
    wk.max_pool("stem.pool".into(), k, s, p)?;

    let mut hs = Vec::new();
    for block in net.stages.iter().flatten() {
        let input = wk.shape;
        let (name, expand, sc) = match block {
            Block::Plain(b) => {
                conv_bn(&mut wk, &b.reduce)?;
                conv_bn(&mut wk, &b.conv)?;
                (&b.name, &b.expand, &b.shortcut)
            }
            Block::Hs(b) => {
                conv_bn(&mut wk, &b.reduce)?;
                let stage = &b.stage;
                if stage.cfg.stride == 2 {
                    wk.avg_pool(format!("{}.hs.pool", b.name), 2, 2)?;
                }
                let [_, h, w] = wk.shape;
                for c in &stage.convs {
                    wk.shape = [c.conv.geom.in_channels, h, w];
                    conv_bn(&mut wk, c)?;
                }
                wk.shape = [stage.plan.total_out(), h, w];
                hs.push((b.name.clone(), stage.cfg));
                (&b.name, &b.expand, &b.shortcut)
            }
        };
        conv_bn(&mut wk, expand)?;
        let main = wk.shape;
        wk.shape = input;
        shortcut(&mut wk, name, sc)?;
        wk.shape = main;
        wk.add(format!("{name}.add"));
        wk.relu(format!("{name}.relu"));
    }
    wk.global_pool("head.pool".into());
    wk.linear(
        "fc".into(),
        net.fc.out_features,
        len(net.fc.weight),
        len(net.fc.bias),
    );
    wk.finish(image_size, hs)
}

/// The same report assembled from per-layer formulas on the config alone,
/// without allocating any weights.
pub fn assemble(cfg: &NetworkConfig, image_size: usize) -> Result<ComplexityReport> {
    cfg.validate()?;
    stage_resolutions(&NetworkConfig {
        image_size,
        ..cfg.clone()
    })?;
    let conv_bn = |wk: &mut Walker,
                   name: &str,
                   cout: usize,
                   k: usize,
                   stride: usize,
                   relu: bool|
     -> Result<()> {
        let cin = wk.shape[0];
        wk.conv(
            format!("{name}.conv"),
            cout,
            k,
            stride,
            k / 2,
            (cout * cin * k * k) as u64,
            0,
        )?;
        wk.bn(format!("{name}.bn"), 2 * cout as u64);
        if relu {
            wk.relu(format!("{name}.relu"));
        }
        Ok(())
    };

    let mut wk = Walker {
        rows: Vec::new(),
        shape: [3, image_size, image_size],
    };
    match cfg.stem {
        Stem::Classic7x7 => conv_bn(&mut wk, "stem.conv1", cfg.stem_width, 7, 2, true)?,
        Stem::ResnetD3x3x3 => {
            let half = cfg.stem_width / 2;
            conv_bn(&mut wk, "stem.conv1", half, 3, 2, true)?;
            conv_bn(&mut wk, "stem.conv2", half, 3, 1, true)?;
            conv_bn(&mut wk, "stem.conv3", cfg.stem_width, 3, 1, true)?;
        }
    }
    let (k, s, p) = StemLayers::POOL;
    wk.max_pool("stem.pool".into(), k, s, p)?;

    let widths = cfg.stage_widths();
    let outs = cfg.stage_out_channels();
    let mut hs = Vec::new();
    for j in 0..4 {
        for b in 0..cfg.stage_blocks[j] {
            let name = format!("stage{}.block{b}", j + 1);
            let stride = if j > 0 && b == 0 { 2 } else { 1 };
            let input = wk.shape;
            let mid = cfg.s * widths[j];
            conv_bn(&mut wk, &format!("{name}.reduce"), mid, 1, 1, true)?;
            match cfg.block_type {
                BlockType::PlainBottleneck => conv_bn(
                    &mut wk,
                    &format!("{name}.conv"),
                    mid,
                    cfg.kernel,
                    stride,
                    true,
                )?,
                BlockType::HsBottleneck => {
                    let hcfg = HsBlockConfig {
                        s: cfg.s,
                        w: widths[j],
                        kernel: cfg.kernel,
                        stride,
                        variant: cfg.variant,
                    };
                    let plan = channel_plan(&hcfg)?;
                    if stride == 2 {
                        wk.avg_pool(format!("{name}.hs.pool"), 2, 2)?;
                    }
                    let [_, h, w] = wk.shape;
                    for (g, (&cin, &cout)) in plan.conv_in.iter().zip(&plan.conv_out).enumerate() {
                        wk.shape = [cin, h, w];
                        conv_bn(
                            &mut wk,
                            &format!("{name}.hs.group{}", g + 2),
                            cout,
                            cfg.kernel,
                            1,
                            true,
                        )?;
                    }
                    wk.shape = [plan.total_out(), h, w];
                    hs.push((name.clone(), hcfg));
                }
            }
            conv_bn(&mut wk, &format!("{name}.expand"), outs[j], 1, 1, false)?;
            let main = wk.shape;
            if input[0] != outs[j] || stride != 1 {
                wk.shape = input;
                let pool_first = stride == 2
                    && (cfg.block_type == BlockType::HsBottleneck
                        || cfg.stem == Stem::ResnetD3x3x3);
                if pool_first {
                    wk.avg_pool(format!("{name}.shortcut.pool"), 2, 2)?;
                }
                conv_bn(
                    &mut wk,
                    &format!("{name}.shortcut"),
                    outs[j],
                    1,
                    if pool_first { 1 } else { stride },
                    false,
                )?;
            }
            wk.shape = main;
            wk.add(format!("{name}.add"));
            wk.relu(format!("{name}.relu"));
        }
    }
    wk.global_pool("head.pool".into());
    let d = wk.elements();
    let kc = cfg.num_classes;
    wk.linear("fc".into(), kc, d * kc as u64, kc as u64);
    wk.finish(image_size, hs)
}

fn thousands(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl ComplexityReport {
    /// Aligned-column text: one line per layer, then totals and the HS
    /// stage summary.
    pub fn to_text(&self, layers: bool) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        if layers {
            let name_w = self
                .rows
                .iter()
                .map(|r| r.name.len())
                .max()
                .unwrap_or(4)
                .max(5);
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<15}  {:>16}  {:>12}  {:>10}  {:>16}",
                "layer", "kind", "output", "weights", "bn/bias", "flops"
            );
            for r in &self.rows {
                let kind = serde_json::to_value(r.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                let shape = format!("{}x{}x{}", r.output[0], r.output[1], r.output[2]);
                let _ = writeln!(
                    out,
                    "{:<name_w$}  {:<15}  {:>16}  {:>12}  {:>10}  {:>16}",
                    r.name,
                    kind,
                    shape,
                    thousands(r.weight_params),
                    thousands(r.aux_params),
                    thousands(r.flops)
                );
            }
            out.push('\n');
        }
        let _ = writeln!(out, "image size        {}", self.image_size);
        let _ = writeln!(
            out,
            "params total      {:>16}  ({:.2}M)",
            thousands(self.params_total),
            self.params_total as f64 / 1e6
        );
        let _ = writeln!(
            out,
            "params conv/fc    {:>16}",
            thousands(self.params_conv_only)
        );
        let _ = writeln!(
            out,
            "params bn/bias    {:>16}",
            thousands(self.params_bn_bias)
        );
        let _ = writeln!(
            out,
            "MACs              {:>16}  ({:.3}G)",
            thousands(self.macs_total),
            self.macs_total as f64 / 1e9
        );
        let _ = writeln!(
            out,
            "FLOPs             {:>16}  ({:.3}G, {})",
            thousands(self.flops_total),
            self.flops_total as f64 / 1e9,
            self.flop_convention
        );
        if !self.hs_stages.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<16}  {:>3}  {:>4}  {:>1}  {:>12}  {:>14}  {:>16}  {:>9}",
                "hs stage", "s", "w", "k", "exact", "dense k*k", "published form", "dev %"
            );
            for h in &self.hs_stages {
                let _ = writeln!(
                    out,
                    "{:<16}  {:>3}  {:>4}  {:>1}  {:>12}  {:>14}  {:>16.1}  {:>+9.2}",
                    h.block,
                    h.s,
                    h.w,
                    h.kernel,
                    thousands(h.exact),
                    thousands(h.closed_form_normal),
                    h.closed_form_hs_published,
                    h.published_vs_exact_pct
                );
            }
            let _ = writeln!(
                out,
                "{:<16}  {:>3}  {:>4}  {:>1}  {:>12}  {:>14}  {:>16.1}  {:>+9.2}",
                "sum",
                "",
                "",
                "",
                thousands(self.exact_hs),
                thousands(self.closed_form_normal),
                self.closed_form_hs_published,
                pct(self.closed_form_hs_published, self.exact_hs as f64)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn dense_closed_form() {
        assert_eq!(param_normal(3, 4, 10), 14400);
        assert_eq!(param_normal(1, 1, 1), 1);
        assert_eq!(param_normal(3, 2, 4), 576);
    }

    #[test]
    fn published_closed_form() {
        assert_eq!(param_hs_published_closed_form(3, 2, 4), 216.0);
        assert_eq!(param_hs_published_closed_form(3, 3, 2), 126.0);
        for s in 2..=10 {
            for w in [1, 7, 32] {
                let bound = 2.0 * (s as f64 - 1.0) * (9 * w * w) as f64;
                assert!(param_hs_published_closed_form(3, s, w) < bound);
            }
        }
    }

    #[test]
    fn exact_examples() {
        assert_eq!(param_hs_exact(&HsBlockConfig::new(2, 4)).unwrap(), 144);
        assert_eq!(param_hs_exact(&HsBlockConfig::new(3, 4)).unwrap(), 468);
        assert!(468 < param_normal(3, 3, 4));
        assert_eq!(param_hs_exact(&HsBlockConfig::new(6, 28)).unwrap(), 95121);
    }

    #[test]
    fn count_matches_assembly_and_store() {
        for cfg in [NetworkConfig::tiny_hs(), NetworkConfig::tiny_plain()] {
            let net = Network::build(&cfg, &Rng::new(0)).unwrap();
            let counted = count(&net, 32).unwrap();
            assert_eq!(counted, assemble(&cfg, 32).unwrap());
            assert_eq!(counted.params_total, net.param_count() as u64);
            let rows: u64 = counted.rows.iter().map(|r| r.params()).sum();
            assert_eq!(rows, counted.params_total);
            assert_eq!(
                counted.rows.iter().map(|r| r.flops).sum::<u64>(),
                counted.flops_total
            );
        }
    }

    #[test]
    fn text_report_has_totals() {
        let r = assemble(&NetworkConfig::tiny_hs(), 32).unwrap();
        let text = r.to_text(true);
        assert!(text.contains("params total"));
        assert!(text.contains("stage1.block0.hs.group2.conv"));
        assert!(text.contains("sum"));
    }
}
