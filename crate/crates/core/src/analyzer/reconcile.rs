use std::io::Write;

use serde::Serialize;

use super::{assemble, pct};
use crate::error::{Error, Result};
use crate::hs::HsVariant;
use crate::net::{NetworkConfig, WidthRule, HS_PRESETS};

/// Published parameter budget of the plain ResNet-50 control.
pub const PUBLISHED_RESNET50_PARAMS: f64 = 25.56e6;
/// Published parameter budget of HS-ResNet-50.
pub const PUBLISHED_HS_PARAMS: f64 = 27.00e6;
/// Published FLOPs of the four width/groups presets.
pub const PUBLISHED_HS_FLOPS: [(&str, f64); 4] = [
    ("hs-18w-8s", 11.6e9),
    ("hs-22w-7s", 12.3e9),
    ("hs-28w-6s", 13.1e9),
    ("hs-40w-5s", 15.1e9),
];

/// Per-stage width hypotheses for the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepWidthRule {
    /// `w_j = w * 2^(j-1)`.
    DoublePerStage,
    /// The preset's `w` in every stage.
    Constant,
}

impl SweepWidthRule {
    pub const ALL: [SweepWidthRule; 2] = [SweepWidthRule::DoublePerStage, SweepWidthRule::Constant];

    pub fn name(self) -> &'static str {
        match self {
            SweepWidthRule::DoublePerStage => "double-per-stage",
            SweepWidthRule::Constant => "constant",
        }
    }

    fn apply(self, cfg: &mut NetworkConfig) {
        cfg.width_rule = match self {
            SweepWidthRule::DoublePerStage => WidthRule::DoublePerStage,
            SweepWidthRule::Constant => WidthRule::Custom([cfg.base_w; 4]),
        };
    }
}

impl std::str::FromStr for SweepWidthRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown width rule `{s}` (double-per-stage, constant)"
                ))
            })
    }
}

/// One line of the sweep. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconcileRow {
    pub preset: String,
    pub variant: String,
    pub width_rule: String,
    pub params_total: u64,
    pub params_conv_only: u64,
    /// 2·MAC convention.
    pub flops_total: u64,
    pub dev_params_pct: f64,
    pub dev_flops_pct: Option<f64>,
    pub macs_total: u64,
    /// Deviation when the published FLOPs are read as multiply-accumulates.
    pub dev_flops_mac_pct: Option<f64>,
    pub ref_params: f64,
    pub ref_flops: Option<f64>,
}

impl ReconcileRow {
    fn new(
        preset: &str,
        variant: &str,
        rule: &str,
        cfg: &NetworkConfig,
        image_size: usize,
    ) -> Result<Self> {
        let report = assemble(cfg, image_size)?;
        let ref_params = if preset.starts_with("resnet50") {
            PUBLISHED_RESNET50_PARAMS
        } else {
            PUBLISHED_HS_PARAMS
        };
        let ref_flops = PUBLISHED_HS_FLOPS
            .iter()
            .find(|(n, _)| *n == preset)
            .map(|(_, f)| *f);
        let round = |v: f64| (v * 1e4).round() / 1e4;
        Ok(ReconcileRow {
            preset: preset.to_owned(),
            variant: variant.to_owned(),
            width_rule: rule.to_owned(),
            params_total: report.params_total,
            params_conv_only: report.params_conv_only,
            flops_total: report.flops_total,
            dev_params_pct: round(pct(report.params_total as f64, ref_params)),
            dev_flops_pct: ref_flops.map(|f| round(pct(report.flops_total as f64, f))),
            macs_total: report.macs_total,
            dev_flops_mac_pct: ref_flops.map(|f| round(pct(report.macs_total as f64, f))),
            ref_params,
            ref_flops,
        })
    }

    /// Squared parameter deviation plus the smaller squared FLOP deviation
    /// of the two conventions.
    fn mismatch(&self) -> f64 {
        let flops = match (self.dev_flops_pct, self.dev_flops_mac_pct) {
            (Some(a), Some(b)) => (a * a).min(b * b),
            _ => 0.0,
        };
        self.dev_params_pct * self.dev_params_pct + flops
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconcileTable {
    pub image_size: usize,
    pub rows: Vec<ReconcileRow>,
    /// Index of the HS row closest to the published budgets.
    pub best: Option<usize>,
}

/// Sweeps `presets x variants x width_rules` and compares every
/// combination against the published budgets. The plain ResNet-50 control
/// row is always first. Non-HS presets produce a single row each.
pub fn reconcile(
    presets: &[&str],
    variants: &[HsVariant],
    width_rules: &[SweepWidthRule],
    image_size: usize,
) -> Result<ReconcileTable> {
    let mut rows = vec![ReconcileRow::new(
        "resnet50",
        "-",
        WidthRule::DoublePerStage.name().as_str(),
        &NetworkConfig {
            image_size,
            ..NetworkConfig::resnet50()
        },
        image_size,
    )?];
    for &name in presets {
        if name == "resnet50" {
            continue;
        }
        let mut base = NetworkConfig::preset(name)?;
        base.image_size = image_size;
        if HS_PRESETS.iter().any(|(n, _, _)| *n == name) {
            for &variant in variants {
                for &rule in width_rules {
                    let mut cfg = NetworkConfig {
                        variant,
                        ..base.clone()
                    };
                    rule.apply(&mut cfg);
                    rows.push(ReconcileRow::new(
                        name,
                        variant.name(),
                        rule.name(),
                        &cfg,
                        image_size,
                    )?);
                }
            }
        } else {
            rows.push(ReconcileRow::new(
                name,
                "-",
                &base.width_rule.name(),
                &base,
                image_size,
            )?);
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.ref_flops.is_some())
        .min_by(|(_, a), (_, b)| a.mismatch().total_cmp(&b.mismatch()))
        .map(|(i, _)| i);
    Ok(ReconcileTable {
        image_size,
        rows,
        best,
    })
}

impl ReconcileTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format {
                path: "<csv>".into(),
                msg: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let opt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:+.2}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10}  {:<13}  {:<16}  {:>10}  {:>10}  {:>9}  {:>9}  {:>9}  {:>9}",
            "preset",
            "variant",
            "width rule",
            "params(M)",
            "GFLOPs",
            "GMACs",
            "dev p %",
            "dev f %",
            "dev mac %"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<10}  {:<13}  {:<16}  {:>10.3}  {:>10.3}  {:>9.3}  {:>+9.2}  {:>9}  {:>9}{}",
                r.preset,
                r.variant,
                r.width_rule,
                r.params_total as f64 / 1e6,
                r.flops_total as f64 / 1e9,
                r.macs_total as f64 / 1e9,
                r.dev_params_pct,
                opt(r.dev_flops_pct),
                opt(r.dev_flops_mac_pct),
                if Some(i) == self.best {
                    "  <- closest"
                } else {
                    ""
                }
            );
        }
        let _ = writeln!(
            out,
            "\nimage {0}x{0}; params vs {1:.2}M (ResNet-50) / {2:.2}M (HS); FLOPs vs 11.6/12.3/13.1/15.1 G",
            self.image_size,
            PUBLISHED_RESNET50_PARAMS / 1e6,
            PUBLISHED_HS_PARAMS / 1e6
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_cardinality_and_control() {
        let presets: Vec<&str> = HS_PRESETS.iter().map(|p| p.0).collect();
        let t = reconcile(
            &presets,
            &HsVariant::ALL,
            &[SweepWidthRule::DoublePerStage],
            224,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 13);
        assert_eq!(t.rows[0].preset, "resnet50");
        assert!(t.rows[0].dev_params_pct.abs() < 1.0);
        assert!(t.best.is_some_and(|b| b > 0));
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(
            "preset,variant,width_rule,params_total,params_conv_only,flops_total,dev_params_pct,dev_flops_pct,"
        ));
        assert_eq!(text.lines().count(), 14);
    }
}
