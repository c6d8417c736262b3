use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How group outputs are sized and whether the first group is split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HsVariant {
    /// Group convs keep their width (`c_i -> c_i`); group 1 passes through whole.
    #[default]
    BPreserve,
    /// Like `BPreserve`, but group 1 is split too and its upper part feeds group 2.
    ASplitFirst,
    /// Group convs project to the group width (`c_i -> w`).
    PProjectW,
}

impl HsVariant {
    pub const ALL: [HsVariant; 3] = [
        HsVariant::BPreserve,
        HsVariant::ASplitFirst,
        HsVariant::PProjectW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HsVariant::BPreserve => "b-preserve",
            HsVariant::ASplitFirst => "a-split-first",
            HsVariant::PProjectW => "p-project-w",
        }
    }
}

impl std::fmt::Display for HsVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HsVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown hs variant `{s}`")))
    }
}

/// One hierarchical-split stage: `s` groups of `w` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HsBlockConfig {
    pub s: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub variant: HsVariant,
}

impl HsBlockConfig {
    pub fn new(s: usize, w: usize) -> Self {
        HsBlockConfig {
            s,
            w,
            kernel: 3,
            stride: 1,
            variant: HsVariant::BPreserve,
        }
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_variant(mut self, variant: HsVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Channels entering the split: `s * w`.
    pub fn width(&self) -> usize {
        self.s * self.w
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(Error::Config(format!(
                "hs block needs at least 2 groups, got s = {}",
                self.s
            )));
        }
        if self.w < 1 {
            return Err(Error::Config("hs group width must be at least 1".into()));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hs kernel must be odd so groups keep their size, got {}",
                self.kernel
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!(
                "hs stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }
}

/// Exact channel widths flowing through one stage.
///
/// Group `i` (1-based) convolves `conv_in[i-2]` channels into
/// `conv_out[i-2]`; for `2 <= i < s` the output is split into a kept part of
/// `out[i-1]` channels (lower indices, ceiling half) and a forwarded part of
/// `fwd[i-2]` channels (floor half) that is appended to the next group's
/// input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelPlan {
    pub group_width: usize,
    pub groups: usize,
    pub variant: HsVariant,
    /// `c_2 ..= c_s`.
    pub conv_in: Vec<usize>,
    /// Output widths of `F_2 ..= F_s`.
    pub conv_out: Vec<usize>,
    /// `f_2 ..= f_{s-1}`.
    pub fwd: Vec<usize>,
    /// `o_1 ..= o_s`.
    pub out: Vec<usize>,
    /// Part of group 1 forwarded to group 2 (non-zero only for `ASplitFirst`).
    pub head_fwd: usize,
}

impl ChannelPlan {
    pub fn new(cfg: &HsBlockConfig) -> Result<Self> {
        cfg.validate()?;
        let (s, w) = (cfg.s, cfg.w);
        let mut plan = ChannelPlan {
            group_width: w,
            groups: s,
            variant: cfg.variant,
            conv_in: Vec::with_capacity(s - 1),
            conv_out: Vec::with_capacity(s - 1),
            fwd: Vec::with_capacity(s.saturating_sub(2)),
            out: Vec::with_capacity(s),
            head_fwd: 0,
        };
        let mut carry = 0;
        if cfg.variant == HsVariant::ASplitFirst {
            plan.head_fwd = w / 2;
            plan.out.push(w - w / 2);
            carry = w / 2;
        } else {
            plan.out.push(w);
        }
        for i in 2..=s {
            let c = w + carry;
            let y = match cfg.variant {
                HsVariant::PProjectW => w,
                _ => c,
            };
            plan.conv_in.push(c);
            plan.conv_out.push(y);
            if i < s {
                let f = y / 2;
                plan.fwd.push(f);
                plan.out.push(y - f);
                carry = f;
            } else {
                plan.out.push(y);
            }
        }
        Ok(plan)
    }

    pub fn total_out(&self) -> usize {
        self.out.iter().sum()
    }

    /// Input to the split: `s * w`.
    pub fn total_in(&self) -> usize {
        self.groups * self.group_width
    }

    /// Weight count of the group convs `F_2 ..= F_s` with a `k x k` kernel.
    pub fn conv_params(&self, kernel: usize) -> usize {
        self.conv_in
            .iter()
            .zip(&self.conv_out)
            .map(|(i, o)| kernel * kernel * i * o)
            .sum()
    }

    /// Offsets of each group's kept slice within the concatenated output.
    pub fn out_offsets(&self) -> Vec<usize> {
        self.out
            .iter()
            .scan(0, |acc, &o| {
                let start = *acc;
                *acc += o;
                Some(start)
            })
            .collect()
    }
}

/// Shorthand for [`ChannelPlan::new`].
pub fn channel_plan(cfg: &HsBlockConfig) -> Result<ChannelPlan> {
    ChannelPlan::new(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_groups_of_four() {
        let p = channel_plan(&HsBlockConfig::new(5, 4)).unwrap();
        assert_eq!(p.conv_in, vec![4, 6, 7, 7]);
        assert_eq!(p.fwd, vec![2, 3, 3]);
        assert_eq!(p.out, vec![4, 2, 3, 4, 7]);
        assert_eq!(p.total_out(), 20);
    }

    #[test]
    fn two_groups_has_no_middle() {
        let p = channel_plan(&HsBlockConfig::new(2, 8)).unwrap();
        assert_eq!(p.conv_in, vec![8]);
        assert!(p.fwd.is_empty());
        assert_eq!(p.out, vec![8, 8]);
        assert_eq!(p.total_out(), 16);
    }

    #[test]
    fn twenty_eight_wide_six_groups() {
        let p = channel_plan(&HsBlockConfig::new(6, 28)).unwrap();
        assert_eq!(p.conv_in, vec![28, 42, 49, 52, 54]);
        assert_eq!(p.fwd, vec![14, 21, 24, 26]);
        assert_eq!(p.out, vec![28, 14, 21, 25, 26, 54]);
        assert_eq!(p.total_out(), 168);
    }

    /// `c_i = w (2 - 2^(2-i))` holds exactly when `2^(i-2)` divides `w`:
    /// only then do the halvings never round.
    #[test]
    fn closed_form_holds_iff_power_of_two_divides_w() {
        for s in 2..=10usize {
            for w in 1..=64usize {
                let p = channel_plan(&HsBlockConfig::new(s, w)).unwrap();
                for i in 2..=s {
                    let closed = w as f64 * (2.0 - 2f64.powi(2 - i as i32));
                    let divides = w % (1 << (i - 2)) == 0;
                    assert_eq!(
                        p.conv_in[i - 2] as f64 == closed,
                        divides,
                        "s={s} w={w} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_single_group() {
        assert!(matches!(
            channel_plan(&HsBlockConfig::new(1, 8)),
            Err(Error::Config(_))
        ));
        assert!(channel_plan(&HsBlockConfig::new(3, 0)).is_err());
        assert!(channel_plan(&HsBlockConfig::new(3, 4).with_stride(3)).is_err());
        assert!(channel_plan(&HsBlockConfig::new(3, 4).with_kernel(4)).is_err());
    }

    #[test]
    fn split_first_variant_conserves() {
        let p =
            channel_plan(&HsBlockConfig::new(4, 5).with_variant(HsVariant::ASplitFirst)).unwrap();
        // o_1 = 3, forwarded 2; c_2 = 7 -> keep 4, fwd 3; c_3 = 8 -> keep 4, fwd 4; c_4 = 9.
        assert_eq!(p.head_fwd, 2);
        assert_eq!(p.conv_in, vec![7, 8, 9]);
        assert_eq!(p.out, vec![3, 4, 4, 9]);
        assert_eq!(p.total_out(), 20);
    }

    #[test]
    fn project_variant_widths() {
        let p = channel_plan(&HsBlockConfig::new(4, 6).with_variant(HsVariant::PProjectW)).unwrap();
        assert_eq!(p.conv_in, vec![6, 9, 9]);
        assert_eq!(p.conv_out, vec![6, 6, 6]);
        assert_eq!(p.out, vec![6, 3, 3, 6]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in HsVariant::ALL {
            assert_eq!(v.name().parse::<HsVariant>().unwrap(), v);
        }
    }
}
