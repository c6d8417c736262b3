use hsnet::analyzer::{assemble, count, param_hs_exact, param_normal, LayerKind};
use hsnet::hs::{HsBlockConfig, HsVariant};
use hsnet::net::{Network, NetworkConfig, WidthRule};
use hsnet::Rng;

#[test]
fn hs_stage_is_cheaper_than_dense_conv() {
    for k in [3, 5] {
        for s in 2..=10 {
            for w in 1..=64 {
                let exact = param_hs_exact(&HsBlockConfig::new(s, w).with_kernel(k)).unwrap();
                assert!(exact < param_normal(k, s, w), "k{k} s{s} w{w}");
            }
        }
    }
}

#[test]
fn exact_count_is_monotone() {
    for s in 2..=10 {
        let mut prev = 0;
        for w in 1..=64 {
            let p = param_hs_exact(&HsBlockConfig::new(s, w)).unwrap();
            assert!(p > prev, "s{s} w{w}");
            prev = p;
        }
    }
    for w in (2..=64).step_by(2) {
        let mut prev = 0;
        for s in 2..=10 {
            let p = param_hs_exact(&HsBlockConfig::new(s, w)).unwrap();
            assert!(p > prev, "s{s} w{w}");
            prev = p;
        }
    }
}

#[test]
fn built_stage_rows_equal_exact_count() {
    for variant in HsVariant::ALL {
        let cfg = NetworkConfig {
            variant,
            width_rule: WidthRule::Custom([3, 5, 6, 7]),
            s: 5,
            ..NetworkConfig::tiny_hs()
        };
        let net = Network::build(&cfg, &Rng::new(1)).unwrap();
        let report = count(&net, 32).unwrap();
        assert_eq!(report.hs_stages.len(), 4);
        for h in &report.hs_stages {
            assert_eq!(h.conv_params, h.exact, "{variant:?} {}", h.block);
        }
        assert_eq!(report, assemble(&cfg, 32).unwrap());
        assert_eq!(report.params_total, net.param_count() as u64);
    }
}

#[test]
fn resnet50_budget() {
    let cfg = NetworkConfig::resnet50();
    let net = Network::build(&cfg, &Rng::new(0)).unwrap();
    let report = count(&net, 224).unwrap();
    assert_eq!(report, assemble(&cfg, 224).unwrap());
    let total = report.params_total as f64;
    assert!((total - 25.56e6).abs() / 25.56e6 < 0.01, "{total}");
    // Conv/fc weights plus 2 per BN channel plus the fc bias.
    let bn: u64 = report
        .rows
        .iter()
        .filter(|r| r.kind == LayerKind::BatchNorm)
        .map(|r| r.aux_params)
        .sum();
    assert_eq!(report.params_bn_bias, bn + 1000);
    // 4.09 GMAC is the commonly quoted ResNet-50 cost.
    assert!((report.macs_total as f64 / 1e9 - 4.09).abs() < 0.05);
}

#[test]
fn totals_equal_row_sums() {
    let r = assemble(&NetworkConfig::preset("hs-28w-6s").unwrap(), 224).unwrap();
    assert_eq!(
        r.rows.iter().map(|x| x.params()).sum::<u64>(),
        r.params_total
    );
    assert_eq!(r.rows.iter().map(|x| x.flops).sum::<u64>(), r.flops_total);
    assert_eq!(r.rows.iter().map(|x| x.macs).sum::<u64>(), r.macs_total);
    for h in &r.hs_stages {
        assert_eq!(h.conv_params, h.exact);
        assert!(h.exact < h.closed_form_normal);
    }
}
