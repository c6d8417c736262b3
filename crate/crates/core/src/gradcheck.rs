//! Central finite differences, used to audit backward rules.

use serde::Serialize;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::layers::ParamKind;
use crate::net::{Network, NetworkConfig};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Denominator floor for [`relative_error`], so components that are zero
/// analytically compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Perturbation `1e-5 * max(1, |x|)`.
pub fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Perturbation used for whole networks, `1e-7 * max(1, |x|)`.
///
/// A stem weight moves every activation of its channel; with thousands of
/// ReLU and max-pool switch points, a 1e-5 step routinely crosses one and
/// the difference quotient stops measuring the local derivative.
pub fn network_step(x: f64) -> f64 {
    1e-7 * x.abs().max(1.0)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_FLOOR)
}

/// Denominator floor for whole-network audits. Round-off in the loss is
/// amplified by `1/h` at [`network_step`], leaving ~1e-8 of noise on
/// gradients that are exactly zero (e.g. a beta cancelled by a later
/// train-mode batch-norm).
pub const NETWORK_REL_FLOOR: f64 = 1e-4;

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` with `h = step(x_i)`.
pub fn central_difference<F>(f: F, x: &Tensor4, index: usize) -> Result<f64>
where
    F: FnMut(&Tensor4) -> Result<f64>,
{
    central_difference_with(f, x, index, step)
}

pub fn central_difference_with<F>(
    mut f: F,
    x: &Tensor4,
    index: usize,
    step: fn(f64) -> f64,
) -> Result<f64>
where
    F: FnMut(&Tensor4) -> Result<f64>,
{
    let h = step(x.data()[index]);
    let mut probe = x.clone();
    probe.data_mut()[index] = x.data()[index] + h;
    let up = f(&probe)?;
    probe.data_mut()[index] = x.data()[index] - h;
    let down = f(&probe)?;
    Ok((up - down) / (2.0 * h))
}

/// Numeric gradient of every entry of `x`.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor4) -> Result<Tensor4>
where
    F: FnMut(&Tensor4) -> Result<f64>,
{
    let mut g = Tensor4::zeros(x.dims())?;
    for i in 0..x.len() {
        g.data_mut()[i] = central_difference(&mut f, x, i)?;
    }
    Ok(g)
}

/// Largest elementwise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &Tensor4, numeric: &Tensor4) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub probes: Vec<ParamProbe>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Train-mode loss of `net` on a fixed batch.
fn batch_loss(net: &mut Network, x: &Tensor4, target: &Tensor4) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fwd = net.forward(&mut tape, xv, Mode::Train, false)?;
    let (_, out) = tape.softmax_cross_entropy(fwd.logits, target)?;
    Ok(out.value)
}

/// Compares backprop gradients of a freshly built network against central
/// differences at `samples` randomly chosen parameter entries.
///
/// The residual-branch zero init is disabled and batch-norm affine
/// parameters are randomized so that every parameter has a non-trivial
/// gradient. Differences use [`network_step`] and errors
/// [`NETWORK_REL_FLOOR`]. The loss is batch-mean cross-entropy in train mode over a
/// batch of four random images with random one-hot targets.
pub fn audit_network(
    cfg: &NetworkConfig,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    if samples == 0 {
        return Err(Error::Argument(
            "gradcheck needs at least one sample".into(),
        ));
    }
    let root = Rng::new(seed);
    let cfg = NetworkConfig {
        zero_init_last_bn: false,
        ..cfg.clone()
    };
    let mut net = Network::build(&cfg, &root.split(0))?;
    let mut affine_rng = root.split(1);
    for p in net.store.params_mut() {
        match p.kind {
            ParamKind::BnGamma => p
                .value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.5 + affine_rng.uniform()),
            ParamKind::BnBeta | ParamKind::Bias => p
                .value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.2 * (affine_rng.uniform() - 0.5)),
            _ => {}
        }
    }

    let batch = 4;
    let mut data_rng = root.split(2);
    let x = Tensor4::randn(net.input_dims(batch), &mut data_rng, 1.0)?;
    let k = cfg.num_classes;
    let mut target = Tensor4::zeros([batch, k, 1, 1])?;
    for n in 0..batch {
        let c = data_rng.below(k as u64) as usize;
        target.data_mut()[n * k + c] = 1.0;
    }

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fwd = net.clone().forward(&mut tape, xv, Mode::Train, true)?;
    let (loss, _) = tape.softmax_cross_entropy(fwd.logits, &target)?;
    let grads = tape.backward(loss)?;

    let mut pick = root.split(3);
    let mut probes = Vec::with_capacity(samples);
    for _ in 0..samples {
        let pi = pick.below(net.store.params().len() as u64) as usize;
        let len = net.store.params()[pi].value.len();
        let ei = pick.below(len as u64) as usize;
        let analytic = grads
            .get(fwd.params[pi])
            .map(|g| g.data()[ei])
            .ok_or_else(|| Error::Graph(format!("no gradient for parameter #{pi}")))?;
        let original = net.store.params()[pi].value.clone();
        let mut probe_net = net.clone();
        let numeric = central_difference_with(
            |v| {
                probe_net.store.params_mut()[pi].value = v.clone();
                batch_loss(&mut probe_net, &x, &target)
            },
            &original,
            ei,
            network_step,
        )?;
        probes.push(ParamProbe {
            name: net.store.params()[pi].name.clone(),
            index: ei,
            analytic,
            numeric,
            rel_error: relative_error_with_floor(analytic, numeric, NETWORK_REL_FLOOR),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: max_rel_error < tolerance,
        probes,
        max_rel_error,
        tolerance,
    })
}
