//! Central finite-difference validation of analytic gradients in f64.

use rand::seq::index::sample;

use crate::error::Result;
use crate::network::{Mode, Network};
use crate::params::{Gradients, ParameterSet};
use crate::rng::{derive_seed, fill_gaussian, seeded_rng};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Gradient norms below this (times `max(1, |loss|)`) are compared absolutely,
/// e.g. biases feeding a train-mode batchnorm, whose true gradient is zero.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub coords: usize,
    /// `‖fd − analytic‖ / max(‖fd‖, ABS_FLOOR·max(1, |loss|))` over the probed coordinates.
    pub rel_err: f64,
}

fn probe_indices(len: usize, max_coords: usize, seed: u64) -> Vec<usize> {
    if len <= max_coords {
        (0..len).collect()
    } else {
        let mut idx = sample(&mut seeded_rng(seed), len, max_coords).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn rel_err(fd: &[f64], an: &[f64], loss_scale: f64) -> f64 {
    let diff: f64 = fd.iter().zip(an).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(ABS_FLOOR * loss_scale.abs().max(1.0))
}

fn fd_coords(values: &mut [f64], idx: &[usize], mut eval: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            let orig = values[i];
            let h = FD_STEP * orig.abs().max(1.0);
            values[i] = orig + h;
            let up = eval(values);
            values[i] = orig - h;
            let down = eval(values);
            values[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares `analytic` against finite differences of `loss` for every trainable
/// parameter present in `analytic`, probing at most `max_coords` entries each.
pub fn check_params(
    params: &ParameterSet<f64>,
    analytic: &Gradients<f64>,
    loss: impl Fn(&ParameterSet<f64>) -> f64,
    max_coords: usize,
    seed: u64,
) -> Vec<GradCheck> {
    let mut out = Vec::new();
    let scale = loss(params);
    let mut work = params.clone();
    for (name, grad) in analytic {
        let idx = probe_indices(grad.len(), max_coords, derive_seed(seed, name, 0));
        let mut values = work.get(name).expect("gradient for known parameter").data().to_vec();
        let fd = fd_coords(&mut values, &idx, |v| {
            work.get_mut(name).expect("known").data_mut().copy_from_slice(v);
            loss(&work)
        });
        work.get_mut(name).expect("known").data_mut().copy_from_slice(&values);
        let an: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        out.push(GradCheck {
            name: name.clone(),
            coords: idx.len(),
            rel_err: rel_err(&fd, &an, scale),
        });
    }
    out
}

/// Finite-difference check of an input gradient.
pub fn check_input(
    input: &Tensor<f64>,
    analytic: &Tensor<f64>,
    loss: impl Fn(&Tensor<f64>) -> f64,
    max_coords: usize,
    seed: u64,
) -> GradCheck {
    let idx = probe_indices(input.len(), max_coords, derive_seed(seed, "input", 0));
    let scale = loss(input);
    let mut work = input.clone();
    let mut values = input.data().to_vec();
    let fd = fd_coords(&mut values, &idx, |v| {
        work.data_mut().copy_from_slice(v);
        loss(&work)
    });
    let an: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
    GradCheck {
        name: "input".into(),
        coords: idx.len(),
        rel_err: rel_err(&fd, &an, scale),
    }
}

/// Checks a whole network under the scalarization `L = Σ r ⊙ f(x)` with a fixed
/// Gaussian `r`. Returns one entry per parameter plus one for the input.
pub fn check_network(
    net: &Network,
    params: &ParameterSet<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    max_coords: usize,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let (y, cache) = net.forward(params, input, mode)?;
    let mut r = Tensor::zeros(y.shape());
    fill_gaussian(&mut seeded_rng(derive_seed(seed, "projection", 0)), r.data_mut());
    let (dx, grads) = net.backward(params, &cache, &r)?;
    let scalar = |p: &ParameterSet<f64>, x: &Tensor<f64>| -> f64 {
        let (y, _) = net.forward(p, x, mode).expect("validated shapes");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut out = check_params(params, &grads, |p| scalar(p, input), max_coords, seed);
    out.push(check_input(input, &dx, |x| scalar(params, x), max_coords, seed));
    Ok(out)
}

/// One small network per layer kind (batchnorm in both modes), each checked with
/// `check_network` after moving affine and running statistics off their defaults.
pub fn layer_suite(seed: u64) -> Result<Vec<(String, GradCheck)>> {
    use crate::layer::LayerSpec::*;
    let cases: Vec<(&str, Vec<usize>, Vec<crate::layer::LayerSpec>, Mode)> = vec![
        ("dense", vec![3, 5], vec![Dense { inputs: 5, outputs: 4 }], Mode::Train),
        ("conv", vec![2, 2, 7, 7], vec![Conv { in_channels: 2, out_channels: 3, kernel: 3, stride: 2 }], Mode::Train),
        ("conv-k4", vec![2, 2, 6, 6], vec![Conv { in_channels: 2, out_channels: 3, kernel: 4, stride: 2 }], Mode::Train),
        ("tconv", vec![2, 3, 4, 4], vec![Tconv { in_channels: 3, out_channels: 2, kernel: 4, stride: 2 }], Mode::Train),
        ("relu", vec![4, 6], vec![Dense { inputs: 6, outputs: 6 }, Relu], Mode::Train),
        ("tanh", vec![4, 6], vec![Dense { inputs: 6, outputs: 6 }, Tanh], Mode::Train),
        ("batchnorm-train", vec![3, 2, 4, 4], vec![Conv { in_channels: 2, out_channels: 3, kernel: 3, stride: 1 }, Batchnorm { features: 3 }], Mode::Train),
        ("batchnorm-eval", vec![6, 5], vec![Dense { inputs: 5, outputs: 4 }, Batchnorm { features: 4 }], Mode::Eval),
        (
            "reshape",
            vec![2, 8],
            vec![Dense { inputs: 8, outputs: 8 }, Reshape { shape: vec![2, 2, 2] }, Tconv { in_channels: 2, out_channels: 1, kernel: 3, stride: 2 }],
            Mode::Train,
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, shape, layers, mode)) in cases.into_iter().enumerate() {
        let net = Network::new(name, &shape[1..], layers)?;
        let s = derive_seed(seed, name, i as u64);
        let mut params = ParameterSet::<f64>::new();
        net.init_params(&mut params, s);
        for (pname, p) in params.iter_mut() {
            if pname.ends_with("gamma") || pname.ends_with("beta") || pname.ends_with("bias") {
                let mut noise = vec![0.0f64; p.value.len()];
                fill_gaussian(&mut seeded_rng(derive_seed(s, pname, 1)), &mut noise);
                p.value.data_mut().iter_mut().zip(&noise).for_each(|(v, n)| *v += 0.3 * n);
            }
            if pname.ends_with("running_var") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 1.7);
            }
        }
        let mut x = Tensor::zeros(&shape);
        fill_gaussian(&mut seeded_rng(derive_seed(s, "input", 0)), x.data_mut());
        for c in check_network(&net, &params, &x, mode, 64, s)? {
            out.push((name.to_string(), c));
        }
    }
    Ok(out)
}
