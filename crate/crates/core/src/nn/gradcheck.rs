//! Central finite-difference checks of every differentiable op and of the
//! whole Q-network, in `f64`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{relu, relu_backward, Conv2d, ConvTranspose2d};
use super::qnet::QNetwork;
use super::tensor::Tensor;
use crate::encoding::{build_state, MeasurementLog};
use crate::error::Result;
use crate::gridworld::BuildingMap;

pub const STEP: f64 = 1e-5;

/// Gradients smaller than this in magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    fn new(name: &str) -> Self {
        GradReport {
            name: name.to_owned(),
            checked: 0,
            max_rel_error: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Perturbs `values[i]` both ways and returns the central difference of `f`.
fn central(values: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + STEP;
    let plus = f(values);
    values[i] = orig - STEP;
    let minus = f(values);
    values[i] = orig;
    (plus - minus) / (2.0 * STEP)
}

/// Random conv: weight, bias and input gradients of `sum(R * conv(x))`.
pub fn check_conv2d(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Conv2d::<f64>::he(2, 3, 3, 2, 1, &mut rng);
    layer.bias = random(&[3], &mut rng);
    let x = random(&[2, 9, 9], &mut rng);
    let (y, cache) = layer.forward_cached(&x)?;
    let r = random(y.shape(), &mut rng);
    let dx = layer.backward(&cache, &r, true)?.expect("input grad");
    let loss = |l: &Conv2d<f64>, x: &Tensor<f64>| dot(l.forward(x).expect("shape").data(), r.data());

    let mut reports = vec![GradReport::new("conv2d.weight"), GradReport::new("conv2d.bias"), GradReport::new("conv2d.input")];
    let wg = layer.weight.grad().expect("grad").to_vec();
    let bg = layer.bias.grad().expect("grad").to_vec();
    for (i, &a) in wg.iter().enumerate() {
        let mut probe = layer.weight.clone();
        let n = central(probe.data_mut(), i, |w| {
            let mut l = layer.clone();
            l.weight.data_mut().copy_from_slice(w);
            loss(&l, &x)
        });
        reports[0].record(a, n);
    }
    for (i, &a) in bg.iter().enumerate() {
        let mut probe = layer.bias.clone();
        let n = central(probe.data_mut(), i, |b| {
            let mut l = layer.clone();
            l.bias.data_mut().copy_from_slice(b);
            loss(&l, &x)
        });
        reports[1].record(a, n);
    }
    for (i, &a) in dx.data().iter().enumerate() {
        let mut probe = x.clone();
        let n = central(probe.data_mut(), i, |v| {
            let xt = Tensor::new(x.shape(), v.to_vec()).expect("shape");
            loss(&layer, &xt)
        });
        reports[2].record(a, n);
    }
    Ok(reports)
}

/// Random transposed conv with stride 2, same three gradients.
pub fn check_tconv2d(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = ConvTranspose2d::<f64>::he(3, 2, 3, 2, 1, &mut rng);
    layer.bias = random(&[2], &mut rng);
    let x = random(&[3, 5, 6], &mut rng);
    let (y, cache) = layer.forward_cached(&x)?;
    let r = random(y.shape(), &mut rng);
    let dx = layer.backward(&cache, &r, true)?.expect("input grad");
    let loss = |l: &ConvTranspose2d<f64>, x: &Tensor<f64>| dot(l.forward(x).expect("shape").data(), r.data());

    let mut reports = vec![GradReport::new("tconv2d.weight"), GradReport::new("tconv2d.bias"), GradReport::new("tconv2d.input")];
    let wg = layer.weight.grad().expect("grad").to_vec();
    let bg = layer.bias.grad().expect("grad").to_vec();
    for (i, &a) in wg.iter().enumerate() {
        let mut probe = layer.weight.clone();
        let n = central(probe.data_mut(), i, |w| {
            let mut l = layer.clone();
            l.weight.data_mut().copy_from_slice(w);
            loss(&l, &x)
        });
        reports[0].record(a, n);
    }
    for (i, &a) in bg.iter().enumerate() {
        let mut probe = layer.bias.clone();
        let n = central(probe.data_mut(), i, |b| {
            let mut l = layer.clone();
            l.bias.data_mut().copy_from_slice(b);
            loss(&l, &x)
        });
        reports[1].record(a, n);
    }
    for (i, &a) in dx.data().iter().enumerate() {
        let mut probe = x.clone();
        let n = central(probe.data_mut(), i, |v| {
            let xt = Tensor::new(x.shape(), v.to_vec()).expect("shape");
            loss(&layer, &xt)
        });
        reports[2].record(a, n);
    }
    Ok(reports)
}

/// ReLU input gradient, with inputs kept away from the kink.
pub fn check_relu(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::new(
        &[2, 4, 4],
        (0..32)
            .map(|_| {
                let m: f64 = rng.random_range(0.01..1.0);
                if rng.random() { m } else { -m }
            })
            .collect(),
    )?;
    let r = random(x.shape(), &mut rng);
    let mut y = x.clone();
    relu(&mut y);
    let mut dx = r.clone();
    relu_backward(&y, &mut dx);
    let mut report = GradReport::new("relu.input");
    for (i, &a) in dx.data().iter().enumerate() {
        let mut probe = x.clone();
        let n = central(probe.data_mut(), i, |v| {
            let mut t = Tensor::new(x.shape(), v.to_vec()).expect("shape");
            relu(&mut t);
            dot(t.data(), r.data())
        });
        report.record(a, n);
    }
    Ok(vec![report])
}

/// Shrunk Q-network (`3x25x25` global input, `3x9x9` crop). Checks up to
/// `per_tensor` randomly chosen entries of every parameter tensor.
pub fn check_qnet(seed: u64, per_tensor: usize) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 25;
    let l = 4;
    let heights = (0..side * side)
        .map(|_| if rng.random_bool(0.15) { rng.random_range(5.0..40.0) } else { 0.0 })
        .collect();
    let map = BuildingMap::new(side, 4.0, 2.0, heights)?;
    let free = map.unoccupied_cells();
    let mut log = MeasurementLog::new();
    for _ in 0..4 {
        let p = free[rng.random_range(0..free.len())];
        log.push(p, rng.random_range(-120.0..-60.0));
    }
    let (p, _) = log.last().expect("non-empty log");
    let state = build_state(&map, p, &log, l, 0.1, -100.0)?;

    let mut net = QNetwork::<f64>::new(l, &mut rng);
    // Non-zero biases so every bias path is exercised.
    for t in net.params_mut() {
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let (q, cache) = net.forward_cached(&state)?;
    let r: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.backward(&cache, &r)?;

    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = net.params().iter().map(|(_, t)| t.grad().expect("grad").to_vec()).collect();
    let mut reports = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let mut report = GradReport::new(&format!("qnet.{name}"));
        let len = grads[ti].len();
        for i in sample(&mut rng, len, per_tensor.min(len)).into_iter() {
            let mut probe = net.clone();
            let orig = probe.params()[ti].1.data()[i];
            let mut eval = |v: f64| {
                probe.params_mut()[ti].data_mut()[i] = v;
                dot(&probe.forward(&state).expect("shape"), &r)
            };
            let n = (eval(orig + STEP) - eval(orig - STEP)) / (2.0 * STEP);
            report.record(grads[ti][i], n);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Runs every check with a fixed seed.
pub fn check_all(seed: u64) -> Result<Vec<GradReport>> {
    let mut out = check_conv2d(seed)?;
    out.extend(check_tconv2d(seed + 1)?);
    out.extend(check_relu(seed + 2)?);
    out.extend(check_qnet(seed + 3, 40)?);
    Ok(out)
}
