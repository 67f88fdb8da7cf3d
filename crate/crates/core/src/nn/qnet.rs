//! The two-branch Q-network: a strided global branch over `I_A`, a local
//! branch over `I_B`, channel fusion around the UAV and a transposed-conv head
//! that emits one Q-value per action.

use rand::Rng;

use super::conv::{relu, relu_backward, Conv2d, ConvCache, ConvTranspose2d, TConvCache};
use super::tensor::{Scalar, Tensor};
use crate::encoding::StateTensors;
use crate::error::{Error, Result};

/// Combined stride of branch A; grid cell `i` lands on feature row `i / 4`.
pub const BRANCH_A_STRIDE: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    step_limit: usize,
    branch_a: [Conv2d<T>; 3],
    branch_b: [Conv2d<T>; 2],
    head: [ConvTranspose2d<T>; 3],
}

/// Intermediate values of one forward pass, consumed by [`QNetwork::backward`].
#[derive(Debug, Clone)]
pub struct QCache<T> {
    a: Vec<(ConvCache<T>, Tensor<T>)>,
    b: Vec<(ConvCache<T>, Tensor<T>)>,
    head: Vec<(TConvCache<T>, Tensor<T>)>,
    a_shape: [usize; 3],
    crop_origin: (isize, isize),
}

impl<T: Scalar> QNetwork<T> {
    /// Network with every weight and bias zero.
    pub fn zeros(step_limit: usize) -> Self {
        QNetwork {
            step_limit,
            branch_a: [
                Conv2d::zeros(3, 8, 5, 2, 2),
                Conv2d::zeros(8, 16, 5, 2, 2),
                Conv2d::zeros(16, 16, 3, 1, 1),
            ],
            branch_b: [Conv2d::zeros(3, 16, 3, 1, 1), Conv2d::zeros(16, 16, 3, 1, 1)],
            head: [
                ConvTranspose2d::zeros(32, 16, 3, 1, 1),
                ConvTranspose2d::zeros(16, 8, 3, 1, 1),
                ConvTranspose2d::zeros(8, 1, 3, 1, 1),
            ],
        }
    }

    /// He-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(step_limit: usize, rng: &mut R) -> Self {
        QNetwork {
            step_limit,
            branch_a: [
                Conv2d::he(3, 8, 5, 2, 2, rng),
                Conv2d::he(8, 16, 5, 2, 2, rng),
                Conv2d::he(16, 16, 3, 1, 1, rng),
            ],
            branch_b: [Conv2d::he(3, 16, 3, 1, 1, rng), Conv2d::he(16, 16, 3, 1, 1, rng)],
            head: [
                ConvTranspose2d::he(32, 16, 3, 1, 1, rng),
                ConvTranspose2d::he(16, 8, 3, 1, 1, rng),
                ConvTranspose2d::he(8, 1, 3, 1, 1, rng),
            ],
        }
    }

    pub fn step_limit(&self) -> usize {
        self.step_limit
    }

    pub fn window(&self) -> usize {
        2 * self.step_limit + 1
    }

    pub fn action_count(&self) -> usize {
        self.window() * self.window()
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(16);
        for (i, l) in self.branch_a.iter().enumerate() {
            out.push((format!("branch_a.{i}.weight"), &l.weight));
            out.push((format!("branch_a.{i}.bias"), &l.bias));
        }
        for (i, l) in self.branch_b.iter().enumerate() {
            out.push((format!("branch_b.{i}.weight"), &l.weight));
            out.push((format!("branch_b.{i}.bias"), &l.bias));
        }
        for (i, l) in self.head.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &l.weight));
            out.push((format!("head.{i}.bias"), &l.bias));
        }
        out
    }

    /// Same order as [`QNetwork::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(16);
        for l in self.branch_a.iter_mut().chain(self.branch_b.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in self.head.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Makes `self`'s weights bit-identical to `src`'s. Gradients are untouched.
    pub fn copy_weights(&mut self, src: &QNetwork<T>) -> Result<()> {
        if src.step_limit != self.step_limit {
            return Err(Error::Shape(format!(
                "cannot copy a step-limit {} network into a step-limit {} one",
                src.step_limit, self.step_limit
            )));
        }
        let from = src.params();
        for (dst, (name, s)) in self.params_mut().into_iter().zip(from) {
            if dst.shape() != s.shape() {
                return Err(Error::Shape(format!("parameter {name} has mismatched shape")));
            }
            dst.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }

    /// Same architecture, weights converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> QNetwork<U> {
        let mut out = QNetwork::<U>::zeros(self.step_limit);
        for (dst, (_, s)) in out.params_mut().into_iter().zip(self.params()) {
            let c = s.cast::<U>();
            dst.data_mut().copy_from_slice(c.data());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.all_finite())
    }

    fn inputs(&self, s: &StateTensors) -> Result<(Tensor<T>, Tensor<T>)> {
        if s.window != self.window() {
            return Err(Error::Shape(format!(
                "state crop is {}x{} but the network expects {}x{}",
                s.window,
                s.window,
                self.window(),
                self.window()
            )));
        }
        let a = Tensor::from_f64(&[3, s.side, s.side], &s.i_a)?;
        let b = Tensor::from_f64(&[3, s.window, s.window], &s.i_b)?;
        Ok((a, b))
    }

    /// Q-values over the `(2l+1) x (2l+1)` action grid, row-major.
    pub fn forward(&self, s: &StateTensors) -> Result<Vec<T>> {
        self.forward_cached(s).map(|(q, _)| q)
    }

    pub fn forward_cached(&self, s: &StateTensors) -> Result<(Vec<T>, QCache<T>)> {
        let (xa, xb) = self.inputs(s)?;
        let a = run_convs(&self.branch_a, xa)?;
        let b = run_convs(&self.branch_b, xb)?;

        let a_out = &a.last().expect("branch A has layers").1;
        let a_shape: [usize; 3] = a_out.shape().try_into().expect("CHW");
        let w = self.window();
        let l = self.step_limit as isize;
        let origin = (
            (s.position.i / BRANCH_A_STRIDE) as isize - l,
            (s.position.j / BRANCH_A_STRIDE) as isize - l,
        );
        let [ca, ha, wa] = a_shape;
        let b_out = &b.last().expect("branch B has layers").1;
        let cb = b_out.shape()[0];
        let mut fused = vec![T::ZERO; (ca + cb) * w * w];
        for c in 0..ca {
            for r in 0..w {
                let y = origin.0 + r as isize;
                if y < 0 || y >= ha as isize {
                    continue;
                }
                for q in 0..w {
                    let x = origin.1 + q as isize;
                    if x < 0 || x >= wa as isize {
                        continue;
                    }
                    fused[(c * w + r) * w + q] = a_out.data()[(c * ha + y as usize) * wa + x as usize];
                }
            }
        }
        fused[ca * w * w..].copy_from_slice(b_out.data());

        let mut head = Vec::with_capacity(3);
        let mut cur = Tensor::new(&[ca + cb, w, w], fused)?;
        for (i, layer) in self.head.iter().enumerate() {
            let (mut y, cache) = layer.forward_cached(&cur)?;
            if i + 1 < self.head.len() {
                relu(&mut y);
            }
            head.push((cache, y.clone()));
            cur = y;
        }
        let q = cur.into_data();
        Ok((
            q,
            QCache {
                a,
                b,
                head,
                a_shape,
                crop_origin: origin,
            },
        ))
    }

    /// Backpropagates `dq` (one entry per action) and accumulates parameter
    /// gradients into the grad buffers.
    pub fn backward(&mut self, cache: &QCache<T>, dq: &[T]) -> Result<()> {
        let w = self.window();
        if dq.len() != w * w {
            return Err(Error::Shape(format!(
                "expected {} Q-value gradients, got {}",
                w * w,
                dq.len()
            )));
        }
        let mut d = Tensor::new(&[1, w, w], dq.to_vec())?;
        let n = self.head.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                relu_backward(&cache.head[i].1, &mut d);
            }
            d = self.head[i]
                .backward(&cache.head[i].0, &d, true)?
                .expect("input gradient requested");
        }

        let [ca, ha, wa] = cache.a_shape;
        let fused = d.into_data();
        let db = Tensor::new(&[fused.len() / (w * w) - ca, w, w], fused[ca * w * w..].to_vec())?;
        let mut da = vec![T::ZERO; ca * ha * wa];
        let (oy, ox) = cache.crop_origin;
        for c in 0..ca {
            for r in 0..w {
                let y = oy + r as isize;
                if y < 0 || y >= ha as isize {
                    continue;
                }
                for q in 0..w {
                    let x = ox + q as isize;
                    if x < 0 || x >= wa as isize {
                        continue;
                    }
                    da[(c * ha + y as usize) * wa + x as usize] = fused[(c * w + r) * w + q];
                }
            }
        }
        backprop_convs(&mut self.branch_a, &cache.a, Tensor::new(&cache.a_shape, da)?)?;
        backprop_convs(&mut self.branch_b, &cache.b, db)?;
        Ok(())
    }
}

fn run_convs<T: Scalar>(layers: &[Conv2d<T>], x: Tensor<T>) -> Result<Vec<(ConvCache<T>, Tensor<T>)>> {
    let mut out: Vec<(ConvCache<T>, Tensor<T>)> = Vec::with_capacity(layers.len());
    for layer in layers {
        let input = out.last().map_or(&x, |(_, y)| y);
        let (mut y, cache) = layer.forward_cached(input)?;
        relu(&mut y);
        out.push((cache, y));
    }
    Ok(out)
}

fn backprop_convs<T: Scalar>(
    layers: &mut [Conv2d<T>],
    caches: &[(ConvCache<T>, Tensor<T>)],
    mut d: Tensor<T>,
) -> Result<()> {
    for i in (0..layers.len()).rev() {
        relu_backward(&caches[i].1, &mut d);
        match layers[i].backward(&caches[i].0, &d, i > 0)? {
            Some(next) => d = next,
            None => break,
        }
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_state, MeasurementLog};
    use crate::gridworld::{BuildingMap, GridPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(side: usize, l: usize, p: GridPoint) -> StateTensors {
        let mut heights = vec![0.0; side * side];
        heights[side + 1] = 30.0;
        let map = BuildingMap::new(side, 4.0, 2.0, heights).unwrap();
        let mut log = MeasurementLog::new();
        log.push(p, -85.0);
        build_state(&map, p, &log, l, 0.1, -100.0).unwrap()
    }

    #[test]
    fn output_is_action_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::<f32>::new(4, &mut rng);
        let q = net.forward(&state(25, 4, GridPoint::new(3, 20))).unwrap();
        assert_eq!(q.len(), 81);
        assert!(q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::<f64>::zeros(4);
        let q = net.forward(&state(25, 4, GridPoint::new(12, 12))).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::<f32>::new(4, &mut rng);
        let s = state(25, 4, GridPoint::new(0, 24));
        let a = net.forward(&s).unwrap();
        let b = net.forward(&s).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn copy_weights_gives_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = QNetwork::<f32>::new(4, &mut rng);
        let mut target = QNetwork::<f32>::new(4, &mut rng);
        assert_eq!(policy.param_count(), target.param_count());
        let s = state(25, 4, GridPoint::new(7, 9));
        assert_ne!(policy.forward(&s).unwrap(), target.forward(&s).unwrap());
        target.copy_weights(&policy).unwrap();
        assert_eq!(policy.forward(&s).unwrap(), target.forward(&s).unwrap());
        assert!(target.copy_weights(&QNetwork::zeros(3)).is_err());
    }

    #[test]
    fn wrong_window_is_rejected() {
        let net = QNetwork::<f32>::zeros(5);
        assert!(matches!(net.forward(&state(25, 4, GridPoint::new(2, 2))), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 5]), 0);
    }

    #[test]
    fn parameter_count() {
        let net = QNetwork::<f32>::zeros(15);
        let expected = (3 * 8 * 25 + 8)
            + (8 * 16 * 25 + 16)
            + (16 * 16 * 9 + 16)
            + (3 * 16 * 9 + 16)
            + (16 * 16 * 9 + 16)
            + (32 * 16 * 9 + 16)
            + (16 * 8 * 9 + 8)
            + (8 * 9 + 1);
        assert_eq!(net.param_count(), expected);
        assert_eq!(net.params().len(), 16);
    }
}
