//! Adam optimizer with per-tensor moment buffers.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one per parameter tensor.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn with_state(mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        self.step = step;
        self.m = m;
        self.v = v;
        self
    }

    /// One bias-corrected update using each tensor's gradient buffer. A tensor
    /// without a gradient buffer counts as a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::ZERO; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::ONE;
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.grad().map(<[T]>::to_vec) else { continue };
            for (((x, g), m), v) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::new(&[1], vec![0.5]).unwrap();
        p.grad_mut()[0] = 1.0;
        let mut opt = Adam::new(0.001);
        opt.step(&mut [&mut p]).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::<f32>::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        p.grad_mut();
        let mut q = Tensor::<f32>::new(&[2], vec![4.0, 5.0]).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..5 {
            opt.step(&mut [&mut p, &mut q]).unwrap();
        }
        assert_eq!(p.data(), [1.0, -2.0, 3.0]);
        assert_eq!(q.data(), [4.0, 5.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = Tensor::<f64>::new(&[1], vec![3.0]).unwrap();
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let x = p.data()[0];
            p.grad_mut()[0] = 2.0 * x;
            opt.step(&mut [&mut p]).unwrap();
        }
        assert!(p.data()[0].abs() < 0.05);
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let mut a = Tensor::<f64>::zeros(&[2]);
        let mut b = Tensor::<f64>::zeros(&[3]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut a]).unwrap();
        assert!(opt.step(&mut [&mut b]).is_err());
    }
}
