//! 2-D convolution, transposed convolution and ReLU over single `C x H x W`
//! samples, lowered to GEMM through im2col.

use rand::Rng;

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn tconv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if size == 0 || stride == 0 {
        return None;
    }
    ((size - 1) * stride + kernel).checked_sub(2 * padding)
}

/// Geometry of one sliding-window pass: a `c x h x w` image read by a
/// `k x k` window at stride `s` with padding `p`, producing `oh x ow` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for output index `o` and kernel tap `t`.
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let v = (o * self.s + t) as isize - self.p as isize;
        (v >= 0 && (v as usize) < limit).then_some(v as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: Window) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = vec![T::ZERO; rows * cols];
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[oy * g.ow + ox] = plane[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(cols_buf: &[T], g: Window) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::ZERO; g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

fn chw(x: &Tensor<impl Scalar>, channels: usize, what: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [c, h, w] if c == channels => Ok((h, w)),
        _ => Err(Error::Shape(format!(
            "{what} expects {channels} x H x W input, got {:?}",
            x.shape()
        ))),
    }
}

fn he_uniform<T: Scalar, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect()
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Scalar>(grad: &mut [T], dy: &[T], plane: usize) {
    for (g, chunk) in grad.iter_mut().zip(dy.chunks(plane)) {
        *g += chunk.iter().fold(T::ZERO, |acc, &v| acc + v);
    }
}

/// Cross-correlation layer. Weight layout `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// What a conv forward keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    window: Window,
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    /// He-uniform weights, zero biases.
    pub fn he<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let fan_in = in_channels * kernel * kernel;
        let n = layer.weight.len();
        layer.weight.data_mut().copy_from_slice(&he_uniform(n, fan_in, rng));
        layer
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        let oh = conv_out(h, self.kernel, self.stride, self.padding);
        let ow = conv_out(w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok([self.out_channels, oh, ow]),
            _ => Err(Error::Shape(format!(
                "{h}x{w} input too small for kernel {} with padding {}",
                self.kernel, self.padding
            ))),
        }
    }

    fn window(&self, h: usize, w: usize) -> Result<Window> {
        let [_, oh, ow] = self.output_shape(h, w)?;
        Ok(Window {
            c: self.in_channels,
            h,
            w,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            oh,
            ow,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (h, w) = chw(x, self.in_channels, "conv")?;
        let g = self.window(h, w)?;
        let cols = im2col(x.data(), g);
        let mut y = vec![T::ZERO; self.out_channels * g.cols()];
        gemm(false, false, self.out_channels, g.cols(), g.rows(), self.weight.data(), &cols, T::ZERO, &mut y);
        add_bias(&mut y, self.bias.data(), g.cols());
        let y = Tensor::new(&[self.out_channels, g.oh, g.ow], y)?;
        Ok((y, ConvCache { window: g, cols }))
    }

    /// Accumulates weight and bias gradients into the parameter grad buffers
    /// and returns the input gradient when `input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = cache.window;
        if dy.shape() != [self.out_channels, g.oh, g.ow] {
            return Err(Error::Shape(format!(
                "conv upstream gradient {:?} does not match output {:?}",
                dy.shape(),
                [self.out_channels, g.oh, g.ow]
            )));
        }
        let (rows, cols) = (g.rows(), g.cols());
        gemm(false, true, self.out_channels, rows, cols, dy.data(), &cache.cols, T::ONE, self.weight.grad_mut());
        accumulate_bias_grad(self.bias.grad_mut(), dy.data(), cols);
        if !input_grad {
            return Ok(None);
        }
        let mut dcols = vec![T::ZERO; rows * cols];
        gemm(true, false, rows, cols, self.out_channels, self.weight.data(), dy.data(), T::ZERO, &mut dcols);
        let dx = col2im(&dcols, g);
        Ok(Some(Tensor::new(&[g.c, g.h, g.w], dx)?))
    }
}

/// Transposed convolution. Weight layout `(in, out, k, k)`, so a conv's
/// weights used here compute that conv's input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct TConvCache<T> {
    window: Window,
    input: Vec<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::zeros(&[in_channels, out_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn he<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        // Each output sums in_channels * k^2 / stride^2 terms.
        let fan_in = (in_channels * kernel * kernel / (stride * stride)).max(1);
        let n = layer.weight.len();
        layer.weight.data_mut().copy_from_slice(&he_uniform(n, fan_in, rng));
        layer
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        let oh = tconv_out(h, self.kernel, self.stride, self.padding);
        let ow = tconv_out(w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([self.out_channels, oh, ow]),
            _ => Err(Error::Shape(format!(
                "{h}x{w} input gives an empty transposed-conv output"
            ))),
        }
    }

    /// The window seen from the output side: the output image is read at the
    /// input's resolution.
    fn window(&self, h: usize, w: usize) -> Result<Window> {
        let [_, oh, ow] = self.output_shape(h, w)?;
        Ok(Window {
            c: self.out_channels,
            h: oh,
            w: ow,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            oh: h,
            ow: w,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TConvCache<T>)> {
        let (h, w) = chw(x, self.in_channels, "transposed conv")?;
        let g = self.window(h, w)?;
        let mut cols = vec![T::ZERO; g.rows() * g.cols()];
        gemm(true, false, g.rows(), g.cols(), self.in_channels, self.weight.data(), x.data(), T::ZERO, &mut cols);
        let mut y = col2im(&cols, g);
        add_bias(&mut y, self.bias.data(), g.h * g.w);
        let y = Tensor::new(&[self.out_channels, g.h, g.w], y)?;
        Ok((
            y,
            TConvCache {
                window: g,
                input: x.data().to_vec(),
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &TConvCache<T>,
        dy: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = cache.window;
        if dy.shape() != [self.out_channels, g.h, g.w] {
            return Err(Error::Shape(format!(
                "transposed conv upstream gradient {:?} does not match output {:?}",
                dy.shape(),
                [self.out_channels, g.h, g.w]
            )));
        }
        let (rows, cols) = (g.rows(), g.cols());
        let dcols = im2col(dy.data(), g);
        gemm(false, true, self.in_channels, rows, cols, &cache.input, &dcols, T::ONE, self.weight.grad_mut());
        accumulate_bias_grad(self.bias.grad_mut(), dy.data(), g.h * g.w);
        if !input_grad {
            return Ok(None);
        }
        let mut dx = vec![T::ZERO; self.in_channels * cols];
        gemm(false, false, self.in_channels, cols, rows, self.weight.data(), &dcols, T::ZERO, &mut dx);
        Ok(Some(Tensor::new(&[self.in_channels, g.oh, g.ow], dx)?))
    }
}

pub fn relu<T: Scalar>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    });
}

/// Masks `dy` in place by the ReLU output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_output_arithmetic() {
        let layer = Conv2d::<f32>::zeros(3, 8, 5, 2, 2);
        let y = layer.forward(&Tensor::zeros(&[3, 121, 121])).unwrap();
        assert_eq!(y.shape(), [8, 61, 61]);
        assert_eq!(conv_out(61, 5, 2, 2), Some(31));
        assert_eq!(conv_out(2, 5, 1, 0), None);
    }

    #[test]
    fn tconv_preserves_extent() {
        let layer = ConvTranspose2d::<f32>::zeros(16, 8, 3, 1, 1);
        let y = layer.forward(&Tensor::zeros(&[16, 31, 31])).unwrap();
        assert_eq!(y.shape(), [8, 31, 31]);
        assert_eq!(tconv_out(61, 5, 2, 2), Some(121));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Conv2d::<f64>::zeros(1, 1, 1, 1, 0);
        layer.weight.data_mut()[0] = 1.0;
        let x = random(&[1, 6, 5], &mut rng);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Conv2d::<f64>::he(2, 3, 3, 2, 1, &mut rng);
        layer.bias = random(&[3], &mut rng);
        let x = random(&[2, 7, 6], &mut rng);
        let y = layer.forward(&x).unwrap();
        let [_, oh, ow] = layer.output_shape(7, 6).unwrap();
        let (w, b) = (layer.weight.data(), layer.bias.data());
        for o in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                    continue;
                                }
                                acc += w[((o * 2 + c) * 3 + ky) * 3 + kx]
                                    * x.data()[(c * 7 + iy as usize) * 6 + ix as usize];
                            }
                        }
                    }
                    let got = y.data()[(o * oh + oy) * ow + ox];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn tconv_with_conv_weights_is_conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::he(3, 4, 5, 2, 2, &mut rng);
        let x = random(&[3, 11, 11], &mut rng);
        let (y, cache) = conv.forward_cached(&x).unwrap();
        let dy = random(y.shape(), &mut rng);
        let dx = conv.backward(&cache, &dy, true).unwrap().unwrap();

        let mut tconv = ConvTranspose2d::<f64>::zeros(4, 3, 5, 2, 2);
        tconv.weight.data_mut().copy_from_slice(conv.weight.data());
        let out = tconv.forward(&dy).unwrap();
        assert_eq!(out.shape(), dx.shape());
        for (a, b) in out.data().iter().zip(dx.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let layer = Conv2d::<f32>::zeros(3, 8, 3, 1, 1);
        assert!(matches!(layer.forward(&Tensor::zeros(&[2, 9, 9])), Err(Error::Shape(_))));
        let t = ConvTranspose2d::<f32>::zeros(3, 8, 3, 1, 1);
        assert!(t.forward(&Tensor::zeros(&[3, 9])).is_err());
    }

    #[test]
    fn relu_masks_gradient() {
        let mut x = Tensor::<f64>::new(&[4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        relu(&mut x);
        assert_eq!(x.data(), [0.0, 0.0, 2.0, 3.0]);
        let mut dy = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        relu_backward(&x, &mut dy);
        assert_eq!(dy.data(), [0.0, 0.0, 1.0, 1.0]);
    }
}
