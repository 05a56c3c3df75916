use super::{axpy, dot, Mat, ParamSet, Scalar, Tensor};

const LN_EPS: f64 = 1e-6;

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    fn weight_row(&self, o: usize) -> &[T] {
        let k = self.in_dim();
        &self.weight.data[o * k..(o + 1) * k]
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        debug_assert_eq!(x.cols, self.in_dim());
        let out = self.out_dim();
        let mut y = Mat::zeros(x.rows, out);
        for i in 0..x.rows {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for (o, yo) in yi.iter_mut().enumerate() {
                *yo = self.bias.data[o] + dot(xi, self.weight_row(o));
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &Mat<T>,
        dy: &Mat<T>,
        grad: &mut Linear<T>,
        need_input_grad: bool,
    ) -> Option<Mat<T>> {
        let k = self.in_dim();
        let mut dx = need_input_grad.then(|| Mat::zeros(x.rows, k));
        for i in 0..x.rows {
            let xi = x.row(i);
            let dyi = dy.row(i);
            for (o, &g) in dyi.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                grad.bias.data[o] += g;
                axpy(g, xi, &mut grad.weight.data[o * k..(o + 1) * k]);
                if let Some(dx) = dx.as_mut() {
                    axpy(g, self.weight_row(o), dx.row_mut(i));
                }
            }
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// Per-token layer normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Mat<T>,
    rstd: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    /// Scale one, shift zero.
    pub fn new(dim: usize) -> Self {
        Self {
            weight: Tensor::full(&[dim], T::one()),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, LayerNormCache<T>) {
        let d = x.cols;
        let inv_d = T::one() / T::of(d as f64);
        let eps = T::of(LN_EPS);
        let mut y = Mat::zeros(x.rows, d);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut rstd = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let xi = x.row(i);
            let mean = xi.iter().copied().sum::<T>() * inv_d;
            let var = xi.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            let (hi, yi) = (xhat.row_mut(i), y.row_mut(i));
            for j in 0..d {
                let h = (xi[j] - mean) * r;
                hi[j] = h;
                yi[j] = h * self.weight.data[j] + self.bias.data[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Mat<T>, grad: &mut LayerNorm<T>) -> Mat<T> {
        let d = dy.cols;
        let inv_d = T::one() / T::of(d as f64);
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxhat = vec![T::zero(); d];
        for i in 0..dy.rows {
            let (dyi, hi) = (dy.row(i), cache.xhat.row(i));
            let mut sum = T::zero();
            let mut sum_h = T::zero();
            for j in 0..d {
                grad.weight.data[j] += dyi[j] * hi[j];
                grad.bias.data[j] += dyi[j];
                let g = dyi[j] * self.weight.data[j];
                dxhat[j] = g;
                sum += g;
                sum_h += g * hi[j];
            }
            let (mean_g, mean_gh) = (sum * inv_d, sum_h * inv_d);
            let r = cache.rstd[i];
            for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = r * (dxhat[j] - mean_g - hi[j] * mean_gh);
            }
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_of_zero_with_zero_params_is_zero() {
        let ln = LayerNorm::<f64>::zeros(4);
        let (y, _) = ln.forward(&Mat::zeros(3, 4));
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let ln = LayerNorm::<f64>::new(5);
        let x = Mat::from_vec(1, 5, vec![1.0, 2.0, 3.0, 4.0, 10.0]);
        let (y, _) = ln.forward(&x);
        let mean: f64 = y.data.iter().sum::<f64>() / 5.0;
        let var: f64 = y.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }
}
