//! Dense row-major f64 tensors and the few kernels the encoder needs.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `x[n×d] · w[d×m] + b[m]`.
pub(crate) fn linear(x: &[f64], n: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (d, m) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), n * d);
    let mut y = Vec::with_capacity(n * m);
    for i in 0..n {
        y.extend_from_slice(&b.data);
        let yi = &mut y[i * m..(i + 1) * m];
        for (p, &xv) in x[i * d..(i + 1) * d].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yv, &wv) in yi.iter_mut().zip(&w.data[p * m..(p + 1) * m]) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dw += xᵀ·dy`, `db += Σ dy`, returns `dx = dy·wᵀ`.
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    w: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let (d, m) = (w.shape[0], w.shape[1]);
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        for (bv, &g) in db.data.iter_mut().zip(dyi) {
            *bv += g;
        }
        let xi = &x[i * d..(i + 1) * d];
        let dxi = &mut dx[i * d..(i + 1) * d];
        for p in 0..d {
            let wrow = &w.data[p * m..(p + 1) * m];
            let dwrow = &mut dw.data[p * m..(p + 1) * m];
            let xv = xi[p];
            let mut acc = 0.0;
            for ((dwv, &wv), &g) in dwrow.iter_mut().zip(wrow).zip(dyi) {
                *dwv += xv * g;
                acc += wv * g;
            }
            dxi[p] = acc;
        }
    }
    dx
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer norm; returns output, normalized input and reciprocal std.
pub(crate) fn layer_norm(
    x: &[f64],
    n: usize,
    scale: &Tensor,
    offset: &Tensor,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = scale.len();
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (xi[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = scale.data[j] * h + offset.data[j];
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    scale: &Tensor,
    dscale: &mut Tensor,
    doffset: &mut Tensor,
) -> Vec<f64> {
    let d = scale.len();
    let n = rstd.len();
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let hi = &xhat[i * d..(i + 1) * d];
        let mut mean_g = 0.0;
        let mut mean_gh = 0.0;
        for j in 0..d {
            dscale.data[j] += dyi[j] * hi[j];
            doffset.data[j] += dyi[j];
            dxhat[j] = dyi[j] * scale.data[j];
            mean_g += dxhat[j];
            mean_gh += dxhat[j] * hi[j];
        }
        mean_g /= d as f64;
        mean_gh /= d as f64;
        for j in 0..d {
            dx[i * d + j] = rstd[i] * (dxhat[j] - mean_g - hi[j] * mean_gh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn linear_small() {
        let w = Tensor {
            shape: vec![2, 3],
            data: vec![1., 2., 3., 4., 5., 6.],
        };
        let b = Tensor {
            shape: vec![3],
            data: vec![0.5, 0., -1.],
        };
        let y = linear(&[1., 1., 0., 2.], 2, &w, &b);
        assert_eq!(y, vec![5.5, 7., 8., 8.5, 10., 11.]);
    }
}
