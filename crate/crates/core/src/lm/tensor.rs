//! Dense row-major matrices and the handful of kernels the model needs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| f()).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (dst, &b) in o.iter_mut().zip(other.row(k)) {
                    *dst += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// `y[t] = W x[t] + b` for a `T×d_in` input and a `d_out×d_in` weight.
pub fn linear(x: &[f64], t: usize, w: &Mat, b: Option<&Mat>) -> Vec<f64> {
    let (d_out, d_in) = (w.rows, w.cols);
    debug_assert_eq!(x.len(), t * d_in);
    let mut y = vec![0.0; t * d_out];
    for ti in 0..t {
        let xr = &x[ti * d_in..(ti + 1) * d_in];
        let yr = &mut y[ti * d_out..(ti + 1) * d_out];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = w.row(o);
            let mut acc = 0.0;
            for i in 0..d_in {
                acc += wr[i] * xr[i];
            }
            *yo = acc + b.map_or(0.0, |b| b.data[o]);
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(
    x: &[f64],
    t: usize,
    w: &Mat,
    dy: &[f64],
    dw: &mut Mat,
    db: Option<&mut Mat>,
) -> Vec<f64> {
    let (d_out, d_in) = (w.rows, w.cols);
    let mut dx = vec![0.0; t * d_in];
    for ti in 0..t {
        let xr = &x[ti * d_in..(ti + 1) * d_in];
        let dyr = &dy[ti * d_out..(ti + 1) * d_out];
        let dxr = &mut dx[ti * d_in..(ti + 1) * d_in];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wr = w.row(o);
            let dwr = dw.row_mut(o);
            for i in 0..d_in {
                dxr[i] += g * wr[i];
                dwr[i] += g * xr[i];
            }
        }
    }
    if let Some(db) = db {
        for ti in 0..t {
            for (o, d) in db.data.iter_mut().enumerate() {
                *d += dy[ti * d_out + o];
            }
        }
    }
    dx
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], t: usize, d: usize, g: &Mat, b: &Mat) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for ti in 0..t {
        let xr = &x[ti * d..(ti + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[ti] = r;
        for i in 0..d {
            let h = (xr[i] - mean) * r;
            xhat[ti * d + i] = h;
            y[ti * d + i] = g.data[i] * h + b.data[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(
    cache: &LnCache,
    t: usize,
    d: usize,
    g: &Mat,
    dy: &[f64],
    dg: &mut Mat,
    db: &mut Mat,
) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    let mut dxhat = vec![0.0; d];
    for ti in 0..t {
        let xh = &cache.xhat[ti * d..(ti + 1) * d];
        let dyr = &dy[ti * d..(ti + 1) * d];
        for i in 0..d {
            dg.data[i] += dyr[i] * xh[i];
            db.data[i] += dyr[i];
            dxhat[i] = dyr[i] * g.data[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let r = cache.rstd[ti];
        for i in 0..d {
            dx[ti * d + i] = r * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Log-softmax over `logits`, with `excluded` given zero probability.
pub fn log_softmax_excluding(logits: &[f64], excluded: Option<usize>) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != excluded)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != excluded)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if Some(i) == excluded {
                f64::NEG_INFINITY
            } else {
                v - lse
            }
        })
        .collect()
}
