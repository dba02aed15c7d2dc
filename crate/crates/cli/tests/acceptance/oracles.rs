//! Reference computations written independently of the library.

use lensless_core::{ConvolutionOperator, ImageTensor};

/// Pixel-loop circular convolution with the origin-centered kernel.
pub struct DirectOp {
    pub h: usize,
    pub w: usize,
    pub k: Vec<f64>,
}

impl DirectOp {
    pub fn new(op: &ConvolutionOperator) -> Self {
        let d = op.dims();
        Self {
            h: d.height,
            w: d.width,
            k: op.origin_kernel(0).to_vec(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for a in 0..h {
                    for b in 0..w {
                        s += self.k[((i + h - a) % h) * w + (j + w - b) % w] * x[a * w + b];
                    }
                }
                out[i * w + j] = s;
            }
        }
        out
    }

    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w];
        for a in 0..h {
            for b in 0..w {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        s += self.k[((i + h - a) % h) * w + (j + w - b) % w] * r[i * w + j];
                    }
                }
                out[a * w + b] = s;
            }
        }
        out
    }
}

/// `‖y − Ax‖² + τ·TV(x)` with circular anisotropic TV.
pub fn tv_objective(a: &DirectOp, y: &[f64], x: &[f64], tau: f64) -> f64 {
    let (h, w) = (a.h, a.w);
    let fit: f64 = a.apply(x).iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    let mut tv = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = x[i * w + j];
            tv += (x[i * w + (j + 1) % w] - p).abs() + (x[((i + 1) % h) * w + j] - p).abs();
        }
    }
    fit + tau * tv
}

fn huber_grad(v: f64, delta: f64) -> f64 {
    if v.abs() <= delta {
        v / delta
    } else {
        v.signum()
    }
}

/// Accelerated projected gradient on a Huber-smoothed TV objective with a
/// shrinking smoothing width and warm starts.
pub fn projected_gradient(a: &DirectOp, y: &[f64], tau: f64) -> Vec<f64> {
    let (h, w) = (a.h, a.w);
    let n = h * w;
    let l_data = 2.0 * a.k.iter().map(|v| v.abs()).sum::<f64>().powi(2);
    let mut x = vec![0.0; n];
    let mut delta = 1e-2;
    while delta >= 1e-7 {
        let l = l_data + tau * 8.0 / delta;
        let step = 1.0 / l;
        let mut z = x.clone();
        let mut tk: f64 = 1.0;
        let iters = (40.0 * (l / l_data).sqrt()) as usize + 2000;
        for _ in 0..iters {
            let r: Vec<f64> = a.apply(&z).iter().zip(y).map(|(p, q)| p - q).collect();
            let mut g: Vec<f64> = a.adjoint(&r).iter().map(|v| 2.0 * v).collect();
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let right = i * w + (j + 1) % w;
                    let down = ((i + 1) % h) * w + j;
                    let gh = tau * huber_grad(z[right] - z[p], delta);
                    let gv = tau * huber_grad(z[down] - z[p], delta);
                    g[right] += gh;
                    g[p] -= gh;
                    g[down] += gv;
                    g[p] -= gv;
                }
            }
            let next: Vec<f64> = z.iter().zip(&g).map(|(v, d)| (v - step * d).max(0.0)).collect();
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            let uphill: f64 = g.iter().zip(next.iter().zip(&x)).map(|(d, (p, q))| d * (p - q)).sum();
            if uphill > 0.0 {
                tk = 1.0;
                z = next.clone();
            } else {
                z = next.iter().zip(&x).map(|(p, q)| p + (tk - 1.0) / tn * (p - q)).collect();
                tk = tn;
            }
            x = next;
        }
        delta /= 10.0;
    }
    x
}

/// Linear-beta DDPM quantities recomputed from scratch, indexed `0..=T`.
pub struct Schedule {
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl Schedule {
    pub fn linear(steps: usize, lo: f64, hi: f64) -> Self {
        let mut beta = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for t in 1..=steps {
            let b = lo + (hi - lo) * (t - 1) as f64 / (steps - 1) as f64;
            beta.push(b);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - b));
        }
        Self { beta, alpha_bar }
    }

    /// `β̃_t`
    pub fn tilde_beta(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]
    }

    /// Weight of `x̂₀` in the DDPM posterior mean.
    pub fn a(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1].sqrt() * self.beta[t] / (1.0 - self.alpha_bar[t])
    }
}

/// Posterior of `x ~ N(m0, v0)` given `y = x + n`, `n ~ N(0, s²)`.
pub fn conjugate_posterior(m0: f64, v0: f64, y: f64, s: f64) -> (f64, f64) {
    let prec = 1.0 / v0 + 1.0 / (s * s);
    ((m0 / v0 + y / (s * s)) / prec, 1.0 / prec)
}

/// Central-difference gradient of `f` at `x`.
pub fn central_gradient(x: &ImageTensor, h: f64, f: impl Fn(&ImageTensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.as_slice().to_vec();
            let mut m = p.clone();
            p[i] += h;
            m[i] -= h;
            let fp = f(&ImageTensor::new(x.dims(), p).unwrap());
            let fm = f(&ImageTensor::new(x.dims(), m).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}
