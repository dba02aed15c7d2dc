mod common;

use common::{operator, random_image, test_psfs};
use lensless_core::classical::{
    admm_tv_reconstruct, total_variation, tv_objective, wiener_reconstruct, AdmmConfig,
};
use lensless_core::{gaussian_noise, ConvolutionOperator, Dims, Error, ImageTensor, SeededRng};

/// Direct circular convolution with the origin-centered kernel and its
/// transpose, written out pixel by pixel.
struct DirectOp {
    h: usize,
    w: usize,
    k: Vec<f64>,
}

impl DirectOp {
    fn new(op: &ConvolutionOperator) -> Self {
        let d = op.dims();
        Self {
            h: d.height,
            w: d.width,
            k: op.origin_kernel(0).to_vec(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
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

    fn adjoint(&self, r: &[f64]) -> Vec<f64> {
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

fn huber_grad(v: f64, delta: f64) -> f64 {
    if v.abs() <= delta {
        v / delta
    } else {
        v.signum()
    }
}

/// Accelerated projected gradient on `‖y − Ax‖² + τ Σ huber_δ(Dx)`, with δ
/// shrunk geometrically and warm starts, followed by evaluation of the exact
/// nonsmooth objective.
fn projected_gradient_oracle(op: &ConvolutionOperator, y: &[f64], tau: f64) -> Vec<f64> {
    let a = DirectOp::new(op);
    let (h, w) = (a.h, a.w);
    let n = h * w;
    // ‖A‖² bound from the kernel's absolute sum.
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
            // Restart momentum when it points uphill.
            let uphill: f64 = g.iter().zip(next.iter().zip(&x)).map(|(d, (p, q))| d * (p - q)).sum();
            if uphill > 0.0 {
                tk = 1.0;
                z = next.clone();
            } else {
                z = next
                    .iter()
                    .zip(&x)
                    .map(|(p, q)| p + (tk - 1.0) / tn * (p - q))
                    .collect();
                tk = tn;
            }
            x = next;
        }
        delta /= 10.0;
    }
    x
}

pub fn admm_oracle_instance() -> (ConvolutionOperator, ImageTensor, f64) {
    let d = Dims::new(8, 8, 1);
    let op = operator(&test_psfs(8, 8)[3].1, d);
    let scene = ImageTensor::from_fn(d, |i, j, _| if (2..6).contains(&i) && j >= 3 { 0.9 } else { 0.1 }).unwrap();
    let noise = gaussian_noise(&mut SeededRng::new(5), d, 0.02).unwrap();
    let y = op.apply(&scene).unwrap().add(&noise).unwrap();
    (op, y, 0.02)
}

#[test]
fn admm_matches_projected_gradient_oracle() {
    let (op, y, tau) = admm_oracle_instance();
    let oracle = projected_gradient_oracle(&op, y.as_slice(), tau);
    let oracle = ImageTensor::new(op.dims(), oracle).unwrap();
    let f_oracle = tv_objective(&op, &y, &oracle, tau).unwrap();
    let cfg = AdmmConfig { tau, iters: 2000, ..AdmmConfig::default() };
    let res = admm_tv_reconstruct(&op, &y, &cfg).unwrap();
    let f_admm = *res.objective.last().unwrap();
    assert!((f_admm - f_oracle).abs() / f_oracle < 1e-3, "{f_admm} vs {f_oracle}");
}

#[test]
fn output_is_nonnegative_and_objective_recorded() {
    let (op, y, tau) = admm_oracle_instance();
    let res = admm_tv_reconstruct(&op, &y, &AdmmConfig { tau, ..AdmmConfig::default() }).unwrap();
    assert!(res.x.as_slice().iter().all(|&v| v >= 0.0));
    assert_eq!(res.objective.len(), 100);
    assert_eq!(res.primal_residual.len(), 100);
    let f = tv_objective(&op, &y, &res.x, tau).unwrap();
    assert_eq!(f, *res.objective.last().unwrap());
}

#[test]
fn zero_tau_delta_psf_recovers_nonnegative_measurement() {
    let d = Dims::new(8, 8, 1);
    let op = operator(&test_psfs(8, 8)[0].1, d);
    let y = random_image(d, 3);
    let cfg = AdmmConfig { tau: 0.0, iters: 300, ..AdmmConfig::default() };
    let res = admm_tv_reconstruct(&op, &y, &cfg).unwrap();
    assert!(res.x.max_abs_diff(&y).unwrap() < 1e-6);
}

#[test]
fn tv_beats_wiener_on_piecewise_scene() {
    let d = Dims::new(16, 16, 1);
    let op = operator(&test_psfs(16, 16)[4].1, d);
    let scene = ImageTensor::from_fn(d, |i, j, _| if i < 8 { 0.2 } else if j < 6 { 0.9 } else { 0.5 }).unwrap();
    let noise = gaussian_noise(&mut SeededRng::new(8), d, 0.02).unwrap();
    let y = op.apply(&scene).unwrap().add(&noise).unwrap();
    let w = wiener_reconstruct(&op, &y, 1e-2).unwrap();
    let cfg = AdmmConfig { tau: 0.02, iters: 300, ..AdmmConfig::default() };
    let t = admm_tv_reconstruct(&op, &y, &cfg).unwrap().x;
    assert!(t.mse(&scene).unwrap() < w.mse(&scene).unwrap());
}

#[test]
fn invalid_configs_are_parameter_errors() {
    let (op, y, _) = admm_oracle_instance();
    for cfg in [
        AdmmConfig { rho: 0.0, ..AdmmConfig::default() },
        AdmmConfig { iters: 0, ..AdmmConfig::default() },
        AdmmConfig { tau: -1.0, ..AdmmConfig::default() },
    ] {
        assert!(matches!(admm_tv_reconstruct(&op, &y, &cfg), Err(Error::Parameter(_))));
    }
    assert!(matches!(wiener_reconstruct(&op, &y, 0.0), Err(Error::Parameter(_))));
}

#[test]
fn total_variation_of_a_step() {
    let d = Dims::new(4, 4, 1);
    let x = ImageTensor::from_fn(d, |_, j, _| if j < 2 { 0.0 } else { 1.0 }).unwrap();
    // Two jumps per row (one wraps around), four rows.
    assert_eq!(total_variation(&x), 8.0);
}
