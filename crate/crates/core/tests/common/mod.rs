//! Reference integrators independent of the split-step solver.

#![allow(dead_code)]

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use tortoise_core::geometry::{Grid, SchwarzschildParams};

pub fn grid(n: usize, lo: f64, hi: f64) -> Arc<Grid> {
    Arc::new(Grid::new(SchwarzschildParams::new(1.0).unwrap(), n, lo, hi).unwrap())
}

/// Classical RK4 on `i psi_t = -psi'' + V psi + lambda r^{1-p} |psi|^{p-1} psi`
/// with its own FFT Laplacian.
pub struct Rk4 {
    n: usize,
    k2: Vec<f64>,
    v: Vec<f64>,
    nl: Vec<f64>,
    p: f64,
    planner: FftPlanner<f64>,
}

impl Rk4 {
    pub fn new(grid: &Grid, lambda: f64, p: f64) -> Self {
        let n = grid.n();
        let l = grid.length();
        let k2 = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                let k = 2.0 * std::f64::consts::PI * m / l;
                k * k
            })
            .collect();
        Rk4 {
            n,
            k2,
            v: grid.potential().to_vec(),
            nl: grid.r().iter().map(|r| lambda * r.powf(1.0 - p)).collect(),
            p,
            planner: FftPlanner::new(),
        }
    }

    fn rhs(&mut self, psi: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let fwd = self.planner.plan_fft_forward(n);
        let inv = self.planner.plan_fft_inverse(n);
        let mut buf = psi.to_vec();
        fwd.process(&mut buf);
        for (z, k2) in buf.iter_mut().zip(&self.k2) {
            *z *= k2 / n as f64;
        }
        inv.process(&mut buf);
        let e = 0.5 * (self.p - 1.0);
        let mi = Complex64::new(0.0, -1.0);
        (0..n)
            .map(|i| {
                let pot = self.v[i] + self.nl[i] * psi[i].norm_sqr().powf(e);
                mi * (buf[i] + pot * psi[i])
            })
            .collect()
    }

    pub fn run(&mut self, psi: &[Complex64], t: f64, steps: usize) -> Vec<Complex64> {
        let h = t / steps as f64;
        let mut y = psi.to_vec();
        let axpy = |y: &[Complex64], k: &[Complex64], a: f64| -> Vec<Complex64> {
            y.iter().zip(k).map(|(y, k)| y + k * a).collect()
        };
        for _ in 0..steps {
            let k1 = self.rhs(&y);
            let k2 = self.rhs(&axpy(&y, &k1, h / 2.0));
            let k3 = self.rhs(&axpy(&y, &k2, h / 2.0));
            let k4 = self.rhs(&axpy(&y, &k3, h));
            for i in 0..self.n {
                y[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
            }
        }
        y
    }
}

pub fn l2_diff(a: &[Complex64], b: &[Complex64], h: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * h).sqrt()
}
