//! Fourier machinery on the periodic tortoise-coordinate lattice.
//!
//! Conventions: `D = -i d/dr_*`. The first-derivative multiplier zeroes the
//! Nyquist mode so that the discrete `D` stays Hermitian; the second-derivative
//! multiplier keeps it as `(pi/h)^2`, which makes `D^2` the exact generator the
//! split-step kinetic factor exponentiates.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Spectral {
    n: usize,
    spacing: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumber: Vec<f64>,
    wavenumber_sq: Vec<f64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("spacing", &self.spacing)
            .finish_non_exhaustive()
    }
}

impl Spectral {
    pub fn new(n: usize, spacing: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let dk = 2.0 * PI / (n as f64 * spacing);
        let mut wavenumber = vec![0.0; n];
        let mut wavenumber_sq = vec![0.0; n];
        for j in 0..n {
            let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let k = signed * dk;
            wavenumber_sq[j] = k * k;
            wavenumber[j] = if 2 * j == n { 0.0 } else { k };
        }
        Spectral {
            n,
            spacing,
            forward,
            inverse,
            wavenumber,
            wavenumber_sq,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed angular wavenumbers, Nyquist entry zero.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumber
    }

    /// Symbol of `D^2`, Nyquist entry `(pi/h)^2`.
    pub fn wavenumbers_squared(&self) -> &[f64] {
        &self.wavenumber_sq
    }

    pub fn k_max(&self) -> f64 {
        PI / self.spacing
    }

    /// Unnormalized forward transform in place.
    pub fn fft(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse transform in place, normalized so `ifft(fft(f)) == f`.
    pub fn ifft(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let s = 1.0 / self.n as f64;
        for x in buf.iter_mut() {
            *x *= s;
        }
    }

    pub(crate) fn fft_with_scratch(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let need = self.forward.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        self.forward.process_with_scratch(buf, &mut scratch[..need]);
    }

    /// Inverse without the `1/n` factor; callers fold it into their multiplier.
    pub(crate) fn ifft_unnormalized_with_scratch(
        &self,
        buf: &mut [Complex64],
        scratch: &mut Vec<Complex64>,
    ) {
        let need = self.inverse.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        self.inverse.process_with_scratch(buf, &mut scratch[..need]);
    }

    /// Applies a Fourier multiplier and returns the result in physical space.
    pub fn apply_multiplier<M>(&self, f: &[Complex64], symbol: M) -> Vec<Complex64>
    where
        M: Fn(usize) -> Complex64,
    {
        let mut buf = f.to_vec();
        self.fft(&mut buf);
        for (j, x) in buf.iter_mut().enumerate() {
            *x *= symbol(j);
        }
        self.ifft(&mut buf);
        buf
    }

    /// `d f / d r_*`.
    pub fn derivative(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply_multiplier(f, |j| Complex64::new(0.0, self.wavenumber[j]))
    }

    /// `d f / d r_*` for real data.
    pub fn derivative_real(&self, f: &[f64]) -> Vec<f64> {
        let buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.derivative(&buf).into_iter().map(|z| z.re).collect()
    }

    /// `D f = -i f'`.
    pub fn apply_d(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply_multiplier(f, |j| Complex64::new(self.wavenumber[j], 0.0))
    }

    /// `D^2 f = -f''`.
    pub fn apply_d2(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply_multiplier(f, |j| Complex64::new(self.wavenumber_sq[j], 0.0))
    }

    /// `<f, D^2 f>` by Parseval, using the same symbol as the kinetic propagator.
    pub fn kinetic_form(&self, f: &[Complex64]) -> f64 {
        let mut buf = f.to_vec();
        self.fft(&mut buf);
        let s: f64 = buf
            .iter()
            .zip(&self.wavenumber_sq)
            .map(|(z, k2)| k2 * z.norm_sqr())
            .sum();
        s * self.spacing / self.n as f64
    }

    /// Smallest `|k|` such that modes with `|k'| <= |k|` carry at least
    /// fraction `q` of the spectral mass. Zero data returns 0.
    pub fn wavenumber_quantile(&self, f: &[Complex64], q: f64) -> f64 {
        let mut buf = f.to_vec();
        self.fft(&mut buf);
        let mut modes: Vec<(f64, f64)> = buf
            .iter()
            .zip(&self.wavenumber_sq)
            .map(|(z, k2)| (k2.sqrt(), z.norm_sqr()))
            .collect();
        let total: f64 = modes.iter().map(|m| m.1).sum();
        if total == 0.0 {
            return 0.0;
        }
        modes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (k, w) in modes {
            acc += w;
            if acc >= q * total {
                return k;
            }
        }
        self.k_max()
    }
}
