//! Time evolution of `i psi_t = (D^2 + V + lambda r^{-(p-1)} |psi|^{p-1}) psi`
//! and its linear comparison dynamics.
//!
//! One step is the Strang composition
//! `K(dt/2) P(dt) K(dt/2)`, where `K` multiplies each Fourier mode by
//! `exp(-i k^2 t)` and `P` rotates each sample by
//! `exp(-i (V + lambda r^{-(p-1)} |psi|^{p-1}) dt)`. `P` is exact because the
//! modulus is invariant under that rotation, and both factors are unitary, so
//! the discrete `L^2` norm is conserved to rounding. A negative `dt` gives the
//! exact inverse step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::geometry::Grid;
use crate::state::{pow_half, ModelParams, WaveFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Nonlinear,
    /// `lambda = 0`: the flow `exp(-it(D^2 + V))`.
    LinearWithV,
    /// `lambda = 0`, `V = 0`: the flow `exp(-it D^2)`.
    Free,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Nonlinear => "nonlinear",
            Mode::LinearWithV => "linear_with_V",
            Mode::Free => "free",
        }
    }
}

/// Smooth complex absorbing layer `W(s) = strength * s^2` on both ends of the
/// lattice, `s` the depth into the layer over its width. Breaks `L^2`
/// conservation on purpose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Absorber {
    pub width: f64,
    pub strength: f64,
}

impl Absorber {
    fn profile(&self, grid: &Grid) -> Vec<f64> {
        let lo = grid.r_star_min();
        let hi = grid.r_star_max();
        grid.r_star()
            .iter()
            .map(|&x| {
                let depth = (lo + self.width - x).max(x - (hi - self.width)).max(0.0);
                let s = (depth / self.width).min(1.0);
                self.strength * s * s
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub record_every: usize,
    pub absorber: Option<Absorber>,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_end: f64, mode: Mode) -> Self {
        EvolutionConfig {
            dt,
            t_end,
            mode,
            record_every: 1,
            absorber: None,
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    /// Kinetic phase per step at the Nyquist mode.
    pub fn nyquist_phase(&self, grid: &Grid) -> f64 {
        let k = grid.spectral().k_max();
        self.dt.abs() * k * k
    }

    /// False when the Nyquist phase per step exceeds `pi`.
    pub fn phase_wrap_ok(&self, grid: &Grid) -> bool {
        self.nyquist_phase(grid) <= std::f64::consts::PI
    }
}

/// Reusable split-step propagator for one lattice, model, mode and `dt`.
pub struct Stepper {
    grid: Arc<Grid>,
    mode: Mode,
    dt: f64,
    p: f64,
    kinetic_half: Vec<Complex64>,
    kinetic_full: Vec<Complex64>,
    potential_dt: Vec<f64>,
    nonlinear_dt: Option<Vec<f64>>,
    damping: Option<Vec<f64>>,
    scratch: Vec<Complex64>,
    exec: Execution,
}

impl Stepper {
    pub fn new(grid: Arc<Grid>, model: &ModelParams, mode: Mode, dt: f64) -> Self {
        let n = grid.n();
        let inv_n = 1.0 / n as f64;
        let k2 = grid.spectral().wavenumbers_squared();
        let kinetic_half = k2
            .iter()
            .map(|k2| Complex64::from_polar(inv_n, -k2 * dt / 2.0))
            .collect();
        let kinetic_full = k2
            .iter()
            .map(|k2| Complex64::from_polar(inv_n, -k2 * dt))
            .collect();
        let potential_dt = match mode {
            Mode::Free => vec![0.0; n],
            _ => grid.potential().iter().map(|v| v * dt).collect(),
        };
        let nonlinear_dt = match mode {
            Mode::Nonlinear if model.lambda() != 0.0 => Some(
                grid.r()
                    .iter()
                    .map(|r| model.lambda() * r.powf(1.0 - model.p()) * dt)
                    .collect(),
            ),
            _ => None,
        };
        Stepper {
            grid,
            mode,
            dt,
            p: model.p(),
            kinetic_half,
            kinetic_full,
            potential_dt,
            nonlinear_dt,
            damping: None,
            scratch: Vec::new(),
            exec: Execution::default(),
        }
    }

    pub fn with_absorber(mut self, absorber: Absorber) -> Self {
        let dt = self.dt;
        self.damping = Some(
            absorber
                .profile(&self.grid)
                .into_iter()
                .map(|w| (-w * dt.abs()).exp())
                .collect(),
        );
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has_absorber(&self) -> bool {
        self.damping.is_some()
    }

    fn kinetic(&mut self, values: &mut [Complex64], half: bool) {
        let spectral = self.grid.spectral();
        spectral.fft_with_scratch(values, &mut self.scratch);
        let mult = if half { &self.kinetic_half } else { &self.kinetic_full };
        self.exec.for_each_indexed(values, |i, z| *z *= mult[i]);
        spectral.ifft_unnormalized_with_scratch(values, &mut self.scratch);
    }

    fn pointwise(&self, values: &mut [Complex64]) {
        if self.mode == Mode::Free && self.damping.is_none() {
            return;
        }
        let pot = &self.potential_dt;
        let nl = self.nonlinear_dt.as_deref();
        let damp = self.damping.as_deref();
        let e = self.p - 1.0;
        self.exec.for_each_indexed(values, |i, z| {
            let mut theta = pot[i];
            if let Some(nl) = nl {
                theta += nl[i] * pow_half(z.norm_sqr(), e);
            }
            let (s, c) = theta.sin_cos();
            let mut rot = Complex64::new(c, -s);
            if let Some(d) = damp {
                rot *= d[i];
            }
            *z *= rot;
        });
    }

    /// One Strang step.
    pub fn step(&mut self, psi: &mut WaveFunction) {
        self.advance(psi, 1);
    }

    /// `n` Strang steps with adjacent half kinetic factors merged.
    pub fn advance(&mut self, psi: &mut WaveFunction, n: usize) {
        if n == 0 {
            return;
        }
        let t0 = psi.time();
        let values = psi.values_mut();
        self.kinetic(values, true);
        for _ in 1..n {
            self.pointwise(values);
            self.kinetic(values, false);
        }
        self.pointwise(values);
        self.kinetic(values, true);
        psi.set_time(t0 + n as f64 * self.dt);
    }
}

/// Receives the state at every recording instant of [`evolve`].
pub trait Observer {
    fn observe(&mut self, psi: &WaveFunction) -> Result<()>;
}

impl<F> Observer for F
where
    F: FnMut(&WaveFunction) -> Result<()>,
{
    fn observe(&mut self, psi: &WaveFunction) -> Result<()> {
        self(psi)
    }
}

/// Observer that ignores every state.
pub struct NoObserver;

impl Observer for NoObserver {
    fn observe(&mut self, _: &WaveFunction) -> Result<()> {
        Ok(())
    }
}

/// One step of the given mode.
pub fn step(psi: &WaveFunction, model: &ModelParams, cfg: &EvolutionConfig) -> WaveFunction {
    let mut stepper = Stepper::new(Arc::clone(psi.grid()), model, cfg.mode, cfg.dt);
    if let Some(a) = cfg.absorber {
        stepper = stepper.with_absorber(a);
    }
    let mut out = psi.clone();
    stepper.step(&mut out);
    out
}

/// Number of steps and the adjusted step that lands exactly on `t_end`.
pub fn step_plan(t0: f64, t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(invalid("dt", "must be finite and nonzero"));
    }
    let span = t_end - t0;
    if span == 0.0 {
        return Ok((0, dt));
    }
    if span.signum() != dt.signum() {
        return Err(invalid(
            "t_end",
            format!("cannot reach t_end = {t_end} from t = {t0} with dt = {dt}"),
        ));
    }
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((n, span / n as f64))
}

/// Evolves `psi0` to `cfg.t_end`, calling `observer` at the start, every
/// `record_every` steps and at the end.
pub fn evolve(
    psi0: &WaveFunction,
    model: &ModelParams,
    cfg: &EvolutionConfig,
    observer: &mut dyn Observer,
) -> Result<WaveFunction> {
    if cfg.record_every == 0 {
        return Err(invalid("record_every", "must be positive"));
    }
    let (n, dt) = step_plan(psi0.time(), cfg.t_end, cfg.dt)?;
    let mut stepper = Stepper::new(Arc::clone(psi0.grid()), model, cfg.mode, dt);
    if let Some(a) = cfg.absorber {
        stepper = stepper.with_absorber(a);
    }
    let t0 = psi0.time();
    let mut psi = psi0.clone();
    observer.observe(&psi)?;
    let mut done = 0;
    while done < n {
        let chunk = cfg.record_every.min(n - done);
        stepper.advance(&mut psi, chunk);
        done += chunk;
        psi.set_time(t0 + done as f64 * dt);
        if done == n {
            psi.set_time(cfg.t_end);
        }
        if !psi.is_finite() {
            return Err(Error::NonFinite {
                observable: "psi",
                time: psi.time(),
            });
        }
        observer.observe(&psi)?;
    }
    Ok(psi)
}

/// Evolves independent initial data, concurrently when `exec` allows.
pub fn evolve_batch(
    data: &[WaveFunction],
    model: &ModelParams,
    cfg: &EvolutionConfig,
    exec: Execution,
) -> Vec<Result<WaveFunction>> {
    exec.map(data, |psi| evolve(psi, model, cfg, &mut NoObserver))
}

/// Velocity-based check that nothing wraps around the periodic lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainGuard {
    /// `2 k_q` with `k_q` the 0.999 spectral quantile of `|k|`.
    pub v_max: f64,
    /// `2 v_max T`.
    pub required: f64,
    pub available: f64,
}

impl DomainGuard {
    pub fn ok(&self) -> bool {
        self.available >= self.required
    }

    pub fn check(&self) -> Result<()> {
        if self.ok() {
            Ok(())
        } else {
            Err(Error::DomainGuard {
                required: self.required,
                available: self.available,
            })
        }
    }
}

pub fn domain_guard(psi0: &WaveFunction, duration: f64) -> DomainGuard {
    let grid = psi0.grid();
    let kq = grid.spectral().wavenumber_quantile(psi0.values(), 0.999);
    let v_max = 2.0 * kq;
    DomainGuard {
        v_max,
        required: 2.0 * v_max * duration.abs(),
        available: grid.length(),
    }
}

/// Exact discrete propagator `exp(-it(D^2 + V))` by dense diagonalization.
/// Validation oracle for small lattices.
pub struct DensePropagator {
    grid: Arc<Grid>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl DensePropagator {
    pub const MAX_N: usize = 1024;

    pub fn new(grid: Arc<Grid>, mode: Mode) -> Result<Self> {
        let n = grid.n();
        if n > Self::MAX_N {
            return Err(Error::DenseSizeGuard { n, max: Self::MAX_N });
        }
        if mode == Mode::Nonlinear {
            return Err(invalid("mode", "dense propagator covers linear modes only"));
        }
        // First column of the circulant D^2 matrix.
        let mut col: Vec<Complex64> = grid
            .spectral()
            .wavenumbers_squared()
            .iter()
            .map(|&k2| Complex64::new(k2, 0.0))
            .collect();
        grid.spectral().ifft(&mut col);
        let mut h = DMatrix::<f64>::from_fn(n, n, |i, j| col[(i + n - j) % n].re);
        if mode == Mode::LinearWithV {
            for (i, v) in grid.potential().iter().enumerate() {
                h[(i, i)] += v;
            }
        }
        let eig = SymmetricEigen::new(h);
        Ok(DensePropagator {
            grid,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn apply(&self, psi0: &WaveFunction, t: f64) -> WaveFunction {
        let n = self.grid.n();
        let re = DVector::from_iterator(n, psi0.values().iter().map(|z| z.re));
        let im = DVector::from_iterator(n, psi0.values().iter().map(|z| z.im));
        let q = &self.eigenvectors;
        let cr = q.tr_mul(&re);
        let ci = q.tr_mul(&im);
        let mut ar = DVector::<f64>::zeros(n);
        let mut ai = DVector::<f64>::zeros(n);
        for j in 0..n {
            let c = Complex64::new(cr[j], ci[j]) * Complex64::from_polar(1.0, -self.eigenvalues[j] * t);
            ar[j] = c.re;
            ai[j] = c.im;
        }
        let out_r = q * ar;
        let out_i = q * ai;
        let values = (0..n).map(|i| Complex64::new(out_r[i], out_i[i])).collect();
        WaveFunction::new(Arc::clone(&self.grid), values, psi0.time() + t)
            .expect("unitary map of finite data is finite")
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.eigenvalues.as_slice()
    }
}

/// `exp(-it H) psi0` for `H = D^2 + V` or `D^2`, via [`DensePropagator`].
pub fn propagator_oracle(psi0: &WaveFunction, t: f64, mode: Mode) -> Result<WaveFunction> {
    Ok(DensePropagator::new(Arc::clone(psi0.grid()), mode)?.apply(psi0, t))
}

/// Exact free flow `exp(-it D^2)` applied in Fourier space.
pub fn free_flow(psi: &WaveFunction, t: f64) -> WaveFunction {
    let spectral = psi.grid().spectral();
    let k2 = spectral.wavenumbers_squared();
    let values = spectral.apply_multiplier(psi.values(), |j| Complex64::from_polar(1.0, -k2[j] * t));
    WaveFunction::new(Arc::clone(psi.grid()), values, psi.time() + t).expect("finite")
}
