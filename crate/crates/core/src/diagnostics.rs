//! Observables along trajectories and the identities they satisfy.
//!
//! Expectations of the symmetric first-order operators
//! `1/2 (f D + D f)` are evaluated as `Re <psi, f D psi>`. On the lattice `D`
//! is a real Fourier multiplier, hence Hermitian, so this equals the
//! symmetrized sum exactly and not just in the continuum limit.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::geometry::{Grid, SchwarzschildParams};
use crate::solver::{evolve, EvolutionConfig, Observer};
use crate::state::{energy, pow_half, EnergyParts, ModelParams, WaveFunction};

pub const CSV_HEADER: &str = "t,l2,e_kin,e_pot,e_nl,dilation,gamma,locdec,pconf,nlmass,vexp,linf";

/// Relative tolerance of the monotonicity checks, applied to the running
/// maximum of the observable's magnitude.
pub const MONOTONICITY_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    /// `||psi||_2`.
    pub l2: f64,
    pub energy: EnergyParts,
    pub dilation: f64,
    pub gamma: f64,
    /// `||(1 + r_*^2)^{-beta/2} psi||^2`.
    pub local_decay: f64,
    /// `||(r_*/2t - D) psi||^2`, only for `t >= 1`.
    pub pseudoconformal: Option<f64>,
    pub nonlinear_mass: f64,
    /// `int_{-R}^{R} r^{-p-1} |psi|^{p+1} dr_*`.
    pub window_nonlinear: f64,
    pub potential_expectation: f64,
    pub linf: f64,
    pub absorbing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightConfig {
    sigma: f64,
    window: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            sigma: 1.0,
            window: 10.0,
        }
    }
}

impl WeightConfig {
    pub fn new(sigma: f64, window: f64) -> Result<Self> {
        if !(sigma > 0.5 && sigma < 1.5) {
            return Err(invalid("sigma", format!("{sigma} is outside (1/2, 3/2)")));
        }
        if !(window > 0.0 && window.is_finite()) {
            return Err(invalid("R", format!("{window} must be positive")));
        }
        Ok(WeightConfig { sigma, window })
    }

    /// Accepts an explicit `beta`, which must equal `sigma + 1`.
    pub fn with_beta(sigma: f64, beta: f64, window: f64) -> Result<Self> {
        if (beta - (sigma + 1.0)).abs() > 1e-12 {
            return Err(invalid("beta", format!("{beta} != sigma + 1 = {}", sigma + 1.0)));
        }
        Self::new(sigma, window)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.sigma + 1.0
    }

    pub fn window(&self) -> f64 {
        self.window
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `g(s) = int_0^s (1 + t^2)^{-sigma} dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GFunction {
    sigma: f64,
}

impl GFunction {
    pub const TOL: f64 = 1e-12;

    pub fn new(sigma: f64) -> Result<Self> {
        WeightConfig::new(sigma, 1.0)?;
        Ok(GFunction { sigma })
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (1.0 + s * s).powf(-self.sigma)
    }

    fn integral(&self, a: f64, b: f64, tol: f64) -> f64 {
        let f = |t: f64| self.derivative(t);
        adaptive_simpson(&f, a, b, tol)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        // Unit panels keep the recursion shallow on long intervals.
        let panels = s.abs().ceil().max(1.0) as usize;
        let step = s / panels as f64;
        let tol = Self::TOL / panels as f64;
        (0..panels)
            .map(|j| self.integral(j as f64 * step, (j + 1) as f64 * step, tol))
            .sum()
    }

    /// `g(r_* - alpha)` at every node, by accumulation outward from `alpha`.
    pub fn on_grid(&self, grid: &Grid, alpha: f64) -> Vec<f64> {
        let x = grid.r_star();
        let n = x.len();
        let mut out = vec![0.0; n];
        let start = x.partition_point(|&xi| xi < alpha);
        let tol = Self::TOL / n as f64;
        if start < n {
            out[start] = self.eval(x[start] - alpha);
            for i in start + 1..n {
                out[i] = out[i - 1] + self.integral(x[i - 1] - alpha, x[i] - alpha, tol);
            }
        }
        if start > 0 {
            let mut prev_x = alpha;
            let mut acc = 0.0;
            for i in (0..start).rev() {
                acc -= self.integral(x[i] - alpha, prev_x - alpha, tol);
                out[i] = acc;
                prev_x = x[i];
            }
        }
        out
    }
}

fn inner_re(a: &[Complex64], weight: &[f64], b: &[Complex64], h: f64) -> Complex64 {
    let exec = Execution::default();
    let re = exec.sum(a.len(), |i| (a[i].conj() * b[i]).re * weight[i]);
    let im = exec.sum(a.len(), |i| (a[i].conj() * b[i]).im * weight[i]);
    Complex64::new(re, im) * h
}

/// `1/2 (<psi, f D psi> + <psi, D(f psi)>)`, both terms evaluated separately.
/// The imaginary part is the rounding residue.
pub fn symmetric_expectation(psi: &WaveFunction, f: &[f64]) -> Complex64 {
    let grid = psi.grid();
    let spectral = grid.spectral();
    let v = psi.values();
    let h = grid.spacing();
    let dpsi = spectral.apply_d(v);
    let fpsi: Vec<Complex64> = v.iter().zip(f).map(|(z, f)| z * f).collect();
    let dfpsi = spectral.apply_d(&fpsi);
    let ones = vec![1.0; v.len()];
    0.5 * (inner_re(v, f, &dpsi, h) + inner_re(v, &ones, &dfpsi, h))
}

/// `<psi, A_alpha psi>` with `A_alpha = 1/2((r_* - alpha) D + D (r_* - alpha))`.
pub fn dilation_expectation(psi: &WaveFunction, params: &SchwarzschildParams) -> Result<f64> {
    let shift: Vec<f64> = psi.grid().r_star().iter().map(|x| x - params.alpha()).collect();
    real_part(symmetric_expectation(psi, &shift), "dilation", psi.time())
}

/// `<psi, gamma psi>` with `gamma = 1/2(g~ D + D g~)`, `g~(r_*) = g(r_* - alpha)`.
pub fn gamma_expectation(psi: &WaveFunction, w: &WeightConfig, params: &SchwarzschildParams) -> Result<f64> {
    let g = GFunction::new(w.sigma())?.on_grid(psi.grid(), params.alpha());
    real_part(symmetric_expectation(psi, &g), "gamma", psi.time())
}

fn real_part(z: Complex64, observable: &'static str, time: f64) -> Result<f64> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::NonFinite { observable, time });
    }
    debug_assert!(z.im.abs() <= 1e-10 * z.re.abs().max(1.0), "{observable}: imaginary residue {}", z.im);
    Ok(z.re)
}

/// `2 sup|g~| ||psi||_2 ||d psi||_2`, a bound on `|<gamma>|`.
pub fn gamma_bound(psi: &WaveFunction, g_on_grid: &[f64]) -> f64 {
    let sup = g_on_grid.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let l2 = crate::state::l2_norm(psi);
    let grad = psi.grid().spectral().kinetic_form(psi.values()).sqrt();
    2.0 * sup * l2 * grad
}

/// Residuals of the commutator and chain-rule identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutatorResiduals {
    /// `||i[H, A_alpha] psi - (2 D^2 - (r_* - alpha) V') psi|| / ||rhs||`.
    pub operator: f64,
    /// Max pointwise mismatch of
    /// `|psi|^2 d(r^{1-p}|psi|^{p-1}) = (p-1)/(p+1) r^2 d(r^{-p-1}|psi|^{p+1})`
    /// over the support mask, relative to the largest value of either side there.
    pub chain_rule: f64,
}

fn apply_dilation(grid: &Grid, x: &[f64], f: &[Complex64]) -> Vec<Complex64> {
    let spectral = grid.spectral();
    let df = spectral.apply_d(f);
    let xf: Vec<Complex64> = f.iter().zip(x).map(|(z, x)| z * x).collect();
    let dxf = spectral.apply_d(&xf);
    df.iter()
        .zip(&dxf)
        .zip(x)
        .map(|((a, b), x)| 0.5 * (a * x + b))
        .collect()
}

fn apply_h(grid: &Grid, f: &[Complex64]) -> Vec<Complex64> {
    let d2 = grid.spectral().apply_d2(f);
    d2.iter()
        .zip(f)
        .zip(grid.potential())
        .map(|((a, z), v)| a + z * v)
        .collect()
}

/// `i[V, A_alpha] psi`, which is multiplication by `-(r_* - alpha) V'`.
pub fn potential_commutator(psi: &WaveFunction, params: &SchwarzschildParams) -> Vec<Complex64> {
    let grid = psi.grid();
    let x: Vec<f64> = grid.r_star().iter().map(|x| x - params.alpha()).collect();
    let v = psi.values();
    let vpsi: Vec<Complex64> = v.iter().zip(grid.potential()).map(|(z, p)| z * p).collect();
    let a_vpsi = apply_dilation(grid, &x, &vpsi);
    let apsi = apply_dilation(grid, &x, v);
    let v_apsi: Vec<Complex64> = apsi.iter().zip(grid.potential()).map(|(z, p)| z * p).collect();
    let i = Complex64::i();
    v_apsi.iter().zip(&a_vpsi).map(|(a, b)| i * (a - b)).collect()
}

pub fn commutator_identity_check(psi: &WaveFunction, params: &SchwarzschildParams, model: &ModelParams) -> CommutatorResiduals {
    let grid = psi.grid();
    let spectral = grid.spectral();
    let v = psi.values();
    let x: Vec<f64> = grid.r_star().iter().map(|x| x - params.alpha()).collect();

    let h_apsi = apply_h(grid, &apply_dilation(grid, &x, v));
    let a_hpsi = apply_dilation(grid, &x, &apply_h(grid, v));
    let i = Complex64::i();
    let lhs: Vec<Complex64> = h_apsi.iter().zip(&a_hpsi).map(|(a, b)| i * (a - b)).collect();
    let d2 = spectral.apply_d2(v);
    let rhs: Vec<Complex64> = (0..v.len())
        .map(|j| 2.0 * d2[j] - x[j] * grid.potential_derivative()[j] * v[j])
        .collect();
    let diff: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum();
    let scale: f64 = rhs.iter().map(|b| b.norm_sqr()).sum();
    let operator = if scale > 0.0 { (diff / scale).sqrt() } else { diff.sqrt() };

    let p = model.p();
    let r = grid.r();
    let u: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
    let f1: Vec<f64> = (0..v.len()).map(|j| r[j].powf(1.0 - p) * pow_half(u[j], p - 1.0)).collect();
    let f2: Vec<f64> = (0..v.len()).map(|j| r[j].powf(-p - 1.0) * pow_half(u[j], p + 1.0)).collect();
    let df1 = spectral.derivative_real(&f1);
    let df2 = spectral.derivative_real(&f2);
    let c = (p - 1.0) / (p + 1.0);
    let peak = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut worst: f64 = 0.0;
    let mut size: f64 = 0.0;
    for j in 0..v.len() {
        if v[j].norm() > 1e-6 * peak {
            let left = u[j] * df1[j];
            let right = c * r[j] * r[j] * df2[j];
            worst = worst.max((left - right).abs());
            size = size.max(left.abs()).max(right.abs());
        }
    }
    let chain_rule = if size > 0.0 { worst / size } else { 0.0 };
    CommutatorResiduals { operator, chain_rule }
}

/// `||(r_*/2t - D) psi||^2`.
pub fn pseudoconformal_observable(psi: &WaveFunction, t: f64) -> Result<f64> {
    check_pc_time(t)?;
    let grid = psi.grid();
    let v = psi.values();
    let dpsi = grid.spectral().apply_d(v);
    Ok(pc_from_derivative(grid, v, &dpsi, t))
}

/// The same observable as `||D(exp(-i r_*^2/4t) psi)||^2`.
pub fn pseudoconformal_factorized(psi: &WaveFunction, t: f64) -> Result<f64> {
    check_pc_time(t)?;
    let grid = psi.grid();
    let twisted: Vec<Complex64> = psi
        .values()
        .iter()
        .zip(grid.r_star())
        .map(|(z, x)| z * Complex64::from_polar(1.0, -x * x / (4.0 * t)))
        .collect();
    let d = grid.spectral().apply_d(&twisted);
    Ok(d.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.spacing())
}

fn check_pc_time(t: f64) -> Result<()> {
    if t >= 1.0 {
        Ok(())
    } else {
        Err(invalid("t", format!("pseudoconformal observable needs t >= 1, got {t}")))
    }
}

fn pc_from_derivative(grid: &Grid, v: &[Complex64], dpsi: &[Complex64], t: f64) -> f64 {
    let x = grid.r_star();
    let c = 1.0 / (2.0 * t);
    Execution::default().sum(v.len(), |i| (v[i] * (x[i] * c) - dpsi[i]).norm_sqr()) * grid.spacing()
}

/// Per-grid weights reused for every record of a trajectory.
#[derive(Clone, Debug)]
pub struct RecordContext {
    grid: Arc<Grid>,
    model: ModelParams,
    weights: WeightConfig,
    shift: Vec<f64>,
    g: Vec<f64>,
    decay_weight: Vec<f64>,
    window_weight: Vec<f64>,
    absorbing: bool,
}

impl RecordContext {
    pub fn new(grid: Arc<Grid>, model: ModelParams, weights: WeightConfig) -> Self {
        let alpha = grid.params().alpha();
        let x = grid.r_star();
        let shift = x.iter().map(|x| x - alpha).collect();
        let g = GFunction { sigma: weights.sigma() }.on_grid(&grid, alpha);
        let beta = weights.beta();
        let decay_weight = x.iter().map(|x| (1.0 + x * x).powf(-beta)).collect();
        let p = model.p();
        let window_weight = x
            .iter()
            .zip(grid.r())
            .map(|(x, r)| if x.abs() <= weights.window() { r.powf(-p - 1.0) } else { 0.0 })
            .collect();
        RecordContext {
            grid,
            model,
            weights,
            shift,
            g,
            decay_weight,
            window_weight,
            absorbing: false,
        }
    }

    pub fn absorbing(mut self, on: bool) -> Self {
        self.absorbing = on;
        self
    }

    pub fn weights(&self) -> &WeightConfig {
        &self.weights
    }

    pub fn g_on_grid(&self) -> &[f64] {
        &self.g
    }

    pub fn record(&self, psi: &WaveFunction) -> Result<DiagnosticsRecord> {
        let grid = &self.grid;
        let v = psi.values();
        let n = v.len();
        let h = grid.spacing();
        let t = psi.time();
        let exec = Execution::default();
        let dpsi = grid.spectral().apply_d(v);
        let energy = energy(psi, &self.model);
        let p = self.model.p();
        let dilation = exec.sum(n, |i| (v[i].conj() * dpsi[i]).re * self.shift[i]) * h;
        let gamma = exec.sum(n, |i| (v[i].conj() * dpsi[i]).re * self.g[i]) * h;
        let local_decay = exec.sum(n, |i| self.decay_weight[i] * v[i].norm_sqr()) * h;
        let window_nonlinear = exec.sum(n, |i| self.window_weight[i] * pow_half(v[i].norm_sqr(), p + 1.0)) * h;
        let pseudoconformal = (t >= 1.0).then(|| pc_from_derivative(grid, v, &dpsi, t));
        let rec = DiagnosticsRecord {
            time: t,
            l2: (exec.sum(n, |i| v[i].norm_sqr()) * h).sqrt(),
            energy,
            dilation,
            gamma,
            local_decay,
            pseudoconformal,
            nonlinear_mass: crate::state::nonlinear_mass(psi, p),
            window_nonlinear,
            potential_expectation: energy.potential,
            linf: exec.max(n, |i| v[i].norm()),
            absorbing: self.absorbing,
        };
        let fields = [
            ("l2", rec.l2),
            ("e_kin", energy.kinetic),
            ("e_pot", energy.potential),
            ("e_nl", energy.nonlinear),
            ("dilation", dilation),
            ("gamma", gamma),
            ("locdec", local_decay),
            ("pconf", pseudoconformal.unwrap_or(0.0)),
            ("nlmass", rec.nonlinear_mass),
            ("linf", rec.linf),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::NonFinite { observable: name, time: t });
            }
        }
        Ok(rec)
    }
}

/// Observer collecting a [`DiagnosticsRecord`] at every recording instant.
pub struct Recorder {
    context: RecordContext,
    records: Vec<DiagnosticsRecord>,
}

impl Recorder {
    pub fn new(context: RecordContext) -> Self {
        Recorder {
            context,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DiagnosticsRecord> {
        self.records
    }
}

impl Observer for Recorder {
    fn observe(&mut self, psi: &WaveFunction) -> Result<()> {
        self.records.push(self.context.record(psi)?);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub final_state: WaveFunction,
    pub records: Vec<DiagnosticsRecord>,
}

pub fn run_with_diagnostics(
    psi0: &WaveFunction,
    model: &ModelParams,
    cfg: &EvolutionConfig,
    weights: &WeightConfig,
) -> Result<Trajectory> {
    let ctx = RecordContext::new(Arc::clone(psi0.grid()), *model, *weights).absorbing(cfg.absorber.is_some());
    let mut recorder = Recorder::new(ctx);
    let final_state = evolve(psi0, model, cfg, &mut recorder)?;
    Ok(Trajectory {
        final_state,
        records: recorder.into_records(),
    })
}

/// Independent diagnosed trajectories, concurrently when `exec` allows.
pub fn run_batch(
    data: &[WaveFunction],
    model: &ModelParams,
    cfg: &EvolutionConfig,
    weights: &WeightConfig,
    exec: Execution,
) -> Vec<Result<Trajectory>> {
    exec.map(data, |psi| run_with_diagnostics(psi, model, cfg, weights))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub ok: bool,
    /// Time at the right end of the first decreasing pair beyond tolerance.
    pub first_violation: Option<f64>,
    /// Most negative increment, zero if none.
    pub worst_decrease: f64,
    pub tolerance: f64,
}

/// Checks that `values` never decreases by more than `rel_tol` times the
/// running maximum of `|value|`.
pub fn monotonicity_check(times: &[f64], values: &[f64], rel_tol: f64) -> MonotonicityReport {
    let mut running: f64 = values.first().map_or(0.0, |v| v.abs());
    let mut first_violation = None;
    let mut worst: f64 = 0.0;
    let mut tol_at_worst = 0.0;
    for k in 1..values.len() {
        running = running.max(values[k].abs());
        let tol = rel_tol * running;
        let inc = values[k] - values[k - 1];
        if inc < worst {
            worst = inc;
            tol_at_worst = tol;
        }
        if inc < -tol && first_violation.is_none() {
            first_violation = Some(times[k]);
        }
    }
    MonotonicityReport {
        ok: first_violation.is_none(),
        first_violation,
        worst_decrease: worst,
        tolerance: if worst < 0.0 { tol_at_worst } else { rel_tol * running },
    }
}

pub fn dilation_monotonicity_check(records: &[DiagnosticsRecord]) -> MonotonicityReport {
    let t: Vec<f64> = records.iter().map(|r| r.time).collect();
    let a: Vec<f64> = records.iter().map(|r| r.dilation).collect();
    monotonicity_check(&t, &a, MONOTONICITY_TOL)
}

pub fn gamma_monotonicity_check(records: &[DiagnosticsRecord]) -> MonotonicityReport {
    let t: Vec<f64> = records.iter().map(|r| r.time).collect();
    let g: Vec<f64> = records.iter().map(|r| r.gamma).collect();
    monotonicity_check(&t, &g, MONOTONICITY_TOL)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDecayReport {
    /// Trapezoid integral of the weighted `L^2` density up to each record.
    pub running: Vec<f64>,
    pub window_running: Vec<f64>,
    /// `2 ||psi_0||_2 (E_quad(psi_0))^{1/2}`.
    pub bound: f64,
}

impl LocalDecayReport {
    pub fn total(&self) -> f64 {
        self.running.last().copied().unwrap_or(0.0)
    }

    pub fn window_total(&self) -> f64 {
        self.window_running.last().copied().unwrap_or(0.0)
    }

    pub fn within_bound(&self) -> bool {
        self.running.iter().all(|&v| v <= self.bound)
    }
}

pub fn local_decay_accumulator(records: &[DiagnosticsRecord]) -> LocalDecayReport {
    let mut running = Vec::with_capacity(records.len());
    let mut window_running = Vec::with_capacity(records.len());
    let (mut a, mut b) = (0.0, 0.0);
    for (k, rec) in records.iter().enumerate() {
        if k > 0 {
            let prev = &records[k - 1];
            let dt = rec.time - prev.time;
            a += 0.5 * dt * (rec.local_decay + prev.local_decay);
            b += 0.5 * dt * (rec.window_nonlinear + prev.window_nonlinear);
        }
        running.push(a);
        window_running.push(b);
    }
    let bound = records
        .first()
        .map_or(0.0, |r| 2.0 * r.l2 * r.energy.quadratic().max(0.0).sqrt());
    LocalDecayReport {
        running,
        window_running,
        bound,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub slope_stderr: f64,
    /// Residual standard error of the log-log regression.
    pub residual_se: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;

/// Least-squares slope of `log value` against `log t` over `t0 <= t <= t1`.
pub fn decay_slope_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in series {
        if t >= window.0 && t <= window.1 {
            if !(v > 0.0) || !(t > 0.0) {
                return Err(Error::NonPositiveSample { time: t, value: v });
            }
            xs.push(t.ln());
            ys.push(v.ln());
        }
    }
    let n = xs.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: n,
        });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let residual_se = (ssr / (nf - 2.0)).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        slope_stderr: residual_se / sxx.sqrt(),
        residual_se,
        samples: n,
    })
}

/// Both sides of the positivity identity for `L(s) = -(2/s) g'' - g'''/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositivityValues {
    pub closed_form: f64,
    pub from_derivatives: f64,
}

pub fn positivity_expression(s: f64, sigma: f64) -> PositivityValues {
    let q = 1.0 + s * s;
    let closed_form = sigma * q.powf(-sigma - 2.0) * (5.0 + (3.0 - 2.0 * sigma) * s * s);
    // -(2/s) g''(s) = 4 sigma (1+s^2)^{-sigma-1}, also the s -> 0 limit.
    let first = 4.0 * sigma * q.powf(-sigma - 1.0);
    let g3 = -2.0 * sigma * q.powf(-sigma - 1.0) + 4.0 * sigma * (sigma + 1.0) * s * s * q.powf(-sigma - 2.0);
    let from_derivatives = if s == 0.0 {
        5.0 * sigma
    } else {
        let g2 = -2.0 * sigma * s * q.powf(-sigma - 1.0);
        -(2.0 / s) * g2 - 0.5 * g3
    };
    debug_assert!(first.is_finite());
    PositivityValues {
        closed_form,
        from_derivatives,
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the records as CSV, prefixed with `# ` comment lines.
pub fn write_csv<W: Write>(mut w: W, records: &[DiagnosticsRecord], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let cols = [
            r.time,
            r.l2,
            r.energy.kinetic,
            r.energy.potential,
            r.energy.nonlinear,
            r.dilation,
            r.gamma,
            r.local_decay,
            r.pseudoconformal.unwrap_or(f64::NAN),
            r.nonlinear_mass,
            r.potential_expectation,
            r.linf,
        ];
        let line: Vec<String> = cols.iter().map(|&v| fmt_value(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
