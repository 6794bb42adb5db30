//! Decay rates, asymptotic states and wave operators.
//!
//! `exp(itH)` for the linear generator `H = D^2 + V` is always realized by
//! running the split-step propagator with negated `dt`, never by forming an
//! operator exponential.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::diagnostics::decay_slope_fit;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::solver::{domain_guard, evolve, free_flow, step_plan, EvolutionConfig, Mode, NoObserver, Stepper};
use crate::state::{l2_norm, pow_half, wave_operator_threshold, ModelParams, WaveFunction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrichartzExponents {
    pub p: f64,
    pub q: f64,
    pub q_prime: f64,
    pub kappa: f64,
    pub k: f64,
    pub admissible_wave_op: bool,
    pub admissible_completeness: bool,
}

impl StrichartzExponents {
    /// Residuals of `1 + 1/k = 1/kappa + p/k`, `(1/2 - 1/q) kappa = 1` and
    /// `p q' = q`.
    pub fn identity_residuals(&self) -> [f64; 3] {
        [
            (1.0 + 1.0 / self.k) - (1.0 / self.kappa + 1.0 / (self.k / self.p)),
            (0.5 - 1.0 / self.q) * self.kappa - 1.0,
            self.p * self.q_prime - self.q,
        ]
    }
}

pub fn strichartz_exponents(p: f64) -> Result<StrichartzExponents> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid("p", format!("{p} must exceed 1")));
    }
    let q = p + 1.0;
    Ok(StrichartzExponents {
        p,
        q,
        q_prime: q / p,
        kappa: 2.0 * (p + 1.0) / (p - 1.0),
        k: 2.0 * (p - 1.0) * (p + 1.0) / (p + 3.0),
        admissible_wave_op: p > wave_operator_threshold(),
        admissible_completeness: p > 4.0,
    })
}

/// Discrete `L^q(dr_*)` norm; `q = inf` gives the max modulus.
pub fn lq_norm(psi: &WaveFunction, q: f64) -> f64 {
    let v = psi.values();
    let exec = Execution::default();
    if q.is_infinite() {
        return exec.max(v.len(), |i| v[i].norm());
    }
    (exec.sum(v.len(), |i| pow_half(v[i].norm_sqr(), q)) * psi.grid().spacing()).powf(1.0 / q)
}

/// `t^{1/2 - 1/q} ||exp(-itH) phi||_q / ||phi||_{q'}` at each sample time.
///
/// `Mode::Free` uses the exact Fourier flow; `Mode::LinearWithV` steps with
/// `dt`.
pub fn dispersive_ratio(phi: &WaveFunction, q: f64, t_samples: &[f64], mode: Mode, dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(q >= 2.0) {
        return Err(invalid("q", format!("{q} must be at least 2")));
    }
    if mode == Mode::Nonlinear {
        return Err(invalid("mode", "dispersive ratio is defined for the linear flows"));
    }
    if t_samples.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("t_samples", "must be nondecreasing"));
    }
    let q_dual = if q.is_infinite() { 1.0 } else { q / (q - 1.0) };
    let denom = lq_norm(phi, q_dual);
    let exponent = if q.is_infinite() { 0.5 } else { 0.5 - 1.0 / q };
    let linear = ModelParams::new(0.0, 3.0)?;
    let mut stepper = Stepper::new(Arc::clone(phi.grid()), &linear, Mode::LinearWithV, dt);
    let mut state = phi.clone().with_time(0.0);
    let mut out = Vec::with_capacity(t_samples.len());
    for &t in t_samples {
        let at_t = match mode {
            Mode::Free => free_flow(&phi.clone().with_time(0.0), t),
            _ => {
                let (n, h) = step_plan(state.time(), t, dt)?;
                if n > 0 && h != stepper.dt() {
                    stepper = Stepper::new(Arc::clone(phi.grid()), &linear, Mode::LinearWithV, h);
                }
                stepper.advance(&mut state, n);
                state.set_time(t);
                state.clone()
            }
        };
        out.push((t, lq_norm(&at_t, q) * t.powf(exponent) / denom));
    }
    Ok(out)
}

/// `t0, t0 r, t0 r^2, ...` with `count` entries.
pub fn geometric_schedule(t0: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| t0 * ratio.powi(i as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionConfig {
    pub dt: f64,
    /// Increasing times at which `exp(iTH) psi_T` is formed.
    pub schedule: Vec<f64>,
    pub override_domain_guard: bool,
}

#[derive(Clone, Debug)]
pub struct ScatteringResult {
    pub psi_plus: WaveFunction,
    /// `(T, ||phi_T - psi_plus||_2)` with `psi_plus` the last `phi_T`.
    pub residual_history: Vec<(f64, f64)>,
    /// `(T, ||phi_{T'} - phi_T||_2)` for consecutive schedule entries.
    pub cauchy: Vec<(f64, f64)>,
    /// `lambda int_T^{T'} ||r^{1-p} |psi_s|^{p-1} psi_s||_2 ds` over the same
    /// intervals, an upper bound on the matching Cauchy difference.
    pub duhamel_bounds: Vec<f64>,
    pub phi_plus: Option<WaveFunction>,
    pub warnings: Vec<String>,
}

impl ScatteringResult {
    pub fn write_history_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        write_residual_csv(&mut w, &self.residual_history, comments)
    }
}

pub fn write_residual_csv<W: Write>(mut w: W, history: &[(f64, f64)], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "T,residual")?;
    for (t, r) in history {
        writeln!(w, "{t:.16e},{r:.16e}")?;
    }
    Ok(())
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(invalid("schedule", "must not be empty"));
    }
    if schedule[0] <= 0.0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("schedule", "must be positive and strictly increasing"));
    }
    Ok(())
}

fn nonlinear_term_norm(psi: &WaveFunction, p: f64) -> f64 {
    let r = psi.grid().r();
    let v = psi.values();
    let e = 2.0 * p;
    (Execution::default().sum(v.len(), |i| r[i].powf(2.0 - 2.0 * p) * pow_half(v[i].norm_sqr(), e)) * psi.grid().spacing()).sqrt()
}

fn linear_evolve(psi: &WaveFunction, t_end: f64, dt: f64, p: f64) -> Result<WaveFunction> {
    let linear = ModelParams::new(0.0, p)?;
    let dt = if t_end < psi.time() { -dt.abs() } else { dt.abs() };
    evolve(psi, &linear, &EvolutionConfig::new(dt, t_end, Mode::LinearWithV), &mut NoObserver)
}

fn l2_distance(a: &[Complex64], b: &[Complex64], h: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * h).sqrt()
}

fn history(phis: &[WaveFunction], schedule: &[f64]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let last = phis.last().expect("non-empty schedule");
    let h = last.grid().spacing();
    let residual = schedule
        .iter()
        .zip(phis)
        .map(|(&t, phi)| (t, l2_distance(phi.values(), last.values(), h)))
        .collect();
    let cauchy = schedule
        .windows(2)
        .zip(phis.windows(2))
        .map(|(t, f)| (t[0], l2_distance(f[1].values(), f[0].values(), h)))
        .collect();
    (residual, cauchy)
}

/// Forms `phi_T = exp(iTH) psi_T` along the nonlinear trajectory from `psi0`.
pub fn extract_asymptotic_state(
    psi0: &WaveFunction,
    model: &ModelParams,
    cfg: &ExtractionConfig,
    exec: Execution,
) -> Result<ScatteringResult> {
    check_schedule(&cfg.schedule)?;
    let t_last = *cfg.schedule.last().unwrap();
    let mut warnings = Vec::new();
    if !model.completeness_valid() {
        warnings.push(format!("p = {} is outside the completeness range p > 4; exploratory run", model.p()));
    }
    let guard = domain_guard(psi0, t_last);
    if !guard.ok() {
        if cfg.override_domain_guard {
            warnings.push(format!("domain guard overridden: need {} but have {}", guard.required, guard.available));
        } else {
            guard.check()?;
        }
    }

    let psi0 = psi0.clone().with_time(0.0);
    let mut snapshots = Vec::with_capacity(cfg.schedule.len());
    let mut duhamel = Vec::with_capacity(cfg.schedule.len());
    let mut state = psi0.clone();
    let lambda = model.lambda();
    let p = model.p();
    for &t in &cfg.schedule {
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let step_cfg = EvolutionConfig::new(cfg.dt.abs(), t, Mode::Nonlinear);
        state = evolve(&state, model, &step_cfg, &mut |psi: &WaveFunction| {
            let value = lambda * nonlinear_term_norm(psi, p);
            if let Some((t0, v0)) = prev {
                integral += 0.5 * (psi.time() - t0) * (value + v0);
            }
            prev = Some((psi.time(), value));
            Ok(())
        })?;
        snapshots.push(state.clone());
        duhamel.push(integral);
    }
    // duhamel[i] covers [T_{i-1}, T_i]; align with cauchy intervals [T_i, T_{i+1}].
    let duhamel_bounds = duhamel.into_iter().skip(1).collect();

    let dt = cfg.dt;
    let phis: Vec<WaveFunction> = exec
        .map_owned(snapshots, |snap| linear_evolve(&snap, 0.0, dt, p).map(|f| f.with_time(0.0)))
        .into_iter()
        .collect::<Result<_>>()?;
    let (residual_history, cauchy) = history(&phis, &cfg.schedule);
    Ok(ScatteringResult {
        psi_plus: phis.last().unwrap().clone(),
        residual_history,
        cauchy,
        duhamel_bounds,
        phi_plus: None,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveOperatorConfig {
    pub dt: f64,
    /// Upper end of the truncated Dyson integral.
    pub t_max: f64,
    /// Quadrature nodes are `stride` steps apart.
    pub stride: usize,
    pub max_iters: usize,
    /// Convergence threshold on successive iterates in the `X_T` norm.
    pub tol: f64,
}

#[derive(Clone, Debug)]
pub struct WaveOperatorResult {
    pub psi0: WaveFunction,
    /// The converged iterate at `t = T`.
    pub psi_t: WaveFunction,
    /// `||psi^{(n+1)} - psi^{(n)}||_{X_T}` for each completed iteration.
    pub differences: Vec<f64>,
    /// `||psi^{(2)} - psi^{(1)}|| / ||psi^{(1)} - psi^{(0)}||`, when defined.
    pub contraction_ratio: Option<f64>,
    /// `||psi^{(0)}||_{X_T}`.
    pub free_norm: f64,
    /// Extrapolated `L^2` size of the Dyson integral beyond `t_max`.
    pub tail_estimate: f64,
    pub exponents: StrichartzExponents,
    pub warnings: Vec<String>,
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|j| if j == 0 || j + 1 == n { 0.5 * h } else { h })
        .collect()
}

fn x_norm(slices: &[Vec<Complex64>], weights: &[f64], ex: &StrichartzExponents, h: f64) -> f64 {
    let s: f64 = slices
        .iter()
        .zip(weights)
        .map(|(f, w)| {
            let lq = (f.iter().map(|z| pow_half(z.norm_sqr(), ex.q)).sum::<f64>() * h).powf(1.0 / ex.q);
            w * lq.powf(ex.k)
        })
        .sum();
    s.powf(1.0 / ex.k)
}

fn nonlinear_term(grid_r: &[f64], v: &[Complex64], lambda: f64, p: f64) -> Vec<Complex64> {
    v.iter()
        .zip(grid_r)
        .map(|(z, r)| z * (lambda * r.powf(1.0 - p) * pow_half(z.norm_sqr(), p - 1.0)))
        .collect()
}

/// Solves `psi_t = exp(-itH) psi_+ - i lambda int_t^inf exp(-i(t-s)H) N(psi_s) ds`
/// on `[T, t_max]` by Picard iteration and evolves the result back to `t = 0`.
pub fn construct_wave_operator(
    psi_plus: &WaveFunction,
    model: &ModelParams,
    t_start: f64,
    cfg: &WaveOperatorConfig,
) -> Result<WaveOperatorResult> {
    let ex = strichartz_exponents(model.p())?;
    let mut warnings = Vec::new();
    if !model.wave_op_valid() {
        warnings.push(format!("p = {} is at or below the wave-operator threshold; exploratory run", model.p()));
    }
    if !(t_start >= 0.0 && cfg.t_max > t_start) {
        return Err(invalid("t_max", "must exceed T >= 0"));
    }
    if cfg.stride == 0 || cfg.max_iters == 0 {
        return Err(invalid("stride", "stride and max_iters must be positive"));
    }
    let grid = Arc::clone(psi_plus.grid());
    let h = grid.spacing();
    let p = model.p();
    let lambda = model.lambda();
    let dt = cfg.dt.abs();
    let delta = cfg.stride as f64 * dt;
    let nodes = ((cfg.t_max - t_start) / delta).round() as usize + 1;
    if nodes < 2 {
        return Err(invalid("t_max", "window holds fewer than two quadrature nodes"));
    }
    let times: Vec<f64> = (0..nodes).map(|j| t_start + j as f64 * delta).collect();
    let weights = trapezoid_weights(nodes, delta);
    let linear = ModelParams::new(0.0, p)?;

    // Free term on the nodes.
    let mut free = Vec::with_capacity(nodes);
    let mut cur = linear_evolve(&psi_plus.clone().with_time(0.0), t_start, dt, p)?;
    let mut fwd = Stepper::new(Arc::clone(&grid), &linear, Mode::LinearWithV, dt);
    free.push(cur.values().to_vec());
    for _ in 1..nodes {
        fwd.advance(&mut cur, cfg.stride);
        free.push(cur.values().to_vec());
    }

    let r = grid.r();
    let tail_estimate = {
        let series: Vec<(f64, f64)> = times
            .iter()
            .zip(&free)
            .skip(nodes / 2)
            .map(|(&t, f)| {
                let n = nonlinear_term(r, f, lambda, p);
                (t, (n.iter().map(|z| z.norm_sqr()).sum::<f64>() * h).sqrt())
            })
            .collect();
        if series.iter().all(|&(_, v)| v == 0.0) {
            0.0
        } else {
            let fit = decay_slope_fit(&series, (times[nodes / 2], cfg.t_max))?;
            if fit.slope >= -1.0 {
                f64::INFINITY
            } else {
                let a = fit.intercept.exp();
                a * cfg.t_max.powf(1.0 + fit.slope) / (-1.0 - fit.slope)
            }
        }
    };
    let tail_limit = cfg.tol / 10.0;
    if tail_estimate > tail_limit {
        return Err(Error::TailTooLarge {
            tail: tail_estimate,
            limit: tail_limit,
        });
    }

    let free_norm = x_norm(&free, &weights, &ex, h);
    let mut back = Stepper::new(Arc::clone(&grid), &linear, Mode::LinearWithV, -dt);
    let mut iterate = free.clone();
    let mut differences = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        // Backward recursion for the Dyson integral, trapezoid in s.
        let mut next = vec![Vec::new(); nodes];
        let mut z = WaveFunction::zeros(Arc::clone(&grid));
        let mut n_next = nonlinear_term(r, &iterate[nodes - 1], lambda, p);
        let i = Complex64::i();
        next[nodes - 1] = free[nodes - 1].clone();
        for j in (0..nodes - 1).rev() {
            for (zv, nv) in z.values_mut().iter_mut().zip(&n_next) {
                *zv += nv * (0.5 * delta);
            }
            back.advance(&mut z, cfg.stride);
            let n_j = nonlinear_term(r, &iterate[j], lambda, p);
            for (zv, nv) in z.values_mut().iter_mut().zip(&n_j) {
                *zv += nv * (0.5 * delta);
            }
            next[j] = free[j].iter().zip(z.values()).map(|(f, zv)| f - i * zv).collect();
            n_next = n_j;
        }
        let diff_slices: Vec<Vec<Complex64>> = next
            .iter()
            .zip(&iterate)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let diff = x_norm(&diff_slices, &weights, &ex, h);
        if !diff.is_finite() {
            return Err(Error::NonFinite {
                observable: "wave operator iterate",
                time: t_start,
            });
        }
        if let Some(&prev) = differences.last() {
            if diff > prev && prev > 0.0 {
                return Err(Error::NonContraction { ratio: diff / prev });
            }
        }
        differences.push(diff);
        iterate = next;
        // Two differences are always formed so the contraction ratio is measured.
        if diff == 0.0 || (diff < cfg.tol && differences.len() >= 2) {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("fixed point not reached in {} iterations", cfg.max_iters));
    }
    let contraction_ratio = (differences.len() >= 2 && differences[0] > 0.0).then(|| differences[1] / differences[0]);

    let psi_t = WaveFunction::new(Arc::clone(&grid), iterate.swap_remove(0), t_start)?;
    let psi0 = evolve(&psi_t, model, &EvolutionConfig::new(-dt, 0.0, Mode::Nonlinear), &mut NoObserver)?.with_time(0.0);
    Ok(WaveOperatorResult {
        psi0,
        psi_t,
        differences,
        contraction_ratio,
        free_norm,
        tail_estimate,
        exponents: ex,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct FreeChannelResult {
    pub phi_plus: WaveFunction,
    pub residual_history: Vec<(f64, f64)>,
    pub cauchy: Vec<(f64, f64)>,
}

/// `phi_T = exp(iT D^2) exp(-iTH) psi_+` along `schedule`; the last one is
/// returned as `phi_+`.
pub fn free_channel_comparison(
    psi_plus: &WaveFunction,
    schedule: &[f64],
    dt: f64,
    override_domain_guard: bool,
) -> Result<FreeChannelResult> {
    check_schedule(schedule)?;
    let guard = domain_guard(psi_plus, *schedule.last().unwrap());
    if !override_domain_guard {
        guard.check()?;
    }
    let linear = ModelParams::new(0.0, 3.0)?;
    let mut state = psi_plus.clone().with_time(0.0);
    let mut phis = Vec::with_capacity(schedule.len());
    for &t in schedule {
        state = evolve(&state, &linear, &EvolutionConfig::new(dt.abs(), t, Mode::LinearWithV), &mut NoObserver)?;
        phis.push(free_flow(&state, -t).with_time(0.0));
    }
    let (residual_history, cauchy) = history(&phis, schedule);
    Ok(FreeChannelResult {
        phi_plus: phis.pop().unwrap(),
        residual_history,
        cauchy,
    })
}

/// `| ||a||_2 - ||b||_2 |`.
pub fn norm_gap(a: &WaveFunction, b: &WaveFunction) -> f64 {
    (l2_norm(a) - l2_norm(b)).abs()
}
