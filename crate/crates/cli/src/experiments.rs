use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tortoise_core::diagnostics::{
    commutator_identity_check, decay_slope_fit, dilation_monotonicity_check, gamma_monotonicity_check,
    local_decay_accumulator, monotonicity_check, positivity_expression, run_with_diagnostics, write_csv, DiagnosticsRecord, Trajectory,
    MonotonicityReport, WeightConfig,
};
use tortoise_core::geometry::{Grid, SchwarzschildParams};
use tortoise_core::scattering::{
    construct_wave_operator, dispersive_ratio, extract_asymptotic_state, strichartz_exponents, write_residual_csv,
    ExtractionConfig, WaveOperatorConfig,
};
use tortoise_core::solver::{domain_guard, Absorber, EvolutionConfig, Mode};
use tortoise_core::state::{energy, wave_operator_threshold, GaussianSpec, ModelParams, WaveFunction};
use tortoise_core::{Error, Execution};

use crate::config::{Experiment, ExperimentConfig, InitialData, ModeChoice};
use crate::report::{Check, Report};

/// Failure that stops a run before a report exists.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical guard: {0}")]
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::DomainGuard { .. }
            | Error::NonFinite { .. }
            | Error::NonContraction { .. }
            | Error::TailTooLarge { .. }
            | Error::NoConvergence { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Config(format!("{}: {e}", path.display()))
}

/// Everything an experiment needs, built once from the config.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub grid: Arc<Grid>,
    pub model: ModelParams,
    pub psi0: WaveFunction,
    pub dt: f64,
    pub comments: Vec<String>,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, RunError> {
        let params = SchwarzschildParams::new(cfg.mass)?;
        let grid = Arc::new(Grid::new(params, cfg.grid_n, cfg.r_star_min, cfg.r_star_max)?);
        let model = ModelParams::new(cfg.lambda, cfg.p)?;
        let psi0 = match &cfg.initial_data {
            InitialData::Gaussian {
                center,
                width,
                momentum,
                amplitude,
            } => WaveFunction::gaussian(
                Arc::clone(&grid),
                GaussianSpec {
                    center: *center,
                    width: *width,
                    momentum: *momentum,
                    amplitude: *amplitude,
                },
            )?,
            InitialData::File(path) => {
                let f = File::open(path).map_err(|e| io_error(path, e))?;
                WaveFunction::read_text(Arc::clone(&grid), BufReader::new(f))?.with_time(0.0)
            }
        };
        let dt = cfg.dt.unwrap_or_else(|| grid.nyquist_dt());
        let comments = cfg.resolved_lines();
        Ok(Setup {
            cfg,
            grid,
            model,
            psi0,
            dt,
            comments,
        })
    }

    fn mode(&self) -> Mode {
        match self.cfg.mode {
            ModeChoice::Nonlinear => Mode::Nonlinear,
            ModeChoice::LinearWithV => Mode::LinearWithV,
            ModeChoice::Free => Mode::Free,
        }
    }

    /// Longest time any stage of the experiment propagates for.
    fn horizon_time(&self) -> f64 {
        match self.cfg.experiment {
            Experiment::Completeness => self.cfg.schedule.last().copied().unwrap_or(0.0),
            Experiment::WaveOperator => self
                .cfg
                .wave_op_t_max
                .max(self.cfg.schedule.last().copied().unwrap_or(0.0)),
            Experiment::IdentitySuite => 0.0,
            _ => self.cfg.t_end,
        }
    }

    /// Guard and regime checks shared by `run` and `validate`.
    pub fn preflight(&self) -> Result<Vec<String>, RunError> {
        let mut flags = Vec::new();
        let guard = domain_guard(&self.psi0, self.horizon_time());
        if !guard.ok() {
            if self.cfg.override_domain_guard {
                flags.push(format!(
                    "domain guard overridden: needs length {:.3}, grid has {:.3}",
                    guard.required, guard.available
                ));
            } else {
                guard.check()?;
            }
        }
        let wrap = EvolutionConfig::new(self.dt, self.cfg.t_end, self.mode());
        if !wrap.phase_wrap_ok(&self.grid) {
            flags.push(format!(
                "kinetic phase per step {:.3} exceeds pi at the Nyquist mode",
                wrap.nyquist_phase(&self.grid)
            ));
        }
        if self.cfg.absorber.is_some() {
            flags.push("absorbing layer active: conservation checks do not apply".into());
        }
        let p = self.model.p();
        let regime = match self.cfg.experiment {
            Experiment::Pseudoconformal if !self.model.pseudoconformal_valid() => {
                Some(format!("p = {p} <= 3: outside the pseudoconformal regime"))
            }
            Experiment::Completeness if !self.model.completeness_valid() => {
                Some(format!("p = {p} <= 4: outside the completeness regime"))
            }
            Experiment::WaveOperator if !self.model.wave_op_valid() => Some(format!(
                "p = {p} <= {:.6}: outside the wave-operator regime",
                wave_operator_threshold()
            )),
            _ => None,
        };
        flags.extend(regime.map(|r| format!("exploratory: {r}")));
        Ok(flags)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.path(name);
        File::create(&path).map(BufWriter::new).map_err(|e| io_error(&path, e))
    }

    fn write_wave(&self, name: &str, psi: &WaveFunction) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        for c in &self.comments {
            writeln!(w, "# {c}").map_err(|e| io_error(&self.path(name), e))?;
        }
        psi.write_text(&mut w)?;
        w.flush().map_err(|e| io_error(&self.path(name), e))
    }

    fn write_records(&self, records: &[DiagnosticsRecord]) -> Result<(), RunError> {
        let mut w = self.create("diagnostics.csv")?;
        write_csv(&mut w, records, &self.comments)?;
        w.flush().map_err(|e| io_error(&self.path("diagnostics.csv"), e))
    }

    fn write_pairs(&self, name: &str, header: &str, rows: &[(f64, f64)]) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let res: std::io::Result<()> = (|| {
            for c in &self.comments {
                writeln!(w, "# {c}")?;
            }
            writeln!(w, "{header}")?;
            for (a, b) in rows {
                writeln!(w, "{a:.16e},{b:.16e}")?;
            }
            w.flush()
        })();
        res.map_err(|e| io_error(&self.path(name), e))
    }

    fn write_residuals(&self, rows: &[(f64, f64)]) -> Result<(), RunError> {
        let mut w = self.create("residuals.csv")?;
        write_residual_csv(&mut w, rows, &self.comments)?;
        w.flush().map_err(|e| io_error(&self.path("residuals.csv"), e))
    }

    fn trajectory(&self) -> Result<Trajectory, RunError> {
        let every = ((self.cfg.record_interval / self.dt).round() as usize).max(1);
        let mut cfg = EvolutionConfig::new(self.dt, self.cfg.t_end, self.mode()).record_every(every);
        cfg.absorber = self.cfg.absorber.map(|(width, strength)| Absorber { width, strength });
        let weights = WeightConfig::with_beta(self.cfg.sigma, self.cfg.beta, self.cfg.window)?;
        let run = run_with_diagnostics(&self.psi0, &self.model, &cfg, &weights)?;
        if let Some(bad) = run.records.iter().find(|r| !record_finite(r)) {
            return Err(RunError::Numerical(format!("non-finite observable at t = {}", bad.time)));
        }
        self.write_records(&run.records)?;
        self.write_wave("psi_final.txt", &run.final_state)?;
        Ok(run)
    }
}

fn record_finite(r: &DiagnosticsRecord) -> bool {
    [
        r.l2,
        r.energy.total(),
        r.dilation,
        r.gamma,
        r.local_decay,
        r.nonlinear_mass,
        r.potential_expectation,
        r.linf,
    ]
    .iter()
    .all(|v| v.is_finite())
        && r.pseudoconformal.is_none_or(f64::is_finite)
}

/// `|a - b| / |b|`, or the absolute change when `b` is zero.
fn relative(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        (a - b).abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn run(setup: &Setup) -> Result<Report, RunError> {
    let flags = setup.preflight()?;
    std::fs::create_dir_all(&setup.cfg.output_dir).map_err(|e| io_error(&setup.cfg.output_dir, e))?;
    let checks = match setup.cfg.experiment {
        Experiment::Conservation => conservation(setup)?,
        Experiment::Monotonicity => monotonicity(setup)?,
        Experiment::LocalDecay => local_decay(setup)?,
        Experiment::Pseudoconformal => pseudoconformal(setup)?,
        Experiment::LinfDecay => linf_decay(setup)?,
        Experiment::Dispersive => dispersive(setup)?,
        Experiment::Completeness => completeness(setup)?,
        Experiment::WaveOperator => wave_operator(setup)?,
        Experiment::IdentitySuite => identity_suite(setup)?,
    };
    Ok(Report {
        experiment: setup.cfg.experiment.name().to_string(),
        comments: setup.comments.clone(),
        flags,
        checks,
    })
}

fn conservation(s: &Setup) -> Result<Vec<Check>, RunError> {
    let run = s.trajectory()?;
    let recs = &run.records;
    let n0 = recs[0].l2;
    if s.cfg.absorber.is_some() {
        let rep = monotonicity_check(
            &recs.iter().map(|r| r.time).collect::<Vec<_>>(),
            &recs.iter().map(|r| -r.l2).collect::<Vec<_>>(),
            1e-12,
        );
        return Ok(vec![Check::new(
            "l2 nonincreasing under absorption",
            format!("worst increase {}", sci(-rep.worst_decrease)),
            "<= 1e-12 relative",
            rep.ok,
        )]);
    }
    let l2_drift = recs.iter().map(|r| relative(r.l2, n0)).fold(0.0, f64::max);
    let e0 = energy(&s.psi0, &s.model).total();
    let e_drift = recs.iter().map(|r| relative(r.energy.total(), e0)).fold(0.0, f64::max);
    Ok(vec![
        Check::new("relative l2 drift", sci(l2_drift), "< 1e-9", l2_drift < 1e-9),
        Check::new("relative energy drift", sci(e_drift), "< 1e-5", e_drift < 1e-5),
    ])
}

fn monotonicity(s: &Setup) -> Result<Vec<Check>, RunError> {
    let run = s.trajectory()?;
    let d = dilation_monotonicity_check(&run.records);
    let g = gamma_monotonicity_check(&run.records);
    let describe = |r: &MonotonicityReport| match r.first_violation {
        Some(t) => format!("first violation at t = {t}, worst decrease {}", sci(r.worst_decrease)),
        None => format!("worst decrease {}", sci(r.worst_decrease)),
    };
    Ok(vec![
        Check::new(
            "dilation expectation nondecreasing",
            describe(&d),
            format!("decrease <= {} relative", sci(d.tolerance)),
            d.ok,
        ),
        Check::new(
            "gamma expectation nondecreasing",
            describe(&g),
            format!("decrease <= {} relative", sci(g.tolerance)),
            g.ok,
        ),
    ])
}

fn local_decay(s: &Setup) -> Result<Vec<Check>, RunError> {
    let run = s.trajectory()?;
    let recs = &run.records;
    let rep = local_decay_accumulator(recs);
    let max_running = rep.running.iter().copied().fold(0.0, f64::max);
    let half = recs
        .iter()
        .position(|r| r.time >= 0.5 * s.cfg.t_end - 1e-9)
        .unwrap_or(0);
    let i_half = rep.running[half];
    let i_end = rep.total();
    let change = relative(i_end, i_half);
    Ok(vec![
        Check::new(
            "running local decay integral within bound",
            format!("{} vs bound {}", sci(max_running), sci(rep.bound)),
            "<= bound",
            rep.within_bound(),
        ),
        Check::new(
            "integral change over second half",
            format!("{:.4}% (I = {} at t = {}, {} at t = {})", 100.0 * change, sci(i_half), recs[half].time, sci(i_end), s.cfg.t_end),
            "< 10%",
            change < 0.10,
        ),
    ])
}

fn fit_window(s: &Setup, lo: f64, hi: f64) -> (f64, f64) {
    (s.cfg.fit_t_min.unwrap_or(lo), s.cfg.fit_t_max.unwrap_or(hi))
}

fn slope_check(name: &str, series: &[(f64, f64)], window: (f64, f64), band: (f64, f64)) -> Check {
    let band_text = format!("[{}, {}]", band.0, band.1);
    match decay_slope_fit(series, window) {
        Ok(fit) => Check::new(
            name,
            format!(
                "{:.4} +- {:.4} over t in [{}, {}] ({} samples)",
                fit.slope, fit.slope_stderr, window.0, window.1, fit.samples
            ),
            band_text,
            (band.0..=band.1).contains(&fit.slope),
        ),
        Err(e) => Check::new(name, format!("no fit: {e}"), band_text, false),
    }
}

fn pseudoconformal(s: &Setup) -> Result<Vec<Check>, RunError> {
    let run = s.trajectory()?;
    let series: Vec<(f64, f64)> = run
        .records
        .iter()
        .filter_map(|r| r.pseudoconformal.map(|v| (r.time, v)))
        .collect();
    let window = fit_window(s, 1.0, s.cfg.t_end.min(50.0));
    Ok(vec![slope_check("pseudoconformal log-log slope", &series, window, (-1.2, -0.8))])
}

fn linf_decay(s: &Setup) -> Result<Vec<Check>, RunError> {
    let run = s.trajectory()?;
    let series: Vec<(f64, f64)> = run.records.iter().map(|r| (r.time, r.linf)).collect();
    let window = fit_window(s, 0.125 * s.cfg.t_end, s.cfg.t_end);
    Ok(vec![slope_check("linf log-log slope", &series, window, (-0.35, -0.15))])
}

fn spread(series: &[(f64, f64)]) -> f64 {
    let max = series.iter().map(|x| x.1).fold(f64::MIN, f64::max);
    let min = series.iter().map(|x| x.1).fold(f64::MAX, f64::min);
    max / min
}

fn dispersive(s: &Setup) -> Result<Vec<Check>, RunError> {
    let last = s.cfg.t_end.floor() as usize;
    if last < 1 {
        return Err(RunError::Config("dispersive needs t_end >= 1".into()));
    }
    let times: Vec<f64> = (1..=last).map(|t| t as f64).collect();
    let with_v = dispersive_ratio(&s.psi0, f64::INFINITY, &times, Mode::LinearWithV, s.dt)?;
    let free = dispersive_ratio(&s.psi0, f64::INFINITY, &times, Mode::Free, s.dt)?;
    let rows: Vec<(f64, f64)> = with_v.clone();
    s.write_pairs("dispersive.csv", "t,ratio", &rows)?;
    s.write_pairs("dispersive_free.csv", "t,ratio", &free)?;
    let sv = spread(&with_v);
    let sf = spread(&free) - 1.0;
    Ok(vec![
        Check::new("linear_with_V ratio max/min", format!("{sv:.6}"), "< 3", sv < 3.0),
        Check::new("free ratio variation", format!("{:.4}%", 100.0 * sf), "< 1%", sf < 0.01),
    ])
}

fn completeness(s: &Setup) -> Result<Vec<Check>, RunError> {
    let cfg = ExtractionConfig {
        dt: s.dt,
        schedule: s.cfg.schedule.clone(),
        override_domain_guard: s.cfg.override_domain_guard,
    };
    let res = extract_asymptotic_state(&s.psi0, &s.model, &cfg, Execution::default())?;
    s.write_wave("psi_plus.txt", &res.psi_plus)?;
    s.write_residuals(&res.residual_history)?;
    s.write_pairs("cauchy.csv", "T,difference", &res.cauchy)?;
    let mut checks = Vec::new();
    if s.model.lambda() == 0.0 {
        let worst = res.cauchy.iter().map(|c| c.1).fold(0.0, f64::max);
        checks.push(Check::new("linear control cauchy differences", sci(worst), "< 1e-10", worst < 1e-10));
    } else {
        let factors: Vec<f64> = res.cauchy.windows(2).map(|w| w[0].1 / w[1].1).collect();
        let shown: Vec<String> = factors.iter().map(|f| format!("{f:.4}")).collect();
        checks.push(Check::new(
            "cauchy difference reduction per doubling",
            if shown.is_empty() { "n/a (schedule too short)".into() } else { shown.join(", ") },
            ">= 2 each",
            !factors.is_empty() && factors.iter().all(|&f| f >= 2.0),
        ));
    }
    Ok(checks)
}

fn wave_operator(s: &Setup) -> Result<Vec<Check>, RunError> {
    let wcfg = WaveOperatorConfig {
        dt: s.dt,
        t_max: s.cfg.wave_op_t_max,
        stride: s.cfg.wave_op_stride,
        max_iters: s.cfg.wave_op_max_iters,
        tol: s.cfg.wave_op_tol,
    };
    let psi_plus = s.psi0.clone();
    let built = construct_wave_operator(&psi_plus, &s.model, s.cfg.wave_op_t, &wcfg)?;
    s.write_wave("psi_final.txt", &built.psi0)?;
    let ecfg = ExtractionConfig {
        dt: s.dt,
        schedule: s.cfg.schedule.clone(),
        override_domain_guard: s.cfg.override_domain_guard,
    };
    let back = extract_asymptotic_state(&built.psi0, &s.model, &ecfg, Execution::default())?;
    s.write_wave("psi_plus.txt", &back.psi_plus)?;
    s.write_residuals(&back.residual_history)?;
    let err = back.psi_plus.distance(&psi_plus);
    let ratio = built.contraction_ratio.unwrap_or(f64::NAN);
    Ok(vec![
        Check::new("round-trip l2 error", sci(err), "< 1e-3", err < 1e-3),
        Check::new(
            "picard contraction ratio",
            format!("{} after {} iterations, tail {}", sci(ratio), built.differences.len(), sci(built.tail_estimate)),
            "< 1",
            ratio < 1.0,
        ),
    ])
}

/// Smooth random data: a few Gaussian packets with random placement and phase.
fn random_packets(grid: &Arc<Grid>, rng: &mut ChaCha8Rng) -> Result<WaveFunction, RunError> {
    let span = grid.length();
    let mid = 0.5 * (grid.r_star_min() + grid.r_star_max());
    let packets: Vec<(f64, f64, f64, Complex64)> = (0..3)
        .map(|_| {
            let c = mid + span * rng.random_range(-0.1..0.1);
            let w = rng.random_range(1.0..2.0);
            let k = rng.random_range(-1.0..1.0);
            let a = Complex64::from_polar(rng.random_range(0.3..1.2), rng.random_range(0.0..std::f64::consts::TAU));
            (c, w, k, a)
        })
        .collect();
    Ok(WaveFunction::from_fn(Arc::clone(grid), |x| {
        packets
            .iter()
            .map(|&(c, w, k, a)| {
                let u = (x - c) / w;
                a * (-0.5 * u * u).exp() * Complex64::from_polar(1.0, k * x)
            })
            .sum()
    })?)
}

fn identity_suite(s: &Setup) -> Result<Vec<Check>, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    let mut op: f64 = 0.0;
    let mut chain: f64 = 0.0;
    let mut data = vec![s.psi0.clone()];
    for _ in 0..4 {
        data.push(random_packets(&s.grid, &mut rng)?);
    }
    let mut rows = Vec::with_capacity(data.len());
    for (i, psi) in data.iter().enumerate() {
        let r = commutator_identity_check(psi, s.grid.params(), &s.model);
        op = op.max(r.operator);
        chain = chain.max(r.chain_rule);
        rows.push((i as f64, r.operator.max(r.chain_rule)));
    }
    s.write_pairs("identity_residuals.csv", "sample,residual", &rows)?;

    let mut mismatch: f64 = 0.0;
    let mut positive = true;
    for sigma in [0.6, s.cfg.sigma, 1.4] {
        for k in 0..=20_000 {
            let v = positivity_expression(-100.0 + 0.01 * k as f64, sigma);
            positive &= v.closed_form > 0.0 && v.from_derivatives > 0.0;
            mismatch = mismatch.max(relative(v.from_derivatives, v.closed_form));
        }
    }

    let mut exponent: f64 = 0.0;
    for p in [3.6, 4.0, s.model.p(), 7.0] {
        for r in strichartz_exponents(p)?.identity_residuals() {
            exponent = exponent.max(r.abs());
        }
    }
    let th = wave_operator_threshold();
    let flags = !strichartz_exponents(th)?.admissible_wave_op
        && strichartz_exponents(th + 1e-12)?.admissible_wave_op
        && !strichartz_exponents(4.0)?.admissible_completeness
        && strichartz_exponents(4.0 + 1e-12)?.admissible_completeness;

    Ok(vec![
        Check::new("potential commutator residual", sci(op), "< 1e-6", op < 1e-6),
        Check::new("nonlinear chain-rule residual", sci(chain), "< 1e-6", chain < 1e-6),
        Check::new(
            "positivity expression mismatch",
            format!("{} (all positive: {positive})", sci(mismatch)),
            "< 1e-9 and positive",
            positive && mismatch < 1e-9,
        ),
        Check::new("exponent identity residual", sci(exponent), "< 1e-12", exponent < 1e-12),
        Check::new("admissibility thresholds strict", flags.to_string(), "true", flags),
    ])
}

pub fn validate(setup: &Setup) -> Result<Vec<String>, RunError> {
    if matches!(setup.cfg.experiment, Experiment::Completeness | Experiment::WaveOperator) {
        let sched = &setup.cfg.schedule;
        if sched.is_empty() || sched[0] <= 0.0 || sched.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RunError::Config("schedule must be positive and strictly increasing".into()));
        }
    }
    WeightConfig::with_beta(setup.cfg.sigma, setup.cfg.beta, setup.cfg.window)?;
    setup.preflight()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let guard: RunError = Error::DomainGuard { required: 2.0, available: 1.0 }.into();
        assert_eq!(guard.exit_code(), 3);
        let nan: RunError = Error::NonFinite { observable: "psi", time: 1.0 }.into();
        assert_eq!(nan.exit_code(), 3);
        let bad: RunError = Error::InvalidParameter { name: "p", reason: "x".into() }.into();
        assert_eq!(bad.exit_code(), 2);
    }

    #[test]
    fn relative_handles_zero_reference() {
        assert_eq!(relative(0.0, 0.0), 0.0);
        assert_eq!(relative(3.0, 2.0), 0.5);
    }

    #[test]
    fn random_packets_depend_only_on_seed() {
        let g = Arc::new(Grid::new(SchwarzschildParams::new(1.0).unwrap(), 256, -20.0, 20.0).unwrap());
        let a = random_packets(&g, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_packets(&g, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let c = random_packets(&g, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }
}
