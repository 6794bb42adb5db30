//! Wave functions on the tortoise lattice and the quantities that are
//! conserved along the flow.
//!
//! The reduced unknown is `psi = r u`, where `u` is the radial solution on the
//! Schwarzschild exterior. The `4 pi` from integrating over the sphere is
//! dropped everywhere.

use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::geometry::Grid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    lambda: f64,
    p: f64,
}

/// `(3 + sqrt 17) / 2`, the exponent above which wave operators are constructed.
pub fn wave_operator_threshold() -> f64 {
    (3.0 + 17f64.sqrt()) / 2.0
}

impl ModelParams {
    /// `lambda = 0` is accepted as the linear control problem.
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be >= 0 (repulsive), got {lambda}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", format!("must be > 1, got {p}")));
        }
        Ok(ModelParams { lambda, p })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ModelParams::new(lambda, self.p)
    }

    pub fn pseudoconformal_valid(&self) -> bool {
        self.p > 3.0
    }

    pub fn wave_op_valid(&self) -> bool {
        self.p > wave_operator_threshold()
    }

    pub fn completeness_valid(&self) -> bool {
        self.p > 4.0
    }
}

/// `x^(e/2)` for `x = |psi|^2`, with an integer fast path.
#[inline]
pub(crate) fn pow_half(norm_sqr: f64, e: f64) -> f64 {
    let half = 0.5 * e;
    if half.fract() == 0.0 && half.abs() < 64.0 {
        norm_sqr.powi(half as i32)
    } else {
        norm_sqr.powf(half)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
    pub amplitude: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            center: 0.0,
            width: 1.0,
            momentum: 0.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WaveFunction {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
    time: f64,
}

impl WaveFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>, time: f64) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} points",
                values.len(),
                grid.n()
            )));
        }
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("values", format!("non-finite sample at index {i}")));
        }
        Ok(WaveFunction { grid, values, time })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n();
        WaveFunction {
            grid,
            values: vec![Complex64::new(0.0, 0.0); n],
            time: 0.0,
        }
    }

    pub fn from_fn<F: Fn(f64) -> Complex64>(grid: Arc<Grid>, f: F) -> Result<Self> {
        let values = grid.r_star().iter().map(|&x| f(x)).collect();
        WaveFunction::new(grid, values, 0.0)
    }

    /// `A exp(-(x - c)^2 / (2 w^2) + i k x)`.
    pub fn gaussian(grid: Arc<Grid>, spec: GaussianSpec) -> Result<Self> {
        if !(spec.width > 0.0) {
            return Err(invalid("initial_data.width", "must be positive"));
        }
        let GaussianSpec {
            center,
            width,
            momentum,
            amplitude,
        } = spec;
        WaveFunction::from_fn(grid, |x| {
            let s = (x - center) / width;
            Complex64::from_polar(amplitude * (-0.5 * s * s).exp(), momentum * x)
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        WaveFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|z| z * c).collect(),
            time: self.time,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `||self - other||_2`; both must live on the same lattice.
    pub fn distance(&self, other: &WaveFunction) -> f64 {
        let h = self.grid.spacing();
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        (s * h).sqrt()
    }

    /// Writes the header `t=<time> n=<n> M=<M>` followed by `r_star real imag` rows.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t={:.16e} n={} M={:.16e}",
            self.time,
            self.grid.n(),
            self.grid.params().mass()
        )?;
        for (x, z) in self.grid.r_star().iter().zip(&self.values) {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", x, z.re, z.im)?;
        }
        Ok(())
    }

    /// Reads the text format back onto `grid`. Lines starting with `#` are skipped.
    pub fn read_text<R: BufRead>(grid: Arc<Grid>, r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .map(|l| l.map_err(Error::from))
            .filter(|l| l.as_ref().map(|s| !s.trim_start().starts_with('#') && !s.trim().is_empty()).unwrap_or(true));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing header line".into()))??;
        let mut time = None;
        let mut n = None;
        let mut mass = None;
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token `{tok}`")))?;
            match k {
                "t" => time = Some(parse_f64(v)?),
                "n" => n = Some(v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                "M" => mass = Some(parse_f64(v)?),
                _ => return Err(Error::Parse(format!("unknown header key `{k}`"))),
            }
        }
        let (time, n, mass) = match (time, n, mass) {
            (Some(t), Some(n), Some(m)) => (t, n, m),
            _ => return Err(Error::Parse("header needs t, n and M".into())),
        };
        if n != grid.n() {
            return Err(Error::GridMismatch(format!("file has n={n}, grid has {}", grid.n())));
        }
        if (mass - grid.params().mass()).abs() > 1e-12 * mass.abs().max(1.0) {
            return Err(Error::GridMismatch(format!(
                "file has M={mass}, grid has {}",
                grid.params().mass()
            )));
        }
        let mut values = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("row {i}: expected 3 columns")));
            }
            if i >= n {
                return Err(Error::Parse("more rows than n".into()));
            }
            let x = parse_f64(cols[0])?;
            let node = grid.r_star()[i];
            if (x - node).abs() > 1e-9 * node.abs().max(1.0) {
                return Err(Error::GridMismatch(format!("row {i}: r_star {x} vs grid node {node}")));
            }
            values.push(Complex64::new(parse_f64(cols[1])?, parse_f64(cols[2])?));
        }
        if values.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, found {}", values.len())));
        }
        WaveFunction::new(grid, values, time)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

pub fn l2_norm_sqr(psi: &WaveFunction) -> f64 {
    let v = psi.values();
    Execution::default().sum(v.len(), |i| v[i].norm_sqr()) * psi.grid().spacing()
}

/// Rectangle-rule `L^2(dr_*)` norm on the periodic lattice.
pub fn l2_norm(psi: &WaveFunction) -> f64 {
    l2_norm_sqr(psi).sqrt()
}

/// Energy split into its three nonnegative summands.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyParts {
    /// `int |d psi|^2`
    pub kinetic: f64,
    /// `int V |psi|^2`
    pub potential: f64,
    /// `2 lambda / (p + 1) int r^{-(p-1)} |psi|^{p+1}`
    pub nonlinear: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential + self.nonlinear
    }

    /// The quadratic (linear-flow) energy `<psi, (D^2 + V) psi>`.
    pub fn quadratic(&self) -> f64 {
        self.kinetic + self.potential
    }
}

pub fn energy(psi: &WaveFunction, model: &ModelParams) -> EnergyParts {
    let grid = psi.grid();
    let h = grid.spacing();
    let v = psi.values();
    let exec = Execution::default();
    let kinetic = grid.spectral().kinetic_form(v);
    let pot = grid.potential();
    let potential = exec.sum(v.len(), |i| pot[i] * v[i].norm_sqr()) * h;
    let nonlinear = if model.lambda() == 0.0 {
        0.0
    } else {
        2.0 * model.lambda() / (model.p() + 1.0) * nonlinear_mass(psi, model.p())
    };
    EnergyParts {
        kinetic,
        potential,
        nonlinear,
    }
}

/// `int r^{-(p-1)} |psi|^{p+1} dr_*`.
pub fn nonlinear_mass(psi: &WaveFunction, p: f64) -> f64 {
    let grid = psi.grid();
    let r = grid.r();
    let v = psi.values();
    Execution::default().sum(v.len(), |i| r[i].powf(1.0 - p) * pow_half(v[i].norm_sqr(), p + 1.0))
        * grid.spacing()
}

/// Samples of the radial solution `u = psi / r` on the Schwarzschild exterior.
#[derive(Clone, Debug)]
pub struct RadialFunction {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
    time: f64,
}

impl RadialFunction {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Norm in `L^2(r^2 dr_*)`.
    pub fn weighted_norm(&self) -> f64 {
        let r = self.grid.r();
        let s: f64 = self
            .values
            .iter()
            .zip(r)
            .map(|(u, r)| u.norm_sqr() * r * r)
            .sum();
        (s * self.grid.spacing()).sqrt()
    }
}

pub fn to_radial(psi: &WaveFunction) -> RadialFunction {
    let r = psi.grid().r();
    RadialFunction {
        grid: Arc::clone(psi.grid()),
        values: psi.values().iter().zip(r).map(|(z, r)| z / r).collect(),
        time: psi.time(),
    }
}

pub fn from_radial(u: &RadialFunction) -> WaveFunction {
    let r = u.grid.r();
    WaveFunction {
        grid: Arc::clone(&u.grid),
        values: u.values.iter().zip(r).map(|(z, r)| z * r).collect(),
        time: u.time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SchwarzschildParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize, lo: f64, hi: f64) -> Arc<Grid> {
        Arc::new(Grid::new(SchwarzschildParams::new(1.0).unwrap(), n, lo, hi).unwrap())
    }

    #[test]
    fn model_flags() {
        let m = ModelParams::new(1.0, 5.0).unwrap();
        assert!(m.pseudoconformal_valid() && m.wave_op_valid() && m.completeness_valid());
        let m = ModelParams::new(1.0, 3.5).unwrap();
        assert!(m.pseudoconformal_valid() && !m.wave_op_valid() && !m.completeness_valid());
        let m = ModelParams::new(1.0, wave_operator_threshold()).unwrap();
        assert!(!m.wave_op_valid());
        assert!(!ModelParams::new(1.0, 4.0).unwrap().completeness_valid());
        assert!(ModelParams::new(-1.0, 5.0).is_err());
        assert!(ModelParams::new(1.0, 1.0).is_err());
    }

    #[test]
    fn l2_examples() {
        let g = grid(512, -30.0, 30.0);
        assert_eq!(l2_norm(&WaveFunction::zeros(Arc::clone(&g))), 0.0);
        let c = Complex64::new(0.6, -0.8) * 3.0;
        let constant = WaveFunction::from_fn(Arc::clone(&g), |_| c).unwrap();
        assert_relative_eq!(l2_norm(&constant), 3.0 * 60f64.sqrt(), max_relative = 1e-14);
        let gauss = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 2.0).exp() / PI.powf(0.25), 0.0)).unwrap();
        assert!((l2_norm(&gauss) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_samples() {
        let g = grid(64, -10.0, 10.0);
        assert!(WaveFunction::new(Arc::clone(&g), vec![Complex64::new(0.0, 0.0); 10], 0.0).is_err());
        let mut v = vec![Complex64::new(0.0, 0.0); 64];
        v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(WaveFunction::new(g, v, 0.0).is_err());
    }

    /// Eighth-order central difference of an analytic function.
    fn fd8<F: Fn(f64) -> Complex64>(f: &F, x: f64, h: f64) -> Complex64 {
        let c = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let mut s = Complex64::new(0.0, 0.0);
        for (j, cj) in c.iter().enumerate() {
            let k = (j + 1) as f64;
            s += (f(x + k * h) - f(x - k * h)) * *cj;
        }
        s / h
    }

    #[test]
    fn kinetic_energy_matches_finite_difference_quadrature() {
        let k = 2.5;
        let bump = |x: f64| Complex64::from_polar((-(x - 3.0) * (x - 3.0) / 4.0).exp(), k * x);
        let g = grid(512, -30.0, 30.0);
        let psi = WaveFunction::from_fn(Arc::clone(&g), bump).unwrap();
        let model = ModelParams::new(0.0, 5.0).unwrap();
        let e = energy(&psi, &model);
        // Oracle: analytic samples at doubled resolution, 8th-order differences.
        let h = g.spacing() / 2.0;
        let oracle: f64 = (0..2 * g.n())
            .map(|i| fd8(&bump, -30.0 + i as f64 * h, h).norm_sqr())
            .sum::<f64>()
            * h;
        assert!((e.kinetic - oracle).abs() < 1e-8 * oracle, "{} vs {}", e.kinetic, oracle);
        // Leading behaviour k^2 ||psi||^2 plus the bump correction ||bump'||^2 = norm / (2 w^2).
        let norm2 = l2_norm_sqr(&psi);
        assert_relative_eq!(e.kinetic, norm2 * (k * k + 0.5 / 2.0), max_relative = 1e-10);
        assert_eq!(e.nonlinear, 0.0);
        assert_eq!(energy(&WaveFunction::zeros(g), &model).total(), 0.0);
    }

    #[test]
    fn radial_map_examples() {
        let g = grid(1024, -60.0, 60.0);
        let psi = WaveFunction::gaussian(Arc::clone(&g), GaussianSpec { center: 2.0, width: 3.0, momentum: 0.7, amplitude: 1.0 }).unwrap();
        let psi = psi.scaled(Complex64::new(1.0 / l2_norm(&psi), 0.0));
        let u = to_radial(&psi);
        assert!((u.weighted_norm() - 1.0).abs() < 1e-12);
        let back = from_radial(&u);
        assert!(back.distance(&psi) < 1e-15);
        // Near the horizon u = psi / r with r ~ 2M.
        let near = WaveFunction::gaussian(Arc::clone(&g), GaussianSpec { center: -45.0, width: 2.0, momentum: 0.0, amplitude: 1.0 }).unwrap();
        let u = to_radial(&near);
        let i = g.r_star().iter().position(|&x| x >= -45.0).unwrap();
        assert_relative_eq!(u.values()[i].re, near.values()[i].re / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn text_format_round_trip() {
        let g = grid(64, -10.0, 10.0);
        let psi = WaveFunction::gaussian(Arc::clone(&g), GaussianSpec { momentum: 1.3, ..Default::default() })
            .unwrap()
            .with_time(2.5);
        let mut buf = Vec::new();
        psi.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t=2.5000000000000000e0 n=64 M=1.0000000000000000e0\n"));
        let mut with_comment = b"# comment\n".to_vec();
        with_comment.extend_from_slice(&buf);
        let back = WaveFunction::read_text(Arc::clone(&g), &with_comment[..]).unwrap();
        assert_eq!(back.values(), psi.values());
        assert_eq!(back.time(), 2.5);
        let other = grid(128, -10.0, 10.0);
        assert!(WaveFunction::read_text(other, &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn radial_map_is_unitary(seed in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8)) {
            let g = grid(256, -40.0, 40.0);
            let psi = WaveFunction::from_fn(Arc::clone(&g), |x| {
                seed.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, (a, b))| {
                    let c = -20.0 + 5.0 * j as f64;
                    acc + Complex64::new(*a, *b) * (-(x - c) * (x - c)).exp()
                })
            }).unwrap();
            let u = to_radial(&psi);
            prop_assert!((u.weighted_norm() - l2_norm(&psi)).abs() <= 1e-12 * l2_norm(&psi).max(1e-300));
        }

        #[test]
        fn energy_parts_nonnegative(a in 0.0f64..3.0, k in -3.0f64..3.0, c in -20.0f64..20.0, lambda in 0.0f64..5.0) {
            let g = grid(256, -40.0, 40.0);
            let psi = WaveFunction::gaussian(g, GaussianSpec { center: c, width: 1.5, momentum: k, amplitude: a }).unwrap();
            let e = energy(&psi, &ModelParams::new(lambda, 5.0).unwrap());
            prop_assert!(e.kinetic >= 0.0 && e.potential >= 0.0 && e.nonlinear >= 0.0);
            prop_assert!((e.total() - (e.kinetic + e.potential + e.nonlinear)).abs() == 0.0);
        }
    }
}
