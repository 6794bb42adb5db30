//! Exterior Schwarzschild radial geometry in the tortoise coordinate.
//!
//! Geometric units, `M` a pure number. Radii close to the horizon are carried
//! as the offset `r - 2M`, because `r` itself rounds to `2M` once
//! `r_* < -72 M` or so, while the offset stays representable down to
//! `r_* ~ -1400 M`.

use crate::error::{invalid, Error, Result};
use crate::spectral::Spectral;

/// Absolute tolerance used by [`Grid::new`] for the inverse tortoise map.
pub const INVERSE_TOL: f64 = 1e-12;

const MAX_NEWTON_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchwarzschildParams {
    mass: f64,
    horizon: f64,
    alpha: f64,
}

impl SchwarzschildParams {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(invalid("M", format!("mass must be positive and finite, got {mass}")));
        }
        Ok(SchwarzschildParams {
            mass,
            horizon: 2.0 * mass,
            alpha: 8.0 * mass / 3.0 + 2.0 * mass * (2.0 * mass / 3.0).ln(),
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Tortoise coordinate of the potential maximum `r = 8M/3`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn peak_radius(&self) -> f64 {
        8.0 * self.mass / 3.0
    }
}

/// `r_* = r + 2M log(r - 2M)`.
pub fn tortoise(r: f64, params: &SchwarzschildParams) -> Result<f64> {
    if !(r > params.horizon) {
        return Err(Error::InsideHorizon {
            r,
            horizon: params.horizon,
        });
    }
    Ok(r + params.horizon * (r - params.horizon).ln())
}

/// Tortoise coordinate for `r = 2M + offset`, without forming `r - 2M` by subtraction.
pub fn tortoise_from_offset(offset: f64, params: &SchwarzschildParams) -> f64 {
    params.horizon + offset + params.horizon * offset.ln()
}

/// Inverse of [`tortoise`]; returns `r`.
pub fn inverse_tortoise(r_star: f64, params: &SchwarzschildParams, tol: f64) -> Result<f64> {
    inverse_tortoise_offset(r_star, params, tol).map(|d| params.horizon + d)
}

/// Inverse of [`tortoise`] returning the offset `r - 2M > 0`.
///
/// Newton's method runs on `y = log(r - 2M)`, where the residual
/// `2M + e^y + 2M y - r_*` is increasing and convex. Any step that leaves the
/// current bracket is replaced by bisection.
pub fn inverse_tortoise_offset(r_star: f64, params: &SchwarzschildParams, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "tolerance must be positive"));
    }
    if !r_star.is_finite() {
        return Err(invalid("r_star", "must be finite"));
    }
    let two_m = params.horizon;
    let residual = |y: f64| two_m + y.exp() + two_m * y - r_star;

    // Bracket on y. Upper: r - 2M < max(r_*, 4M) + 1 and 2M y < r_* - 2M.
    // Lower: for a root with y < 0, e^y < 1 forces 2M y > r_* - 2M - 1.
    let mut hi = ((r_star.max(2.0 * two_m)) + 1.0).ln().min((r_star - two_m) / two_m);
    let mut lo = ((r_star - two_m - 1.0) / two_m).min(0.0) - 1.0;
    if hi <= lo {
        hi = lo + 1.0;
    }
    while residual(hi) < 0.0 {
        hi += 1.0 + hi.abs();
    }
    while residual(lo) > 0.0 {
        lo -= 1.0 + lo.abs();
    }

    let mut y = if r_star >= two_m {
        (r_star.max(two_m + 1e-3) - two_m).ln()
    } else {
        -1.0 + r_star / two_m
    };
    if !(y > lo && y < hi) {
        y = 0.5 * (lo + hi);
    }

    let scale = r_star.abs().max(1.0);
    for _ in 0..MAX_NEWTON_ITERS {
        let g = residual(y);
        if g.abs() <= tol {
            return Ok(y.exp());
        }
        if g > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let step = g / (y.exp() + two_m);
        let mut next = y - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        // At large |r_*| the residual cannot drop below rounding; accept a
        // converged iterate there.
        if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0)
            && g.abs() <= 8.0 * f64::EPSILON * scale
        {
            return Ok(next.exp());
        }
        y = next;
    }
    Err(Error::NoConvergence {
        r_star,
        iterations: MAX_NEWTON_ITERS,
    })
}

/// `V = (2M/r^3)(1 - 2M/r)` written as `2M (r - 2M) / r^4`.
pub fn potential_at_offset(offset: f64, params: &SchwarzschildParams) -> f64 {
    let r = params.horizon + offset;
    params.horizon * offset / r.powi(4)
}

/// `dV/dr_* = (2M/r^4)(1 - 2M/r)(8M/r - 3)` written as `2M (r - 2M)(8M - 3r) / r^6`.
pub fn potential_derivative_at_offset(offset: f64, params: &SchwarzschildParams) -> f64 {
    let r = params.horizon + offset;
    params.horizon * offset * (8.0 * params.mass - 3.0 * r) / r.powi(6)
}

/// Effective potential as a function of the tortoise coordinate.
pub fn potential(r_star: f64, params: &SchwarzschildParams) -> f64 {
    match inverse_tortoise_offset(r_star, params, INVERSE_TOL) {
        Ok(d) => potential_at_offset(d, params),
        Err(_) => 0.0,
    }
}

pub fn potential_derivative(r_star: f64, params: &SchwarzschildParams) -> f64 {
    match inverse_tortoise_offset(r_star, params, INVERSE_TOL) {
        Ok(d) => potential_derivative_at_offset(d, params),
        Err(_) => 0.0,
    }
}

/// `W = V + r_* V'`, the potential remainder of the pseudoconformal commutator.
pub fn virial_potential(r_star: f64, params: &SchwarzschildParams) -> f64 {
    potential(r_star, params) + r_star * potential_derivative(r_star, params)
}

/// Uniform periodic lattice in `r_*` with the geometry precomputed per node.
#[derive(Clone, Debug)]
pub struct Grid {
    params: SchwarzschildParams,
    n: usize,
    r_star_min: f64,
    r_star_max: f64,
    spacing: f64,
    r_star: Vec<f64>,
    offset: Vec<f64>,
    r: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
    spectral: Spectral,
}

impl Grid {
    /// `n` nodes at `r_star_min + i h`, `h = (r_star_max - r_star_min) / n`;
    /// the right endpoint is identified with the left one.
    pub fn new(params: SchwarzschildParams, n: usize, r_star_min: f64, r_star_max: f64) -> Result<Self> {
        let r_star = Self::nodes(n, r_star_min, r_star_max)?;
        let offset = r_star
            .iter()
            .map(|&x| inverse_tortoise_offset(x, &params, INVERSE_TOL))
            .collect::<Result<Vec<_>>>()?;
        let r = offset.iter().map(|d| params.horizon + d).collect();
        let v = offset.iter().map(|&d| potential_at_offset(d, &params)).collect();
        let dv = offset
            .iter()
            .map(|&d| potential_derivative_at_offset(d, &params))
            .collect();
        let spacing = (r_star_max - r_star_min) / n as f64;
        Ok(Grid {
            params,
            n,
            r_star_min,
            r_star_max,
            spacing,
            r_star,
            offset,
            r,
            v,
            dv,
            spectral: Spectral::new(n, spacing),
        })
    }

    /// Lattice with caller-supplied `r`, `V`, `V'` profiles. Used to build
    /// control problems (flat potential, constant radius) on the same lattice.
    pub fn with_profile(
        params: SchwarzschildParams,
        n: usize,
        r_star_min: f64,
        r_star_max: f64,
        r: Vec<f64>,
        v: Vec<f64>,
        dv: Vec<f64>,
    ) -> Result<Self> {
        let r_star = Self::nodes(n, r_star_min, r_star_max)?;
        if r.len() != n || v.len() != n || dv.len() != n {
            return Err(Error::GridMismatch("profile length differs from n".into()));
        }
        if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(invalid("r", "profile radii must be positive and finite"));
        }
        let offset = r.iter().map(|x| x - params.horizon).collect();
        let spacing = (r_star_max - r_star_min) / n as f64;
        Ok(Grid {
            params,
            n,
            r_star_min,
            r_star_max,
            spacing,
            r_star,
            offset,
            r,
            v,
            dv,
            spectral: Spectral::new(n, spacing),
        })
    }

    fn nodes(n: usize, r_star_min: f64, r_star_max: f64) -> Result<Vec<f64>> {
        if n < 4 || !n.is_power_of_two() {
            return Err(invalid("grid.n", format!("must be a power of two >= 4, got {n}")));
        }
        if !(r_star_min.is_finite() && r_star_max.is_finite() && r_star_max > r_star_min) {
            return Err(invalid(
                "grid.r_star_min/r_star_max",
                format!("need finite min < max, got [{r_star_min}, {r_star_max}]"),
            ));
        }
        let h = (r_star_max - r_star_min) / n as f64;
        Ok((0..n).map(|i| r_star_min + i as f64 * h).collect())
    }

    pub fn params(&self) -> &SchwarzschildParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_star_min(&self) -> f64 {
        self.r_star_min
    }

    pub fn r_star_max(&self) -> f64 {
        self.r_star_max
    }

    /// Period of the lattice.
    pub fn length(&self) -> f64 {
        self.r_star_max - self.r_star_min
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn r_star(&self) -> &[f64] {
        &self.r_star
    }

    /// `r - 2M` per node; positive and strictly increasing on a geometric grid.
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    pub fn potential_derivative(&self) -> &[f64] {
        &self.dv
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Default time step: Nyquist-mode kinetic phase of `pi/4` per step.
    pub fn nyquist_dt(&self) -> f64 {
        let k = self.spectral.k_max();
        std::f64::consts::FRAC_PI_4 / (k * k)
    }
}
