//! Scalar Riccati system of the LQ game: closed forms, backward RK4, value
//! function and equilibrium feedback.
//!
//! With `A = 1 - 1/N^2` and `D = eps - q^2` the quadratic coefficient solves
//! `eta' = 2(a+q) eta + A eta^2 - D`, `eta_T = c`, and the constant term solves
//! `chi' = -sigma^2 (1-rho^2)(1-1/N) eta / 2`, `chi_T = 0`.

use crate::error::{Error, Result};
use crate::model::{LqParams, Players, TimeGrid};
use crate::stats::adaptive_simpson;

/// Roots `delta_pm = -(a+q) +- sqrt(R)` of the Riccati characteristic polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaPair {
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub r: f64,
}

pub fn compute_deltas(p: &LqParams) -> Result<DeltaPair> {
    let aq = p.a + p.q;
    let r = aq * aq + p.players.riccati_factor() * (p.eps - p.q * p.q);
    if !(r > 0.0) {
        return Err(Error::Domain(format!("discriminant R = {r} is not positive")));
    }
    let s = r.sqrt();
    Ok(DeltaPair { delta_plus: -aq + s, delta_minus: -aq - s, r })
}

/// Right-hand side of the Riccati system `(eta', chi')`.
pub fn riccati_rhs(p: &LqParams, eta: f64) -> (f64, f64) {
    let d_eta = 2.0 * (p.a + p.q) * eta + p.players.riccati_factor() * eta * eta - (p.eps - p.q * p.q);
    let d_chi = -chi_factor(p) * eta;
    (d_eta, d_chi)
}

fn chi_factor(p: &LqParams) -> f64 {
    0.5 * p.sigma * p.sigma * (1.0 - p.rho * p.rho) * p.players.gain_factor()
}

fn check_time(t: f64, p: &LqParams) -> Result<()> {
    if !(0.0..=p.horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", p.horizon)));
    }
    Ok(())
}

/// Explicit solution for `eta_t`.
pub fn eta_closed(t: f64, p: &LqParams) -> Result<f64> {
    check_time(t, p)?;
    if t == p.horizon {
        return Ok(p.c);
    }
    let d = compute_deltas(p)?;
    let big_a = p.players.riccati_factor();
    let big_d = p.eps - p.q * p.q;
    // The textbook quotient in exp(2 sqrt(R)(T-t)) divided through by that
    // exponential, so nothing overflows for long horizons.
    let e = (-2.0 * d.r.sqrt() * (p.horizon - t)).exp();
    let num = -big_d * (1.0 - e) - p.c * (d.delta_plus - d.delta_minus * e);
    let den = (d.delta_minus - d.delta_plus * e) - p.c * big_a * (1.0 - e);
    if !(den < 0.0) {
        return Err(Error::Domain(format!("Riccati denominator {den} is not negative at t = {t}")));
    }
    Ok(num / den)
}

/// `chi_t` as the weighted integral of `eta` over `[t, T]`.
pub fn chi_closed(t: f64, p: &LqParams) -> Result<f64> {
    check_time(t, p)?;
    let k = chi_factor(p);
    if t == p.horizon || k == 0.0 {
        return Ok(0.0);
    }
    // Surfaces a domain error before the quadrature sees NaN.
    eta_closed(t, p)?;
    let integral = adaptive_simpson(&|s| eta_closed(s, p).unwrap_or(f64::NAN), t, p.horizon, 1e-13)?;
    Ok(k * integral)
}

/// `eta`, `chi` on a time grid ending at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCurves {
    pub grid: TimeGrid,
    pub eta: Vec<f64>,
    pub chi: Vec<f64>,
    pub players: Players,
}

impl RiccatiCurves {
    /// Feedback gain `q + (1 - 1/N) eta` at node `k`.
    pub fn gain(&self, p: &LqParams, k: usize) -> f64 {
        p.q + self.players.gain_factor() * self.eta[k]
    }

    pub fn max_eta(&self) -> f64 {
        self.eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest pointwise gap in `eta` and in `chi` against another curve set.
    pub fn max_gap(&self, other: &RiccatiCurves) -> (f64, f64) {
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        (gap(&self.eta, &other.eta), gap(&self.chi, &other.chi))
    }
}

fn check_grid(p: &LqParams, grid: &TimeGrid) -> Result<()> {
    if grid.t_end() != p.horizon || grid.t0() < 0.0 {
        return Err(Error::invalid(format!(
            "grid [{}, {}] must end at the horizon {}",
            grid.t0(),
            grid.t_end(),
            p.horizon
        )));
    }
    Ok(())
}

/// Default bound on `|eta|` before backward integration is declared divergent.
pub const BLOW_UP_BOUND: f64 = 1e12;

/// Backward RK4 from `(eta_T, chi_T) = (c, 0)`.
pub fn integrate_riccati(p: &LqParams, grid: &TimeGrid) -> Result<RiccatiCurves> {
    integrate_riccati_bounded(p, grid, BLOW_UP_BOUND)
}

pub fn integrate_riccati_bounded(p: &LqParams, grid: &TimeGrid, bound: f64) -> Result<RiccatiCurves> {
    check_grid(p, grid)?;
    let n = grid.steps();
    let mut eta = vec![0.0; n + 1];
    let mut chi = vec![0.0; n + 1];
    eta[n] = p.c;
    chi[n] = 0.0;
    // Integrate in reversed time s = T - t, where d/ds = -d/dt.
    let h = grid.dt();
    let f = |e: f64| {
        let (de, dc) = riccati_rhs(p, e);
        (-de, -dc)
    };
    for k in (0..n).rev() {
        let (e, c) = (eta[k + 1], chi[k + 1]);
        let (k1e, k1c) = f(e);
        let (k2e, k2c) = f(e + 0.5 * h * k1e);
        let (k3e, k3c) = f(e + 0.5 * h * k2e);
        let (k4e, k4c) = f(e + h * k3e);
        eta[k] = e + h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        chi[k] = c + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        if !(eta[k].abs() <= bound) {
            return Err(Error::Numerical(format!(
                "Riccati solution blew up (|eta| = {}) at t = {}",
                eta[k].abs(),
                grid.time(k)
            )));
        }
    }
    Ok(RiccatiCurves { grid: *grid, eta, chi, players: p.players })
}

/// Curves sampled from the closed forms. `chi` is accumulated interval by
/// interval from the horizon.
pub fn closed_curves(p: &LqParams, grid: &TimeGrid) -> Result<RiccatiCurves> {
    check_grid(p, grid)?;
    let n = grid.steps();
    let eta = grid.times().iter().map(|&t| eta_closed(t, p)).collect::<Result<Vec<_>>>()?;
    let mut chi = vec![0.0; n + 1];
    let k = chi_factor(p);
    if k != 0.0 {
        for i in (0..n).rev() {
            let piece = adaptive_simpson(&|s| eta_closed(s, p).unwrap_or(f64::NAN), grid.time(i), grid.time(i + 1), 1e-14)?;
            chi[i] = chi[i + 1] + k * piece;
        }
    }
    Ok(RiccatiCurves { grid: *grid, eta, chi, players: p.players })
}

/// Value function `eta_t (x-m)^2 / 2 + chi_t`.
pub fn value_v(t: f64, x: f64, m: f64, p: &LqParams) -> Result<f64> {
    let eta = eta_closed(t, p)?;
    let chi = chi_closed(t, p)?;
    Ok(0.5 * eta * (x - m).powi(2) + chi)
}

/// Equilibrium control `(q + (1-1/N) eta_t)(m - x)`.
pub fn feedback_alpha(t: f64, x: f64, m: f64, p: &LqParams) -> Result<f64> {
    let eta = eta_closed(t, p)?;
    Ok((p.q + p.players.gain_factor() * eta) * (m - x))
}
