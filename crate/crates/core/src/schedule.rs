//! Variance-preserving diffusion schedule and diffusion-bridge coefficients.
//!
//! The forward process is the linear SDE `dx = f(t) x dt + g(t) dw` with
//!
//! ```text
//! rho(t)   = beta_d t^2 / 2 + beta_min t
//! alpha_t  = exp(-rho / 2)
//! sigma_t  = sqrt(1 - exp(-rho))
//! f(t)     = -(beta_d t + beta_min) / 2
//! g(t)^2   = beta_d t + beta_min
//! ```
//!
//! Conditioning that process on its end point `x_T` gives the bridge kernel
//! `q(x_t | x_0, x_T) = N(a_t x_T + b_t x_0, c_t^2 I)`, with
//! `gamma_t = alpha_T sigma_t / (alpha_t sigma_T)` and
//! `a_t = alpha_t gamma_t^2 / alpha_T`, `b_t = alpha_t (1 - gamma_t^2)`,
//! `c_t^2 = sigma_t^2 (1 - gamma_t^2)`.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every variance-like denominator.
pub const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta_d: f64,
    pub beta_min: f64,
    pub t_max: f64,
    pub t_eps: f64,
    /// Upper clamp on `gamma_t^2`; keeps `c_t^2` and the `h` denominator away from zero at `t = T`.
    pub gamma_clip: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_d: 2.0,
            beta_min: 0.1,
            t_max: 1.0,
            t_eps: 1e-4,
            gamma_clip: 1.0 - 1e-6,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_d > 0.0
            && self.beta_min >= 0.0
            && self.t_eps > 0.0
            && self.t_eps < self.t_max
            && self.gamma_clip > 0.0
            && self.gamma_clip < 1.0
            && [self.beta_d, self.beta_min, self.t_max, self.t_eps, self.gamma_clip]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }

    fn check_time(&self, t: f64, lo: f64) -> Result<()> {
        if t.is_finite() && t >= lo && t <= self.t_max {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, lo, hi: self.t_max })
        }
    }

    /// Integrated log-SNR exponent `rho(t) = beta_d t^2 / 2 + beta_min t`.
    #[inline]
    fn rho(&self, t: f64) -> f64 {
        0.5 * self.beta_d * t * t + self.beta_min * t
    }

    #[inline]
    fn beta(&self, t: f64) -> f64 {
        self.beta_d * t + self.beta_min
    }

    /// Unclamped `gamma_t^2 = (e^rho(t) - 1) / (e^rho(T) - 1)`.
    #[inline]
    fn gamma_sq_raw(&self, t: f64) -> f64 {
        self.rho(t).exp_m1() / self.rho(self.t_max).exp_m1()
    }
}

/// Coefficients of the bridge kernel and of the underlying forward SDE at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoeffs {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub gamma_sq: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
    pub g_sq: f64,
}

impl BridgeCoeffs {
    #[inline]
    pub fn c_sq(&self) -> f64 {
        self.c * self.c
    }
}

/// Marginal coefficients `(alpha_t, sigma_t)` of `q(x_t | x_0) = N(alpha_t x_0, sigma_t^2 I)`.
pub fn vp_alpha_sigma(cfg: &ScheduleConfig, t: f64) -> Result<(f64, f64)> {
    cfg.check_time(t, 0.0)?;
    Ok(alpha_sigma_unchecked(cfg, t))
}

#[inline]
pub(crate) fn alpha_sigma_unchecked(cfg: &ScheduleConfig, t: f64) -> (f64, f64) {
    let rho = cfg.rho(t);
    let alpha = (-0.5 * rho).exp();
    // 1 - e^{-rho} without cancellation near t = 0.
    let sigma = (-(-rho).exp_m1()).max(0.0).sqrt();
    (alpha, sigma)
}

/// Drift `f(t)` and squared diffusion `g(t)^2`, from the analytic derivatives of the schedule.
pub fn drift_diffusion(cfg: &ScheduleConfig, t: f64) -> Result<(f64, f64)> {
    cfg.check_time(t, 0.0)?;
    Ok(drift_diffusion_unchecked(cfg, t))
}

#[inline]
pub(crate) fn drift_diffusion_unchecked(cfg: &ScheduleConfig, t: f64) -> (f64, f64) {
    let beta = cfg.beta(t);
    (-0.5 * beta, beta)
}

/// Bridge coefficients with `gamma_t^2` clamped to `gamma_clip`.
pub fn bridge_coeffs(cfg: &ScheduleConfig, t: f64) -> Result<BridgeCoeffs> {
    cfg.check_time(t, 0.0)?;
    Ok(coeffs_impl(cfg, t, true))
}

/// Bridge coefficients without the `gamma` clamp; exact endpoint values at `t = T`.
pub fn bridge_coeffs_unclamped(cfg: &ScheduleConfig, t: f64) -> Result<BridgeCoeffs> {
    cfg.check_time(t, 0.0)?;
    Ok(coeffs_impl(cfg, t, false))
}

pub(crate) fn coeffs_impl(cfg: &ScheduleConfig, t: f64, clamp: bool) -> BridgeCoeffs {
    let (alpha, sigma) = alpha_sigma_unchecked(cfg, t);
    let (alpha_big_t, _) = alpha_sigma_unchecked(cfg, cfg.t_max);
    let (f, g_sq) = drift_diffusion_unchecked(cfg, t);
    let mut gamma_sq = cfg.gamma_sq_raw(t).clamp(0.0, 1.0);
    if clamp {
        gamma_sq = gamma_sq.min(cfg.gamma_clip);
    }
    let one_minus = 1.0 - gamma_sq;
    BridgeCoeffs {
        t,
        alpha,
        sigma,
        gamma_sq,
        a: alpha * gamma_sq / alpha_big_t,
        b: alpha * one_minus,
        c: (sigma * sigma * one_minus).max(0.0).sqrt(),
        f,
        g_sq,
    }
}

/// `grad_{x_t} log q(x_T | x_t)` for the forward SDE, with the `gamma` clamp applied.
///
/// `q(x_T | x_t) = N((alpha_T/alpha_t) x_t, sigma_T^2 (1 - gamma_t^2) I)`.
pub fn h_gradient(cfg: &ScheduleConfig, t: f64, x_t: &[f64], x_end: &[f64]) -> Result<Vec<f64>> {
    cfg.check_time(t, cfg.t_eps)?;
    if x_t.len() != x_end.len() {
        return Err(Error::Shape(format!(
            "x_t has {} entries, x_T has {}",
            x_t.len(),
            x_end.len()
        )));
    }
    let mut out = vec![0.0; x_t.len()];
    h_gradient_into(cfg, &coeffs_impl(cfg, t, true), x_t, x_end, &mut out);
    Ok(out)
}

pub(crate) fn h_gradient_into(cfg: &ScheduleConfig, co: &BridgeCoeffs, x_t: &[f64], x_end: &[f64], out: &mut [f64]) {
    let (alpha_big_t, sigma_big_t) = alpha_sigma_unchecked(cfg, cfg.t_max);
    let ratio = alpha_big_t / co.alpha;
    let denom = (sigma_big_t * sigma_big_t * (1.0 - co.gamma_sq)).max(DENOM_FLOOR);
    for ((o, &xt), &xe) in out.iter_mut().zip(x_t).zip(x_end) {
        *o = ratio * (xe - ratio * xt) / denom;
    }
}
