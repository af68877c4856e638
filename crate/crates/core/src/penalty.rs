//! The `rho_nu` penalty family and its exact univariate thresholding operator.
//!
//! `rho_nu(t) = |t| / (1 + |t|^(1 - nu))` interpolates between half the
//! `l1` norm (`nu = 1`) and the `l0` count (`nu -> 0`). The scalar problem
//!
//! ```text
//! min_t  (y - t)^2 / 2 + lambda * rho_nu(t)
//! ```
//!
//! has a closed-form *shape*: its minimiser is exactly zero up to a
//! threshold `phi(lambda, nu)` and then jumps to a value of at least
//! `kappa(lambda, nu)`. Both constants are computed once per
//! `(lambda, nu)` pair by [`solve_threshold`]; [`prox`] then only has to
//! solve a well-bracketed stationarity equation.

use crate::error::{Error, Result};

/// Default absolute/relative tolerance used by [`prox`] callers inside the crate.
pub const PROX_TOL: f64 = 1e-13;

const THRESHOLD_MAX_ITERS: usize = 200;
const NEWTON_MAX_ITERS: usize = 100;
const BISECTION_MAX_ITERS: usize = 200;

/// A regularisation level together with the threshold and jump of its
/// thresholding operator.
///
/// Only [`solve_threshold`] constructs values of this type, so a
/// `PenaltySpec` always carries a converged `(phi, kappa)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    lambda: f64,
    nu: f64,
    threshold_phi: f64,
    jump_kappa: f64,
}

impl PenaltySpec {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Largest `|y|` mapped to zero.
    pub fn threshold(&self) -> f64 {
        self.threshold_phi
    }

    /// Magnitude of the smallest nonzero output.
    pub fn jump(&self) -> f64 {
        self.jump_kappa
    }

    /// Value of `lambda * sum_j rho_nu(theta_j)`.
    pub fn cost(&self, theta: &[f64]) -> f64 {
        self.lambda * theta.iter().map(|&t| rho_value(t, self.nu)).sum::<f64>()
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 && nu <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("nu must lie in (0, 1], got {nu}")))
    }
}

/// `rho_nu(theta)`; fails when `nu` is outside `(0, 1]`.
pub fn rho(theta: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(rho_value(theta, nu))
}

#[inline]
pub(crate) fn rho_value(theta: f64, nu: f64) -> f64 {
    let t = theta.abs();
    if t == 0.0 {
        return 0.0;
    }
    t / (1.0 + t.powf(1.0 - nu))
}

/// Derivative of `rho_nu` with the subgradient choice `0` at the origin.
#[inline]
pub fn rho_derivative(theta: f64, nu: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    theta.signum() * rho_slope(theta.abs(), nu)
}

/// `d rho / dt` for `t > 0`.
#[inline]
fn rho_slope(t: f64, nu: f64) -> f64 {
    let s = t.powf(1.0 - nu);
    (1.0 + nu * s) / ((1.0 + s) * (1.0 + s))
}

/// `d^2 rho / dt^2` for `t > 0`; always nonpositive.
#[inline]
fn rho_curvature(t: f64, nu: f64) -> f64 {
    let s = t.powf(1.0 - nu);
    let one_s = 1.0 + s;
    -(1.0 - nu) * t.powf(-nu) * (2.0 - nu + nu * s) / (one_s * one_s * one_s)
}

/// Residual of `kappa^(2-nu) + 2 kappa + kappa^nu + 2 lambda (nu - 1) = 0`.
pub fn jump_residual(kappa: f64, lambda: f64, nu: f64) -> f64 {
    kappa.powf(2.0 - nu) + 2.0 * kappa + kappa.powf(nu) + 2.0 * lambda * (nu - 1.0)
}

/// Threshold implied by a jump value: `kappa / 2 + lambda / (1 + kappa^(1 - nu))`.
pub fn threshold_from_jump(kappa: f64, lambda: f64, nu: f64) -> f64 {
    kappa / 2.0 + lambda / (1.0 + kappa.powf(1.0 - nu))
}

/// Computes the threshold `phi` and jump `kappa` for `(lambda, nu)`.
///
/// The jump is the root of `t^(1 - nu/2) + t^(nu/2) = sqrt(2 lambda (1 - nu))`
/// on `(0, lambda (1 - nu) / 2]`. The left side is increasing, so plain
/// bisection converges; it is run on `ln t` because the root can be
/// astronomically small when `lambda` or `nu` is small.
pub fn solve_threshold(lambda: f64, nu: f64) -> Result<PenaltySpec> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    check_nu(nu)?;

    if nu == 1.0 {
        return Ok(PenaltySpec {
            lambda,
            nu,
            threshold_phi: lambda / 2.0,
            jump_kappa: 0.0,
        });
    }

    let target = (2.0 * lambda * (1.0 - nu)).sqrt();
    let lhs = |log_t: f64| ((1.0 - nu / 2.0) * log_t).exp() + (nu / 2.0 * log_t).exp() - target;

    let upper = lambda * (1.0 - nu) / 2.0;
    let mut hi = upper.ln();
    let mut lo = f64::MIN_POSITIVE.ln();
    if lhs(lo) >= 0.0 {
        // root below the smallest normal number: the jump is numerically zero
        return Ok(PenaltySpec {
            lambda,
            nu,
            threshold_phi: threshold_from_jump(0.0, lambda, nu),
            jump_kappa: 0.0,
        });
    }

    let mut converged = false;
    for _ in 0..THRESHOLD_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            converged = true;
            break;
        }
        if lhs(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = (0.5 * (lo + hi)).exp().min(upper);
    let residual = jump_residual(kappa, lambda, nu);
    if !converged && residual.abs() > 1e-10 * lambda.max(1.0) {
        return Err(Error::numerical("jump equation did not converge", residual));
    }

    Ok(PenaltySpec {
        lambda,
        nu,
        threshold_phi: threshold_from_jump(kappa, lambda, nu),
        jump_kappa: kappa,
    })
}

/// Global minimiser of `(y - t)^2 / 2 + lambda * rho_nu(t)`.
///
/// Returns zero for `|y| <= phi` (the tie at `phi` goes to zero), otherwise
/// the root of `t - |y| + lambda rho'(t) = 0` in `[kappa, |y|]` with the sign
/// of `y`. On that bracket the stationarity function is increasing, so the
/// root is unique; Newton from `|y|` is used with a bisection safeguard.
pub fn prox(y: f64, spec: &PenaltySpec, tol: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("prox argument must be finite, got {y}")));
    }
    let a = y.abs();
    if a <= spec.threshold_phi {
        return Ok(0.0);
    }
    if spec.nu == 1.0 {
        return Ok(y.signum() * (a - spec.lambda / 2.0));
    }

    let lambda = spec.lambda;
    let nu = spec.nu;
    let stationarity = |t: f64| t - a + lambda * rho_slope(t, nu);

    let mut lo = spec.jump_kappa;
    let mut hi = a;
    let g_lo = if lo > 0.0 { stationarity(lo) } else { -a + lambda };
    if g_lo > 1e-9 * a.max(1.0) {
        return Err(Error::numerical("invalid prox bracket", g_lo));
    }
    if g_lo >= 0.0 {
        return Ok(y.signum() * lo);
    }

    let mut t = a;
    for _ in 0..NEWTON_MAX_ITERS {
        let g = stationarity(t);
        if g == 0.0 {
            return Ok(y.signum() * t);
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 + lambda * rho_curvature(t, nu);
        let mut next = t - g / slope;
        if !(slope > 0.0) || !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= tol * t.max(1.0) {
            return Ok(y.signum() * next);
        }
        t = next;
    }

    // Newton stalled: finish with bisection on the bracket it left behind.
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * hi.max(1.0) || mid <= lo || mid >= hi {
            break;
        }
        if stationarity(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(y.signum() * 0.5 * (lo + hi))
}

/// Componentwise proximal map for a gradient step of length `step`.
///
/// The effective regularisation is `step * lambda` at the same `nu`.
pub fn prox_vector(v: &[f64], spec: &PenaltySpec, step: f64) -> Result<Vec<f64>> {
    let scaled = scaled_spec(spec, step)?;
    v.iter().map(|&y| prox(y, &scaled, PROX_TOL)).collect()
}

/// `spec` with its regularisation multiplied by `step`.
pub fn scaled_spec(spec: &PenaltySpec, step: f64) -> Result<PenaltySpec> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    if step == 1.0 {
        return Ok(*spec);
    }
    solve_threshold(step * spec.lambda, spec.nu)
}

/// In-place variant of [`prox_vector`] for an already scaled specification.
pub(crate) fn prox_in_place(values: &mut [f64], scaled: &PenaltySpec) -> Result<()> {
    for v in values.iter_mut() {
        *v = prox(*v, scaled, PROX_TOL)?;
    }
    Ok(())
}
