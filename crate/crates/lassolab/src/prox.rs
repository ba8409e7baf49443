//! Scalar and vector kernels: signed powers, `lp` norms, soft thresholding,
//! and the proximal operator of `(mu/r) ||.||_1^r`.

use nalgebra::{DMatrix, DVector};

use crate::model::{ProblemInstance, ProblemParams};
use crate::{Error, Result};

/// Entrywise `sgn(v_i) |v_i|^{p-1}` with `0 -> 0`; for `p = 1` this is the
/// sign map with the minimal-norm subgradient choice at zero.
pub fn sgn_power(v: &DVector<f64>, p: f64) -> DVector<f64> {
    debug_assert!((1.0..=2.0).contains(&p));
    v.map(|x| {
        if x == 0.0 {
            0.0
        } else if p == 1.0 {
            x.signum()
        } else if p == 2.0 {
            x
        } else {
            x.signum() * x.abs().powf(p - 1.0)
        }
    })
}

/// Standard `||v||_p` for finite `p >= 1`.
pub fn lp_norm(v: &DVector<f64>, p: f64) -> f64 {
    debug_assert!(p >= 1.0 && p.is_finite());
    if p == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if p == 2.0 {
        v.norm()
    } else {
        v.iter()
            .map(|x| x.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// `max_i |v_i|` (zero for the empty vector).
pub fn linf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// `p / (p - 1)`, with the `+inf` sentinel at `p = 1`.
pub fn conjugate_exponent(p: f64) -> f64 {
    debug_assert!(p >= 1.0);
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// `base^exponent` under the conventions used by the stationarity algebra:
/// `0^0 = 1` and `0^negative = +inf` (a sentinel, never a NaN).
pub fn pow_conv(base: f64, exponent: f64) -> f64 {
    debug_assert!(base >= 0.0);
    if exponent == 0.0 {
        1.0
    } else if base == 0.0 && exponent < 0.0 {
        f64::INFINITY
    } else {
        base.powf(exponent)
    }
}

/// Entrywise `sgn(v_i) max(|v_i| - tau, 0)`.
pub fn soft_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    debug_assert!(tau >= 0.0);
    v.map(|x| soft_threshold_scalar(x, tau))
}

#[inline]
pub(crate) fn soft_threshold_scalar(x: f64, tau: f64) -> f64 {
    let mag = x.abs() - tau;
    if mag > 0.0 {
        x.signum() * mag
    } else {
        0.0
    }
}

/// Output of [`prox_l1_power`]: the minimizer, the effective threshold, and
/// the residual of the scalar fixed-point equation that determined it.
#[derive(Clone, Debug)]
pub struct ProxResult {
    pub z: DVector<f64>,
    pub tau: f64,
    pub fixed_point_residual: f64,
}

/// Minimizer of `(1/2) ||z - v||_2^2 + (mu/r) ||z||_1^r`.
///
/// The minimizer is `soft_threshold(v, tau)` where `tau >= 0` solves
/// `tau = mu * ||soft_threshold(v, tau)||_1^{r-1}`. The left side is
/// increasing and the right side nonincreasing and piecewise smooth in `tau`,
/// so the root is unique; it is bracketed on `[0, mu ||v||_1^{r-1}]` and
/// bisected until the fixed-point residual is at most
/// `1e-12 * max(1, ||v||_1)`.
pub fn prox_l1_power(v: &DVector<f64>, mu: f64, r: f64) -> Result<ProxResult> {
    if !(mu >= 0.0) {
        return Err(Error::Precondition(format!("prox weight mu = {mu} < 0")));
    }
    if !(r >= 1.0) {
        return Err(Error::Precondition(format!("prox exponent r = {r} < 1")));
    }
    let v_l1: f64 = v.iter().map(|x| x.abs()).sum();
    if mu == 0.0 || v_l1 == 0.0 {
        let tau = if r == 1.0 { mu } else { 0.0 };
        return Ok(ProxResult {
            z: soft_threshold(v, tau),
            tau,
            fixed_point_residual: 0.0,
        });
    }
    if r == 1.0 {
        return Ok(ProxResult {
            z: soft_threshold(v, mu),
            tau: mu,
            fixed_point_residual: 0.0,
        });
    }

    // g(tau) = tau - mu * ||soft(v, tau)||_1^{r-1}; g(0) <= 0 <= g(hi).
    let shrunk_l1 = |tau: f64| -> f64 { v.iter().map(|x| (x.abs() - tau).max(0.0)).sum() };
    let g = |tau: f64| -> f64 { tau - mu * shrunk_l1(tau).powf(r - 1.0) };
    let target = 1e-12 * v_l1.max(1.0);
    let mut lo = 0.0_f64;
    let mut hi = mu * v_l1.powf(r - 1.0);
    let mut tau = hi;
    let mut residual = g(tau);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() < residual.abs() {
            tau = mid;
            residual = gm;
        }
        if gm.abs() <= target {
            tau = mid;
            residual = gm;
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ProxResult {
        z: soft_threshold(v, tau),
        tau,
        fixed_point_residual: residual.abs(),
    })
}

/// (Sub)gradient of the fidelity term and whether an essential nonsmooth
/// point (zero residual with `q < p`) was hit.
#[derive(Clone, Debug)]
pub struct FidelityGrad {
    pub g: DVector<f64>,
    pub nonsmooth_point: bool,
}

/// Core of [`fidelity_subgradient`] on an explicit design matrix `M`:
/// `g = -||res||_p^{q-p} M^T sgn_power(res, p)` with `res = y - M w`.
///
/// At `res = 0`: the true gradient is `0` when `q > p` (and the formula's
/// `0^0 sgn_power(0) = 0` covers `q = p`); for `q < p` the scale factor
/// diverges, so a flagged zero vector is returned and the caller decides.
pub(crate) fn fidelity_grad_design(
    m: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    p: f64,
    q: f64,
) -> FidelityGrad {
    let res = y - m * w;
    let norm_res = lp_norm(&res, p);
    if norm_res == 0.0 {
        return FidelityGrad {
            g: DVector::zeros(w.len()),
            nonsmooth_point: q < p,
        };
    }
    let scale = norm_res.powf(q - p);
    let mut g = m.tr_mul(&sgn_power(&res, p));
    g *= -scale;
    FidelityGrad {
        g,
        nonsmooth_point: false,
    }
}

/// (Sub)gradient of `w -> (1/q) ||y - (A B) w||_p^q` in the `B^{-1}`
/// coordinates the solver iterates in.
///
/// Exact gradient for `p > 1` with nonzero residual; a valid subgradient
/// selection (zero at residual kinks) for `p = 1` or `q = 1`.
pub fn fidelity_subgradient(
    params: &ProblemParams,
    instance: &ProblemInstance,
    w: &DVector<f64>,
) -> Result<FidelityGrad> {
    if w.len() != instance.n() {
        return Err(Error::DimensionMismatch(format!(
            "w has length {} but the design has {} columns",
            w.len(),
            instance.n()
        )));
    }
    let m = instance.design_matrix();
    Ok(fidelity_grad_design(&m, instance.y(), w, params.p, params.q))
}
