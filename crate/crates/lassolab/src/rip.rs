//! Nonstandard restricted isometry constants `α‖z‖₂ ≤ ‖Az‖_p ≤ β‖z‖₂` over
//! the dictionary-sparse set `‖B⁻¹z‖₀ ≤ t`, the deterministic inequalities
//! used to transfer the property between fidelity exponents, and the robust
//! null-space property the constants imply.
//!
//! Membership is parameterized as `z = Bw` with `w` t-sparse, so each
//! support gives a generalized Rayleigh quotient
//! `‖(AB)_S w‖_p / ‖B_S w‖₂` in `w`. For p = 2 the per-support extremes are
//! eigenvalues and exhaustive enumeration is exact; for p < 2 the sphere
//! problem is nonconvex, so sampling plus local polish brackets the truth
//! from the inside: the reported `alpha` can only over-estimate and `beta`
//! under-estimate, making the reported ratio `gamma` optimistic. Downstream
//! consumers must keep that direction attached to anything they derive.

use crate::ensembles::{rng_from_seed, standard_normal, uniform01};
use crate::model::{Dict, OperatorNorms};
use crate::prox::{lp_norm, sgn_power};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exhaustive-enumeration ceiling for the exact mode.
pub const SUPPORT_BUDGET: usize = 2_000_000;

/// Lexicographic iterator over the k-subsets of `0..n`.
pub struct CombinationIter {
    n: usize,
    k: usize,
    next: Option<Vec<usize>>,
}

impl CombinationIter {
    pub fn new(n: usize, k: usize) -> Self {
        let next = if k <= n { Some((0..k).collect()) } else { None };
        CombinationIter { n, k, next }
    }
}

impl Iterator for CombinationIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        // Advance: bump the rightmost index that still has room.
        let mut idx = current.clone();
        let mut i = self.k;
        loop {
            if i == 0 {
                self.next = None;
                break;
            }
            i -= 1;
            if idx[i] < i + self.n - self.k {
                idx[i] += 1;
                for j in i + 1..self.k {
                    idx[j] = idx[j - 1] + 1;
                }
                self.next = Some(idx);
                break;
            }
        }
        Some(current)
    }
}

/// `C(n, k)`, reported exactly below `cap` and merely as "larger than cap"
/// above it (the partial products are themselves binomials, so they grow
/// monotonically and an early exit is sound).
fn count_supports(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i + 1) as u128;
        if c > cap {
            return c;
        }
    }
    c
}

/// Whether exhaustive enumeration at order `t` fits [`SUPPORT_BUDGET`], so
/// callers can pick the exact route before committing to it.
pub fn exact_enumeration_feasible(n: usize, t: usize) -> bool {
    if n == 0 || t == 0 {
        return false;
    }
    count_supports(n, t.min(n), SUPPORT_BUDGET as u128) <= SUPPORT_BUDGET as u128
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RipMode {
    /// Exhaustive support enumeration; only valid for p = 2.
    ExactL2,
    /// Sampled supports and sphere points with local polish. `alpha` is an
    /// upper bound on the true lower constant, `beta` a lower bound on the
    /// true upper constant, so `gamma` under-estimates the true ratio.
    Estimated,
}

#[derive(Clone, Debug, Serialize)]
pub struct RipReport {
    pub t: usize,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `beta / alpha`.
    pub gamma: f64,
    pub mode: RipMode,
    /// 0 in exact mode.
    pub trials: usize,
    pub supports_enumerated: usize,
}

impl RipReport {
    /// In estimated mode the sandwich direction makes `gamma` a lower bound
    /// on the truth, so caps derived from it are optimistic.
    pub fn gamma_is_optimistic(&self) -> bool {
        self.mode == RipMode::Estimated
    }
}

/// Exact ℓ₂ constants by enumerating every size-t support of `w` and solving
/// the generalized symmetric eigenproblem for the extremes of
/// `wᵀ(AB)_Sᵀ(AB)_S w / wᵀB_SᵀB_S w`. Orders `t ≥ N` collapse to the single
/// full support.
pub fn rip_exact_l2(a: &DMatrix<f64>, dict: &Dict, t: usize) -> Result<RipReport> {
    if a.ncols() != dict.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns, dictionary is {}x{}",
            a.ncols(),
            dict.n(),
            dict.n()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidParams("isometry order must be at least 1".into()));
    }
    let n = a.ncols();
    let t_eff = t.min(n);
    let count = count_supports(n, t_eff, SUPPORT_BUDGET as u128);
    if count > SUPPORT_BUDGET as u128 {
        return Err(Error::BudgetExceeded {
            n,
            t: t_eff,
            count,
            budget: SUPPORT_BUDGET,
        });
    }

    let m_design = dict.design_matrix(a);
    let b = dict.as_matrix();
    let mut alpha_sq = f64::INFINITY;
    let mut beta_sq: f64 = 0.0;
    let mut supports = 0usize;
    for s_idx in CombinationIter::new(n, t_eff) {
        let (lo, hi) = support_eigen_extremes(&m_design, &b, dict.is_identity(), &s_idx)?;
        alpha_sq = alpha_sq.min(lo);
        beta_sq = beta_sq.max(hi);
        supports += 1;
    }
    // Roundoff can push a singular submatrix's smallest eigenvalue slightly
    // negative; a genuine zero just means RIP fails at this order.
    let alpha = alpha_sq.max(0.0).sqrt();
    let beta = beta_sq.max(0.0).sqrt();
    Ok(RipReport {
        t,
        p: 2.0,
        alpha,
        beta,
        gamma: beta / alpha,
        mode: RipMode::ExactL2,
        trials: 0,
        supports_enumerated: supports,
    })
}

/// Min/max eigenvalues of `G w = μ H w` with `G = M_SᵀM_S`, `H = B_SᵀB_S`,
/// reduced to a standard symmetric problem through the Cholesky factor of H.
fn support_eigen_extremes(
    m_design: &DMatrix<f64>,
    b: &DMatrix<f64>,
    b_is_identity: bool,
    s_idx: &[usize],
) -> Result<(f64, f64)> {
    let k = s_idx.len();
    let ms = m_design.select_columns(s_idx.iter());
    let g = ms.transpose() * &ms;
    let reduced = if b_is_identity {
        g
    } else {
        let bs = b.select_columns(s_idx.iter());
        let h = bs.transpose() * &bs;
        let chol = h.cholesky().ok_or_else(|| {
            Error::Precondition("dictionary column submatrix is numerically singular".into())
        })?;
        let l = chol.l();
        // K = L⁻¹ G L⁻ᵀ, symmetric with the same generalized spectrum.
        let li_g = l.solve_lower_triangular(&g).ok_or_else(|| {
            Error::Precondition("dictionary column submatrix is numerically singular".into())
        })?;
        let k_mat = l
            .solve_lower_triangular(&li_g.transpose())
            .ok_or_else(|| {
                Error::Precondition("dictionary column submatrix is numerically singular".into())
            })?
            .transpose();
        // Symmetrize away the triangular-solve roundoff.
        (k_mat.clone() + k_mat.transpose()) * 0.5
    };
    let eig = reduced.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        lo = lo.min(eig.eigenvalues[i]);
        hi = hi.max(eig.eigenvalues[i]);
    }
    Ok((lo, hi))
}

/// Sampled bracket of the constants for general `p ∈ [1,2]`: random supports,
/// random sphere points, and projected-gradient polish toward each extreme.
pub fn rip_estimate(
    a: &DMatrix<f64>,
    dict: &Dict,
    t: usize,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<RipReport> {
    if a.ncols() != dict.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns, dictionary is {}x{}",
            a.ncols(),
            dict.n(),
            dict.n()
        )));
    }
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidParams(format!("fidelity exponent must lie in [1,2], got {p}")));
    }
    if t == 0 {
        return Err(Error::InvalidParams("isometry order must be at least 1".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParams("need at least one trial".into()));
    }
    let n = a.ncols();
    let t_eff = t.min(n);
    let m_design = dict.design_matrix(a);
    let b = dict.as_matrix();
    let mut rng = rng_from_seed(seed);
    let mut alpha_hat = f64::INFINITY;
    let mut beta_hat: f64 = 0.0;
    for _ in 0..trials {
        let s_idx = random_support(n, t_eff, &mut rng);
        let ms = m_design.select_columns(s_idx.iter());
        let bs = b.select_columns(s_idx.iter());
        let mut w0 = DVector::from_fn(t_eff, |_, _| standard_normal(&mut rng));
        if w0.norm() == 0.0 {
            w0[0] = 1.0;
        }
        w0 /= w0.norm();
        let lo = polish_ratio(&ms, &bs, p, w0.clone(), false);
        let hi = polish_ratio(&ms, &bs, p, w0, true);
        alpha_hat = alpha_hat.min(lo);
        beta_hat = beta_hat.max(hi);
    }
    Ok(RipReport {
        t,
        p,
        alpha: alpha_hat,
        beta: beta_hat,
        gamma: beta_hat / alpha_hat,
        mode: RipMode::Estimated,
        trials,
        supports_enumerated: trials,
    })
}

fn random_support(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (uniform01(rng) * (n - i) as f64) as usize;
        pool.swap(i, j);
    }
    let mut s = pool[..k].to_vec();
    s.sort_unstable();
    s
}

/// Local ascent (`maximize = true`) or descent of
/// `psi(w) = ‖Ms w‖_p / ‖Bs w‖₂` on the sphere; returns the best ratio seen.
/// `psi` is 0-homogeneous so renormalizing after each step changes nothing.
fn polish_ratio(
    ms: &DMatrix<f64>,
    bs: &DMatrix<f64>,
    p: f64,
    mut w: DVector<f64>,
    maximize: bool,
) -> f64 {
    let ratio = |w: &DVector<f64>| -> f64 {
        let denom = (bs * w).norm();
        if denom == 0.0 {
            return if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        lp_norm(&(ms * w), p) / denom
    };
    let mut best = ratio(&w);
    let mut step = 0.5;
    for _ in 0..60 {
        let mw = ms * &w;
        let bw = bs * &w;
        let g_val = lp_norm(&mw, p);
        let h_val = bw.norm();
        if h_val == 0.0 {
            break;
        }
        // d(‖u‖_p)/dw = Mᵀ sgn_power(u, p) ‖u‖_p^{1-p}; at u = 0 the
        // subgradient 0 stalls the polish, which is acceptable for a bracket.
        let grad_g = if g_val > 0.0 {
            ms.transpose() * sgn_power(&mw, p) * g_val.powf(1.0 - p)
        } else {
            DVector::zeros(w.len())
        };
        let grad_h = bs.transpose() * &bw / h_val;
        let grad = (grad_g * h_val - grad_h * g_val) / (h_val * h_val);
        let dir = if maximize { grad } else { -grad };
        let trial = {
            let mut v = &w + dir * step;
            let nv = v.norm();
            if nv == 0.0 {
                break;
            }
            v /= nv;
            v
        };
        let r = ratio(&trial);
        let improved = if maximize { r > best } else { r < best };
        if improved {
            best = r;
            w = trial;
            step *= 1.5;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    best
}

/// Both sides of `‖v‖_{p′} ≤ m^{1/p′−1/p}‖v‖_p` plus the verdict (with a
/// 1e-12 relative slack).
pub fn embed_inequality_check(v: &DVector<f64>, p_prime: f64, p: f64) -> Result<(f64, f64, bool)> {
    if !(1.0 <= p_prime && p_prime <= p && p <= 2.0) {
        return Err(Error::InvalidParams(format!(
            "exponents must satisfy 1 <= p' <= p <= 2, got p'={p_prime}, p={p}"
        )));
    }
    if v.is_empty() {
        return Err(Error::InvalidParams("empty vector".into()));
    }
    let m = v.len() as f64;
    let lhs = lp_norm(v, p_prime);
    let rhs = m.powf(1.0 / p_prime - 1.0 / p) * lp_norm(v, p);
    Ok((lhs, rhs, lhs <= rhs * (1.0 + 1e-12)))
}

/// Keeps the `m − ⌈θm⌉` smallest-magnitude rows and checks the sparse-
/// approximation bound `‖v_I‖_p ≤ (θm)^{−(1/p′−1/p)}‖v‖_{p′}` they satisfy.
pub fn stechkin_row_select(
    v: &DVector<f64>,
    theta: f64,
    p: f64,
    p_prime: f64,
) -> Result<(Vec<usize>, bool)> {
    if !(1.0 <= p_prime && p_prime <= p && p <= 2.0) {
        return Err(Error::InvalidParams(format!(
            "exponents must satisfy 1 <= p' <= p <= 2, got p'={p_prime}, p={p}"
        )));
    }
    if !(0.0 < theta && theta < 1.0) {
        return Err(Error::InvalidParams(format!("theta must lie in (0,1), got {theta}")));
    }
    let m = v.len();
    let dropped = (theta * m as f64).ceil() as usize;
    if dropped < 1 {
        return Err(Error::InvalidParams(format!(
            "theta*m must be at least 1, got {} * {m}",
            theta
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        v[i].abs()
            .partial_cmp(&v[j].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = order[..m - dropped].to_vec();
    kept.sort_unstable();
    let lhs = kept.iter().map(|&i| v[i].abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let rhs = lp_norm(v, p_prime) / (theta * m as f64).powf(1.0 / p_prime - 1.0 / p);
    let ok = lhs <= rhs * (1.0 + 1e-12);
    Ok((kept, ok))
}

/// The θ ∈ (0,1) with `c(1−θ) − θ ln(e/θ) = c/2`; the left side falls
/// strictly from `c` to `−1` as θ goes 0 → 1, so bisection finds the unique
/// root.
pub fn theta_root(c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParams(format!("need a positive finite constant, got {c}")));
    }
    let f = |theta: f64| c * (1.0 - theta) - theta * (std::f64::consts::E / theta).ln() - c / 2.0;
    let mut lo = 1e-300;
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NspParams {
    /// In (0, 1]; the closed right endpoint is admitted because the sparsity
    /// theorem instantiates the property at ρ = 1.
    pub rho: f64,
    pub tau: f64,
    pub s: usize,
}

/// Null-space constants derived from an isometry report, plus the order the
/// report would need for the implication to apply.
#[derive(Clone, Debug, Serialize)]
pub struct NspDerivation {
    pub params: NspParams,
    pub t_required: usize,
    /// True iff the report's order reaches `t_required`; the constants are
    /// vacuous otherwise.
    pub applicable: bool,
}

/// `t_required = ⌈((1+ρ)γκ_B/ρ)²s⌉` and `τ = (1+ρ)‖B⁻¹‖₂→₂√s/α`.
pub fn nsp_constants_from_rip(
    rip: &RipReport,
    norms: &OperatorNorms,
    rho: f64,
    s: usize,
) -> Result<NspDerivation> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParams(format!("rho must lie in (0,1], got {rho}")));
    }
    if s == 0 {
        return Err(Error::InvalidParams("null-space order must be at least 1".into()));
    }
    if !(rip.alpha > 0.0) {
        return Err(Error::Precondition(
            "isometry lower constant is zero; no null-space constants follow".into(),
        ));
    }
    let t_req = ((1.0 + rho) * rip.gamma * norms.kappa_b / rho).powi(2) * s as f64;
    if !t_req.is_finite() {
        return Err(Error::Precondition("required order overflows".into()));
    }
    let t_required = t_req.ceil() as usize;
    let tau = (1.0 + rho) * norms.norm_b_inv * (s as f64).sqrt() / rip.alpha;
    Ok(NspDerivation {
        params: NspParams { rho, tau, s },
        t_required,
        applicable: rip.t >= t_required,
    })
}

/// Slack in `‖(B⁻¹v)_S‖₁ ≤ ρ‖(B⁻¹v)_{S^c}‖₁ + τ√s‖Av‖_p` for one `(v, S)`;
/// nonnegative iff the inequality holds there.
pub fn nsp_check_vector(
    a: &DMatrix<f64>,
    dict: &Dict,
    v: &DVector<f64>,
    s_set: &[usize],
    nsp: &NspParams,
    p: f64,
) -> Result<f64> {
    if s_set.len() != nsp.s {
        return Err(Error::InvalidParams(format!(
            "index set has {} entries, the property is of order {}",
            s_set.len(),
            nsp.s
        )));
    }
    if v.len() != dict.n() || a.ncols() != dict.n() {
        return Err(Error::DimensionMismatch(format!(
            "vector length {} vs dictionary size {}",
            v.len(),
            dict.n()
        )));
    }
    let mut sorted = s_set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != s_set.len() || sorted.last().is_some_and(|&j| j >= dict.n()) {
        return Err(Error::InvalidParams("index set has duplicates or out-of-range entries".into()));
    }
    let w = dict.apply_inv(v);
    let on: f64 = s_set.iter().map(|&j| w[j].abs()).sum();
    let total: f64 = w.iter().map(|x| x.abs()).sum();
    let off = total - on;
    let fidelity = lp_norm(&(a * v), p);
    Ok(nsp.rho * off + nsp.tau * (nsp.s as f64).sqrt() * fidelity - on)
}

/// Searches for a violating pair: Gaussian candidates interleaved with
/// null-space directions of `A` (the hard cases, since the fidelity term
/// vanishes there), each tested against its own worst index set — the `s`
/// largest entries of `|B⁻¹v|`. Sound but incomplete: `None` is not a proof.
pub fn nsp_falsify(
    a: &DMatrix<f64>,
    dict: &Dict,
    nsp: &NspParams,
    p: f64,
    budget: usize,
    seed: u64,
) -> Result<Option<(DVector<f64>, Vec<usize>)>> {
    if budget == 0 {
        return Err(Error::Precondition("search budget must be at least 1".into()));
    }
    let n = a.ncols();
    if n != dict.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {n} columns, dictionary is {}x{}",
            dict.n(),
            dict.n()
        )));
    }
    if nsp.s > n {
        return Err(Error::InvalidParams(format!(
            "order {} exceeds dimension {n}",
            nsp.s
        )));
    }
    let null_basis = null_space_basis(a);
    let mut rng = rng_from_seed(seed);
    for k in 0..budget {
        let v = if !null_basis.is_empty() && k % 2 == 1 {
            let mut v = DVector::zeros(n);
            for col in &null_basis {
                v += col * standard_normal(&mut rng);
            }
            v
        } else {
            DVector::from_fn(n, |_, _| standard_normal(&mut rng))
        };
        let w = dict.apply_inv(&v);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            w[j].abs()
                .partial_cmp(&w[i].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let mut s_set: Vec<usize> = order[..nsp.s].to_vec();
        s_set.sort_unstable();
        if nsp_check_vector(a, dict, &v, &s_set, nsp, p)? < 0.0 {
            return Ok(Some((v, s_set)));
        }
    }
    Ok(None)
}

/// Orthonormal basis of `null(A)` from the eigenvectors of `AᵀA` at
/// (numerically) zero eigenvalues.
fn null_space_basis(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-12 * lam_max.max(1e-300);
    let mut basis = Vec::new();
    for i in 0..n {
        if eig.eigenvalues[i] <= tol {
            basis.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{generate_matrix, random_conditioned_b, EnsembleKind, EnsembleSpec};
    use approx::assert_relative_eq;

    #[test]
    fn combinations_are_lexicographic() {
        let all: Vec<Vec<usize>> = CombinationIter::new(4, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(CombinationIter::new(5, 2).count(), 10);
        assert_eq!(CombinationIter::new(3, 0).collect::<Vec<_>>(), vec![Vec::<usize>::new()]);
        assert_eq!(CombinationIter::new(2, 3).count(), 0);
        assert_eq!(CombinationIter::new(3, 3).collect::<Vec<_>>(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn support_counting_caps_early() {
        assert_eq!(count_supports(8, 2, 1_000), 28);
        assert_eq!(count_supports(14, 4, 1_000_000), 1001);
        assert!(count_supports(30, 15, 2_000_000) > 2_000_000);
    }

    #[test]
    fn exact_identity_is_isometry() {
        let a = DMatrix::<f64>::identity(2, 2);
        let dict = Dict::identity(2);
        let rep = rip_exact_l2(&a, &dict, 1).unwrap();
        assert_relative_eq!(rep.alpha, 1.0, max_relative = 1e-12);
        assert_relative_eq!(rep.beta, 1.0, max_relative = 1e-12);
        assert_eq!(rep.mode, RipMode::ExactL2);
        assert_eq!(rep.supports_enumerated, 2);
    }

    #[test]
    fn exact_diagonal_reads_column_norms() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let rep = rip_exact_l2(&a, &Dict::identity(2), 1).unwrap();
        assert_relative_eq!(rep.alpha, 1.0, max_relative = 1e-12);
        assert_relative_eq!(rep.beta, 2.0, max_relative = 1e-12);
        assert_relative_eq!(rep.gamma, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn exact_order_one_is_column_norm_enumeration() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Gaussian,
            m: 4,
            n: 5,
            scale: 0.5,
            seed: 2024,
        };
        let a = generate_matrix(&spec).unwrap();
        let rep = rip_exact_l2(&a, &Dict::identity(5), 1).unwrap();
        let norms: Vec<f64> = (0..5).map(|j| a.column(j).norm()).collect();
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().cloned().fold(0.0_f64, f64::max);
        assert_relative_eq!(rep.alpha, lo, max_relative = 1e-12);
        assert_relative_eq!(rep.beta, hi, max_relative = 1e-12);
    }

    #[test]
    fn exact_order_collapses_at_dimension() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let hi = rip_exact_l2(&a, &Dict::identity(3), 5).unwrap();
        let full = rip_exact_l2(&a, &Dict::identity(3), 3).unwrap();
        assert_eq!(hi.supports_enumerated, 1);
        assert_relative_eq!(hi.alpha, full.alpha);
        assert_relative_eq!(hi.beta, full.beta);
        assert_relative_eq!(hi.alpha, 1.0, max_relative = 1e-12);
        assert_relative_eq!(hi.beta, 3.0, max_relative = 1e-12);
        assert_eq!(hi.t, 5);
    }

    #[test]
    fn exact_general_dictionary_ratio() {
        // AB = diag(2,3); B columns have norms (2,1), so the per-coordinate
        // ratios are 1 and 3 regardless of the order used.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let dict = Dict::from_matrix(b).unwrap();
        let t1 = rip_exact_l2(&a, &dict, 1).unwrap();
        assert_relative_eq!(t1.alpha, 1.0, max_relative = 1e-12);
        assert_relative_eq!(t1.beta, 3.0, max_relative = 1e-12);
        let t2 = rip_exact_l2(&a, &dict, 2).unwrap();
        assert_relative_eq!(t2.alpha, 1.0, max_relative = 1e-12);
        assert_relative_eq!(t2.beta, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn exact_budget_guard_trips() {
        let a = DMatrix::<f64>::zeros(2, 30);
        match rip_exact_l2(&a, &Dict::identity(30), 15) {
            Err(Error::BudgetExceeded { count, budget, .. }) => {
                assert!(count > budget as u128);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
        assert!(rip_exact_l2(&a, &Dict::identity(30), 0).is_err());
    }

    #[test]
    fn estimate_identity_any_exponent() {
        let a = DMatrix::<f64>::identity(3, 3);
        let dict = Dict::identity(3);
        for &p in &[1.0, 1.5, 2.0] {
            let rep = rip_estimate(&a, &dict, 1, p, 20, 7).unwrap();
            assert_relative_eq!(rep.alpha, 1.0, max_relative = 1e-12);
            assert_relative_eq!(rep.beta, 1.0, max_relative = 1e-12);
            assert!(rep.gamma_is_optimistic());
        }
    }

    #[test]
    fn estimate_orthogonal_matrix_is_tight() {
        let s = 0.5_f64.sqrt();
        let a = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let rep = rip_estimate(&a, &Dict::identity(2), 2, 2.0, 50, 3).unwrap();
        // The ratio is identically 1 on the sphere.
        assert_relative_eq!(rep.alpha, 1.0, max_relative = 1e-9);
        assert_relative_eq!(rep.beta, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn estimate_respects_exact_sandwich() {
        for seed in 0..4u64 {
            let spec = EnsembleSpec {
                kind: EnsembleKind::Gaussian,
                m: 6,
                n: 8,
                scale: crate::ensembles::default_scale(2.0, 6),
                seed: 100 + seed,
            };
            let a = generate_matrix(&spec).unwrap();
            let dict = if seed % 2 == 0 {
                Dict::identity(8)
            } else {
                Dict::from_matrix(random_conditioned_b(8, 5.0, seed).unwrap()).unwrap()
            };
            let exact = rip_exact_l2(&a, &dict, 2).unwrap();
            let est = rip_estimate(&a, &dict, 2, 2.0, 200, 17 + seed).unwrap();
            assert!(est.alpha >= exact.alpha - 1e-10, "seed {seed}");
            assert!(est.beta <= exact.beta + 1e-10, "seed {seed}");
            assert!(est.gamma <= exact.gamma + 1e-10, "seed {seed}");
            // The polish should make the bracket informative, not vacuous.
            assert!(est.beta >= 0.8 * exact.beta, "seed {seed}: {} vs {}", est.beta, exact.beta);
            assert!(est.alpha <= 1.3 * exact.alpha, "seed {seed}");
        }
    }

    #[test]
    fn embedding_inequality_cases() {
        let flat = DVector::from_element(9, 1.0);
        let (lhs, rhs, ok) = embed_inequality_check(&flat, 1.0, 2.0).unwrap();
        assert!(ok);
        // Flat vectors attain equality.
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);

        let spike = DVector::from_fn(9, |i, _| if i == 4 { 3.0 } else { 0.0 });
        let (lhs, rhs, ok) = embed_inequality_check(&spike, 1.0, 2.0).unwrap();
        assert!(ok);
        assert_relative_eq!(lhs * 3.0, rhs, max_relative = 1e-12); // m^{1/2} slack

        assert!(embed_inequality_check(&flat, 2.0, 1.0).is_err());
        assert!(embed_inequality_check(&flat, 0.5, 2.0).is_err());
    }

    #[test]
    fn embedding_inequality_random_property() {
        let mut rng = rng_from_seed(41);
        for &(pp, p) in &[(1.0, 2.0), (1.0, 1.5), (1.5, 2.0)] {
            for _ in 0..10_000 {
                let v = DVector::from_fn(7, |_, _| standard_normal(&mut rng));
                let (_, _, ok) = embed_inequality_check(&v, pp, p).unwrap();
                assert!(ok);
            }
        }
    }

    #[test]
    fn stechkin_selects_smallest_rows() {
        let v = DVector::from_vec(vec![3.0, -1.0, 2.0, 0.5]);
        let (kept, ok) = stechkin_row_select(&v, 0.3, 2.0, 1.0).unwrap();
        // ceil(0.3*4) = 2 rows dropped; the two smallest magnitudes stay.
        assert_eq!(kept, vec![1, 3]);
        assert!(ok);
    }

    #[test]
    fn stechkin_flat_and_spike() {
        let flat = DVector::from_element(10, 2.0);
        for &(pp, p) in &[(1.0, 2.0), (1.0, 1.5), (1.5, 2.0)] {
            for &theta in &[0.1, 0.3, 0.5] {
                let (_, ok) = stechkin_row_select(&flat, theta, p, pp).unwrap();
                assert!(ok, "flat theta={theta}");
            }
        }
        let mut sp = DVector::from_element(10, 1e-3);
        sp[7] = 1e6;
        let (kept, ok) = stechkin_row_select(&sp, 0.1, 2.0, 1.0).unwrap();
        assert!(!kept.contains(&7));
        assert!(ok);
    }

    #[test]
    fn stechkin_random_property() {
        let mut rng = rng_from_seed(43);
        for &(pp, p) in &[(1.0, 2.0), (1.0, 1.5), (1.5, 2.0)] {
            for &theta in &[0.1, 0.3, 0.5] {
                for _ in 0..10_000 {
                    let v = DVector::from_fn(11, |_, _| standard_normal(&mut rng));
                    let (_, ok) = stechkin_row_select(&v, theta, p, pp).unwrap();
                    assert!(ok);
                }
            }
        }
    }

    #[test]
    fn theta_root_satisfies_equation() {
        for k in -8..=8 {
            let c = 10.0_f64.powf(k as f64 / 4.0);
            let theta = theta_root(c).unwrap();
            assert!(theta > 0.0 && theta < 1.0);
            let lhs = c * (1.0 - theta) - theta * (std::f64::consts::E / theta).ln();
            assert!(
                (lhs - c / 2.0).abs() <= 1e-10,
                "c={c}: residual {}",
                lhs - c / 2.0
            );
        }
    }

    #[test]
    fn theta_root_monotone_with_frozen_values() {
        let t01 = theta_root(0.1).unwrap();
        let t1 = theta_root(1.0).unwrap();
        let t10 = theta_root(10.0).unwrap();
        assert!(t01 < t1 && t1 < t10);
        assert_relative_eq!(t01, 0.008525614017148825, max_relative = 1e-9);
        assert_relative_eq!(t1, 0.12178883703361892, max_relative = 1e-9);
        assert_relative_eq!(t10, 0.42144027857878796, max_relative = 1e-9);
        assert!(theta_root(0.0).is_err());
        assert!(theta_root(-2.0).is_err());
    }

    fn unit_report(t: usize, gamma: f64) -> RipReport {
        RipReport {
            t,
            p: 2.0,
            alpha: 1.0,
            beta: gamma,
            gamma,
            mode: RipMode::ExactL2,
            trials: 0,
            supports_enumerated: 0,
        }
    }

    #[test]
    fn nsp_constants_arithmetic() {
        let norms = OperatorNorms {
            norm_b: 1.0,
            norm_b_inv: 1.0,
            kappa_b: 1.0,
        };
        let d = nsp_constants_from_rip(&unit_report(4, 1.0), &norms, 1.0, 1).unwrap();
        assert_eq!(d.t_required, 4);
        assert!(d.applicable);
        assert_relative_eq!(d.params.tau, 2.0);

        let d = nsp_constants_from_rip(&unit_report(3, 1.0), &norms, 1.0, 1).unwrap();
        assert_eq!(d.t_required, 4);
        assert!(!d.applicable);

        let d = nsp_constants_from_rip(&unit_report(48, 2.0), &norms, 1.0, 3).unwrap();
        assert_eq!(d.t_required, 48);
        assert!(d.applicable);

        // alpha doubled => tau halved
        let mut rep = unit_report(4, 1.0);
        rep.alpha = 2.0;
        rep.beta = 2.0;
        let d = nsp_constants_from_rip(&rep, &norms, 1.0, 1).unwrap();
        assert_relative_eq!(d.params.tau, 1.0);

        assert!(nsp_constants_from_rip(&unit_report(4, 1.0), &norms, 0.0, 1).is_err());
        assert!(nsp_constants_from_rip(&unit_report(4, 1.0), &norms, 1.5, 1).is_err());
    }

    #[test]
    fn nsp_margin_cases() {
        let a = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let dict = Dict::identity(4);
        let nsp = NspParams { rho: 0.5, tau: 3.0, s: 2 };

        let zero = DVector::zeros(4);
        assert_eq!(nsp_check_vector(&a, &dict, &zero, &[0, 1], &nsp, 2.0).unwrap(), 0.0);

        // Mass only off S: the left side vanishes.
        let off = DVector::from_vec(vec![0.0, 0.0, 1.0, -2.0]);
        assert!(nsp_check_vector(&a, &dict, &off, &[0, 1], &nsp, 2.0).unwrap() >= 0.0);

        // Flat null-space vector: margin = 2(rho - 1) exactly.
        let flat = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let m = nsp_check_vector(&a, &dict, &flat, &[0, 1], &nsp, 2.0).unwrap();
        assert_relative_eq!(m, -1.0, max_relative = 1e-12);
        let nsp1 = NspParams { rho: 1.0, tau: 3.0, s: 2 };
        let m1 = nsp_check_vector(&a, &dict, &flat, &[0, 1], &nsp1, 2.0).unwrap();
        assert!(m1.abs() <= 1e-12);

        assert!(nsp_check_vector(&a, &dict, &flat, &[0], &nsp, 2.0).is_err());
        assert!(nsp_check_vector(&a, &dict, &flat, &[0, 0], &nsp, 2.0).is_err());
        assert!(nsp_check_vector(&a, &dict, &flat, &[0, 9], &nsp, 2.0).is_err());
    }

    #[test]
    fn falsifier_respects_dominating_fidelity() {
        // For identity A the fidelity term dwarfs anything the left side can
        // collect, so no counterexample exists and none may be reported.
        let a = DMatrix::<f64>::identity(3, 3);
        let dict = Dict::identity(3);
        let nsp = NspParams { rho: 0.5, tau: 5.0, s: 2 };
        let out = nsp_falsify(&a, &dict, &nsp, 2.0, 2000, 9).unwrap();
        assert!(out.is_none());
        assert!(nsp_falsify(&a, &dict, &nsp, 2.0, 0, 9).is_err());
    }

    #[test]
    fn falsifier_finds_null_space_violation() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let dict = Dict::identity(4);
        let nsp = NspParams { rho: 0.5, tau: 0.0, s: 2 };
        let found = nsp_falsify(&a, &dict, &nsp, 2.0, 50, 1).unwrap();
        let (v, s_set) = found.expect("tau = 0 with a nontrivial null space must be violated");
        assert_eq!(s_set.len(), 2);
        let margin = nsp_check_vector(&a, &dict, &v, &s_set, &nsp, 2.0).unwrap();
        assert!(margin < 0.0);
    }

    #[test]
    fn rip_to_nsp_consistency_at_desk_scale() {
        // Orthogonal A: gamma = 1 at every order, so the derivation applies
        // with room to spare and the falsifier must come up empty.
        let a = random_conditioned_b(6, 1.0, 77).unwrap();
        let dict = Dict::identity(6);
        let rip = rip_exact_l2(&a, &dict, 5).unwrap();
        assert!(rip.gamma < 1.0 + 1e-9);
        let norms = dict.operator_norms();
        let d = nsp_constants_from_rip(&rip, &norms, 1.0, 1).unwrap();
        assert!(d.applicable, "t_required = {}", d.t_required);
        let out = nsp_falsify(&a, &dict, &d.params, 2.0, 100_000, 31).unwrap();
        assert!(out.is_none());
    }
}
