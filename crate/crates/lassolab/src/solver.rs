//! Proximal (sub)gradient solver in `B^{-1}` coordinates.
//!
//! After the substitution `w = B^{-1} z`, `M = A B`, the program reads
//! `min_w (1/q) ||y - M w||_p^q + (lambda/r) ||w||_1^r` and one iteration is
//! `w <- prox_l1_power(w - sigma g, sigma lambda, r)` with `g` the fidelity
//! (sub)gradient. Smooth regimes (`p > 1`) run backtracking steps with
//! monotone momentum; `p = 1` runs diminishing steps `sigma_0 / sqrt(k)`
//! with best-iterate tracking. The stopping criterion is the stationarity
//! certificate residual, never an iteration-count heuristic; an optional
//! polish stage solves the support-restricted problem exactly and is
//! accepted only when it does not worsen the objective.

use nalgebra::{DMatrix, DVector};

use crate::certificate::{check_stationarity, nu_from_parts, Certificate};
use crate::model::{
    objective_value, support, ProblemInstance, ProblemParams, Solution, DEFAULT_SUPPORT_ETA,
};
use crate::prox::{fidelity_grad_design, lp_norm, prox_l1_power, soft_threshold_scalar};
use crate::{Error, Result};

/// Step-size policy. `Auto` resolves to backtracking for `p > 1` and
/// diminishing for `p = 1` (the fidelity gradient is piecewise constant in
/// the residual signs there, so curvature-based line search has nothing to
/// measure).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Auto,
    Backtracking,
    Diminishing,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Certificate residual at which the solve stops and `certified` is set.
    pub tol_kkt: f64,
    /// Relative objective progress under which a certificate check fires.
    pub tol_obj: f64,
    pub step_mode: StepMode,
    pub acceleration: bool,
    pub polish: bool,
    /// Reserved for stochastic variants; the current iteration is
    /// deterministic and ignores it.
    pub seed: u64,
    /// Relative support threshold used for certificates and polish.
    pub eta: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol_kkt: 1e-8,
            tol_obj: 1e-12,
            step_mode: StepMode::Auto,
            acceleration: true,
            polish: true,
            seed: 0,
            eta: DEFAULT_SUPPORT_ETA,
        }
    }
}

/// Per-solve diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct SolverStats {
    pub mode_used: StepMode,
    pub sigma0: f64,
    pub polish_accepted: bool,
    /// Hit an essential nonsmooth point (zero residual, q < p).
    pub nonsmooth_termination: bool,
    /// Largest objective increase across accepted iterates (backtracking
    /// mode keeps this at floating-point dust).
    pub max_objective_increase: f64,
    pub cert_checks: usize,
}

/// A sampled regularization path: one solution per grid point, solved in
/// ascending `lambda` order with warm starts.
#[derive(Clone, Debug)]
pub struct PathResult {
    pub lambda_grid: Vec<f64>,
    pub solutions: Vec<Solution>,
    /// `||y - A z||_p` per grid point.
    pub residual_p_norms: Vec<f64>,
}

pub fn solve(
    params: &ProblemParams,
    instance: &ProblemInstance,
    opts: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<Solution> {
    solve_detailed(params, instance, opts, warm_start).map(|(s, _)| s)
}

pub fn solve_detailed(
    params: &ProblemParams,
    instance: &ProblemInstance,
    opts: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<(Solution, SolverStats)> {
    if !(params.lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "solve requires lambda > 0, got {}",
            params.lambda
        )));
    }
    if opts.max_iters == 0 || !(opts.tol_kkt > 0.0) || !(opts.tol_obj > 0.0) {
        return Err(Error::Precondition(
            "solver options: max_iters >= 1 and positive tolerances required".into(),
        ));
    }
    if let Some(w) = warm_start {
        if w.len() != instance.n() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has length {} but A has {} columns",
                w.len(),
                instance.n()
            )));
        }
    }

    let n = instance.n();
    let mode = match opts.step_mode {
        StepMode::Auto => {
            if params.p > 1.0 {
                StepMode::Backtracking
            } else {
                StepMode::Diminishing
            }
        }
        other => other,
    };

    // Zero data: both terms vanish at z = 0, the global minimum.
    if crate::prox::linf_norm(instance.y()) == 0.0 {
        let stats = SolverStats {
            mode_used: mode,
            sigma0: 0.0,
            polish_accepted: false,
            nonsmooth_termination: false,
            max_objective_increase: 0.0,
            cert_checks: 0,
        };
        return Ok((
            Solution {
                z: vec![0.0; n],
                objective: 0.0,
                support: Vec::new(),
                iterations: 0,
                kkt_residual: 0.0,
                certified: true,
            },
            stats,
        ));
    }

    let m_design = instance.design_matrix();
    let y = instance.y().clone();
    let sigma0 = 1.0 / (spectral_norm_sq_estimate(&m_design, 30) + 1.0);

    let w0 = match warm_start {
        Some(z) => instance.dict().apply_inv(z),
        None => DVector::zeros(n),
    };

    let mut driver = Driver {
        params: *params,
        instance,
        m_design: &m_design,
        y: &y,
        opts: *opts,
        stats: SolverStats {
            mode_used: mode,
            sigma0,
            polish_accepted: false,
            nonsmooth_termination: false,
            max_objective_increase: 0.0,
            cert_checks: 0,
        },
        best_w: w0.clone(),
        best_obj: f64::INFINITY,
        best_cert: None,
        certified: None,
        iterations: 0,
    };
    driver.best_obj = driver.objective_w(&w0);

    match mode {
        StepMode::Backtracking => driver.run_backtracking(w0, sigma0),
        StepMode::Diminishing => driver.run_diminishing(w0, sigma0),
        StepMode::Auto => unreachable!("resolved above"),
    }

    // Final reconciliation: make sure a certificate exists for the answer,
    // and give polish a last chance if it never fired.
    if driver.best_cert.is_none() {
        driver.consider_candidates();
    }
    let (solution, stats) = driver.finish()?;
    Ok((solution, stats))
}

/// Solves along a strictly increasing positive grid, warm-starting each
/// point from the previous solution.
pub fn solve_path(
    params: &ProblemParams,
    instance: &ProblemInstance,
    lambda_grid: &[f64],
    opts: &SolverOptions,
) -> Result<PathResult> {
    if lambda_grid.is_empty() {
        return Err(Error::Precondition("empty lambda grid".into()));
    }
    for pair in lambda_grid.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::Precondition(format!(
                "lambda grid must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if !(lambda_grid[0] > 0.0) {
        return Err(Error::Precondition(format!(
            "lambda grid must be positive, starts at {}",
            lambda_grid[0]
        )));
    }

    let mut solutions = Vec::with_capacity(lambda_grid.len());
    let mut residuals = Vec::with_capacity(lambda_grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in lambda_grid {
        let pr = params.with_lambda(lambda)?;
        let sol = solve(&pr, instance, opts, warm.as_ref())?;
        let z = sol.z_vector();
        residuals.push(lp_norm(&(instance.y() - instance.a() * &z), params.p));
        warm = Some(z);
        solutions.push(sol);
    }
    Ok(PathResult {
        lambda_grid: lambda_grid.to_vec(),
        solutions,
        residual_p_norms: residuals,
    })
}

/// Exact cyclic coordinate descent for the standard LASSO
/// `(1/2)||y - A z||_2^2 + lambda ||z||_1` with `B = I`.
///
/// Every 1-D update is a closed-form soft threshold; cycles repeat until the
/// objective decrease drops below `1e-14 * (1 + objective)`. Serves as the
/// independent oracle the main solver is tested against.
pub fn coordinate_descent_lasso(instance: &ProblemInstance, lambda: f64) -> Result<Solution> {
    if !instance.dict().is_identity() {
        return Err(Error::Precondition(
            "coordinate descent oracle requires B = identity".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "coordinate descent requires lambda > 0, got {lambda}"
        )));
    }
    let a = instance.a();
    let y = instance.y();
    let n = a.ncols();
    let col_sq: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();

    let mut z = DVector::zeros(n);
    let mut resid = y.clone();
    let l1 = |v: &DVector<f64>| -> f64 { v.iter().map(|x| x.abs()).sum() };
    let mut obj = 0.5 * resid.norm_squared();
    let mut cycles = 0usize;
    for cycle in 1..=100_000usize {
        cycles = cycle;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let aj = a.column(j);
            let rho = aj.dot(&resid) + col_sq[j] * z[j];
            let z_new = soft_threshold_scalar(rho, lambda) / col_sq[j];
            let dz: f64 = z_new - z[j];
            if dz != 0.0 {
                resid.axpy(-dz, &aj, 1.0);
                z[j] = z_new;
            }
        }
        let new_obj = 0.5 * resid.norm_squared() + lambda * l1(&z);
        let decrease = obj - new_obj;
        obj = new_obj;
        if decrease < 1e-14 * (1.0 + new_obj.abs()) {
            break;
        }
    }

    let pr = ProblemParams::new(2.0, 2.0, 1.0, lambda)?;
    let objective = objective_value(&pr, instance, &z)?;
    let cert = check_stationarity(&pr, instance, &z, 1e-6, DEFAULT_SUPPORT_ETA)?;
    Ok(Solution {
        z: z.as_slice().to_vec(),
        objective,
        support: cert.s_lambda.clone(),
        iterations: cycles,
        kkt_residual: cert.residual(),
        certified: cert.passed,
    })
}

/// Power-method estimate of `||M||_2^2` (largest eigenvalue of `M^T M`).
fn spectral_norm_sq_estimate(m: &DMatrix<f64>, iters: usize) -> f64 {
    let n = m.ncols();
    // Deterministic start with a mild index ramp so it is never orthogonal
    // to the top eigenvector of a structured M.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.3 * ((i % 7) as f64 - 3.0) / 7.0);
    let norm = v.norm();
    v /= norm;
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = m.tr_mul(&(m * &v));
        lam = w.norm();
        if lam == 0.0 {
            return 0.0;
        }
        v = w / lam;
    }
    lam
}

const CERT_PERIOD_BT: usize = 25;
const CERT_PERIOD_DIM: usize = 100;
/// Stop after this many certificate checks with no residual progress while
/// the objective is numerically stationary (polish still runs afterwards).
const STALL_LIMIT: usize = 20;
/// Longest magnitude-ordering prefix tried as a polish support.
const POLISH_PREFIX_CAP: usize = 12;

struct Driver<'a> {
    params: ProblemParams,
    instance: &'a ProblemInstance,
    m_design: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    opts: SolverOptions,
    stats: SolverStats,
    best_w: DVector<f64>,
    best_obj: f64,
    best_cert: Option<Certificate>,
    /// Best point whose certificate passed, kept separately because a
    /// marginally lower uncertified iterate may displace it from `best_w`.
    certified: Option<(DVector<f64>, f64, Certificate)>,
    iterations: usize,
}

impl<'a> Driver<'a> {
    fn smooth_part(&self, w: &DVector<f64>) -> f64 {
        lp_norm(&(self.y - self.m_design * w), self.params.p).powf(self.params.q) / self.params.q
    }

    fn objective_w(&self, w: &DVector<f64>) -> f64 {
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        self.smooth_part(w) + self.params.lambda / self.params.r * l1.powf(self.params.r)
    }

    fn certificate_of(&self, w: &DVector<f64>) -> Result<Certificate> {
        let z = self.instance.dict().apply(w);
        check_stationarity(&self.params, self.instance, &z, self.opts.tol_kkt, self.opts.eta)
    }

    /// Record `w` as best if it improves the objective.
    fn offer(&mut self, w: &DVector<f64>, obj: f64) {
        if obj < self.best_obj {
            self.best_obj = obj;
            self.best_w = w.clone();
            self.best_cert = None; // stale
        }
    }

    /// Remember the best-objective point whose certificate passed.
    fn note_certified(&mut self, w: &DVector<f64>, obj: f64, cert: &Certificate) {
        if self.certified.as_ref().map_or(true, |(_, o, _)| obj < *o) {
            self.certified = Some((w.clone(), obj, cert.clone()));
        }
    }

    /// Evaluate certificates for the incumbent and its polish; keep the
    /// better candidate. Returns the current best residual.
    fn consider_candidates(&mut self) -> f64 {
        self.stats.cert_checks += 1;
        if self.best_cert.is_none() {
            self.best_cert = self.certificate_of(&self.best_w.clone()).ok();
        }
        if let Some(c) = self.best_cert.clone().filter(|c| c.passed) {
            self.note_certified(&self.best_w.clone(), self.best_obj, &c);
        }
        let mut best_res = self
            .best_cert
            .as_ref()
            .map(|c| c.residual())
            .unwrap_or(f64::INFINITY);

        if self.opts.polish {
            let cand = self.polish_candidate();
            if let Some(wp) = cand {
                let obj = self.objective_w(&wp);
                if obj.is_finite() && obj <= self.best_obj + 1e-12 * (1.0 + self.best_obj.abs()) {
                    if let Ok(cert) = self.certificate_of(&wp) {
                        let res = cert.residual();
                        if cert.passed {
                            self.note_certified(&wp, obj, &cert);
                        }
                        if res < best_res || (cert.passed && obj < self.best_obj) {
                            self.best_w = wp;
                            self.best_obj = obj;
                            self.best_cert = Some(cert);
                            self.stats.polish_accepted = true;
                            best_res = res;
                        }
                    }
                }
            }
        }
        best_res
    }

    fn polish_candidate(&self) -> Option<DVector<f64>> {
        let p = self.params.p;
        let q = self.params.q;
        let r = self.params.r;
        let mut best: Option<(f64, DVector<f64>)> = None;
        for s_idx in self.candidate_supports() {
            let cand = if p == 2.0 {
                self.polish_restricted_p2(&s_idx)
            } else if p == 1.0 && q == 1.0 && r == 1.0 {
                self.polish_lad_vertex(&s_idx)
            } else {
                None
            };
            if let Some(w) = cand {
                let obj = self.objective_w(&w);
                if obj.is_finite() && best.as_ref().map_or(true, |(b, _)| obj < *b) {
                    best = Some((obj, w));
                }
            }
        }
        best.map(|(_, w)| w)
    }

    /// Candidate supports for polish: the thresholded support of the
    /// incumbent plus every prefix of its magnitude ordering up to a small
    /// cap (subgradient iterates carry dust well above `eta` with no clean
    /// gap, so the nominal support alone can hide the true one), plus the
    /// empty set.
    fn candidate_supports(&self) -> Vec<Vec<usize>> {
        fn push_unique(sets: &mut Vec<Vec<usize>>, s: Vec<usize>) {
            if !sets.contains(&s) {
                sets.push(s);
            }
        }
        let w = &self.best_w;
        let mut sets = Vec::new();
        push_unique(&mut sets, support(w, self.opts.eta));
        let mut mags: Vec<(f64, usize)> = w.iter().enumerate().map(|(i, x)| (x.abs(), i)).collect();
        mags.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let max = mags[0].0;
        if max > 0.0 {
            let floor = 1e-12 * max;
            let cap = mags
                .iter()
                .take_while(|&&(x, _)| x > floor)
                .count()
                .min(POLISH_PREFIX_CAP);
            for k in 1..=cap {
                let mut s: Vec<usize> = mags[..k].iter().map(|&(_, i)| i).collect();
                s.sort_unstable();
                push_unique(&mut sets, s);
            }
        }
        push_unique(&mut sets, Vec::new());
        sets
    }

    /// Exact stationary point on the incumbent's support and sign pattern
    /// (p = 2, any q, r). On the support, stationarity reads
    /// `M_S^T (y - M_S w_S) = nu sgn(w_S)`, so `w_S(nu) = u - nu h` with
    /// `u = G^{-1} M_S^T y`, `h = G^{-1} sgn`, `G = M_S^T M_S` — affine in
    /// the scalar `nu`, which itself must solve
    /// `nu = lambda ||res(nu)||_2^{2-q} (sgn^T w_S(nu))^{r-1}`.
    /// Because `u` is the least-squares fit, `||res(nu)||^2 = a + nu^2 b`
    /// splits orthogonally and the equation is one-dimensional root finding.
    fn polish_restricted_p2(&self, s_idx: &[usize]) -> Option<DVector<f64>> {
        let n = self.best_w.len();
        if s_idx.is_empty() {
            // exact zero is a legitimate candidate only for r = 1
            return if self.params.r == 1.0 {
                Some(DVector::zeros(n))
            } else {
                None
            };
        }
        let k = s_idx.len();
        let ms = self.m_design.select_columns(s_idx.iter());
        let g = ms.tr_mul(&ms);
        let chol = nalgebra::Cholesky::new(g)?;
        let sgn = DVector::from_fn(k, |i, _| self.best_w[s_idx[i]].signum());
        let u = chol.solve(&ms.tr_mul(self.y));
        let h = chol.solve(&sgn);

        let res0 = self.y - &ms * &u;
        let d = &ms * &h;
        let a2 = res0.norm_squared();
        let b2 = d.norm_squared();
        let l0 = sgn.dot(&u);
        let lh = sgn.dot(&h); // sgn^T G^{-1} sgn >= 0
        let q = self.params.q;
        let r = self.params.r;
        let lambda = self.params.lambda;

        let l1_at = |nu: f64| -> f64 { l0 - nu * lh };
        let rhs = |nu: f64| -> f64 {
            let rsq = a2 + nu * nu * b2;
            let res_pow = crate::prox::pow_conv(rsq.max(0.0), (2.0 - q) / 2.0);
            let l1 = l1_at(nu);
            if l1 < 0.0 {
                return f64::NAN; // outside the valid sign region
            }
            lambda * res_pow * crate::prox::pow_conv(l1, r - 1.0)
        };
        let phi = |nu: f64| -> f64 { nu - rhs(nu) };

        let nu_star = if q == 2.0 && r == 1.0 {
            lambda
        } else if q == 2.0 && r == 2.0 {
            let denom = 1.0 + lambda * lh;
            if denom <= 0.0 {
                return None;
            }
            lambda * l0 / denom
        } else if q == 2.0 {
            // rhs is nonincreasing in nu here: phi is strictly increasing.
            let hi = lambda * crate::prox::pow_conv(l0.max(0.0), r - 1.0);
            if !(hi > 0.0) || !hi.is_finite() {
                return None;
            }
            bisect_root(&phi, 0.0, hi, 200)?
        } else {
            // General q: scan a geometric bracket around the incumbent's
            // multiplier, then bisect the first sign change.
            let w_l1: f64 = self.best_w.iter().map(|x| x.abs()).sum();
            let res_norm = lp_norm(&(self.y - self.m_design * &self.best_w), 2.0);
            let anchor = nu_from_parts(&self.params, res_norm, w_l1);
            let anchor = if anchor.is_finite() && anchor > 0.0 {
                anchor
            } else {
                1.0
            };
            scan_then_bisect(&phi, anchor)?
        };
        if !(nu_star > 0.0) || !nu_star.is_finite() {
            return None;
        }

        let ws = &u - &h * nu_star;
        // Reject sign flips: the scalar equation assumed sgn(w_S) fixed.
        for i in 0..k {
            if !(ws[i] * sgn[i] > 0.0) || !ws[i].is_finite() {
                return None;
            }
        }
        let mut w = DVector::zeros(n);
        for (i, &j) in s_idx.iter().enumerate() {
            w[j] = ws[i];
        }
        Some(w)
    }

    /// LAD-LASSO vertex search (p = q = r = 1): an optimal point can be
    /// taken with `|S|` residual entries exactly zero, so fit a support
    /// exactly through the rows of smallest current residual and iterate
    /// that vertex map (support and rows re-read from each new vertex) until
    /// it stabilizes, keeping the best vertex visited by objective value.
    /// `seed_support` restricts the first vertex; later rounds follow the
    /// map. Round 0 ranks rows by the full incumbent's residual — zeroing
    /// dust entries first would shift every row by the dust columns'
    /// contribution and erase the near-interpolated pattern being sought.
    fn polish_lad_vertex(&self, seed_support: &[usize]) -> Option<DVector<f64>> {
        let n = self.best_w.len();
        let mut current = self.best_w.clone();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut seen: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for round in 0..25 {
            let s_idx = if round == 0 {
                seed_support.to_vec()
            } else {
                support(&current, self.opts.eta)
            };
            if s_idx.is_empty() {
                let w = DVector::zeros(n);
                let obj = self.objective_w(&w);
                if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                    best = Some((obj, w));
                }
                break;
            }
            let k = s_idx.len();
            if k > self.y.len() {
                break;
            }
            let res = self.y - self.m_design * &current;
            let mut order: Vec<usize> = (0..res.len()).collect();
            order.sort_by(|&i, &j| {
                res[i]
                    .abs()
                    .partial_cmp(&res[j].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(i.cmp(&j))
            });
            let rows: Vec<usize> = order[..k].to_vec();
            let key = (rows.clone(), s_idx.clone());
            if seen.contains(&key) {
                break; // fixed point or cycle
            }
            seen.push(key);
            let mut sys = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &i) in rows.iter().enumerate() {
                rhs[a] = self.y[i];
                for (b, &j) in s_idx.iter().enumerate() {
                    sys[(a, b)] = self.m_design[(i, j)];
                }
            }
            let Some(ws) = sys.lu().solve(&rhs) else {
                break;
            };
            if ws.iter().any(|x| !x.is_finite()) {
                break;
            }
            let mut w = DVector::zeros(n);
            for (i, &j) in s_idx.iter().enumerate() {
                w[j] = ws[i];
            }
            let obj = self.objective_w(&w);
            if obj.is_finite() && best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, w.clone()));
            }
            current = w;
        }
        best.map(|(_, w)| w)
    }

    fn run_backtracking(&mut self, w0: DVector<f64>, sigma0: f64) {
        let lambda = self.params.lambda;
        let r = self.params.r;
        let mut w = w0;
        let mut f_w = self.objective_w(&w);
        self.offer(&w, f_w);
        let mut w_prev = w.clone();
        let mut theta = 1.0_f64;
        let mut sigma = sigma0;
        let mut stalled = 0usize;
        let mut last_check_res = f64::INFINITY;

        for k in 1..=self.opts.max_iters {
            self.iterations = k;

            // Extrapolation point (plain w when acceleration is off).
            let v = if self.opts.acceleration && theta > 1.0 {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let coeff = (theta - 1.0) / theta_next;
                &w + (&w - &w_prev) * coeff
            } else {
                w.clone()
            };

            let grad = fidelity_grad_design(self.m_design, self.y, &v, self.params.p, self.params.q);
            if grad.nonsmooth_point {
                self.stats.nonsmooth_termination = true;
                break;
            }
            let f_v = self.smooth_part(&v);
            let step = self.line_searched_step(&v, &grad.g, f_v, &mut sigma, lambda, r);
            let Some(mut cand) = step else {
                break; // line search exhausted: hand over to polish
            };

            let mut f_cand = self.objective_w(&cand);
            let slack = 1e-12 * (1.0 + f_w.abs());
            if f_cand > f_w + slack {
                // Momentum overshoot: redo as a plain step from w.
                let grad_w =
                    fidelity_grad_design(self.m_design, self.y, &w, self.params.p, self.params.q);
                if grad_w.nonsmooth_point {
                    self.stats.nonsmooth_termination = true;
                    break;
                }
                let f_w_smooth = self.smooth_part(&w);
                match self.line_searched_step(&w, &grad_w.g, f_w_smooth, &mut sigma, lambda, r) {
                    Some(c) => {
                        cand = c;
                        f_cand = self.objective_w(&cand);
                        theta = 1.0;
                    }
                    None => break,
                }
            }

            let increase = f_cand - f_w;
            if increase > self.stats.max_objective_increase {
                self.stats.max_objective_increase = increase;
            }

            theta = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            w_prev = w;
            w = cand;
            let progress = (f_w - f_cand).abs() / (1.0 + f_w.abs());
            f_w = f_cand;
            self.offer(&w, f_w);
            sigma = (sigma * 2.0).min(1e6 * sigma0); // let the step re-grow

            let due = k % CERT_PERIOD_BT == 0 || progress < self.opts.tol_obj;
            if due {
                let res = self.consider_candidates();
                if res <= self.opts.tol_kkt {
                    return;
                }
                if progress < self.opts.tol_obj && res >= last_check_res * 0.999 {
                    stalled += 1;
                    if stalled >= STALL_LIMIT {
                        return;
                    }
                } else {
                    stalled = 0;
                }
                last_check_res = res;
            }
        }
    }

    /// One prox step from `point` with Armijo-style sufficient decrease on
    /// the smooth part; halves `sigma` in place until accepted.
    fn line_searched_step(
        &self,
        point: &DVector<f64>,
        g: &DVector<f64>,
        f_point: f64,
        sigma: &mut f64,
        lambda: f64,
        r: f64,
    ) -> Option<DVector<f64>> {
        for _ in 0..60 {
            let trial = point - g * *sigma;
            let cand = prox_l1_power(&trial, *sigma * lambda, r).ok()?.z;
            let diff = &cand - point;
            let dist_sq = diff.norm_squared();
            if dist_sq == 0.0 {
                return Some(cand);
            }
            let f_cand = self.smooth_part(&cand);
            if f_cand <= f_point + g.dot(&diff) + dist_sq / (2.0 * *sigma) + 1e-15 * (1.0 + f_point)
            {
                return Some(cand);
            }
            *sigma *= 0.5;
        }
        None
    }

    fn run_diminishing(&mut self, w0: DVector<f64>, sigma0: f64) {
        let lambda = self.params.lambda;
        let r = self.params.r;
        let mut w = w0;
        self.offer(&w.clone(), self.objective_w(&w));
        let mut stalled = 0usize;
        let mut last_check_res = f64::INFINITY;

        for k in 1..=self.opts.max_iters {
            self.iterations = k;
            let grad = fidelity_grad_design(self.m_design, self.y, &w, self.params.p, self.params.q);
            if grad.nonsmooth_point {
                self.stats.nonsmooth_termination = true;
                break;
            }
            let sigma = sigma0 / (k as f64).sqrt();
            let trial = &w - &grad.g * sigma;
            let Ok(prox) = prox_l1_power(&trial, sigma * lambda, r) else {
                break;
            };
            w = prox.z;
            let obj = self.objective_w(&w);
            self.offer(&w, obj);

            if k % CERT_PERIOD_DIM == 0 {
                let res = self.consider_candidates();
                if res <= self.opts.tol_kkt {
                    return;
                }
                // The iterate keeps wandering on its own — pulling it back to
                // the incumbent would freeze it at whatever vertex polish
                // found, since the diminishing steps cannot escape again.
                if res >= last_check_res * 0.999 {
                    stalled += 1;
                    if stalled >= STALL_LIMIT {
                        return;
                    }
                } else {
                    stalled = 0;
                }
                last_check_res = res;
            }
        }
    }

    fn finish(mut self) -> Result<(Solution, SolverStats)> {
        // A certified point within numerical slack of the best objective
        // wins: late subgradient iterates can edge out an exact stationary
        // point by dust-level amounts while losing the certificate.
        if let Some((w, obj, cert)) = self.certified.take() {
            let slack = 1e-9 * (1.0 + self.best_obj.abs());
            let incumbent_certified = self.best_cert.as_ref().map_or(false, |c| c.passed);
            if obj <= self.best_obj + slack && (!incumbent_certified || obj <= self.best_obj) {
                self.best_w = w;
                self.best_obj = obj;
                self.best_cert = Some(cert);
            }
        }
        if self.best_cert.is_none() {
            self.best_cert = Some(self.certificate_of(&self.best_w.clone())?);
        }
        let cert = self.best_cert.take().expect("just set");
        let z = self.instance.dict().apply(&self.best_w);
        let objective = objective_value(&self.params, self.instance, &z)?;
        Ok((
            Solution {
                z: z.as_slice().to_vec(),
                objective,
                support: cert.s_lambda.clone(),
                iterations: self.iterations,
                kkt_residual: cert.residual(),
                certified: cert.passed,
            },
            self.stats,
        ))
    }
}

/// Bisection for a root of `f` on `[lo, hi]` assuming `f(lo) <= 0 <= f(hi)`.
fn bisect_root(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> Option<f64> {
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() || f_lo > 0.0 || f_hi < 0.0 {
        return None;
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.is_nan() {
            hi = mid; // NaN marks the invalid sign region above
            continue;
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Finds a sign change of `phi` on a geometric grid around `anchor` and
/// bisects it. `phi(0+) <= 0` by construction, so the first nonnegative
/// value brackets a root.
fn scan_then_bisect(phi: &dyn Fn(f64) -> f64, anchor: f64) -> Option<f64> {
    let lo_exp = -8;
    let hi_exp = 8;
    let steps_per_decade = 20;
    let mut prev = anchor * 10f64.powi(lo_exp);
    let mut phi_prev = phi(prev);
    let total = ((hi_exp - lo_exp) * steps_per_decade) as usize;
    for i in 1..=total {
        let nu = anchor * 10f64.powf(lo_exp as f64 + i as f64 / steps_per_decade as f64);
        let val = phi(nu);
        if !phi_prev.is_nan() && !val.is_nan() && phi_prev <= 0.0 && val >= 0.0 {
            return bisect_root(phi, prev, nu, 200);
        }
        if val.is_nan() {
            // left the valid sign region; nothing beyond can bracket
            break;
        }
        prev = nu;
        phi_prev = val;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn params(p: f64, q: f64, r: f64, lambda: f64) -> ProblemParams {
        ProblemParams::new(p, q, r, lambda).unwrap()
    }

    fn scalar_instance(a: f64, y: f64) -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            None,
            DVector::from_column_slice(&[y]),
        )
        .unwrap()
    }

    fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + u * (hi - lo)
    }

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn scalar_soft_threshold_solution() {
        let inst = scalar_instance(1.0, 1.0);
        let sol = solve(
            &params(2.0, 2.0, 1.0, 0.3),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified);
        assert_relative_eq!(sol.z[0], 0.7, max_relative = 1e-8);
    }

    #[test]
    fn scalar_zero_above_threshold() {
        let inst = scalar_instance(1.0, 1.0);
        let sol = solve(
            &params(2.0, 2.0, 1.0, 2.0),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified);
        assert_eq!(sol.z[0], 0.0);
        assert!(sol.support.is_empty());
    }

    #[test]
    fn zero_data_returns_zero() {
        let inst = scalar_instance(1.0, 0.0);
        for &(p, q, r) in &[(2.0, 2.0, 1.0), (2.0, 1.0, 1.0), (2.0, 2.0, 2.0)] {
            let sol = solve(&params(p, q, r, 0.5), &inst, &SolverOptions::default(), None).unwrap();
            assert!(sol.certified);
            assert_eq!(sol.z[0], 0.0);
        }
    }

    #[test]
    fn lambda_must_be_positive() {
        let inst = scalar_instance(1.0, 1.0);
        assert!(solve(
            &ProblemParams::new(2.0, 2.0, 1.0, 0.0).unwrap(),
            &inst,
            &SolverOptions::default(),
            None
        )
        .is_err());
    }

    #[test]
    fn path_scalar_residuals() {
        // 1-D standard LASSO: residual(lambda) = min(lambda, 1).
        let inst = scalar_instance(1.0, 1.0);
        let path = solve_path(
            &params(2.0, 2.0, 1.0, 1.0),
            &inst,
            &[0.3, 0.5, 2.0],
            &SolverOptions::default(),
        )
        .unwrap();
        let expect = [0.3, 0.5, 1.0];
        for (got, want) in path.residual_p_norms.iter().zip(expect) {
            assert_relative_eq!(*got, want, max_relative = 1e-7);
        }
    }

    #[test]
    fn path_rejects_non_increasing_grid() {
        let inst = scalar_instance(1.0, 1.0);
        let pr = params(2.0, 2.0, 1.0, 1.0);
        assert!(solve_path(&pr, &inst, &[0.5, 0.5], &SolverOptions::default()).is_err());
        assert!(solve_path(&pr, &inst, &[], &SolverOptions::default()).is_err());
        assert!(solve_path(&pr, &inst, &[0.0, 1.0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn cd_oracle_scalar_cases() {
        let inst = scalar_instance(1.0, 1.0);
        let sol = coordinate_descent_lasso(&inst, 0.3).unwrap();
        assert_relative_eq!(sol.z[0], 0.7, max_relative = 1e-12);
        assert!(sol.certified);

        let sol = coordinate_descent_lasso(&inst, 1.5).unwrap();
        assert_eq!(sol.z[0], 0.0);
    }

    #[test]
    fn cd_orthonormal_columns_closed_form() {
        // With orthonormal columns the minimizer is soft_threshold(A^T y, lambda).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = DMatrix::from_fn(5, 3, |_, _| gaussian(&mut rng));
        let qr = raw.qr();
        let a = qr.q();
        let y = DVector::from_fn(5, |_, _| gaussian(&mut rng));
        let inst = ProblemInstance::new(a.clone(), None, y.clone()).unwrap();
        let lambda = 0.2;
        let sol = coordinate_descent_lasso(&inst, lambda).unwrap();
        let aty = a.tr_mul(&y);
        for j in 0..3 {
            assert_relative_eq!(
                sol.z[j],
                soft_threshold_scalar(aty[j], lambda),
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn cd_requires_identity_dictionary() {
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let inst = ProblemInstance::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            Some(b),
            DVector::from_column_slice(&[1.0]),
        )
        .unwrap();
        assert!(coordinate_descent_lasso(&inst, 0.3).is_err());
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
    ) -> ProblemInstance {
        let a = DMatrix::from_fn(m, n, |_, _| gaussian(rng) / (m as f64).sqrt());
        let y = DVector::from_fn(m, |_, _| gaussian(rng));
        ProblemInstance::new(a, None, y).unwrap()
    }

    #[test]
    fn matches_cd_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let opts = SolverOptions::default();
        for trial in 0..10 {
            let inst = random_instance(&mut rng, 8, 16);
            let lambda = 10f64.powf(uniform(&mut rng, -2.0, 0.0));
            let pr = params(2.0, 2.0, 1.0, lambda);
            let ours = solve(&pr, &inst, &opts, None).unwrap();
            let oracle = coordinate_descent_lasso(&inst, lambda).unwrap();
            assert!(
                (ours.objective - oracle.objective).abs()
                    <= 1e-8 * (1.0 + oracle.objective.abs()),
                "trial {trial}: objective {} vs oracle {}",
                ours.objective,
                oracle.objective
            );
            assert_eq!(ours.support, oracle.support, "trial {trial}");
        }
    }

    #[test]
    fn backtracking_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(q, r) in &[(2.0, 1.0), (1.0, 1.0), (2.0, 2.0)] {
            let inst = random_instance(&mut rng, 10, 20);
            let (_, stats) = solve_detailed(
                &params(2.0, q, r, 0.1),
                &inst,
                &SolverOptions::default(),
                None,
            )
            .unwrap();
            assert!(
                stats.max_objective_increase <= 1e-10,
                "objective rose by {}",
                stats.max_objective_increase
            );
        }
    }

    #[test]
    fn sqrt_lasso_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let inst = random_instance(&mut rng, 10, 20);
        let sol = solve(
            &params(2.0, 1.0, 1.0, 0.3),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified, "kkt residual {}", sol.kkt_residual);
    }

    #[test]
    fn square_lasso_certified_and_never_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let inst = random_instance(&mut rng, 10, 20);
        // Large lambda: with r = 2 the minimizer approaches zero without
        // reaching it.
        let sol = solve(
            &params(2.0, 2.0, 2.0, 50.0),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified, "kkt residual {}", sol.kkt_residual);
        let z = sol.z_vector();
        assert!(z.amax() > 0.0);
        assert!(z.amax() < 1e-1);
    }

    #[test]
    fn lad_lasso_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let inst = random_instance(&mut rng, 12, 6);
        let sol = solve(
            &params(1.0, 1.0, 1.0, 0.2),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified, "kkt residual {}", sol.kkt_residual);
    }

    #[test]
    fn general_dictionary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = DMatrix::from_fn(6, 8, |_, _| gaussian(&mut rng) / 6f64.sqrt());
        let b = {
            let mut b = DMatrix::from_fn(8, 8, |_, _| gaussian(&mut rng) * 0.2);
            for i in 0..8 {
                b[(i, i)] += 1.5;
            }
            b
        };
        let y = DVector::from_fn(6, |_, _| gaussian(&mut rng));
        let inst = ProblemInstance::new(a, Some(b), y).unwrap();
        let sol = solve(
            &params(2.0, 2.0, 1.0, 0.2),
            &inst,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(sol.certified, "kkt residual {}", sol.kkt_residual);
        // reported support refers to B^{-1} z
        let w = inst.dict().apply_inv(&sol.z_vector());
        assert_eq!(sol.support, support(&w, DEFAULT_SUPPORT_ETA));
    }

    #[test]
    fn homogeneity_when_q_equals_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let opts = SolverOptions::default();
        for &(p, q, r) in &[(2.0, 1.0, 1.0), (2.0, 2.0, 2.0)] {
            let inst = random_instance(&mut rng, 8, 12);
            let pr = params(p, q, r, 0.35);
            let base = solve(&pr, &inst, &opts, None).unwrap();
            for &c in &[0.5, 2.0, 10.0] {
                let scaled_inst = inst.with_observation(inst.y() * c).unwrap();
                let scaled = solve(&pr, &scaled_inst, &opts, None).unwrap();
                let zb = base.z_vector() * c;
                let zs = scaled.z_vector();
                let denom = zb.norm().max(1e-12);
                assert!(
                    (zs - &zb).norm() / denom <= 1e-6,
                    "homogeneity broke at c = {c} for ({p},{q},{r})"
                );
            }
        }
    }
}
