//! Core domain types: program parameters, problem data, dictionaries,
//! solutions, and the sparsity-cap arithmetic built on isometry ratios.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::prox::{lp_norm, pow_conv};
use crate::{Error, Result};

/// Relative magnitude threshold under which an entry counts as zero when
/// extracting supports. Iterative solvers leave dust; exact zeros are rare.
pub const DEFAULT_SUPPORT_ETA: f64 = 1e-6;

/// Relative singular-value floor below which a dictionary is rejected as
/// numerically singular.
pub const DICT_SINGULARITY_FLOOR: f64 = 1e-10;

/// Exponent/regularization tuple `(p, q, r, lambda)` selecting one member of
/// the LASSO family.
///
/// Admissible ranges: `1 <= p <= 2`, `q >= 1`, `r >= 1`, `lambda >= 0`.
/// `lambda = 0` is allowed only for objective evaluation (the basis-pursuit
/// limit); certificates and solves require `lambda > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub lambda: f64,
}

impl ProblemParams {
    pub fn new(p: f64, q: f64, r: f64, lambda: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidParams(format!("p = {p} outside [1, 2]")));
        }
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidParams(format!("q = {q} must be >= 1")));
        }
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::InvalidParams(format!("r = {r} must be >= 1")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParams(format!("lambda = {lambda} must be >= 0")));
        }
        Ok(Self { p, q, r, lambda })
    }

    /// Same exponents, different regularization weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.p, self.q, self.r, lambda)
    }
}

/// Invertible dictionary `B`, factored once at construction.
///
/// The identity is stored symbolically so the `B = I` fast path costs
/// nothing; a general matrix carries its LU factorization and spectral norms.
#[derive(Clone, Debug)]
pub struct Dict {
    n: usize,
    kind: DictKind,
}

#[derive(Clone, Debug)]
enum DictKind {
    Identity,
    General {
        b: DMatrix<f64>,
        lu: LU<f64, Dyn, Dyn>,
        norm: f64,
        norm_inv: f64,
    },
}

impl Dict {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            kind: DictKind::Identity,
        }
    }

    /// Accepts `b` only if square and numerically invertible: the smallest
    /// singular value must exceed `DICT_SINGULARITY_FLOOR * sigma_max`.
    pub fn from_matrix(b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != b.ncols() || b.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "dictionary must be square and nonempty, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let n = b.nrows();
        let svd = b.clone().svd(false, false);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        let floor = DICT_SINGULARITY_FLOOR * sigma_max;
        if !(sigma_min > floor) {
            return Err(Error::SingularDictionary { sigma_min, floor });
        }
        let lu = b.clone().lu();
        Ok(Self {
            n,
            kind: DictKind::General {
                b,
                lu,
                norm: sigma_max,
                norm_inv: 1.0 / sigma_min,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, DictKind::Identity)
    }

    /// `B v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            DictKind::Identity => v.clone(),
            DictKind::General { b, .. } => b * v,
        }
    }

    /// `B^T v`.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            DictKind::Identity => v.clone(),
            DictKind::General { b, .. } => b.tr_mul(v),
        }
    }

    /// `B^{-1} v` through the stored factorization.
    pub fn apply_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            DictKind::Identity => v.clone(),
            DictKind::General { lu, .. } => lu
                .solve(v)
                .expect("invertibility checked at construction"),
        }
    }

    /// Materialized matrix (identity included).
    pub fn as_matrix(&self) -> DMatrix<f64> {
        match &self.kind {
            DictKind::Identity => DMatrix::identity(self.n, self.n),
            DictKind::General { b, .. } => b.clone(),
        }
    }

    /// `A * B` without materializing an identity.
    pub fn design_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            DictKind::Identity => a.clone(),
            DictKind::General { b, .. } => a * b,
        }
    }

    pub fn operator_norms(&self) -> OperatorNorms {
        match &self.kind {
            DictKind::Identity => OperatorNorms {
                norm_b: 1.0,
                norm_b_inv: 1.0,
                kappa_b: 1.0,
            },
            DictKind::General { norm, norm_inv, .. } => OperatorNorms {
                norm_b: *norm,
                norm_b_inv: *norm_inv,
                kappa_b: norm * norm_inv,
            },
        }
    }
}

/// One problem's data: measurement matrix `A` (m x N), dictionary `B`
/// (N x N, identity by default), observation `y` (length m).
///
/// Immutable after construction; cheap to share across workers.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    a: DMatrix<f64>,
    dict: Dict,
    y: DVector<f64>,
}

impl ProblemInstance {
    pub fn new(a: DMatrix<f64>, dict: Option<DMatrix<f64>>, y: DVector<f64>) -> Result<Self> {
        let dict = match dict {
            Some(b) => Dict::from_matrix(b)?,
            None => Dict::identity(a.ncols()),
        };
        Self::with_dict(a, dict, y)
    }

    pub fn with_dict(a: DMatrix<f64>, dict: Dict, y: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "measurement matrix must be nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if dict.n() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "dictionary is {}x{} but A has {} columns",
                dict.n(),
                dict.n(),
                a.ncols()
            )));
        }
        if y.len() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "observation has length {} but A has {} rows",
                y.len(),
                a.nrows()
            )));
        }
        Ok(Self { a, dict, y })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dict(&self) -> &Dict {
        &self.dict
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// `A * B`, the matrix seen by the solver after the change of variables
    /// `w = B^{-1} z`. Recomputed per call; long-running loops should cache.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        self.dict.design_matrix(&self.a)
    }

    /// Same data, different observation (used by homogeneity checks and
    /// calibration sweeps).
    pub fn with_observation(&self, y: DVector<f64>) -> Result<Self> {
        Self::with_dict(self.a.clone(), self.dict.clone(), y)
    }
}

/// Planted signal and noise used by experiments: `x` with `B^{-1} x` exactly
/// `s`-sparse, observation error `e`.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub x: DVector<f64>,
    pub e: DVector<f64>,
    pub s: usize,
}

/// Candidate minimizer with its evaluated objective, thresholded support of
/// `B^{-1} z` (0-based column indices), and certification status.
#[derive(Clone, Debug, Serialize)]
pub struct Solution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub certified: bool,
}

impl Solution {
    pub fn z_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z)
    }
}

/// Spectral norms of the dictionary and its inverse, and their product.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OperatorNorms {
    pub norm_b: f64,
    pub norm_b_inv: f64,
    pub kappa_b: f64,
}

/// Quantities derived from an isometry ratio `gamma` and a sparsity level
/// `s`: the factor `chi`, the support cap `floor(chi^2 s)`, the isometry
/// order `t = cap + 1` at which the hypothesis must hold, and the
/// regularization threshold `lambda_star` (zero in the noiseless regime).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TheoremBounds {
    pub chi: f64,
    pub sparsity_cap: usize,
    pub t: usize,
    pub lambda_star: f64,
}

impl TheoremBounds {
    /// `lambda_star` can be an infinite sentinel (`q < r` with zero error
    /// norm); downstream grids must check before clipping.
    pub fn lambda_star_finite(&self) -> bool {
        self.lambda_star.is_finite()
    }
}

/// Evaluates `(1/q) ||y - A z||_p^q + (lambda/r) ||B^{-1} z||_1^r`.
pub fn objective_value(
    params: &ProblemParams,
    instance: &ProblemInstance,
    z: &DVector<f64>,
) -> Result<f64> {
    if z.len() != instance.n() {
        return Err(Error::DimensionMismatch(format!(
            "candidate has length {} but A has {} columns",
            z.len(),
            instance.n()
        )));
    }
    let res = instance.y() - instance.a() * z;
    let fid = lp_norm(&res, params.p).powf(params.q) / params.q;
    let w = instance.dict().apply_inv(z);
    let pen = params.lambda / params.r * lp_norm(&w, 1.0).powf(params.r);
    Ok(fid + pen)
}

/// Thresholded support: indices `j` with `|v_j| > eta * ||v||_inf`
/// (0-based). The zero vector has empty support for any `eta >= 0`.
pub fn support(v: &DVector<f64>, eta: f64) -> Vec<usize> {
    debug_assert!(eta >= 0.0);
    if v.is_empty() {
        return Vec::new();
    }
    let max = v.amax();
    if max == 0.0 {
        return Vec::new();
    }
    let cut = eta * max;
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > cut)
        .map(|(j, _)| j)
        .collect()
}

/// Sparsity-cap arithmetic.
///
/// `chi = 2 * gamma * kappa_B` in the noiseless regime and `6 * gamma *
/// kappa_B` in the noisy one; `sparsity_cap = floor(chi^2 * s)` on the
/// rounded `f64` product; `t = cap + 1`. The threshold `lambda_star` is `0`
/// noiseless and `2^{q-1} beta^r ||B||^r ||e||_p^{q-r}` noisy, with the
/// convention `0^0 = 1`; when `q < r` and `e_norm = 0` the threshold is the
/// `+inf` sentinel rather than an error.
pub fn theorem_bounds(
    norms: &OperatorNorms,
    gamma: f64,
    s: usize,
    noisy: bool,
    params: &ProblemParams,
    beta: f64,
    e_norm: f64,
) -> Result<TheoremBounds> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::Precondition(format!(
            "isometry ratio gamma = {gamma} must be finite and >= 1"
        )));
    }
    if s == 0 {
        return Err(Error::Precondition("sparsity s must be >= 1".into()));
    }
    if noisy && !(beta > 0.0) {
        return Err(Error::Precondition(format!(
            "upper isometry constant beta = {beta} must be positive"
        )));
    }
    if !(e_norm >= 0.0) {
        return Err(Error::Precondition(format!(
            "error norm {e_norm} must be nonnegative"
        )));
    }
    let chi = if noisy { 6.0 } else { 2.0 } * gamma * norms.kappa_b;
    let cap_f = (chi * chi * s as f64).floor();
    if !cap_f.is_finite() || cap_f > (usize::MAX / 2) as f64 {
        return Err(Error::Precondition(format!(
            "sparsity cap {cap_f} overflows the index type"
        )));
    }
    let sparsity_cap = cap_f as usize;
    let lambda_star = if noisy {
        2.0_f64.powf(params.q - 1.0)
            * beta.powf(params.r)
            * norms.norm_b.powf(params.r)
            * pow_conv(e_norm, params.q - params.r)
    } else {
        0.0
    };
    Ok(TheoremBounds {
        chi,
        sparsity_cap,
        t: sparsity_cap + 1,
        lambda_star,
    })
}
