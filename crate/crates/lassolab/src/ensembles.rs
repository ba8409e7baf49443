//! Seeded generators: measurement matrices, conditioned dictionaries,
//! sparse ground truths, and noise calibrated to a target fidelity ratio.
//!
//! Everything here is a pure function of its arguments. The generator is
//! ChaCha8 with explicitly coded output transforms (53-bit uniforms,
//! Box-Muller normals, inverse-CDF Laplace), so a reimplementation in any
//! language can reproduce experiment inputs bit-for-bit from the seeds.

use crate::prox::lp_norm;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer over `base + k·golden`; derives per-trial seeds so
/// trial streams are independent, reproducible, and extendable in `k`.
pub fn mix_seed(base: u64, k: u64) -> u64 {
    let mut z = base.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on [0, 1) with 53-bit resolution.
pub fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller (cosine branch; u1 is shifted into (0, 1]
/// so the logarithm is always finite).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard Laplace (scale 1) by inverse CDF; the uniform is centered at
/// half-integers so both tails stay finite.
pub fn standard_laplace(rng: &mut ChaCha8Rng) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let c = u - 0.5;
    -c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// ±1 from the top bit.
pub fn rademacher(rng: &mut ChaCha8Rng) -> f64 {
    if rng.next_u64() >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Gaussian,
    Rademacher,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub m: usize,
    pub n: usize,
    pub scale: f64,
    pub seed: u64,
}

/// The scale keeping `‖Az‖_p / ‖z‖₂` order-one for i.i.d. entries: `m^{-1/p}`
/// (`1/√m` for p = 2, `1/m` for p = 1).
pub fn default_scale(p: f64, m: usize) -> f64 {
    (m as f64).powf(-1.0 / p)
}

/// I.i.d. matrix with entries drawn in row-major order and multiplied by
/// `spec.scale`.
pub fn generate_matrix(spec: &EnsembleSpec) -> Result<DMatrix<f64>> {
    if spec.m == 0 || spec.n == 0 {
        return Err(Error::InvalidParams("matrix dimensions must be positive".into()));
    }
    if !(spec.scale > 0.0) || !spec.scale.is_finite() {
        return Err(Error::InvalidParams(format!("scale must be positive, got {}", spec.scale)));
    }
    let mut rng = rng_from_seed(spec.seed);
    let draw = |rng: &mut ChaCha8Rng| match spec.kind {
        EnsembleKind::Gaussian => standard_normal(rng),
        EnsembleKind::Rademacher => rademacher(rng),
        EnsembleKind::Laplace => standard_laplace(rng),
    };
    let data: Vec<f64> = (0..spec.m * spec.n).map(|_| draw(&mut rng) * spec.scale).collect();
    Ok(DMatrix::from_row_iterator(spec.m, spec.n, data))
}

/// Random `U·D·Vᵀ` with seeded-orthogonal factors and `D` log-spaced from 1
/// to `kappa_target`, so the condition number is the target by construction.
pub fn random_conditioned_b(n: usize, kappa_target: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParams("dictionary dimension must be positive".into()));
    }
    if !(kappa_target >= 1.0) || !kappa_target.is_finite() {
        return Err(Error::InvalidParams(format!(
            "condition target must be >= 1, got {kappa_target}"
        )));
    }
    if n == 1 && kappa_target != 1.0 {
        return Err(Error::InvalidParams(
            "a 1x1 matrix cannot have condition number > 1".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let u = seeded_orthogonal(n, &mut rng);
    let v = seeded_orthogonal(n, &mut rng);
    let mut b = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = if n == 1 {
            1.0
        } else {
            kappa_target.powf(j as f64 / (n - 1) as f64)
        };
        // B = U D V^T accumulated one rank-one term at a time.
        let uc = u.column(j);
        let vc = v.column(j);
        for row in 0..n {
            for col in 0..n {
                b[(row, col)] += d * uc[row] * vc[col];
            }
        }
    }
    Ok(b)
}

/// Q factor of a seeded Gaussian, sign-fixed so R's diagonal is positive
/// (makes the factor unique, hence stable across nalgebra versions).
fn seeded_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_row_iterator(n, n, (0..n * n).map(|_| standard_normal(rng)));
    let qr = g.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeLaw {
    /// Unit-magnitude random signs.
    Signs,
    /// Standard normal values.
    Gaussian,
}

#[derive(Clone, Debug)]
pub struct SparseTruth {
    /// `x = B w`.
    pub x: DVector<f64>,
    /// Exactly `s` nonzeros.
    pub w: DVector<f64>,
    /// Sorted ascending.
    pub support: Vec<usize>,
}

/// Draws `w` with exactly `s` nonzeros on a uniformly random support and
/// returns `x = B w` (so `B⁻¹x` is `s`-sparse by construction).
pub fn sparse_ground_truth(
    n: usize,
    s: usize,
    dict: &crate::model::Dict,
    law: AmplitudeLaw,
    seed: u64,
) -> Result<SparseTruth> {
    if s == 0 || s > n {
        return Err(Error::InvalidParams(format!("sparsity {s} out of range 1..={n}")));
    }
    if dict.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "dictionary is {}x{}, ground truth wants {n}",
            dict.n(),
            dict.n()
        )));
    }
    let mut rng = rng_from_seed(seed);
    // Partial Fisher-Yates: the first s entries of the shuffled range.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..s {
        let j = i + (uniform01(&mut rng) * (n - i) as f64) as usize;
        pool.swap(i, j);
    }
    let mut support: Vec<usize> = pool[..s].to_vec();
    support.sort_unstable();
    let mut w = DVector::zeros(n);
    for &j in &support {
        w[j] = match law {
            AmplitudeLaw::Signs => rademacher(&mut rng),
            AmplitudeLaw::Gaussian => standard_normal(&mut rng),
        };
    }
    let x = dict.apply(&w);
    Ok(SparseTruth { x, w, support })
}

/// Draws a Gaussian direction `d` (normalized to unit p-norm) and scales it
/// so the noise meets the target fidelity ratio exactly:
/// `‖e‖_p = ratio·‖Ax + e‖_p`. The scalar equation couples both sides, but
/// `σ‖d‖_p − ratio‖Ax + σd‖_p` is negative at 0 and positive at
/// `ratio‖Ax‖_p/(1−ratio)`, so bisection applies.
pub fn calibrated_noise(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    p: f64,
    ratio: f64,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(0.0..=1.0 / 3.0).contains(&ratio) {
        return Err(Error::Precondition(format!(
            "noise ratio must lie in [0, 1/3], got {ratio}"
        )));
    }
    if a.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, signal has length {}",
            a.nrows(),
            a.ncols(),
            x.len()
        )));
    }
    let ax = a * x;
    let m = ax.len();
    if ratio == 0.0 {
        return Ok((DVector::zeros(m), ax));
    }
    let mut rng = rng_from_seed(seed);
    let mut d = DVector::from_fn(m, |_, _| standard_normal(&mut rng));
    let dn = lp_norm(&d, p);
    if dn == 0.0 {
        return Ok((DVector::zeros(m), ax));
    }
    d /= dn;
    let ax_norm = lp_norm(&ax, p);
    if ax_norm == 0.0 {
        return Ok((DVector::zeros(m), ax));
    }
    let f = |sigma: f64| sigma - ratio * lp_norm(&(&ax + &d * sigma), p);
    let mut lo = 0.0_f64;
    let mut hi = ratio * ax_norm / (1.0 - ratio);
    debug_assert!(f(hi) >= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let e = &d * sigma;
    let y = &ax + &e;
    Ok((e, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dict;
    use approx::assert_relative_eq;

    #[test]
    fn mix_seed_is_splitmix_finalizer() {
        // splitmix64(0) reference value; k = 0 leaves the base untouched.
        assert_eq!(mix_seed(0, 0), 0xE220A8397B1DCDAF);
        let m: std::collections::HashSet<u64> = (0..1000).map(|k| mix_seed(42, k)).collect();
        assert_eq!(m.len(), 1000);
        assert_ne!(mix_seed(1, 5), mix_seed(2, 5));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Gaussian,
            m: 7,
            n: 5,
            scale: 0.25,
            seed: 99,
        };
        let a = generate_matrix(&spec).unwrap();
        let b = generate_matrix(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_matrix(&EnsembleSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rademacher_entries_exact() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Rademacher,
            m: 20,
            n: 13,
            scale: 0.5,
            seed: 3,
        };
        let a = generate_matrix(&spec).unwrap();
        assert!(a.iter().all(|&x| x == 0.5 || x == -0.5));
        assert!(a.iter().any(|&x| x == 0.5));
        assert!(a.iter().any(|&x| x == -0.5));
    }

    #[test]
    fn gaussian_column_norm_matches_law_of_large_numbers() {
        // One tall column: ||col||_2 concentrates at scale*sqrt(m).
        for seed in 0..20 {
            let spec = EnsembleSpec {
                kind: EnsembleKind::Gaussian,
                m: 2000,
                n: 1,
                scale: 0.5,
                seed,
            };
            let a = generate_matrix(&spec).unwrap();
            let norm = a.column(0).norm();
            let expect = 0.5 * (2000.0_f64).sqrt();
            assert!(
                (norm - expect).abs() <= 0.05 * expect,
                "seed {seed}: {norm} vs {expect}"
            );
        }
    }

    #[test]
    fn laplace_moments() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_abs = 0.0;
        for _ in 0..n {
            let x = standard_laplace(&mut rng);
            sum += x;
            sum_abs += x.abs();
        }
        // E X = 0, E|X| = 1 for the standard Laplace.
        assert!((sum / n as f64).abs() < 0.02);
        assert!((sum_abs / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn normal_and_uniform_transforms() {
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        let mut mean = 0.0;
        let mut var = 0.0;
        for _ in 0..n {
            let x = standard_normal(&mut rng);
            mean += x;
            var += x * x;
        }
        mean /= n as f64;
        var /= n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        for _ in 0..10_000 {
            let u = uniform01(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn default_scale_matches_convention() {
        assert_relative_eq!(default_scale(2.0, 16), 0.25);
        assert_relative_eq!(default_scale(1.0, 16), 1.0 / 16.0);
    }

    #[test]
    fn conditioned_b_hits_target() {
        let b = random_conditioned_b(5, 10.0, 7).unwrap();
        let svd = b.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        assert_relative_eq!(smax / smin, 10.0, max_relative = 1e-10);
        // Spectrum is pinned, not just its ratio.
        assert_relative_eq!(smax, 10.0, max_relative = 1e-10);
        assert_relative_eq!(smin, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn conditioned_b_kappa_one_is_orthogonal() {
        let b = random_conditioned_b(6, 1.0, 12).unwrap();
        let gram = b.transpose() * &b;
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!((gram - eye).amax() < 1e-10);
    }

    #[test]
    fn conditioned_b_rejects_bad_targets() {
        assert!(random_conditioned_b(4, 0.5, 0).is_err());
        assert!(random_conditioned_b(1, 3.0, 0).is_err());
        assert!(random_conditioned_b(1, 1.0, 0).is_ok());
    }

    #[test]
    fn ground_truth_support_and_roundtrip() {
        let bm = random_conditioned_b(8, 10.0, 21).unwrap();
        let dict = Dict::from_matrix(bm).unwrap();
        let t = sparse_ground_truth(8, 3, &dict, AmplitudeLaw::Signs, 4).unwrap();
        assert_eq!(t.support.len(), 3);
        assert_eq!(t.w.iter().filter(|x| **x != 0.0).count(), 3);
        assert!(t.support.iter().all(|&j| t.w[j].abs() == 1.0));
        let w_back = dict.apply_inv(&t.x);
        assert!((&w_back - &t.w).amax() <= 1e-10);
    }

    #[test]
    fn ground_truth_identity_and_dense() {
        let dict = Dict::identity(5);
        let t = sparse_ground_truth(5, 5, &dict, AmplitudeLaw::Gaussian, 9).unwrap();
        assert_eq!(t.support, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.x, t.w);
        assert!(sparse_ground_truth(5, 0, &dict, AmplitudeLaw::Signs, 0).is_err());
        assert!(sparse_ground_truth(5, 6, &dict, AmplitudeLaw::Signs, 0).is_err());
    }

    #[test]
    fn noise_meets_target_ratio() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Gaussian,
            m: 12,
            n: 6,
            scale: default_scale(2.0, 12),
            seed: 31,
        };
        let a = generate_matrix(&spec).unwrap();
        let x = DVector::from_fn(6, |i, _| (i as f64) - 2.0);
        for &p in &[1.0, 1.5, 2.0] {
            for &ratio in &[0.2, 1.0 / 3.0] {
                let (e, y) = calibrated_noise(&a, &x, p, ratio, 17).unwrap();
                let en = lp_norm(&e, p);
                let yn = lp_norm(&y, p);
                assert!(
                    (en - ratio * yn).abs() <= 1e-10 * yn,
                    "p={p} ratio={ratio}: {en} vs {}",
                    ratio * yn
                );
                assert_eq!(y, a.clone() * &x + &e);
            }
        }
    }

    #[test]
    fn noise_zero_ratio_and_bad_ratio() {
        let a = DMatrix::<f64>::identity(3, 3);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (e, y) = calibrated_noise(&a, &x, 2.0, 0.0, 0).unwrap();
        assert_eq!(e, DVector::zeros(3));
        assert_eq!(y, x);
        assert!(calibrated_noise(&a, &x, 2.0, 0.34, 0).is_err());
    }
}
