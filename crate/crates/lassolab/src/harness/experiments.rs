//! Campaign runners. Each trial draws its own instance from splitmix-derived
//! sub-seeds, solves a regularization path, and emits one record per grid
//! point; trials run in parallel but are merged in trial order, so output
//! bytes are independent of the worker count.

use super::config::{ExperimentConfig, ExperimentKind};
use super::records::{ExperimentReport, TrialRecord};
use crate::ensembles::{
    calibrated_noise, generate_matrix, mix_seed, random_conditioned_b, rng_from_seed,
    sparse_ground_truth, standard_normal, AmplitudeLaw, EnsembleSpec,
};
use crate::model::{
    support, theorem_bounds, Dict, OperatorNorms, ProblemInstance, ProblemParams, TheoremBounds,
};
use crate::prox::lp_norm;
use crate::rip::{exact_enumeration_feasible, rip_estimate, rip_exact_l2, RipMode, RipReport};
use crate::solver::{solve_path, SolverOptions};
use crate::{Error, Result};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;
use std::collections::BTreeMap;

/// Sampling trials per isometry estimate when the config does not say.
const DEFAULT_RIP_TRIALS: usize = 64;

/// Self-consistency rounds for the isometry order (the cap depends on gamma,
/// gamma depends on the order t = cap + 1).
const ORDER_FIXED_POINT_ROUNDS: usize = 8;

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

fn run_inner(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let outcomes: Result<Vec<(Vec<TrialRecord>, TrialNotes)>> = (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial(config, k))
        .collect();
    let outcomes = outcomes?;
    let mut records = Vec::with_capacity(config.trials * config.lambda_grid.points);
    let mut notes = Vec::with_capacity(config.trials);
    for (trial_records, trial_notes) in outcomes {
        records.extend(trial_records);
        notes.push(trial_notes);
    }
    debug_assert_eq!(records.len(), config.trials * config.lambda_grid.points);
    let details = assemble_details(config, &records, &notes);
    Ok(ExperimentReport::new(config, records, details))
}

fn run_trial(config: &ExperimentConfig, k: usize) -> Result<(Vec<TrialRecord>, TrialNotes)> {
    match config.experiment {
        ExperimentKind::Thm1 => run_sparsity_trial(config, k, false),
        ExperimentKind::Thm2 => run_sparsity_trial(config, k, true),
        ExperimentKind::Lemma5 => run_path_trial(config, k),
        ExperimentKind::Msparsity => run_msparsity_trial(config, k),
        ExperimentKind::RipRate => run_rip_rate_trial(config, k),
    }
}

/// Per-trial counters that cannot be reconstructed from the records alone.
#[derive(Clone, Copy, Debug, Default)]
struct TrialNotes {
    monotonicity_violations: usize,
    monotonicity_unresolved: usize,
    endpoint_failures: usize,
    gamma: f64,
    within_target: bool,
}

struct TrialInstance {
    instance: ProblemInstance,
    /// `||B^{-1} x||_1` of the planted truth.
    w_l1: f64,
    e_norm: f64,
    y_norm: f64,
}

/// Sub-seed layout per trial: 1 = measurement matrix, 2 = dictionary,
/// 3 = ground truth, 4 = noise direction, 5 = dense observation,
/// 6 = isometry sampling.
fn trial_seed(config: &ExperimentConfig, k: usize) -> u64 {
    mix_seed(config.base_seed, k as u64)
}

fn build_dict(config: &ExperimentConfig, ts: u64) -> Result<Dict> {
    if config.kappa_target == 1.0 {
        Ok(Dict::identity(config.n))
    } else {
        Dict::from_matrix(random_conditioned_b(
            config.n,
            config.kappa_target,
            mix_seed(ts, 2),
        )?)
    }
}

fn build_matrix(config: &ExperimentConfig, ts: u64) -> Result<nalgebra::DMatrix<f64>> {
    generate_matrix(&EnsembleSpec {
        kind: config.ensemble,
        m: config.m,
        n: config.n,
        scale: config.resolved_scale(),
        seed: mix_seed(ts, 1),
    })
}

fn build_trial_instance(config: &ExperimentConfig, ts: u64) -> Result<TrialInstance> {
    let a = build_matrix(config, ts)?;
    let dict = build_dict(config, ts)?;
    let law = config.amplitude.unwrap_or(AmplitudeLaw::Signs);
    let truth = sparse_ground_truth(config.n, config.s, &dict, law, mix_seed(ts, 3))?;
    let (e, y) = if config.noise_ratio > 0.0 {
        calibrated_noise(&a, &truth.x, config.p, config.noise_ratio, mix_seed(ts, 4))?
    } else {
        let y = &a * &truth.x;
        (DVector::zeros(config.m), y)
    };
    let e_norm = lp_norm(&e, config.p);
    let y_norm = lp_norm(&y, config.p);
    let w_l1 = truth.w.iter().map(|v| v.abs()).sum();
    let instance = ProblemInstance::with_dict(a, dict, y)?;
    Ok(TrialInstance { instance, w_l1, e_norm, y_norm })
}

fn solver_options(config: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        tol_kkt: config.tol_kkt,
        eta: config.eta,
        ..SolverOptions::default()
    }
}

struct IsometryInfo {
    gamma: f64,
    gamma_mode: &'static str,
    bounds: TheoremBounds,
}

fn rip_at(config: &ExperimentConfig, inst: &ProblemInstance, t: usize, ts: u64) -> Result<RipReport> {
    let t_eff = t.min(config.n).max(1);
    if config.p == 2.0 && exact_enumeration_feasible(config.n, t_eff) {
        rip_exact_l2(inst.a(), inst.dict(), t_eff)
    } else {
        rip_estimate(
            inst.a(),
            inst.dict(),
            t_eff,
            config.p,
            config.rip_trials.unwrap_or(DEFAULT_RIP_TRIALS),
            mix_seed(ts, 6),
        )
    }
}

/// Vacuous bounds: the cap sentinel keeps the record invariant
/// (`pass == certified && support <= cap`) literally true while making the
/// support check bite nothing, and an infinite threshold keeps every lambda
/// out of the noisy regime.
fn saturated_bounds(noisy: bool) -> TheoremBounds {
    TheoremBounds {
        chi: f64::INFINITY,
        sparsity_cap: usize::MAX,
        t: usize::MAX,
        lambda_star: if noisy { f64::INFINITY } else { 0.0 },
    }
}

/// A degenerate isometry (`alpha ~ 0`, ratio unbounded) makes the cap
/// vacuous; records keep the measured gamma so the degeneracy stays visible.
fn bounds_or_saturated(
    norms: &OperatorNorms,
    rep: &RipReport,
    s: usize,
    noisy: bool,
    params: &ProblemParams,
    e_norm: f64,
) -> TheoremBounds {
    if rep.gamma.is_finite() {
        if let Ok(b) = theorem_bounds(norms, rep.gamma, s, noisy, params, rep.beta, e_norm) {
            return b;
        }
    }
    saturated_bounds(noisy)
}

/// Order selection: start at `t = s + 1` and iterate `t <- cap(t) + 1` to a
/// fixed point. Orders past the ambient dimension add nothing (the sparsity
/// constraint stops binding at t = N, so the constants freeze there), hence
/// the iteration clamps at N and a finite gamma(N) validates any larger
/// requested order; only a genuinely unbounded ratio leaves the bound
/// vacuous. An explicit `t` in the config pins the order and the bounds are
/// taken at face value from the ratio measured there.
fn resolve_isometry(
    config: &ExperimentConfig,
    inst: &ProblemInstance,
    norms: &OperatorNorms,
    noisy: bool,
    e_norm: f64,
    ts: u64,
) -> Result<IsometryInfo> {
    let params = ProblemParams::new(config.p, config.q, config.r, config.lambda_grid.min)?;
    let mut t = config.t.unwrap_or(config.s + 1).min(config.n).max(1);
    let pinned = config.t.is_some();
    let mut rounds = 0;
    loop {
        let rep = rip_at(config, inst, t, ts)?;
        let bounds = bounds_or_saturated(norms, &rep, config.s, noisy, &params, e_norm);
        let gamma_mode = match rep.mode {
            RipMode::ExactL2 => "exact",
            RipMode::Estimated => "estimated",
        };
        if pinned {
            return Ok(IsometryInfo { gamma: rep.gamma, gamma_mode, bounds });
        }
        if !rep.gamma.is_finite() {
            return Ok(IsometryInfo { gamma: rep.gamma, gamma_mode, bounds: saturated_bounds(noisy) });
        }
        let t_next = bounds.t.min(config.n);
        if t_next <= t {
            return Ok(IsometryInfo { gamma: rep.gamma, gamma_mode, bounds });
        }
        if rounds + 1 >= ORDER_FIXED_POINT_ROUNDS {
            // Never stabilized (cap still growing): premise unverified.
            return Ok(IsometryInfo { gamma: rep.gamma, gamma_mode, bounds: saturated_bounds(noisy) });
        }
        t = t_next;
        rounds += 1;
    }
}

/// Noiseless (`thm1`) and noisy (`thm2`) sparsity-bound campaigns. The noisy
/// grid floor is raised to `lambda_star` so every point sits in the
/// theorem's regime; an infinite threshold leaves the grid alone and marks
/// every point out-of-regime (pass reduces to certification).
fn run_sparsity_trial(
    config: &ExperimentConfig,
    k: usize,
    noisy: bool,
) -> Result<(Vec<TrialRecord>, TrialNotes)> {
    let ts = trial_seed(config, k);
    let ti = build_trial_instance(config, ts)?;
    let norms = ti.instance.dict().operator_norms();
    let info = resolve_isometry(config, &ti.instance, &norms, noisy, ti.e_norm, ts)?;
    let grid = if noisy {
        config.lambda_grid.build_clipped(info.bounds.lambda_star)?
    } else {
        config.lambda_grid.build()?
    };
    let params = ProblemParams::new(config.p, config.q, config.r, grid[0])?;
    let opts = solver_options(config);
    let path = solve_path(&params, &ti.instance, &grid, &opts)?;

    let mut records = Vec::with_capacity(grid.len());
    for (i, sol) in path.solutions.iter().enumerate() {
        let lambda = grid[i];
        let in_regime = !noisy || lambda >= info.bounds.lambda_star;
        let pass =
            sol.certified && (!in_regime || sol.support.len() <= info.bounds.sparsity_cap);
        records.push(TrialRecord {
            trial: k,
            lambda,
            p: config.p,
            q: config.q,
            r: config.r,
            m: config.m,
            n: config.n,
            s: config.s,
            support_w: sol.support.len(),
            support_z: support(&sol.z_vector(), config.eta).len(),
            sparsity_cap: info.bounds.sparsity_cap,
            gamma: info.gamma,
            gamma_mode: info.gamma_mode.to_string(),
            lambda_star: info.bounds.lambda_star,
            residual_p: path.residual_p_norms[i],
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            certified: sol.certified,
            pass,
        });
    }
    Ok((records, TrialNotes::default()))
}

/// Residual-path campaign: the p-norm of the residual must be nondecreasing
/// in lambda, bounded by the planted-truth objective comparison at every
/// point, and saturating at `||y||_p` on the high end. Checks only bind on
/// certified records; decreases across an uncertified neighbor are counted
/// as unresolved rather than violations.
fn run_path_trial(config: &ExperimentConfig, k: usize) -> Result<(Vec<TrialRecord>, TrialNotes)> {
    let ts = trial_seed(config, k);
    let ti = build_trial_instance(config, ts)?;
    let grid = config.lambda_grid.build()?;
    let params = ProblemParams::new(config.p, config.q, config.r, grid[0])?;
    let opts = solver_options(config);
    let path = solve_path(&params, &ti.instance, &grid, &opts)?;

    let slack = 1e-8 * (1.0 + ti.y_norm);
    let n_pts = grid.len();
    let mut notes = TrialNotes::default();
    let mut mono_bad = vec![false; n_pts];
    for i in 1..n_pts {
        if path.residual_p_norms[i] < path.residual_p_norms[i - 1] - slack {
            if path.solutions[i].certified && path.solutions[i - 1].certified {
                mono_bad[i] = true;
                notes.monotonicity_violations += 1;
            } else {
                notes.monotonicity_unresolved += 1;
            }
        }
    }

    let mut records = Vec::with_capacity(n_pts);
    for (i, sol) in path.solutions.iter().enumerate() {
        let res = path.residual_p_norms[i];
        // Compare-at-truth bound, valid at every lambda:
        // res^q <= ||e||^q + (lambda q / r) ||w*||_1^r.
        let bound = ti.e_norm
            + (grid[i] * params.q / params.r).powf(1.0 / params.q)
                * ti.w_l1.powf(params.r / params.q)
            + slack;
        let mut ok = res <= bound && res <= ti.y_norm * (1.0 + 1e-6) + slack;
        if i == n_pts - 1 && ti.y_norm > 0.0 {
            ok &= res >= ti.y_norm * (1.0 - 1e-3) - slack;
        }
        if sol.certified && !ok {
            notes.endpoint_failures += 1;
        }
        let pass = sol.certified && ok && !mono_bad[i];
        records.push(TrialRecord {
            trial: k,
            lambda: grid[i],
            p: config.p,
            q: config.q,
            r: config.r,
            m: config.m,
            n: config.n,
            s: config.s,
            support_w: sol.support.len(),
            support_z: support(&sol.z_vector(), config.eta).len(),
            sparsity_cap: config.n,
            gamma: 0.0,
            gamma_mode: "none".to_string(),
            lambda_star: 0.0,
            residual_p: res,
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            certified: sol.certified,
            pass,
        });
    }
    Ok((records, notes))
}

/// Dense-observation campaign: y is drawn dense (no planted truth), so the
/// only bound in force is the measurement-count cap `m` on every certified
/// support.
fn run_msparsity_trial(
    config: &ExperimentConfig,
    k: usize,
) -> Result<(Vec<TrialRecord>, TrialNotes)> {
    let ts = trial_seed(config, k);
    let a = build_matrix(config, ts)?;
    let dict = build_dict(config, ts)?;
    let mut rng = rng_from_seed(mix_seed(ts, 5));
    let y = DVector::from_fn(config.m, |_, _| standard_normal(&mut rng));
    let instance = ProblemInstance::with_dict(a, dict, y)?;
    let grid = config.lambda_grid.build()?;
    let params = ProblemParams::new(config.p, config.q, config.r, grid[0])?;
    let opts = solver_options(config);
    let path = solve_path(&params, &instance, &grid, &opts)?;

    let mut records = Vec::with_capacity(grid.len());
    for (i, sol) in path.solutions.iter().enumerate() {
        let pass = sol.certified && sol.support.len() <= config.m;
        records.push(TrialRecord {
            trial: k,
            lambda: grid[i],
            p: config.p,
            q: config.q,
            r: config.r,
            m: config.m,
            n: config.n,
            s: config.s,
            support_w: sol.support.len(),
            support_z: support(&sol.z_vector(), config.eta).len(),
            sparsity_cap: config.m,
            gamma: 0.0,
            gamma_mode: "none".to_string(),
            lambda_star: 0.0,
            residual_p: path.residual_p_norms[i],
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            certified: sol.certified,
            pass,
        });
    }
    Ok((records, TrialNotes::default()))
}

/// Isometry-rate campaign: no solves, one record per trial carrying the
/// sampled ratio (always the estimator — the point is the estimator's hit
/// rate, not the exact constant). Nothing is certified, so `pass` is false
/// by the record invariant; the rate against `gamma_target` lives in the
/// summary.
fn run_rip_rate_trial(
    config: &ExperimentConfig,
    k: usize,
) -> Result<(Vec<TrialRecord>, TrialNotes)> {
    let ts = trial_seed(config, k);
    let a = build_matrix(config, ts)?;
    let dict = build_dict(config, ts)?;
    let t = config.t.expect("validated").min(config.n).max(1);
    let rep = rip_estimate(
        &a,
        &dict,
        t,
        config.p,
        config.rip_trials.unwrap_or(DEFAULT_RIP_TRIALS),
        mix_seed(ts, 6),
    )?;
    let target = config.gamma_target.expect("validated");
    let gamma_mode = "estimated";
    let record = TrialRecord {
        trial: k,
        lambda: config.lambda_grid.min,
        p: config.p,
        q: config.q,
        r: config.r,
        m: config.m,
        n: config.n,
        s: config.s,
        support_w: 0,
        support_z: 0,
        sparsity_cap: 0,
        gamma: rep.gamma,
        gamma_mode: gamma_mode.to_string(),
        lambda_star: 0.0,
        residual_p: 0.0,
        objective: 0.0,
        kkt_residual: 0.0,
        certified: false,
        pass: false,
    };
    let notes = TrialNotes {
        gamma: rep.gamma,
        within_target: rep.gamma <= target,
        ..TrialNotes::default()
    };
    Ok((vec![record], notes))
}

fn assemble_details(
    config: &ExperimentConfig,
    records: &[TrialRecord],
    notes: &[TrialNotes],
) -> BTreeMap<String, serde_json::Value> {
    let mut details = BTreeMap::new();
    match config.experiment {
        ExperimentKind::Thm1 | ExperimentKind::Thm2 => {
            let certified: Vec<_> = records.iter().filter(|r| r.certified).collect();
            let meeting = certified.iter().filter(|r| r.support_w <= r.sparsity_cap).count();
            // The headline check: certified + exact-mode gamma must always
            // meet the cap. Estimated-mode caps are optimistic (the ratio
            // under-estimates), so their violations are tracked separately.
            let violations_exact = certified
                .iter()
                .filter(|r| r.gamma_mode == "exact" && r.support_w > r.sparsity_cap)
                .count();
            let violations_optimistic = certified
                .iter()
                .filter(|r| r.gamma_mode == "estimated" && r.support_w > r.sparsity_cap)
                .count();
            let max_ratio = certified
                .iter()
                .map(|r| r.support_w as f64 / r.sparsity_cap as f64)
                .fold(0.0_f64, f64::max);
            details.insert(
                "fraction_certified_meeting_cap".into(),
                if certified.is_empty() {
                    serde_json::Value::Null
                } else {
                    json!(meeting as f64 / certified.len() as f64)
                },
            );
            details.insert("cap_violations_exact_gamma".into(), json!(violations_exact));
            details.insert(
                "cap_violations_optimistic_gamma".into(),
                json!(violations_optimistic),
            );
            details.insert("max_support_over_cap_ratio".into(), json!(max_ratio));
            details.insert(
                "records_gamma_exact".into(),
                json!(records.iter().filter(|r| r.gamma_mode == "exact").count()),
            );
        }
        ExperimentKind::Lemma5 => {
            let sum = |f: fn(&TrialNotes) -> usize| notes.iter().map(f).sum::<usize>();
            details.insert(
                "monotonicity_violations".into(),
                json!(sum(|n| n.monotonicity_violations)),
            );
            details.insert(
                "monotonicity_unresolved".into(),
                json!(sum(|n| n.monotonicity_unresolved)),
            );
            details.insert("endpoint_failures".into(), json!(sum(|n| n.endpoint_failures)));
        }
        ExperimentKind::Msparsity => {
            let max_support = records
                .iter()
                .filter(|r| r.certified)
                .map(|r| r.support_w)
                .max()
                .unwrap_or(0);
            details.insert("max_certified_support_w".into(), json!(max_support));
            details.insert("support_bound_m".into(), json!(config.m));
        }
        ExperimentKind::RipRate => {
            let within = notes.iter().filter(|n| n.within_target).count();
            let rate = within as f64 / notes.len().max(1) as f64;
            let mean = notes.iter().map(|n| n.gamma).sum::<f64>() / notes.len().max(1) as f64;
            details.insert("gamma_target".into(), json!(config.gamma_target));
            details.insert("trials_within_target".into(), json!(within));
            details.insert("rate_within_target".into(), json!(rate));
            details.insert(
                "mean_gamma".into(),
                if mean.is_finite() { json!(mean) } else { serde_json::Value::Null },
            );
        }
    }
    details
}
