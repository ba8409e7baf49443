//! Experiment configuration: a single JSON document, parsed fail-closed
//! (unknown keys rejected) and validated against every module precondition
//! it will eventually touch, so campaigns die at parse time and not three
//! hundred trials in.

use crate::ensembles::{AmplitudeLaw, EnsembleKind};
use crate::model::ProblemParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Thm1,
    Thm2,
    Lemma5,
    Msparsity,
    RipRate,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(ExperimentKind::Thm1),
            "thm2" => Ok(ExperimentKind::Thm2),
            "lemma5" => Ok(ExperimentKind::Lemma5),
            "msparsity" => Ok(ExperimentKind::Msparsity),
            "rip_rate" => Ok(ExperimentKind::RipRate),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?}; expected thm1|thm2|lemma5|msparsity|rip_rate"
            ))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ExperimentKind::Thm1 => "thm1",
            ExperimentKind::Thm2 => "thm2",
            ExperimentKind::Lemma5 => "lemma5",
            ExperimentKind::Msparsity => "msparsity",
            ExperimentKind::RipRate => "rip_rate",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Log-spaced by default; set false for linear spacing.
    #[serde(default = "default_true")]
    pub log: bool,
}

fn default_true() -> bool {
    true
}

impl LambdaGridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "lambda grid needs positive finite endpoints, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.points == 0 {
            return Err(Error::Config("lambda grid needs at least one point".into()));
        }
        if self.points == 1 && self.max < self.min {
            return Err(Error::Config("lambda grid max below min".into()));
        }
        if self.points > 1 && !(self.max > self.min) {
            return Err(Error::Config(format!(
                "lambda grid needs max > min for {} points, got [{}, {}]",
                self.points, self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(build_grid(self.min, self.max, self.points, self.log))
    }

    /// Same point count and spacing law over a window whose floor is raised
    /// to `lambda_star` (the span is shifted up rather than truncated, so
    /// record counts stay `trials x points` with every point in-regime).
    pub fn build_clipped(&self, lambda_star: f64) -> Result<Vec<f64>> {
        self.validate()?;
        if !lambda_star.is_finite() || lambda_star <= self.min {
            return Ok(build_grid(self.min, self.max, self.points, self.log));
        }
        let (lo, hi) = if self.log {
            let span = self.max / self.min;
            (lambda_star, self.max.max(lambda_star * span))
        } else {
            let span = self.max - self.min;
            (lambda_star, self.max.max(lambda_star + span))
        };
        Ok(build_grid(lo, hi, self.points, self.log))
    }
}

fn build_grid(lo: f64, hi: f64, points: usize, log: bool) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let mut grid = Vec::with_capacity(points);
    for i in 0..points {
        let f = i as f64 / (points - 1) as f64;
        let v = if log {
            (lo.ln() + f * (hi.ln() - lo.ln())).exp()
        } else {
            lo + f * (hi - lo)
        };
        grid.push(v);
    }
    // Endpoint exactness beats exp/ln roundoff; monotonicity is checked by
    // the solver's path precondition anyway.
    grid[0] = lo;
    grid[points - 1] = hi;
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub ensemble: EnsembleKind,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    /// Dictionary condition target; 1 means the identity dictionary.
    #[serde(default = "default_kappa")]
    pub kappa_target: f64,
    #[serde(default)]
    pub noise_ratio: f64,
    pub lambda_grid: LambdaGridSpec,
    pub trials: usize,
    pub base_seed: u64,
    /// Matrix entry scale; `m^{-1/p}` when omitted.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tol_kkt")]
    pub tol_kkt: f64,
    /// Isometry order; derived self-consistently from the theorem's cap when
    /// omitted.
    #[serde(default)]
    pub t: Option<usize>,
    /// Sampling trials per isometry estimate.
    #[serde(default)]
    pub rip_trials: Option<usize>,
    /// Ratio target for rip_rate.
    #[serde(default)]
    pub gamma_target: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<AmplitudeLaw>,
    /// Rayon pool size; an execution knob, not experiment identity, so it is
    /// accepted on input but never echoed into summaries (outputs must be
    /// byte-identical across worker counts).
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    crate::model::DEFAULT_SUPPORT_ETA
}

fn default_tol_kkt() -> f64 {
    1e-8
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ProblemParams::new(self.p, self.q, self.r, self.lambda_grid.min)
            .map_err(|e| Error::Config(format!("problem parameters: {e}")))?;
        self.lambda_grid.validate()?;
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.s == 0 || self.s > self.n {
            return Err(Error::Config(format!(
                "sparsity {} out of range 1..={}",
                self.s, self.n
            )));
        }
        if !(self.kappa_target >= 1.0) || !self.kappa_target.is_finite() {
            return Err(Error::Config(format!(
                "condition target must be >= 1, got {}",
                self.kappa_target
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("support threshold must be in (0,1), got {}", self.eta)));
        }
        if !(self.tol_kkt > 0.0) {
            return Err(Error::Config("certificate tolerance must be positive".into()));
        }
        if let Some(scale) = self.scale {
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(Error::Config(format!("scale must be positive, got {scale}")));
            }
        }
        match self.experiment {
            ExperimentKind::Thm1 => {
                if self.noise_ratio != 0.0 {
                    return Err(Error::Config(
                        "the noiseless sparsity experiment requires noise_ratio = 0".into(),
                    ));
                }
            }
            ExperimentKind::Thm2 => {
                if !(self.noise_ratio > 0.0 && self.noise_ratio <= 1.0 / 3.0) {
                    return Err(Error::Config(format!(
                        "the noisy sparsity experiment needs noise_ratio in (0, 1/3], got {}",
                        self.noise_ratio
                    )));
                }
            }
            ExperimentKind::Lemma5 => {
                if !(0.0..=1.0 / 3.0).contains(&self.noise_ratio) {
                    return Err(Error::Config(format!(
                        "noise_ratio must lie in [0, 1/3], got {}",
                        self.noise_ratio
                    )));
                }
                if !self.lambda_grid.log || self.lambda_grid.max < 1e4 * self.lambda_grid.min {
                    return Err(Error::Config(
                        "the residual-path experiment needs a log grid spanning >= 4 decades"
                            .into(),
                    ));
                }
            }
            ExperimentKind::Msparsity => {
                if self.noise_ratio != 0.0 {
                    return Err(Error::Config(
                        "the m-sparsity experiment draws dense y directly; set noise_ratio = 0"
                            .into(),
                    ));
                }
            }
            ExperimentKind::RipRate => {
                if self.noise_ratio != 0.0 {
                    return Err(Error::Config(
                        "the isometry-rate experiment does not solve; set noise_ratio = 0".into(),
                    ));
                }
                let target = self.gamma_target.ok_or_else(|| {
                    Error::Config("the isometry-rate experiment needs gamma_target".into())
                })?;
                if !(target >= 1.0) || !target.is_finite() {
                    return Err(Error::Config(format!(
                        "gamma_target must be >= 1, got {target}"
                    )));
                }
                if self.t.is_none() {
                    return Err(Error::Config(
                        "the isometry-rate experiment needs an explicit order t".into(),
                    ));
                }
                if self.lambda_grid.points != 1 {
                    return Err(Error::Config(
                        "the isometry-rate experiment uses a single-point lambda grid".into(),
                    ));
                }
            }
        }
        if let Some(t) = self.t {
            if t == 0 {
                return Err(Error::Config("isometry order must be at least 1".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_scale(&self) -> f64 {
        self.scale
            .unwrap_or_else(|| crate::ensembles::default_scale(self.p, self.m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "experiment": "thm1",
            "p": 2.0, "q": 2.0, "r": 1.0,
            "ensemble": "gaussian",
            "m": 10, "n": 20, "s": 2,
            "lambda_grid": {"min": 0.01, "max": 1.0, "points": 5},
            "trials": 3,
            "base_seed": 7
        })
    }

    #[test]
    fn parses_and_round_trips() {
        let text = base_json().to_string();
        let config = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(config.experiment, ExperimentKind::Thm1);
        assert_eq!(config.kappa_target, 1.0);
        assert!(config.lambda_grid.log);
        let echo = serde_json::to_string(&config).unwrap();
        let back = ExperimentConfig::from_json(&echo).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v = base_json();
        v["typo_field"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut v = base_json();
        v["s"] = serde_json::json!(21);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());

        let mut v = base_json();
        v["noise_ratio"] = serde_json::json!(0.1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err()); // thm1 is noiseless

        let mut v = base_json();
        v["experiment"] = serde_json::json!("thm2");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err()); // thm2 needs noise

        let mut v = base_json();
        v["experiment"] = serde_json::json!("lemma5");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err()); // < 4 decades

        let mut v = base_json();
        v["experiment"] = serde_json::json!("rip_rate");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err()); // needs target+t

        let mut v = base_json();
        v["p"] = serde_json::json!(3.0);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn grid_spacing_frozen() {
        let spec = LambdaGridSpec { min: 0.01, max: 100.0, points: 5, log: true };
        let g = spec.build().unwrap();
        let expect = [0.01, 0.1, 1.0, 10.0, 100.0];
        for (a, b) in g.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
        }
        assert_eq!(g[0], 0.01);
        assert_eq!(g[4], 100.0);

        let lin = LambdaGridSpec { min: 1.0, max: 3.0, points: 3, log: false };
        assert_eq!(lin.build().unwrap(), vec![1.0, 2.0, 3.0]);

        let single = LambdaGridSpec { min: 0.5, max: 0.5, points: 1, log: true };
        assert_eq!(single.build().unwrap(), vec![0.5]);
    }

    #[test]
    fn clipped_grid_keeps_count_and_regime() {
        let spec = LambdaGridSpec { min: 0.01, max: 100.0, points: 5, log: true };
        let g = spec.build_clipped(1.0).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 1.0);
        assert!(g[4] >= 100.0);
        assert!((g[4] - 1e4).abs() <= 1e-8 * 1e4); // span preserved

        // Below the window the grid is untouched.
        let same = spec.build_clipped(0.001).unwrap();
        assert_eq!(same, spec.build().unwrap());
        // An infinite threshold leaves the grid alone; regime handling is the
        // caller's job.
        let inf = spec.build_clipped(f64::INFINITY).unwrap();
        assert_eq!(inf, spec.build().unwrap());
    }

    #[test]
    fn experiment_names_parse() {
        for name in ["thm1", "thm2", "lemma5", "msparsity", "rip_rate"] {
            let kind: ExperimentKind = name.parse().unwrap();
            assert_eq!(kind.to_string(), name);
        }
        assert!("thm3".parse::<ExperimentKind>().is_err());
    }
}
