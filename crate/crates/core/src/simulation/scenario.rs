use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::model::{Component, UncertainScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    /// `beta = 0`, means `k/2` crossed with sd `0.20, 0.25` (20 components).
    E1a,
    /// `beta = 0`, means `1..10`, sd `0.25`.
    E1b,
    /// `beta = 2`, `X ~ N(1, 1)`, means `k`, sd `0.05 k`.
    E2,
    /// `beta = (3, 2)`, `X1 ~ N(1, 1)`, `X2 ~ N(2, 1)`, errors as E2.
    E3,
    /// E3 with a 100-point test set.
    E4,
    Custom,
}

impl std::str::FromStr for ExperimentId {
    type Err = PmlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1a" => Ok(ExperimentId::E1a),
            "e1b" | "e1" => Ok(ExperimentId::E1b),
            "e2" => Ok(ExperimentId::E2),
            "e3" => Ok(ExperimentId::E3),
            "e4" => Ok(ExperimentId::E4),
            "custom" => Ok(ExperimentId::Custom),
            other => Err(PmlsError::InvalidConfig(format!(
                "unknown experiment `{other}`"
            ))),
        }
    }
}

/// Normal covariate law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CovariateLaw {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub scenario: UncertainScenario,
    pub beta_true: Vec<f64>,
    pub x_distribution: Vec<CovariateLaw>,
    /// Size of an independent test set per replication (0 for none).
    pub test_size: usize,
}

fn law(mean: f64, variance: f64) -> CovariateLaw {
    CovariateLaw { mean, variance }
}

fn e2_errors() -> Result<UncertainScenario> {
    UncertainScenario::uniform(
        (1..=10)
            .map(|k| Component::normal(k as f64, 0.05 * k as f64))
            .collect(),
    )
}

impl ExperimentConfig {
    /// Built-in configuration; `Custom` must be assembled by hand.
    pub fn builtin(id: ExperimentId, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let (scenario, beta_true, x_distribution, test_size) = match id {
            ExperimentId::E1a => {
                let comps = (1..=10)
                    .flat_map(|k| [0.20, 0.25].map(|sd| Component::normal(k as f64 / 2.0, sd)))
                    .collect();
                (UncertainScenario::uniform(comps)?, vec![], vec![], 0)
            }
            ExperimentId::E1b => {
                let comps = (1..=10)
                    .map(|k| Component::normal(k as f64, 0.25))
                    .collect();
                (UncertainScenario::uniform(comps)?, vec![], vec![], 0)
            }
            ExperimentId::E2 => (e2_errors()?, vec![2.0], vec![law(1.0, 1.0)], 0),
            ExperimentId::E3 => (
                e2_errors()?,
                vec![3.0, 2.0],
                vec![law(1.0, 1.0), law(2.0, 1.0)],
                0,
            ),
            ExperimentId::E4 => (
                e2_errors()?,
                vec![3.0, 2.0],
                vec![law(1.0, 1.0), law(2.0, 1.0)],
                100,
            ),
            ExperimentId::Custom => {
                return Err(PmlsError::InvalidConfig(
                    "custom experiments need an explicit scenario".into(),
                ))
            }
        };
        let cfg = ExperimentConfig {
            experiment: id,
            n,
            reps,
            seed,
            scenario,
            beta_true,
            x_distribution,
            test_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(PmlsError::InvalidConfig("reps must be at least 1".into()));
        }
        if self.beta_true.len() != self.x_distribution.len() {
            return Err(PmlsError::InvalidConfig(
                "one covariate law per coefficient required".into(),
            ));
        }
        if self.x_distribution.iter().any(|l| !(l.variance > 0.0)) {
            return Err(PmlsError::InvalidConfig(
                "covariate variances must be positive".into(),
            ));
        }
        if self.n < self.beta_true.len() + 2 {
            return Err(PmlsError::InvalidConfig(format!(
                "N = {} is too small",
                self.n
            )));
        }
        Ok(())
    }
}
