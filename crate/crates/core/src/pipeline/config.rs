use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynfit::FitSettings;
use crate::env::{self, ArmParams, CostModel, PlantSpec, ReachTerm, TaskCost};
use crate::error::{Error, Result};
use crate::ilqg::{KlBudget, KlSchedule};
use crate::linalg::{Mat, Vector};
use crate::serde_mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    DoubleIntegrator {
        dt: f64,
        process_var: f64,
        init_mean: Vec<f64>,
        init_var: f64,
    },
    TwoLinkArm {
        #[serde(default)]
        params: ArmParams,
        process_var: f64,
        init_mean: Vec<f64>,
        init_var: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    pub weight: f64,
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// row-major
    #[serde(with = "serde_mat::mat")]
    pub q_s: Mat,
    #[serde(with = "serde_mat::mat")]
    pub q_a: Mat,
    pub s_star: Vec<f64>,
    pub a_star: Vec<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub reach: Option<ReachConfig>,
}

/// When the baseline hands over to EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchRule {
    /// after this many baseline iterations
    Fixed { iteration: usize },
    /// once the mean cost improves by less than `threshold` (relative) for
    /// `patience` consecutive iterations
    RelativeImprovement { threshold: f64, patience: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub max_iterations: usize,
    pub switch: SwitchRule,
    /// action standard deviation of the initial policy
    pub init_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub recursions: usize,
    /// covariance assigned to each M-step policy, times the identity
    pub cov_floor: f64,
    /// floor on the initial-state covariance estimated from the batch
    pub init_cov_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    pub iterations: usize,
    pub schedule: KlSchedule,
    /// per-iteration multiplier on the KL bounds
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: usize,
    /// rollouts per iteration
    pub rollouts: usize,
    /// rollouts for the final evaluation
    pub eval_rollouts: usize,
    /// sensor noise variance
    pub rho2: f64,
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub baseline: BaselineConfig,
    pub em: EmConfig,
    pub refinement: RefinementConfig,
    pub fit: FitSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "double_integrator".into(),
            seed: 0,
            horizon: 70,
            rollouts: 20,
            eval_rollouts: 20,
            rho2: 0.1,
            plant: PlantConfig::DoubleIntegrator {
                dt: 0.1,
                process_var: 1e-3,
                init_mean: vec![0.0; 4],
                init_var: 1e-2,
            },
            cost: CostConfig {
                q_s: Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.1, 0.1])),
                q_a: Mat::identity(2, 2) * 0.1,
                s_star: vec![1.0, 1.0, 0.0, 0.0],
                a_star: vec![0.0, 0.0],
                lambda: 2.0,
                reach: None,
            },
            baseline: BaselineConfig {
                max_iterations: 10,
                switch: SwitchRule::RelativeImprovement {
                    threshold: 0.01,
                    patience: 2,
                },
                init_sigma: 1.0,
            },
            em: EmConfig {
                recursions: 1,
                cov_floor: 1e-4,
                init_cov_floor: 1e-6,
            },
            refinement: RefinementConfig {
                iterations: 2,
                schedule: KlSchedule::Constant { nu: 5.0 },
                decay: 1.0,
            },
            fit: FitSettings::default(),
            output: None,
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

fn nonnegative(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be nonnegative, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Parse by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.rollouts < 2 || self.eval_rollouts < 2 {
            return Err(Error::InvalidParameter("at least two rollouts are needed per batch".into()));
        }
        nonnegative("sensor noise variance", self.rho2)?;
        positive("initial action spread", self.baseline.init_sigma)?;
        positive("M-step covariance floor", self.em.cov_floor)?;
        positive("initial covariance floor", self.em.init_cov_floor)?;
        positive("KL decay", self.refinement.decay)?;
        if self.baseline.max_iterations == 0 {
            return Err(Error::InvalidParameter("baseline needs at least one iteration".into()));
        }
        match &self.baseline.switch {
            SwitchRule::Fixed { iteration } if *iteration == 0 => {
                return Err(Error::InvalidParameter("switch iteration must be at least 1".into()))
            }
            SwitchRule::RelativeImprovement { threshold, patience } => {
                nonnegative("switch threshold", *threshold)?;
                if *patience == 0 {
                    return Err(Error::InvalidParameter("switch patience must be at least 1".into()));
                }
            }
            _ => {}
        }
        KlBudget::new(self.refinement.schedule.clone(), self.horizon)?;
        if self.fit.vb.clusters == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one cluster".into()));
        }
        positive("prior strength n0", self.fit.n0)?;
        self.plant()?.validate()?;
        self.task_cost()?;
        Ok(())
    }

    pub fn plant(&self) -> Result<PlantSpec> {
        let p = match &self.plant {
            PlantConfig::DoubleIntegrator {
                dt,
                process_var,
                init_mean,
                init_var,
            } => {
                positive("time step", *dt)?;
                env::double_integrator_2d(
                    self.horizon,
                    *dt,
                    *process_var,
                    self.rho2,
                    Vector::from_column_slice(init_mean),
                    *init_var,
                )
            }
            PlantConfig::TwoLinkArm {
                params,
                process_var,
                init_mean,
                init_var,
            } => env::two_link_arm(
                self.horizon,
                params.clone(),
                *process_var,
                self.rho2,
                Vector::from_column_slice(init_mean),
                *init_var,
            ),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn task_cost(&self) -> Result<TaskCost> {
        let c = &self.cost;
        let base = CostModel::new(
            c.q_s.clone(),
            c.q_a.clone(),
            Vector::from_column_slice(&c.s_star),
            Vector::from_column_slice(&c.a_star),
            c.lambda,
        )?;
        let reach = match (&c.reach, &self.plant) {
            (None, _) => None,
            (Some(r), PlantConfig::TwoLinkArm { params, .. }) => {
                nonnegative("reach weight", r.weight)?;
                Some(ReachTerm {
                    weight: r.weight,
                    target: r.target,
                    link_lengths: params.link_lengths,
                })
            }
            (Some(_), _) => return Err(Error::InvalidParameter("reach term needs the arm plant".into())),
        };
        let plant = self.plant()?;
        if base.n_s() != plant.n_s || base.n_a() != plant.n_a {
            return Err(Error::Dimension(format!(
                "cost is {}x{} but the plant is {}x{}",
                base.n_s(),
                base.n_a(),
                plant.n_s,
                plant.n_a
            )));
        }
        Ok(TaskCost { base, reach })
    }

    pub fn budget(&self, iteration: usize) -> Result<KlBudget> {
        KlBudget::new(self.refinement.schedule.clone(), self.horizon)?.scaled(self.refinement.decay.powi(iteration as i32))
    }

    /// Configuration reduced to the iLQG baseline only.
    pub fn baseline_only(&self) -> Self {
        let mut c = self.clone();
        c.em.recursions = 0;
        c.refinement.iterations = 0;
        c
    }
}
