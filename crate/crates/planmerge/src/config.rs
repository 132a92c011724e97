//! Simulation configuration: the parameter set, validation, the three
//! experiment presets, and a small key=value overlay format for files.

use crate::merging::MergeMethod;
use crate::plan::{DistanceWeights, PlanDims};
use crate::reputation::ReputationParams;
use thiserror::Error;

/// Full parameterization of one experiment. A config plus a seed determines
/// a run bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dims: PlanDims,
    pub weights: DistanceWeights,
    pub rep_params: ReputationParams,
    pub num_operators: usize,
    pub num_nodes: usize,
    /// Nodes one operator can serve at once.
    pub availability: usize,
    /// Cap on directory size per node type.
    pub max_recommenders: usize,
    /// Completed plan rounds per node before it stops asking.
    pub num_iterations: usize,
    pub merge_method: MergeMethod,
    /// Step replacements attempted by the replacement method.
    pub num_replacements: usize,
    /// Plans remembered per node type; older entries are dropped first.
    pub history_depth: usize,
    /// Whether an operator's own best plan joins the candidate set.
    pub include_own_plan: bool,
    pub master_seed: u64,
    /// Batch size: runs use seeds master_seed..master_seed+num_seeds.
    pub num_seeds: usize,
    /// Forces every perceived result to equal the true normalized error.
    pub no_noise: bool,
    /// Pre-execute each operator's seeded plan once so expertise and history
    /// start from a measured baseline instead of the optimistic default.
    pub warmup_history: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be at least 1")]
    ZeroCount { field: &'static str },
    #[error("{field} must be positive and finite, got {value}")]
    BadReal { field: &'static str, value: f64 },
    #[error("distance weights must be nonnegative, finite, and sum above zero")]
    BadWeights,
    #[error(
        "{num_operators} operators with availability {availability} cannot serve {num_nodes} nodes"
    )]
    InsufficientCapacity { num_operators: usize, availability: usize, num_nodes: usize },
    #[error("config line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("unknown preset {0:?}; expected exp1, exp2, or exp3")]
    UnknownPreset(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn count(field: &'static str, value: usize) -> Result<(), ConfigError> {
            if value == 0 {
                Err(ConfigError::ZeroCount { field })
            } else {
                Ok(())
            }
        }
        count("num_node_types", self.dims.num_node_types)?;
        count("num_subtypes", self.dims.num_subtypes)?;
        count("num_timesteps", self.dims.num_timesteps)?;
        count("num_operators", self.num_operators)?;
        count("num_nodes", self.num_nodes)?;
        count("availability", self.availability)?;
        count("max_recommenders", self.max_recommenders)?;
        count("num_iterations", self.num_iterations)?;
        count("history_depth", self.history_depth)?;
        count("num_seeds", self.num_seeds)?;
        if self.rep_params.global_threshold == 0 {
            return Err(ConfigError::ZeroCount { field: "global_threshold" });
        }
        if !(self.rep_params.max_time.is_finite() && self.rep_params.max_time > 0.0) {
            return Err(ConfigError::BadReal {
                field: "max_time",
                value: self.rep_params.max_time,
            });
        }
        let w = &self.weights;
        let each_ok = [w.w_type, w.w_subtype, w.w_timestep]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !each_ok || w.total() <= 0.0 {
            return Err(ConfigError::BadWeights);
        }
        // Every node must eventually find an operator or the run never ends.
        if self.num_operators * self.availability < self.num_nodes {
            return Err(ConfigError::InsufficientCapacity {
                num_operators: self.num_operators,
                availability: self.availability,
                num_nodes: self.num_nodes,
            });
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of this config. Keys are the
    /// lower_snake field names, with nested structs flattened to their leaf
    /// fields (`num_timesteps`, `w_type`, `max_time`, ...). Blank lines are
    /// skipped and `#` starts a comment anywhere on a line.
    pub fn apply_config_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    detail: format!("expected key = value, got {content:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            self.apply_key(key, value)
                .map_err(|detail| ConfigError::Parse { line, detail })?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| format!("bad value for {key}: {e}"))
        }
        match key {
            "num_node_types" => self.dims.num_node_types = parse(key, value)?,
            "num_subtypes" => self.dims.num_subtypes = parse(key, value)?,
            "num_timesteps" => self.dims.num_timesteps = parse(key, value)?,
            "w_type" => self.weights.w_type = parse(key, value)?,
            "w_subtype" => self.weights.w_subtype = parse(key, value)?,
            "w_timestep" => self.weights.w_timestep = parse(key, value)?,
            "global_threshold" => self.rep_params.global_threshold = parse(key, value)?,
            "max_time" => self.rep_params.max_time = parse(key, value)?,
            "num_operators" => self.num_operators = parse(key, value)?,
            "num_nodes" => self.num_nodes = parse(key, value)?,
            "availability" => self.availability = parse(key, value)?,
            "max_recommenders" => self.max_recommenders = parse(key, value)?,
            "num_iterations" => self.num_iterations = parse(key, value)?,
            "merge_method" => {
                let i: u8 = parse(key, value)?;
                self.merge_method = MergeMethod::from_index(i)
                    .ok_or_else(|| format!("bad value for {key}: must be 0, 1, 2, or 3"))?;
            }
            "num_replacements" => self.num_replacements = parse(key, value)?,
            "history_depth" => self.history_depth = parse(key, value)?,
            "include_own_plan" => self.include_own_plan = parse(key, value)?,
            "master_seed" => self.master_seed = parse(key, value)?,
            "num_seeds" => self.num_seeds = parse(key, value)?,
            "no_noise" => self.no_noise = parse(key, value)?,
            "warmup_history" => self.warmup_history = parse(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

/// Looks up a preset by its command-line name.
pub fn preset(name: &str) -> Result<SimConfig, ConfigError> {
    match name {
        "exp1" => Ok(presets::exp1()),
        "exp2" => Ok(presets::exp2()),
        "exp3" => Ok(presets::exp3()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

/// The three experiment setups. They share one core: a single node type with
/// two subtypes, five-step plans, uniform weights, one node per operator at
/// a time, and a directory cap of twenty recommenders.
pub mod presets {
    use super::*;

    fn core() -> SimConfig {
        SimConfig {
            dims: PlanDims { num_node_types: 1, num_subtypes: 2, num_timesteps: 5 },
            weights: DistanceWeights::uniform(),
            rep_params: ReputationParams { global_threshold: 10, max_time: 10.0 },
            num_operators: 1,
            num_nodes: 1,
            availability: 1,
            max_recommenders: 20,
            num_iterations: 1,
            merge_method: MergeMethod::OwnHistoryBest,
            num_replacements: 1,
            history_depth: 5,
            include_own_plan: true,
            master_seed: 41,
            num_seeds: 30,
            no_noise: false,
            warmup_history: true,
        }
    }

    /// Many operators, one node: recommendations are static, so two
    /// iterations suffice to show the merge-method gap.
    pub fn exp1() -> SimConfig {
        SimConfig { num_operators: 20, num_nodes: 1, num_iterations: 2, ..core() }
    }

    /// Two operators serving two nodes over ten iterations: both learn.
    pub fn exp2() -> SimConfig {
        SimConfig { num_operators: 2, num_nodes: 2, num_iterations: 10, ..core() }
    }

    /// Ten operators and ten nodes over ten iterations: full co-learning.
    pub fn exp3() -> SimConfig {
        SimConfig { num_operators: 10, num_nodes: 10, num_iterations: 10, ..core() }
    }
}
