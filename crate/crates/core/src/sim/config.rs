//! Scenario configuration. Every section has defaults, so a config file
//! only needs the fields it changes; unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::analysis::StyleIntervals;
use crate::error::{Error, Result};
use crate::learning::{AlphaRule, SgdConfig};
use crate::regions::TopologyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub population: PopulationConfig,
    pub task: TaskConfig,
    pub ledger: LedgerConfig,
    pub learning: LearningConfig,
    pub topology: TopologyConfig,
    pub mobility: MobilityConfig,
    pub scenarios: ScenarioConfigs,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 7,
            population: PopulationConfig::default(),
            task: TaskConfig::default(),
            ledger: LedgerConfig::default(),
            learning: LearningConfig::default(),
            topology: TopologyConfig::line(1),
            mobility: MobilityConfig::default(),
            scenarios: ScenarioConfigs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleType {
    pub name: String,
    pub range: [f64; 2],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub style_types: Vec<StyleType>,
    /// Training examples per ICV.
    pub dataset_size: usize,
    /// Clean test examples per ICV, at the ICV's own style.
    pub test_size: usize,
    /// Clean examples per ICV in the population evaluation set.
    pub eval_size: usize,
    /// Each ICV's mean training time is drawn uniformly from this range.
    pub delay_mean_range: [f64; 2],
    pub delay_jitter: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            style_types: vec![
                StyleType { name: "m1".into(), range: [0.45, 0.47], count: 10 },
                StyleType { name: "m2".into(), range: [0.43, 0.65], count: 10 },
                StyleType { name: "m3".into(), range: [0.095, 0.23], count: 15 },
            ],
            dataset_size: 3000,
            test_size: 500,
            eval_size: 200,
            delay_mean_range: [1.0, 4.0],
            delay_jitter: 0.2,
        }
    }
}

impl PopulationConfig {
    pub fn num_icvs(&self) -> usize {
        self.style_types.iter().map(|t| t.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub feature_dim: usize,
    pub noise: f64,
    /// Norm of the style interaction weights.
    pub style_strength: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { feature_dim: 8, noise: 0.3, style_strength: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArrivalModel {
    Uniform { low: f64, high: f64 },
    Poisson { lambda: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl ArrivalModel {
    pub fn name(&self) -> &'static str {
        match self {
            ArrivalModel::Uniform { .. } => "uniform",
            ArrivalModel::Poisson { .. } => "poisson",
            ArrivalModel::Gamma { .. } => "gamma",
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ArrivalModel::Uniform { low, high } => 0.5 * (low + high),
            ArrivalModel::Poisson { lambda } => lambda,
            ArrivalModel::Gamma { shape, scale } => shape * scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    /// Multiplies every arrival count; 1 reproduces the full-size rates.
    pub arrival_scale: f64,
    pub round_length: f64,
    pub tip_alpha: f64,
    pub tip_beta: f64,
    /// Number of equal-width style intervals used for tip statistics.
    pub style_intervals: usize,
    pub pow_difficulty: u32,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            arrival_scale: 50.0 / 700.0,
            round_length: 1.0,
            tip_alpha: 0.0,
            tip_beta: 5.0,
            style_intervals: 3,
            pow_difficulty: 8,
        }
    }
}

impl LedgerConfig {
    pub fn intervals(&self) -> StyleIntervals {
        StyleIntervals::uniform(self.style_intervals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    /// Run length `T`, also the freshness horizon.
    pub horizon: f64,
    pub sgd: SgdConfig,
    /// RSU acceptance and tip verification threshold; `null` disables both.
    pub epsilon: Option<f64>,
    pub alpha_rule: AlphaRule,
    /// Fixed population style mean; `null` uses the running mean of accepted sites.
    pub mean_style: Option<f64>,
    pub model_size_mb: f64,
    pub rsu_test_size: usize,
    /// RSU-held examples used to fit the initial global model.
    pub warmup_size: usize,
    pub warmup_epochs: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            horizon: 300.0,
            sgd: SgdConfig { epochs: 1, batch_size: 50, rate: 2.5e-4 },
            epsilon: Some(2.0),
            alpha_rule: AlphaRule::Linear,
            mean_style: None,
            model_size_mb: 120.9,
            rsu_test_size: 500,
            warmup_size: 1000,
            warmup_epochs: 300,
        }
    }
}

impl LearningConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    /// Probability that an ICV moves to a neighboring region after a task.
    pub crossing_rate: f64,
    /// Impact scopes are drawn uniformly from `0..=max_scope`.
    pub max_scope: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig { crossing_rate: 0.0, max_scope: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfigs {
    pub ledger_convergence: LedgerConvergenceConfig,
    pub dc_ledger: DcLedgerConfig,
    pub verification_loss: VerificationLossConfig,
    pub adaptive_adl: AdaptiveAdlConfig,
    pub freshness: FreshnessConfig,
    pub style_participation: StyleParticipationConfig,
    pub attack: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConvergenceConfig {
    pub arrivals: Vec<ArrivalModel>,
    pub genesis: Vec<usize>,
    pub rounds: usize,
    /// Trailing window over which tip-count drift is measured.
    pub window: usize,
}

impl Default for LedgerConvergenceConfig {
    fn default() -> Self {
        LedgerConvergenceConfig {
            arrivals: vec![
                ArrivalModel::Uniform { low: 400.0, high: 500.0 },
                ArrivalModel::Poisson { lambda: 700.0 },
                ArrivalModel::Gamma { shape: 200.0, scale: 1.0 },
            ],
            genesis: vec![10, 1000],
            rounds: 1000,
            window: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcLedgerConfig {
    pub groups: Vec<[f64; 2]>,
    pub betas: Vec<f64>,
    pub alpha: f64,
    pub appends: usize,
    pub genesis: usize,
    pub arrival: ArrivalModel,
}

impl Default for DcLedgerConfig {
    fn default() -> Self {
        DcLedgerConfig {
            groups: vec![[0.0, 0.1], [0.9, 1.0]],
            betas: vec![5.0, 0.0],
            alpha: 0.0,
            appends: 500,
            genesis: 10,
            arrival: ArrivalModel::Poisson { lambda: 700.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationLossConfig {
    /// Style type whose pooled data trains the shared model.
    pub trained_on: String,
    pub rounds: usize,
}

impl Default for VerificationLossConfig {
    fn default() -> Self {
        VerificationLossConfig { trained_on: "m2".into(), rounds: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveAdlConfig {
    pub reference_gaps: Vec<f64>,
    /// Multiplies `reference_gaps` into the synthetic task's gap range.
    pub gap_scale: f64,
    pub poor_fraction: f64,
    /// Label offset in the training data of poor ICVs.
    pub poor_label_bias: f64,
}

impl Default for AdaptiveAdlConfig {
    fn default() -> Self {
        AdaptiveAdlConfig { reference_gaps: vec![0.0156, 0.0160, 0.0168], gap_scale: 16.0, poor_fraction: 0.3, poor_label_bias: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreshnessConfig {
    /// Overrides `learning.warmup_epochs`: this comparison is about
    /// convergence speed, so it starts from a partly trained model.
    pub warmup_epochs: Option<usize>,
}

impl Default for FreshnessConfig {
    fn default() -> Self {
        FreshnessConfig { warmup_epochs: Some(80) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleParticipationConfig {
    /// Style type whose participation is varied.
    pub varied_type: String,
    pub participation: Vec<usize>,
    pub mean_style: Option<f64>,
}

impl Default for StyleParticipationConfig {
    fn default() -> Self {
        StyleParticipationConfig { varied_type: "m3".into(), participation: vec![15, 12, 7, 0], mean_style: Some(0.5) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Upload the negated local model.
    SignFlip,
    /// Upload standard-normal parameters.
    Random,
    /// Negated model with the claimed style set to the population mean.
    BiasedStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub fractions: Vec<f64>,
    pub mode: AttackMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { fractions: vec![0.2, 0.4], mode: AttackMode::SignFlip }
    }
}

fn check(ok: bool, field: impl Into<String>, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), field, format!("must be positive and finite, got {v}"))
}

fn unit(v: f64, field: &str) -> Result<()> {
    check((0.0..=1.0).contains(&v), field, format!("must lie in [0, 1], got {v}"))
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.population.style_types.iter().position(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        check(!p.style_types.is_empty(), "population.style_types", "at least one style type is required")?;
        for (i, t) in p.style_types.iter().enumerate() {
            let f = format!("population.style_types[{i}].range");
            check(
                (0.0..=1.0).contains(&t.range[0]) && (0.0..=1.0).contains(&t.range[1]) && t.range[0] <= t.range[1],
                f,
                "must be an ordered pair inside [0, 1]",
            )?;
        }
        check(p.num_icvs() >= 1, "population.style_types", "at least one ICV is required")?;
        check(p.dataset_size >= 1, "population.dataset_size", "must be at least 1")?;
        check(p.test_size >= 1, "population.test_size", "must be at least 1")?;
        check(p.eval_size >= 1, "population.eval_size", "must be at least 1")?;
        positive(p.delay_mean_range[0], "population.delay_mean_range")?;
        check(p.delay_mean_range[0] <= p.delay_mean_range[1], "population.delay_mean_range", "must be ordered")?;
        check((0.0..1.0).contains(&p.delay_jitter), "population.delay_jitter", "must lie in [0, 1)")?;

        check(self.task.feature_dim >= 1, "task.feature_dim", "must be at least 1")?;
        check(self.task.noise >= 0.0, "task.noise", "must be non-negative")?;
        check(self.task.style_strength >= 0.0, "task.style_strength", "must be non-negative")?;

        let l = &self.ledger;
        positive(l.arrival_scale, "ledger.arrival_scale")?;
        positive(l.round_length, "ledger.round_length")?;
        check(l.tip_alpha >= 0.0, "ledger.tip_alpha", "must be non-negative")?;
        check(l.tip_beta >= 0.0, "ledger.tip_beta", "must be non-negative")?;
        check(l.style_intervals >= 1, "ledger.style_intervals", "must be at least 1")?;
        check(l.pow_difficulty <= crate::site::MAX_POW_DIFFICULTY, "ledger.pow_difficulty", "must be at most 32")?;

        let g = &self.learning;
        positive(g.horizon, "learning.horizon")?;
        check(g.sgd.epochs >= 1, "learning.sgd.epochs", "must be at least 1")?;
        check(g.sgd.batch_size >= 1, "learning.sgd.batch_size", "must be at least 1")?;
        check(g.sgd.rate >= 0.0, "learning.sgd.rate", "must be non-negative")?;
        if let Some(e) = g.epsilon {
            check(e >= 0.0, "learning.epsilon", "must be non-negative")?;
        }
        if let Some(m) = g.mean_style {
            unit(m, "learning.mean_style")?;
        }
        check(g.model_size_mb >= 0.0, "learning.model_size_mb", "must be non-negative")?;
        check(g.rsu_test_size >= 1, "learning.rsu_test_size", "must be at least 1")?;

        self.topology.validate()?;
        unit(self.mobility.crossing_rate, "mobility.crossing_rate")?;

        let s = &self.scenarios;
        for (i, a) in s.ledger_convergence.arrivals.iter().enumerate() {
            validate_arrival(a, &format!("scenarios.ledger_convergence.arrivals[{i}]"))?;
        }
        check(
            s.ledger_convergence.window >= 2 && s.ledger_convergence.window <= s.ledger_convergence.rounds,
            "scenarios.ledger_convergence.window",
            "must be between 2 and the round count",
        )?;
        for (i, gr) in s.dc_ledger.groups.iter().enumerate() {
            check(
                gr[0] <= gr[1] && (0.0..=1.0).contains(&gr[0]) && (0.0..=1.0).contains(&gr[1]),
                format!("scenarios.dc_ledger.groups[{i}]"),
                "must be an ordered pair inside [0, 1]",
            )?;
        }
        check(!s.dc_ledger.groups.is_empty(), "scenarios.dc_ledger.groups", "at least one group is required")?;
        validate_arrival(&s.dc_ledger.arrival, "scenarios.dc_ledger.arrival")?;
        check(
            self.type_index(&s.verification_loss.trained_on).is_some(),
            "scenarios.verification_loss.trained_on",
            "must name a population style type",
        )?;
        check(s.adaptive_adl.gap_scale > 0.0, "scenarios.adaptive_adl.gap_scale", "must be positive")?;
        unit(s.adaptive_adl.poor_fraction, "scenarios.adaptive_adl.poor_fraction")?;
        match self.type_index(&s.style_participation.varied_type) {
            None => {
                return Err(Error::config("scenarios.style_participation.varied_type", "must name a population style type"))
            }
            Some(t) => {
                let n = p.style_types[t].count;
                check(
                    s.style_participation.participation.iter().all(|&k| k <= n),
                    "scenarios.style_participation.participation",
                    format!("entries must not exceed the type's count {n}"),
                )?;
            }
        }
        if let Some(m) = s.style_participation.mean_style {
            unit(m, "scenarios.style_participation.mean_style")?;
        }
        for (i, f) in s.attack.fractions.iter().enumerate() {
            unit(*f, &format!("scenarios.attack.fractions[{i}]"))?;
        }
        Ok(())
    }
}

fn validate_arrival(a: &ArrivalModel, field: &str) -> Result<()> {
    match *a {
        ArrivalModel::Uniform { low, high } => check(low >= 0.0 && low <= high, field, "need 0 <= low <= high"),
        ArrivalModel::Poisson { lambda } => positive(lambda, field),
        ArrivalModel::Gamma { shape, scale } => {
            positive(shape, field)?;
            positive(scale, field)
        }
    }
}
