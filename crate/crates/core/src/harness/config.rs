//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::basic::{BasicAttackConfig, Method, Schedule};
use crate::attack::spark::{SparkConfig, SparkVariant};
use crate::error::{Error, Result};
use crate::metrics::MapMode;
use crate::objective::ObjectiveKind;
use crate::scene::SceneConfig;
use crate::tracker::{FeatureKernel, DEFAULT_CONTEXT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub count: usize,
    /// Template for every video; each video's seed is derived from the master seed.
    pub scene: SceneConfig,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            count: 20,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    Spark(SparkConfig),
    Basic(BasicAttackConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub name: String,
    /// Kernel pairs for this attack; the experiment's list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<KernelPair>>,
    /// Objectives for this attack; the experiment's list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<Vec<ObjectiveKind>>,
    #[serde(flatten)]
    pub kind: AttackKind,
}

impl AttackSpec {
    pub fn spark(name: &str, cfg: SparkConfig) -> Self {
        Self {
            name: name.into(),
            pairs: None,
            objectives: None,
            kind: AttackKind::Spark(cfg),
        }
    }

    pub fn basic(name: &str, cfg: BasicAttackConfig) -> Self {
        Self {
            name: name.into(),
            pairs: None,
            objectives: None,
            kind: AttackKind::Basic(cfg),
        }
    }

    pub fn on(mut self, pairs: Vec<KernelPair>, objectives: Vec<ObjectiveKind>) -> Self {
        self.pairs = Some(pairs);
        self.objectives = Some(objectives);
        self
    }

    /// Short method label for tables.
    pub fn method(&self) -> String {
        match &self.kind {
            AttackKind::Spark(c) => match c.variant {
                SparkVariant::Standard => "spark".into(),
                SparkVariant::NoTemplate => "spark_no_template".into(),
                SparkVariant::NoVictimBox => "spark_no_victim_box".into(),
            },
            AttackKind::Basic(c) => c.method.name().into(),
        }
    }

    pub fn schedule(&self) -> String {
        match &self.kind {
            AttackKind::Spark(_) => "incremental".into(),
            AttackKind::Basic(c) => c.schedule.name().into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::ConfigInvalid(format!(
                "attack name {:?} must be nonempty [A-Za-z0-9_-]",
                self.name
            )));
        }
        match &self.kind {
            AttackKind::Spark(c) => c.validate(),
            AttackKind::Basic(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelPair {
    pub attacker: FeatureKernel,
    pub victim: FeatureKernel,
}

impl KernelPair {
    pub fn white_box(k: FeatureKernel) -> Self {
        Self { attacker: k, victim: k }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.attacker.name(), self.victim.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub suite: SuiteSpec,
    pub attacks: Vec<AttackSpec>,
    pub objectives: Vec<ObjectiveKind>,
    pub kernel_pairs: Vec<KernelPair>,
    pub context_factor: f64,
    pub map_mode: MapMode,
    pub master_seed: u64,
    /// `0` uses every available core.
    pub workers: usize,
    pub out: PathBuf,
    pub dump_perturbations: bool,
    /// Videos (from index 0) whose cells get SVG plots.
    pub plot_videos: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: SuiteSpec::default(),
            attacks: vec![AttackSpec::spark("spark", SparkConfig::default())],
            objectives: vec![ObjectiveKind::Ua, ObjectiveKind::Ta],
            kernel_pairs: vec![KernelPair::white_box(FeatureKernel::Identity)],
            context_factor: DEFAULT_CONTEXT,
            map_mode: MapMode::Region,
            master_seed: 0,
            workers: 0,
            out: PathBuf::from("out"),
            dump_perturbations: false,
            plot_videos: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.suite.count == 0 {
            return bad("suite.count must be positive".into());
        }
        self.suite.scene.validate()?;
        if self.objectives.is_empty() {
            return bad("at least one objective is required".into());
        }
        if self.kernel_pairs.is_empty() {
            return bad("at least one kernel pair is required".into());
        }
        if !(self.context_factor >= 1.0) {
            return bad("context_factor must be at least 1".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.attacks {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return bad(format!("duplicate attack name {}", a.name));
            }
        }
        for a in &self.attacks {
            if a.pairs.as_ref().is_some_and(|p| p.is_empty()) || a.objectives.as_ref().is_some_and(|o| o.is_empty()) {
                return bad(format!("attack {} has an empty pair or objective list", a.name));
            }
        }
        Ok(())
    }

    pub fn pairs_for(&self, attack: &AttackSpec) -> Vec<KernelPair> {
        attack.pairs.clone().unwrap_or_else(|| self.kernel_pairs.clone())
    }

    pub fn objectives_for(&self, attack: &AttackSpec) -> Vec<ObjectiveKind> {
        attack.objectives.clone().unwrap_or_else(|| self.objectives.clone())
    }

    /// Victim kernels that need a clean baseline.
    pub fn victim_kernels(&self) -> Vec<FeatureKernel> {
        let mut ks: Vec<FeatureKernel> = self.kernel_pairs.iter().map(|p| p.victim).collect();
        for a in &self.attacks {
            ks.extend(self.pairs_for(a).iter().map(|p| p.victim));
        }
        ks.sort();
        ks.dedup();
        ks
    }

    /// The grid used for acceptance: every comparison the tables need.
    pub fn acceptance() -> Self {
        use FeatureKernel::*;
        use ObjectiveKind::*;
        let id = vec![KernelPair::white_box(Identity)];
        let bim = |schedule, iters_between| BasicAttackConfig {
            method: Method::Bim,
            schedule,
            iters_between,
            ..BasicAttackConfig::default()
        };
        let variant = |v| SparkConfig {
            variant: v,
            ..SparkConfig::default()
        };
        let kernels = [Identity, BoxBlur3, CenterSurround];
        let transfer: Vec<KernelPair> = kernels
            .iter()
            .flat_map(|&v| kernels.iter().map(move |&a| KernelPair { attacker: a, victim: v }))
            .collect();
        Self {
            attacks: vec![
                AttackSpec::spark("spark", SparkConfig::default()).on(transfer, vec![Ua]),
                AttackSpec::spark("spark_ta", SparkConfig::default()).on(id.clone(), vec![Ta]),
                AttackSpec::spark("spark_no_template", variant(SparkVariant::NoTemplate)).on(id.clone(), vec![Ua]),
                AttackSpec::spark("spark_no_victim_box", variant(SparkVariant::NoVictimBox)).on(id.clone(), vec![Ua]),
                AttackSpec::basic("ba_e_bim", bim(Schedule::BaE, 2)).on(id.clone(), vec![Ta]),
                AttackSpec::basic("ba_e_bim_10", bim(Schedule::BaE, 10)).on(id.clone(), vec![Ta]),
                AttackSpec::basic("ba_r1_bim", bim(Schedule::BaR1, 10)).on(id.clone(), vec![Ta]),
                AttackSpec::basic("ba_r2_bim", bim(Schedule::BaR2, 10)).on(id, vec![Ta]),
            ],
            objectives: vec![Ua, Ta],
            kernel_pairs: vec![KernelPair::white_box(Identity)],
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::acceptance();
        let s = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"attacks":[{"name":"f","kind":"basic","method":"fgsm"}],"objectives":["ta"]}"#,
        )
        .unwrap();
        minimal.validate().unwrap();
        match &minimal.attacks[0].kind {
            AttackKind::Basic(b) => assert_eq!(b.step(), 1.0),
            _ => panic!(),
        }
        assert_eq!(minimal.suite.count, 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.objectives.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.attacks.push(cfg.attacks[0].clone());
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.attacks[0].name = "a b".into();
        assert!(cfg.validate().is_err());
    }
}
