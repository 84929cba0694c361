//! TOML experiment configuration.
//!
//! A full experiment is one file: corpus source, observation schedule,
//! workload, countermeasures, inference and recovery parameters, the
//! attacks to run, and the repetition/seed plan. Unspecified fields
//! fall back to the documented defaults.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dsselab_core::corpus::SynthSpec;
use dsselab_core::recovery::RecoveryConfig;
use dsselab_core::search_pattern::SpConfig;
use dsselab_core::sim::{CountermeasureConfig, LeakageMode, ObservationSchedule, SimParams};

/// Where the corpus comes from: the synthetic generator or the
/// JSON-lines ingestion format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    Synth {
        #[serde(flatten)]
        spec: SynthSpec,
    },
    Jsonl {
        path: PathBuf,
        #[serde(default)]
        trends: Option<PathBuf>,
        universe: usize,
    },
}

/// Round structure; scalars apply to every round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub rounds: usize,
    pub online_days: DaysSpec,
    pub offline_days: DaysSpec,
}

/// Either one day count for all rounds or an explicit per-round vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DaysSpec {
    Uniform(u32),
    PerRound(Vec<u32>),
}

impl DaysSpec {
    fn expand(&self, rounds: usize) -> Result<Vec<u32>> {
        match self {
            DaysSpec::Uniform(d) => Ok(vec![*d; rounds]),
            DaysSpec::PerRound(v) => {
                if v.len() != rounds {
                    bail!("per-round day vector has {} entries for {rounds} rounds", v.len());
                }
                Ok(v.clone())
            }
        }
    }
}

impl ScheduleConfig {
    pub fn to_schedule(&self) -> Result<ObservationSchedule> {
        ObservationSchedule::new(
            self.online_days.expand(self.rounds)?,
            self.offline_days.expand(self.rounds)?,
        )
        .context("invalid observation schedule")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorkloadSection {
    pub queries_per_day: u32,
    #[serde(default = "default_mode")]
    pub mode: LeakageMode,
}

fn default_mode() -> LeakageMode {
    LeakageMode::Ap
}

/// Countermeasure section of the config file.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CountermeasureSection {
    pub padding_k: Option<u64>,
    pub obf_tpr: Option<f64>,
    pub obf_fpr: Option<f64>,
}

impl CountermeasureSection {
    pub fn to_config(&self) -> Result<CountermeasureConfig> {
        let obf = match (self.obf_tpr, self.obf_fpr) {
            (Some(tpr), Some(fpr)) => Some(dsselab_core::sim::ObfuscationConfig { tpr, fpr }),
            (None, None) => None,
            _ => bail!("obfuscation needs both obf_tpr and obf_fpr"),
        };
        let cm = CountermeasureConfig {
            padding_k: self.padding_k,
            obf,
        };
        cm.validate()?;
        Ok(cm)
    }
}

/// Which attack instantiations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "sap+")]
    SapPlus,
    #[serde(rename = "jigsaw+")]
    JigsawPlus,
    #[serde(rename = "ihop+")]
    IhopPlus,
    #[serde(rename = "sap+sp")]
    SapPlusWithSp,
    #[serde(rename = "jigsaw+sp")]
    JigsawPlusWithSp,
    #[serde(rename = "ihop+sp")]
    IhopPlusWithSp,
}

impl AttackKind {
    pub fn with_ground_truth_sp(&self) -> bool {
        matches!(
            self,
            AttackKind::SapPlusWithSp | AttackKind::JigsawPlusWithSp | AttackKind::IhopPlusWithSp
        )
    }

    pub fn instantiation(&self) -> dsselab_core::recovery::Instantiation {
        use dsselab_core::recovery::Instantiation::*;
        match self {
            AttackKind::SapPlus | AttackKind::SapPlusWithSp => SapPlus,
            AttackKind::JigsawPlus | AttackKind::JigsawPlusWithSp => JigsawPlus,
            AttackKind::IhopPlus | AttackKind::IhopPlusWithSp => IhopPlus,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::SapPlus => "sap+",
            AttackKind::JigsawPlus => "jigsaw+",
            AttackKind::IhopPlus => "ihop+",
            AttackKind::SapPlusWithSp => "sap+sp",
            AttackKind::JigsawPlusWithSp => "jigsaw+sp",
            AttackKind::IhopPlusWithSp => "ihop+sp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::SapPlus, AttackKind::JigsawPlus]
}

fn default_repetitions() -> u32 {
    1
}

/// One experiment: everything needed to reproduce its result rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub schedule: ScheduleConfig,
    pub workload: WorkloadSection,
    #[serde(default)]
    pub client: SimParams,
    #[serde(default)]
    pub countermeasures: CountermeasureSection,
    #[serde(default)]
    pub sp: SpConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.repetitions == 0 {
            bail!("repetitions must be >= 1");
        }
        if self.run.attacks.is_empty() {
            bail!("at least one attack must be selected");
        }
        if let CorpusSource::Jsonl { path, trends, .. } = &self.corpus {
            if !path.exists() {
                bail!("corpus path {} does not exist", path.display());
            }
            if let Some(t) = trends {
                if !t.exists() {
                    bail!("trends path {} does not exist", t.display());
                }
            }
        }
        self.schedule.to_schedule()?;
        self.countermeasures.to_config()?;
        Ok(())
    }

    /// Short stable fingerprint of the full configuration.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let canon = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canon.as_bytes());
        hex_prefix(&hash, 12)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}
