//! Experiment configuration: a JSON document with complex numbers written
//! as `[re, im]` and matrices as arrays of rows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use oqw_core::class::{ClassTable, TransitionRule, VertexClass};
use oqw_core::lattice::{ClassField, SiteClassifier};
use oqw_core::matrix::{ComplexMatrix, DensityOperator};
use oqw_core::stats::CltThresholds;
use oqw_core::walk::CompiledWalk;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub internal_dimension: usize,
    pub classes: BTreeMap<String, ClassSpec>,
    pub field: FieldSpec,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub reduction: Option<ReductionSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

/// One vertex class. `generalized` classes may carry arbitrary
/// displacements (reduced walks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default)]
    pub generalized: bool,
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub displacement: Vec<i64>,
    pub kraus: Vec<ComplexMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Tile labels in row-major order, first coordinate slowest.
    Periodic { period: Vec<i64>, tile: Vec<String> },
    Random {
        probabilities: BTreeMap<String, f64>,
        seed: u64,
    },
    Homogeneous { class: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    #[serde(default)]
    pub rho: RhoSpec,
    /// Origin when empty.
    #[serde(default)]
    pub position: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    /// Only `"maximally-mixed"` is recognised.
    Named(String),
    Matrix(ComplexMatrix),
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Named("maximally-mixed".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    /// Half-width of the evolution window; derived from the step count when absent.
    pub window_radius: Option<i64>,
    pub evolve_steps: Vec<usize>,
    pub dump_endpoints: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            trajectories: 10_000,
            seed: 0,
            window_radius: None,
            evolve_steps: Vec::new(),
            dump_endpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSpec {
    pub z: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks: f64,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        let t = CltThresholds::default();
        Self {
            z: t.z,
            skewness: t.skewness,
            excess_kurtosis: t.excess_kurtosis,
            ks: t.ks,
        }
    }
}

impl From<&ThresholdSpec> for CltThresholds {
    fn from(t: &ThresholdSpec) -> Self {
        CltThresholds {
            z: t.z,
            skewness: t.skewness,
            excess_kurtosis: t.excess_kurtosis,
            ks: t.ks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSpec {
    pub base_class: String,
    pub path_length: usize,
    /// Reduced steps compared against the original walk.
    #[serde(default = "one")]
    pub equivalence_steps: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Directions `l`; the coordinate axes when empty.
    pub directions: Vec<Vec<f64>>,
    /// Random `(ρ, x)` samples for the martingale identity check.
    pub identity_samples: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            directions: Vec::new(),
            identity_samples: 100,
        }
    }
}

impl ClassSpec {
    pub fn build(&self, label: &str, dimension: usize) -> CliResult<VertexClass> {
        let rules = self
            .rules
            .iter()
            .map(|r| TransitionRule::new(r.displacement.clone(), r.kraus.clone()))
            .collect();
        Ok(VertexClass::new(label, dimension, rules, self.generalized)?)
    }

    pub fn from_class(class: &VertexClass) -> Self {
        Self {
            generalized: class.is_generalized(),
            rules: class
                .rules()
                .iter()
                .map(|r| RuleSpec {
                    displacement: r.displacement.clone(),
                    kraus: r.kraus_ops.clone(),
                })
                .collect(),
        }
    }
}

/// A single exported class: the reduced-walk file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassFile {
    pub label: String,
    pub dimension: usize,
    #[serde(default)]
    pub generalized: bool,
    pub rules: Vec<RuleSpec>,
}

impl ClassFile {
    pub fn from_class(class: &VertexClass) -> Self {
        let spec = ClassSpec::from_class(class);
        Self {
            label: class.label().to_string(),
            dimension: class.dimension(),
            generalized: spec.generalized,
            rules: spec.rules,
        }
    }

    pub fn build(&self) -> CliResult<VertexClass> {
        let spec = ClassSpec {
            generalized: self.generalized,
            rules: self.rules.clone(),
        };
        spec.build(&self.label, self.dimension)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// A parsed config plus the hash of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let config: ExperimentConfig =
            serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            config,
            sha256: hex::encode(Sha256::digest(bytes)),
        })
    }
}

impl ExperimentConfig {
    /// Classes in label order, structurally checked but not validated.
    pub fn classes(&self) -> CliResult<Vec<VertexClass>> {
        let classes = self
            .classes
            .iter()
            .map(|(label, spec)| spec.build(label, self.dimension))
            .collect::<CliResult<Vec<_>>>()?;
        for class in &classes {
            if class.internal_dim() != self.internal_dimension {
                return Err(CliError::Config(format!(
                    "class `{}` has internal dimension {}, config says {}",
                    class.label(),
                    class.internal_dim(),
                    self.internal_dimension
                )));
            }
        }
        Ok(classes)
    }

    pub fn field(&self) -> CliResult<ClassField> {
        let field = match &self.field {
            FieldSpec::Periodic { period, tile } => {
                ClassField::periodic(self.dimension, period.clone(), tile.clone())?
            }
            FieldSpec::Random { probabilities, seed } => ClassField::random(
                self.dimension,
                probabilities.iter().map(|(k, p)| (k.clone(), *p)).collect(),
                *seed,
            )?,
            FieldSpec::Homogeneous { class } => ClassField::homogeneous(self.dimension, class)?,
        };
        Ok(field)
    }

    /// Class table and compiled walk; fails if any class is invalid.
    pub fn walk(&self) -> CliResult<(ClassTable, CompiledWalk)> {
        let table = ClassTable::new(self.classes()?)?;
        let walk = CompiledWalk::new(self.field()?, &table)?;
        Ok((table, walk))
    }

    pub fn initial_density(&self) -> CliResult<DensityOperator> {
        match &self.initial_state.rho {
            RhoSpec::Named(name) if name == "maximally-mixed" => {
                Ok(DensityOperator::maximally_mixed(self.internal_dimension))
            }
            RhoSpec::Named(name) => Err(CliError::Config(format!("unknown initial state `{name}`"))),
            RhoSpec::Matrix(m) => {
                if m.dim() != self.internal_dimension {
                    return Err(CliError::Config(format!(
                        "initial state has dimension {}, config says {}",
                        m.dim(),
                        self.internal_dimension
                    )));
                }
                Ok(DensityOperator::new(m.clone())?)
            }
        }
    }

    pub fn initial_position(&self) -> CliResult<Vec<i64>> {
        let p = &self.initial_state.position;
        if p.is_empty() {
            return Ok(vec![0; self.dimension]);
        }
        if p.len() != self.dimension {
            return Err(CliError::Config(format!(
                "initial position has {} coordinates, dimension is {}",
                p.len(),
                self.dimension
            )));
        }
        Ok(p.clone())
    }

    pub fn directions(&self) -> Vec<Vec<f64>> {
        if !self.analysis.directions.is_empty() {
            return self.analysis.directions.clone();
        }
        (0..self.dimension)
            .map(|i| (0..self.dimension).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// Class weights for drift mixing: field probabilities for random
    /// fields, per-period frequencies for periodic ones.
    pub fn class_weights(&self, field: &ClassField) -> Vec<(String, f64)> {
        let densities = field.densities();
        field
            .labels()
            .iter()
            .map(|l| (l.clone(), densities.get(l)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "dimension": 1,
        "internal_dimension": 1,
        "classes": {"C": {"rules": [
            {"displacement": [1], "kraus": [[[[0.7071067811865476, 0]]]]},
            {"displacement": [-1], "kraus": [[[[0.7071067811865476, 0]]]]}
        ]}},
        "field": {"homogeneous": {"class": "C"}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = LoadedConfig::from_bytes(SMALL.as_bytes()).unwrap();
        assert_eq!(cfg.sha256.len(), 64);
        let c = &cfg.config;
        assert_eq!(c.run.trajectories, 10_000);
        assert_eq!(c.initial_position().unwrap(), vec![0]);
        assert_eq!(c.directions(), vec![vec![1.0]]);
        let (table, walk) = c.walk().unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(walk.max_step(), 1);
        assert_eq!(c.initial_density().unwrap().dim(), 1);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = SMALL.replace("\"dimension\": 1,", "\"dimension\": 1, \"extra\": 3,");
        assert!(matches!(
            LoadedConfig::from_bytes(bad.as_bytes()),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn missing_class_is_a_validation_error() {
        let bad = SMALL.replace("{\"class\": \"C\"}", "{\"class\": \"D\"}");
        let cfg = LoadedConfig::from_bytes(bad.as_bytes()).unwrap();
        let err = cfg.config.walk().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn class_file_round_trip() {
        let cfg = LoadedConfig::from_bytes(SMALL.as_bytes()).unwrap();
        let class = cfg.config.classes().unwrap().remove(0);
        let text = serde_json::to_string(&ClassFile::from_class(&class)).unwrap();
        let back: ClassFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap(), class);
    }
}
