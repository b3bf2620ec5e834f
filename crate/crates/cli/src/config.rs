//! TOML run configurations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scma_pn::optimize::OptimizerConfig;
use scma_pn::pnmetrics::Enumeration;
use scma_pn::sim::Detector;
use scma_pn::{FactorGraph, LpPamSpec, SlotMap};

use crate::CliError;

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub sigma_p2: f64,
    pub eb_n0_db: f64,
}

impl std::str::FromStr for OperatingPoint {
    type Err = String;

    /// `SIGMA_P2@EBN0_DB`, e.g. `0.03@10`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once('@')
            .ok_or_else(|| format!("operating point `{s}` is not of the form SIGMA_P2@EBN0_DB"))?;
        let sigma_p2 = a.trim().parse().map_err(|e| format!("sigma_p2 in `{s}`: {e}"))?;
        let eb_n0_db = b.trim().parse().map_err(|e| format!("Eb/N0 in `{s}`: {e}"))?;
        Ok(Self { sigma_p2, eb_n0_db })
    }
}

/// A named preset or an explicit incidence matrix with optional slot map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphConfig {
    Preset(String),
    Explicit {
        incidence: Vec<Vec<u8>>,
        #[serde(default)]
        slots: Option<Vec<Vec<usize>>>,
    },
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig::Preset("preset-4x6".into())
    }
}

impl GraphConfig {
    pub fn build(&self) -> Result<(FactorGraph, SlotMap), CliError> {
        match self {
            GraphConfig::Preset(name) if name == "preset-4x6" => {
                Ok((FactorGraph::preset_4x6(), SlotMap::preset_4x6()))
            }
            GraphConfig::Preset(name) => Err(CliError::Config(format!(
                "problem.graph: unknown preset `{name}` (known: preset-4x6)"
            ))),
            GraphConfig::Explicit { incidence, slots } => {
                let g = FactorGraph::from_incidence(incidence)
                    .map_err(|e| CliError::Config(format!("problem.graph.incidence: {e}")))?;
                let s = match slots {
                    Some(rows) => SlotMap::new(&g, rows.clone()),
                    None => SlotMap::edge_coloring(&g),
                }
                .map_err(|e| CliError::Config(format!("problem.graph.slots: {e}")))?;
                Ok((g, s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: usize,
    pub t: usize,
    /// Starting scattering ratios; defaults to 2 for each.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub graph: GraphConfig,
}

impl ProblemConfig {
    pub fn lppam(&self) -> Result<LpPamSpec, CliError> {
        let alpha = self
            .alpha
            .clone()
            .unwrap_or_else(|| vec![2.0; LpPamSpec::alpha_len(self.t)]);
        LpPamSpec::new(self.m, self.t, alpha).map_err(|e| CliError::Config(format!("problem: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Extra operating points at which the final design is scored.
    #[serde(default)]
    pub evaluate: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnumerationChoice {
    #[default]
    Auto,
    Exact,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub points: Vec<OperatingPoint>,
    #[serde(default)]
    pub enumeration: EnumerationChoice,
    #[serde(default = "default_max_users")]
    pub max_users: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_users() -> usize {
    2
}

fn default_samples() -> usize {
    100_000
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            enumeration: EnumerationChoice::Auto,
            max_users: default_max_users(),
            samples: default_samples(),
            seed: 0,
        }
    }
}

impl MetricsConfig {
    pub fn mode(&self, cbs: &scma_pn::CodebookSet) -> Enumeration {
        match self.enumeration {
            EnumerationChoice::Auto => Enumeration::auto(cbs),
            EnumerationChoice::Exact => Enumeration::exact(),
            EnumerationChoice::Pruned => Enumeration::Pruned {
                max_users: self.max_users,
                samples: self.samples,
                seed: self.seed,
            },
        }
    }
}

/// Either an explicit list or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Sweep {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            Sweep::List(v) => Ok(v.clone()),
            Sweep::Range { start, stop, step } => {
                if !(*step > 0.0) || stop < start {
                    return Err(CliError::Config(format!(
                        "eb_n0_db: range {start}..{stop} step {step} is empty"
                    )));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub detectors: Vec<Detector>,
    pub sigma_p2: Vec<f64>,
    pub eb_n0_db: Sweep,
    #[serde(default = "default_min_errors")]
    pub min_errors: u64,
    #[serde(default = "default_max_bits")]
    pub max_bits: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_min_errors() -> u64 {
    400
}

fn default_max_bits() -> u64 {
    20_000_000
}

fn default_seed() -> u64 {
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_range_is_inclusive() {
        let s = Sweep::Range {
            start: 4.0,
            stop: 16.0,
            step: 2.0,
        };
        assert_eq!(s.values().unwrap(), vec![4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]);
        assert!(Sweep::Range {
            start: 1.0,
            stop: 0.0,
            step: 1.0
        }
        .values()
        .is_err());
    }

    #[test]
    fn operating_point_parses() {
        let p: OperatingPoint = "0.03@10".parse().unwrap();
        assert_eq!(p, OperatingPoint { sigma_p2: 0.03, eb_n0_db: 10.0 });
        assert!("0.03".parse::<OperatingPoint>().is_err());
    }

    #[test]
    fn unknown_keys_are_reported_with_their_path() {
        let err = toml::from_str::<DesignConfig>(
            "[problem]\nm = 4\nt = 2\n[optimizer]\nmax_evals = 3\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("max_evals"), "{err}");
        let cfg: DesignConfig = toml::from_str(
            "[problem]\nm = 4\nt = 2\ngraph = { incidence = [[1, 1], [1, 1]] }\n[optimizer]\nmax_evaluations = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.optimizer.max_evaluations, 3);
        assert!(cfg.problem.graph.build().is_ok());
    }

    #[test]
    fn detectors_parse_from_toml() {
        let cfg: SimulateConfig = toml::from_str(
            r#"
            detectors = [{ kind = "ml", metric = "pn-aware" }, { kind = "mpa", variant = "standard" }]
            sigma_p2 = [0.0, 0.01]
            eb_n0_db = { start = 4, stop = 8, step = 2 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.detectors[1].id(), "mpa8-euclidean");
        assert_eq!(cfg.eb_n0_db.values().unwrap().len(), 3);
        assert_eq!(cfg.min_errors, 400);
    }

    #[test]
    fn bundled_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let d: DesignConfig = load(&dir.join("pncb1.toml")).unwrap();
        assert_eq!(d.problem.m, 4);
        let m: MetricsConfig = load(&dir.join("metrics.toml")).unwrap();
        assert_eq!(m.points.len(), 2);
        let s: SimulateConfig = load(&dir.join("simulate.toml")).unwrap();
        assert_eq!(s.detectors.len(), 3);
        assert_eq!(s.eb_n0_db.values().unwrap().len(), 8);
    }
}
