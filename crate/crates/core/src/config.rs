//! JSON run configuration: skeleton, catalog, budgets, objective choice,
//! cost backend and engine switches, with validation and builders for the
//! pieces the engines consume.

use std::path::Path;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{block_layers, CostError, CostModel, ConvCostModel, TableCostModel};
use crate::domain::{ground_set, BlockCatalog, Budget, Cost, DomainError, Element, Skeleton};
use crate::objective::{
    ConcaveModularOracle, CoverageOracle, EvalError, ExplicitOracle, ExternalEvaluator, Fidelity,
    ModularOracle, Objective, SurrogateAccuracyOracle,
};
use crate::oracle::DEFAULT_BRUTE_CAP;
use crate::search::EngineOptions;

/// Errors raised while loading or realizing a run configuration.
#[derive(Debug, Error)]
pub enum BuildError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Json(#[from] serde_json::Error),
}

/// One element-keyed scalar in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEntry {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
    pub value: f64,
}

/// The universe items one element covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverEntry {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
    pub items: Vec<u32>,
}

/// One element's per-feature masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
    pub masses: Vec<f64>,
}

/// Where the per-element quality of the saturating objective comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualitySpec {
    /// Drawn uniformly from `[min, max]` with the objective's seed.
    Seeded { min: f64, max: f64 },
    Explicit { entries: Vec<ValueEntry> },
}

/// Which set function to optimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Weighted coverage of universe items.
    Coverage { weights: Vec<f64>, covers: Vec<CoverEntry> },
    /// Concave power applied to per-feature mass totals.
    ConcaveModular {
        outer_weights: Vec<f64>,
        features: Vec<FeatureEntry>,
        rho: f64,
    },
    /// Saturating accuracy proxy with optional fidelity-dependent noise.
    Surrogate {
        kappa: f64,
        #[serde(default)]
        sigma: f64,
        /// Noise seed; the run seed is used when absent.
        #[serde(default)]
        seed: Option<u64>,
        quality: QualitySpec,
    },
    /// Plain sum of per-element values, unbounded above.
    Modular { values: Vec<ValueEntry> },
    /// Scores come from an external process speaking the line protocol.
    External {
        cmd: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl ObjectiveSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Coverage { .. } => "coverage",
            ObjectiveSpec::ConcaveModular { .. } => "concave_modular",
            ObjectiveSpec::Surrogate { .. } => "surrogate",
            ObjectiveSpec::Modular { .. } => "modular",
            ObjectiveSpec::External { .. } => "external",
        }
    }
}

/// Table row: exact costs for one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
    pub params: u64,
    pub madds: u64,
}

/// Where costs come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostBackendSpec {
    /// Derived from block shape and slot geometry.
    Conv,
    /// Looked up per element.
    Table {
        entries: Vec<TableEntry>,
        #[serde(default)]
        base: Cost,
    },
}

impl Default for CostBackendSpec {
    fn default() -> Self {
        CostBackendSpec::Conv
    }
}

/// Engine switches plus the optional score-cache bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub stop_on_nonpositive_gain: bool,
    pub paper_literal_lazy: bool,
    pub parallel_first_pass: bool,
    pub cache_cap: Option<usize>,
}

impl EngineConfig {
    pub fn options(&self) -> EngineOptions {
        EngineOptions {
            stop_on_nonpositive_gain: self.stop_on_nonpositive_gain,
            paper_literal_lazy: self.paper_literal_lazy,
            parallel_first_pass: self.parallel_first_pass,
        }
    }
}

fn default_fidelity() -> f64 {
    1.0
}

fn default_brute_cap() -> u64 {
    DEFAULT_BRUTE_CAP
}

fn default_diagnose_samples() -> u64 {
    200
}

fn default_bench_instances() -> u32 {
    20
}

/// A full run description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub skeleton: Skeleton,
    pub catalog: BlockCatalog,
    pub budget: Budget,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub cost_backend: CostBackendSpec,
    #[serde(default = "default_fidelity")]
    pub fidelity: f64,
    /// Fidelity for re-scoring candidate winners; defaults to full.
    #[serde(default = "default_fidelity")]
    pub refine_fidelity: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default = "default_brute_cap")]
    pub brute_force_cap: u64,
    #[serde(default = "default_diagnose_samples")]
    pub diagnose_samples: u64,
    #[serde(default = "default_bench_instances")]
    pub bench_instances: u32,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, BuildError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, BuildError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// All candidate (position, type) decisions, position-major.
    pub fn ground(&self) -> Vec<Element> {
        ground_set(&self.skeleton, &self.catalog)
    }

    pub fn fidelity(&self) -> Fidelity {
        Fidelity::new(self.fidelity).expect("validated")
    }

    pub fn refine_fidelity(&self) -> Fidelity {
        Fidelity::new(self.refine_fidelity).expect("validated")
    }

    /// Structural checks beyond what serde can express: geometry, id
    /// contiguity, objective and cost coverage of the whole ground set.
    pub fn validate(&self) -> Result<(), BuildError> {
        self.skeleton.validate()?;
        self.catalog.validate()?;
        if Fidelity::new(self.fidelity).is_none() {
            return Err(BuildError::Config(format!(
                "fidelity must lie in (0, 1]; got {}",
                self.fidelity
            )));
        }
        if Fidelity::new(self.refine_fidelity).is_none() {
            return Err(BuildError::Config(format!(
                "refine_fidelity must lie in (0, 1]; got {}",
                self.refine_fidelity
            )));
        }
        if self.brute_force_cap == 0 {
            return Err(BuildError::Config("brute_force_cap must be positive".into()));
        }
        let ground = self.ground();
        let missing = |entries: &dyn Fn(Element) -> bool, what: &str| -> Result<(), BuildError> {
            for e in &ground {
                if !entries(*e) {
                    return Err(BuildError::Config(format!("{what} is missing element {e}")));
                }
            }
            Ok(())
        };
        match &self.objective {
            ObjectiveSpec::Coverage { weights, covers } => {
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(BuildError::Config(
                        "coverage weights must be finite and nonnegative".into(),
                    ));
                }
                for c in covers {
                    if let Some(j) = c.items.iter().find(|j| **j as usize >= weights.len()) {
                        return Err(BuildError::Config(format!(
                            "cover entry ({}, {}) references item {j} outside the universe",
                            c.position, c.block
                        )));
                    }
                }
                missing(&|e| covers.iter().any(|c| (c.position, c.block) == (e.position, e.block)), "covers")?;
            }
            ObjectiveSpec::ConcaveModular { outer_weights, features, rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(BuildError::Config(format!("rho must lie in (0, 1); got {rho}")));
                }
                for f in features {
                    if f.masses.len() != outer_weights.len() {
                        return Err(BuildError::Config(format!(
                            "feature entry ({}, {}) has {} masses for {} features",
                            f.position,
                            f.block,
                            f.masses.len(),
                            outer_weights.len()
                        )));
                    }
                }
                missing(&|e| features.iter().any(|f| (f.position, f.block) == (e.position, e.block)), "features")?;
            }
            ObjectiveSpec::Surrogate { kappa, sigma, quality, .. } => {
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(BuildError::Config(format!("kappa must be positive; got {kappa}")));
                }
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(BuildError::Config(format!("sigma must be nonnegative; got {sigma}")));
                }
                match quality {
                    QualitySpec::Seeded { min, max } => {
                        if !(min.is_finite() && max.is_finite() && *min >= 0.0 && min <= max) {
                            return Err(BuildError::Config(format!(
                                "seeded quality needs 0 <= min <= max; got [{min}, {max}]"
                            )));
                        }
                    }
                    QualitySpec::Explicit { entries } => {
                        missing(&|e| entries.iter().any(|q| (q.position, q.block) == (e.position, e.block)), "quality entries")?;
                    }
                }
            }
            ObjectiveSpec::Modular { values } => {
                missing(&|e| values.iter().any(|v| (v.position, v.block) == (e.position, e.block)), "values")?;
            }
            ObjectiveSpec::External { cmd, timeout_ms } => {
                if cmd.is_empty() {
                    return Err(BuildError::Config("external evaluator command is empty".into()));
                }
                if *timeout_ms == 0 {
                    return Err(BuildError::Config("evaluator timeout must be positive".into()));
                }
            }
        }
        match &self.cost_backend {
            CostBackendSpec::Conv => {
                // every (type, position) pair must satisfy the divisibility
                // preconditions, otherwise searches would fail mid-run
                for p in &self.skeleton.positions {
                    for t in &self.catalog.types {
                        block_layers(t, p).map_err(|e| {
                            BuildError::Config(format!(
                                "cost model rejects type {} at position {}: {e}",
                                t.id, p.index
                            ))
                        })?;
                    }
                }
            }
            CostBackendSpec::Table { entries, .. } => {
                missing(&|e| entries.iter().any(|t| (t.position, t.block) == (e.position, e.block)), "cost table")?;
            }
        }
        Ok(())
    }

    pub fn build_cost_model(&self) -> Box<dyn CostModel> {
        match &self.cost_backend {
            CostBackendSpec::Conv => {
                Box::new(ConvCostModel::new(self.skeleton.clone(), self.catalog.clone()))
            }
            CostBackendSpec::Table { entries, base } => Box::new(TableCostModel::new(
                entries.iter().map(|t| ((t.position, t.block), Cost::new(t.params, t.madds))),
                *base,
            )),
        }
    }

    /// Realize the objective; external evaluators are spawned here.
    pub fn build_objective(&self) -> Result<Objective, BuildError> {
        let obj = match &self.objective {
            ObjectiveSpec::Coverage { weights, covers } => Objective::new(Box::new(
                CoverageOracle::new(
                    weights.clone(),
                    covers
                        .iter()
                        .map(|c| (Element::new(c.position, c.block), c.items.clone())),
                )?,
            )),
            ObjectiveSpec::ConcaveModular { outer_weights, features, rho } => {
                Objective::new(Box::new(ConcaveModularOracle::new(
                    outer_weights.clone(),
                    features
                        .iter()
                        .map(|f| (Element::new(f.position, f.block), f.masses.clone())),
                    *rho,
                )?))
            }
            ObjectiveSpec::Surrogate { kappa, sigma, seed, quality } => {
                let noise_seed = seed.unwrap_or(self.seed);
                let quality: Vec<(Element, f64)> = match quality {
                    QualitySpec::Seeded { min, max } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                        self.ground()
                            .into_iter()
                            .map(|e| (e, rng.random_range(*min..=*max)))
                            .collect()
                    }
                    QualitySpec::Explicit { entries } => entries
                        .iter()
                        .map(|q| (Element::new(q.position, q.block), q.value))
                        .collect(),
                };
                Objective::new(Box::new(SurrogateAccuracyOracle::new(
                    quality, *kappa, *sigma, noise_seed,
                )?))
            }
            ObjectiveSpec::Modular { values } => Objective::new(Box::new(ModularOracle::new(
                values.iter().map(|v| (Element::new(v.position, v.block), v.value)),
            )?)),
            ObjectiveSpec::External { cmd, timeout_ms } => Objective::new(Box::new(
                ExternalEvaluator::spawn(cmd, Duration::from_millis(*timeout_ms))?,
            )),
        };
        Ok(match self.engine.cache_cap {
            Some(cap) => obj.with_cache_cap(cap),
            None => obj,
        })
    }

    /// Tabulated values for the exact objective used by known-answer runs;
    /// exists so tests can compare searches against a lookup. Panics on
    /// non-modular objectives.
    pub fn modular_values(&self) -> Vec<(Element, f64)> {
        match &self.objective {
            ObjectiveSpec::Modular { values } => values
                .iter()
                .map(|v| (Element::new(v.position, v.block), v.value))
                .collect(),
            other => panic!("not a modular objective: {}", other.kind_name()),
        }
    }
}

/// Build an explicit-table objective; handy for tests that pin exact values.
pub fn explicit_objective(values: Vec<(crate::domain::Assignment, f64)>) -> Objective {
    Objective::new(Box::new(ExplicitOracle::new(values)))
}
