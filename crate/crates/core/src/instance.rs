//! Seeded random test instances: a position/type grid with table costs, a
//! budget pair, and a rebuildable objective. Used by the benchmark command
//! and the test suites; the same config and seed always produce the same
//! instance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costmodel::TableCostModel;
use crate::domain::{Budget, Cost, Element};
use crate::objective::{
    ConcaveModularOracle, CoverageOracle, Objective, ScoreBackend, SurrogateAccuracyOracle,
};

/// Which synthetic objective family an instance draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// Weighted coverage of a small universe.
    Coverage,
    /// Concave transform of modular feature masses.
    ConcaveModular,
    /// Saturating accuracy proxy, optionally fidelity-noisy.
    Surrogate { sigma_milli: u32 },
}

/// Shape and scale knobs for [`random_instance`].
#[derive(Debug, Clone)]
pub struct InstanceConfig {
    pub positions: u32,
    pub types: u32,
    pub kind: InstanceKind,
    /// Per-axis element cost range, inclusive.
    pub cost_min: u64,
    pub cost_max: u64,
    /// Budget drawn as a fraction of the summed element cost per axis.
    pub budget_frac_min: f64,
    pub budget_frac_max: f64,
}

impl InstanceConfig {
    pub fn new(positions: u32, types: u32, kind: InstanceKind) -> Self {
        InstanceConfig {
            positions,
            types,
            kind,
            cost_min: 1,
            cost_max: 100,
            budget_frac_min: 0.2,
            budget_frac_max: 0.6,
        }
    }
}

/// The data needed to rebuild an instance's objective from scratch.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Coverage {
        weights: Vec<f64>,
        covers: Vec<(Element, Vec<u32>)>,
    },
    ConcaveModular {
        outer_weights: Vec<f64>,
        features: Vec<(Element, Vec<f64>)>,
        rho: f64,
    },
    Surrogate {
        quality: Vec<(Element, f64)>,
        kappa: f64,
        sigma: f64,
        seed: u64,
    },
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn ScoreBackend> {
        match self {
            BackendSpec::Coverage { weights, covers } => Box::new(
                CoverageOracle::new(weights.clone(), covers.clone())
                    .expect("generated coverage data is valid"),
            ),
            BackendSpec::ConcaveModular { outer_weights, features, rho } => Box::new(
                ConcaveModularOracle::new(outer_weights.clone(), features.clone(), *rho)
                    .expect("generated feature data is valid"),
            ),
            BackendSpec::Surrogate { quality, kappa, sigma, seed } => Box::new(
                SurrogateAccuracyOracle::new(quality.clone(), *kappa, *sigma, *seed)
                    .expect("generated quality data is valid"),
            ),
        }
    }
}

/// A generated problem: ground set, costs, budgets, and objective spec.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub ground: Vec<Element>,
    pub cost: TableCostModel,
    pub budget: Budget,
    pub spec: BackendSpec,
}

impl Instance {
    /// A brand-new objective with an empty cache; engines being compared
    /// for evaluation counts each get their own.
    pub fn fresh_objective(&self) -> Objective {
        Objective::new(self.spec.build())
    }
}

/// Generate the instance determined by `cfg` and `seed`.
pub fn random_instance(cfg: &InstanceConfig, seed: u64) -> Instance {
    assert!(cfg.positions > 0 && cfg.types > 0, "instance needs a nonempty grid");
    assert!(cfg.cost_min >= 1 && cfg.cost_min <= cfg.cost_max, "bad cost range");
    assert!(
        cfg.budget_frac_min >= 0.0 && cfg.budget_frac_min <= cfg.budget_frac_max,
        "bad budget fraction range"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground: Vec<Element> = (0..cfg.positions)
        .flat_map(|p| (1..=cfg.types).map(move |b| Element::new(p, b)))
        .collect();

    let mut entries = Vec::with_capacity(ground.len());
    let mut total = Cost::ZERO;
    for e in &ground {
        let c = Cost::new(
            rng.random_range(cfg.cost_min..=cfg.cost_max),
            rng.random_range(cfg.cost_min..=cfg.cost_max),
        );
        total += c;
        entries.push(((e.position, e.block), c));
    }
    let cost = TableCostModel::new(entries, Cost::ZERO);

    let frac_p = rng.random_range(cfg.budget_frac_min..=cfg.budget_frac_max);
    let frac_m = rng.random_range(cfg.budget_frac_min..=cfg.budget_frac_max);
    let budget = Budget::new(
        (total.params as f64 * frac_p).round() as u64,
        (total.madds as f64 * frac_m).round() as u64,
    );

    let spec = match cfg.kind {
        InstanceKind::Coverage => {
            let universe = (2 * cfg.positions).max(4);
            let weights: Vec<f64> = (0..universe).map(|_| rng.random_range(0.1..1.0)).collect();
            let covers = ground
                .iter()
                .map(|e| {
                    let mut items: Vec<u32> =
                        (0..universe).filter(|_| rng.random_bool(0.3)).collect();
                    if items.is_empty() {
                        items.push(rng.random_range(0..universe));
                    }
                    (*e, items)
                })
                .collect();
            BackendSpec::Coverage { weights, covers }
        }
        InstanceKind::ConcaveModular => {
            let dims = 3usize;
            let outer_weights: Vec<f64> = (0..dims).map(|_| rng.random_range(0.2..1.0)).collect();
            let features = ground
                .iter()
                .map(|e| {
                    let masses: Vec<f64> = (0..dims).map(|_| rng.random_range(0.0..1.0)).collect();
                    (*e, masses)
                })
                .collect();
            let rho = rng.random_range(0.3..0.8);
            BackendSpec::ConcaveModular { outer_weights, features, rho }
        }
        InstanceKind::Surrogate { sigma_milli } => {
            let quality = ground
                .iter()
                .map(|e| (*e, rng.random_range(0.05..0.5)))
                .collect();
            BackendSpec::Surrogate {
                quality,
                kappa: rng.random_range(1.0..4.0),
                sigma: sigma_milli as f64 / 1000.0,
                seed: rng.random(),
            }
        }
    };

    Instance { seed, ground, cost, budget, spec }
}
