//! Ground-truth and diagnostic tools: exhaustive search on small instances,
//! diminishing-returns checks, gain-chain summaries, and cost/value hull
//! analysis.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::costmodel::{CostError, CostModel};
use crate::domain::{Assignment, Budget, Cost, DomainError, Element};
use crate::objective::{EvalError, Fidelity, Objective};

/// Default ceiling on the number of assignments exhaustive search will
/// enumerate.
pub const DEFAULT_BRUTE_CAP: u64 = 1 << 20;

/// Ground sets of at most this many elements are checked exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Violations below this threshold are treated as floating-point noise.
const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {assignments} assignments, over the cap of {cap}")]
    InstanceTooLarge { assignments: u128, cap: u64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Best assignment found by exhaustive enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub assignment: Assignment,
    pub value: f64,
    pub cost: Cost,
    pub block_sequence: Vec<u32>,
    /// Assignments examined; a budget-pruned prefix counts once.
    pub enumerated: u64,
    /// Assignments that fit both budgets.
    pub feasible: u64,
    pub evaluations: u64,
}

/// Exhaustively enumerate every assignment buildable from `ground` and
/// return a maximizer of the objective under the budgets.
///
/// Enumeration is an odometer: position order is major, type order minor,
/// and leaving a position empty precedes every type, so the empty
/// assignment comes first. Ties keep the earliest assignment in that order.
/// Costs only grow as positions fill, so a prefix that already exceeds a
/// budget is skipped wholesale. Instances with more than `cap` assignments
/// are refused up front.
pub fn brute_force_opt(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    fidelity: Fidelity,
    cap: u64,
) -> Result<BruteForceResult, OracleError> {
    let mut by_pos: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in ground {
        by_pos.entry(e.position).or_default().push(e.block);
    }
    let positions: Vec<(u32, Vec<u32>)> = by_pos
        .into_iter()
        .map(|(p, mut types)| {
            types.sort_unstable();
            types.dedup();
            (p, types)
        })
        .collect();

    let mut total: u128 = 1;
    for (_, types) in &positions {
        total = total.saturating_mul(types.len() as u128 + 1);
    }
    if total > cap as u128 {
        return Err(OracleError::InstanceTooLarge { assignments: total, cap });
    }

    let base = cost.base_cost();
    let mut best: Option<(f64, Assignment, Cost)> = None;
    let mut enumerated = 0u64;
    let mut feasible = 0u64;
    let miss_base = obj.misses();

    // digits[i] == 0 leaves position i empty; k picks the k-th type
    let n = positions.len();
    let mut digits = vec![0usize; n];
    'outer: loop {
        enumerated += 1;
        let mut c = base;
        let mut over_at: Option<usize> = None;
        for (i, d) in digits.iter().enumerate() {
            if *d > 0 {
                let (p, types) = &positions[i];
                c += cost.element_cost(Element::new(*p, types[*d - 1]))?;
                if !budget.admits(c) {
                    over_at = Some(i);
                    break;
                }
            }
        }
        match over_at {
            Some(j) => {
                // everything sharing this prefix is over budget: max out the
                // lower digits so the next increment carries past them
                for i in j + 1..n {
                    digits[i] = positions[i].1.len();
                }
            }
            None => {
                feasible += 1;
                let elements = digits.iter().enumerate().filter_map(|(i, d)| {
                    (*d > 0).then(|| Element::new(positions[i].0, positions[i].1[*d - 1]))
                });
                let assignment = Assignment::from_elements(elements)?;
                let v = obj.evaluate(&assignment, fidelity)?;
                if best.as_ref().map_or(true, |(bv, ..)| v > *bv) {
                    best = Some((v, assignment, c));
                }
            }
        }
        // odometer increment, last position fastest
        let mut i = n;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            if digits[i] < positions[i].1.len() {
                digits[i] += 1;
                break;
            }
            digits[i] = 0;
        }
    }

    let (value, assignment, total_cost) = best.expect("the empty assignment is always enumerated");
    Ok(BruteForceResult {
        block_sequence: assignment.block_sequence(),
        value,
        cost: total_cost,
        assignment,
        enumerated,
        feasible,
        evaluations: obj.misses() - miss_base,
    })
}

/// How a diminishing-returns check covered the instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckMode {
    /// Every (subset, superset, element) combination was tested.
    Exhaustive,
    /// Random combinations were tested.
    Sampled { samples: u64, seed: u64 },
}

/// One failed check: adding `element` to `large` (a superset of `small`)
/// gained `magnitude` more than adding it to `small`, or — for
/// monotonicity records — the objective dropped by `magnitude`.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationTriple {
    pub small: Assignment,
    pub large: Assignment,
    pub element: Element,
    pub magnitude: f64,
}

/// Outcome of a monotonicity and diminishing-returns audit.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub mode: CheckMode,
    pub mono_checks: u64,
    pub mono_violations: u64,
    pub dr_checks: u64,
    pub dr_violations: u64,
    pub worst_mono: Option<ViolationTriple>,
    pub worst_dr: Option<ViolationTriple>,
    pub first_dr: Option<ViolationTriple>,
}

impl ViolationReport {
    pub fn checks(&self) -> u64 {
        self.mono_checks + self.dr_checks
    }

    pub fn violations(&self) -> u64 {
        self.mono_violations + self.dr_violations
    }

    pub fn violation_rate(&self) -> f64 {
        if self.checks() == 0 {
            0.0
        } else {
            self.violations() as f64 / self.checks() as f64
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }
}

struct Audit<'a> {
    obj: &'a Objective,
    fidelity: Fidelity,
    report: ViolationReport,
}

impl<'a> Audit<'a> {
    fn mono(&mut self, b: &Assignment, b_with: &Assignment, v: Element, f_b: f64, f_bv: f64) {
        self.report.mono_checks += 1;
        let drop = f_b - f_bv;
        if drop > VIOLATION_TOL {
            self.report.mono_violations += 1;
            let triple = ViolationTriple {
                small: b.clone(),
                large: b_with.clone(),
                element: v,
                magnitude: drop,
            };
            if self.report.worst_mono.as_ref().map_or(true, |w| drop > w.magnitude) {
                self.report.worst_mono = Some(triple);
            }
        }
    }

    fn dr(&mut self, a: &Assignment, b: &Assignment, v: Element, gain_a: f64, gain_b: f64) {
        self.report.dr_checks += 1;
        let excess = gain_b - gain_a;
        if excess > VIOLATION_TOL {
            self.report.dr_violations += 1;
            let triple = ViolationTriple {
                small: a.clone(),
                large: b.clone(),
                element: v,
                magnitude: excess,
            };
            if self.report.first_dr.is_none() {
                self.report.first_dr = Some(triple.clone());
            }
            if self.report.worst_dr.as_ref().map_or(true, |w| excess > w.magnitude) {
                self.report.worst_dr = Some(triple);
            }
        }
    }

    fn value(&self, a: &Assignment) -> Result<f64, OracleError> {
        Ok(self.obj.evaluate(a, self.fidelity)?)
    }
}

/// Audit the objective for monotonicity and diminishing returns.
///
/// Small ground sets (at most [`EXHAUSTIVE_LIMIT`] elements) are checked
/// over every subset pair and addable element, scanning elements in ground
/// order, supersets in mask order, and subsets in submask order; larger
/// ones are spot-checked with `samples` seeded random combinations.
pub fn check_submodularity(
    obj: &Objective,
    ground: &[Element],
    fidelity: Fidelity,
    samples: u64,
    seed: u64,
) -> Result<ViolationReport, OracleError> {
    let blank = ViolationReport {
        mode: CheckMode::Exhaustive,
        mono_checks: 0,
        mono_violations: 0,
        dr_checks: 0,
        dr_violations: 0,
        worst_mono: None,
        worst_dr: None,
        first_dr: None,
    };
    let mut audit = Audit { obj, fidelity, report: blank };
    if ground.len() <= EXHAUSTIVE_LIMIT {
        exhaustive_audit(&mut audit, ground)?;
    } else {
        audit.report.mode = CheckMode::Sampled { samples, seed };
        sampled_audit(&mut audit, ground, samples, seed)?;
    }
    Ok(audit.report)
}

fn exhaustive_audit(audit: &mut Audit, ground: &[Element]) -> Result<(), OracleError> {
    let n = ground.len();
    // masks whose elements occupy pairwise distinct positions
    let mut sets: Vec<Option<(Assignment, f64)>> = vec![None; 1 << n];
    for mask in 0u32..(1 << n) {
        let mut a = Assignment::empty();
        let mut ok = true;
        for (i, e) in ground.iter().enumerate() {
            if mask & (1 << i) != 0 {
                match a.with(*e) {
                    Ok(next) => a = next,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            let f = audit.value(&a)?;
            sets[mask as usize] = Some((a, f));
        }
    }
    for (vi, v) in ground.iter().enumerate() {
        let vbit = 1u32 << vi;
        for b_mask in 0u32..(1 << n) {
            if b_mask & vbit != 0 {
                continue;
            }
            let Some((b, f_b)) = sets[b_mask as usize].clone() else { continue };
            let Some((bv, f_bv)) = sets[(b_mask | vbit) as usize].clone() else { continue };
            audit.mono(&b, &bv, *v, f_b, f_bv);
            let gain_b = f_bv - f_b;
            // proper submasks of b_mask in increasing order, empty set first
            let mut a_mask = 0u32;
            while a_mask != b_mask {
                let (a, f_a) = sets[a_mask as usize].clone().expect("submask of a valid mask is valid");
                let (_, f_av) = sets[(a_mask | vbit) as usize].clone().expect("extension stays valid");
                audit.dr(&a, &b, *v, f_av - f_a, gain_b);
                a_mask = a_mask.wrapping_sub(b_mask) & b_mask;
            }
        }
    }
    Ok(())
}

fn sampled_audit(audit: &mut Audit, ground: &[Element], samples: u64, seed: u64) -> Result<(), OracleError> {
    let mut by_pos: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in ground {
        by_pos.entry(e.position).or_default().push(e.block);
    }
    let slots: Vec<(u32, Vec<u32>)> = by_pos.into_iter().collect();
    if slots.len() < 2 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..slots.len()).collect();
    for _ in 0..samples {
        order.shuffle(&mut rng);
        // leave at least one position free so an element can be added
        let b_size = rng.random_range(0..slots.len());
        let mut b = Assignment::empty();
        let mut a = Assignment::empty();
        for &slot in &order[..b_size] {
            let (pos, types) = &slots[slot];
            let ty = types[rng.random_range(0..types.len())];
            let e = Element::new(*pos, ty);
            b = b.with(e)?;
            if rng.random_bool(0.5) {
                a = a.with(e)?;
            }
        }
        let (v_pos, v_types) = &slots[order[b_size]];
        let v = Element::new(*v_pos, v_types[rng.random_range(0..v_types.len())]);

        let f_b = audit.value(&b)?;
        let bv = b.with(v)?;
        let f_bv = audit.value(&bv)?;
        audit.mono(&b, &bv, v, f_b, f_bv);
        let f_a = audit.value(&a)?;
        let f_av = audit.value(&a.with(v)?)?;
        audit.dr(&a, &b, v, f_av - f_a, f_bv - f_b);
    }
    Ok(())
}

/// Successive gains along a chain of objective values.
#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    /// `gains[i]` is `values[i+1] - values[i]`.
    pub gains: Vec<f64>,
    /// No gain is below the noise threshold's negative.
    pub monotone: bool,
    /// Gains never increase along the chain (within the noise threshold).
    pub diminishing: bool,
}

/// Summarize a chain of values as step gains plus monotone/diminishing
/// verdicts.
pub fn chain_report(values: &[f64]) -> ChainReport {
    let gains: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = gains.iter().all(|g| *g >= -VIOLATION_TOL);
    let diminishing = gains.windows(2).all(|w| w[1] <= w[0] + VIOLATION_TOL);
    ChainReport { gains, monotone, diminishing }
}

/// One scored configuration in a hull report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HullPoint {
    pub cost: f64,
    pub value: f64,
    /// Vertical distance up to the hull; zero for hull members.
    pub gap: f64,
    pub on_hull: bool,
}

/// Upper hull of value over cost, anchored at zero cost / zero value and at
/// the maximum cost.
#[derive(Debug, Clone, Serialize)]
pub struct HullReport {
    /// The input points with their hull gaps, in input order.
    pub points: Vec<HullPoint>,
    /// Hull vertices by ascending cost; collinear vertices are kept.
    pub hull: Vec<(f64, f64)>,
    /// Anchor points added before hull construction.
    pub virtual_points: Vec<(f64, f64)>,
}

impl HullReport {
    /// Hull height at `x`, clamped to the end vertices outside the range.
    pub fn value_at(&self, x: f64) -> f64 {
        let h = &self.hull;
        let last = h.len() - 1;
        if x <= h[0].0 {
            return h[0].1;
        }
        if x >= h[last].0 {
            return h[last].1;
        }
        for w in h.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if x <= x1 {
                if x == x1 {
                    return y1;
                }
                return y0 + (y1 - y0) * ((x - x0) / (x1 - x0));
            }
        }
        h[last].1
    }
}

/// Build the upper hull of `(cost, value)` points and measure each point's
/// gap to it.
///
/// Three anchors are added first: the origin, a zero-value point at the
/// maximum cost, and the best value at the maximum cost. Inputs must be
/// finite with nonnegative costs, and must span more than one cost level —
/// otherwise the hull would be a vertical segment and every gap undefined.
pub fn convex_hull_report(points: &[(f64, f64)]) -> Result<HullReport, OracleError> {
    if points.is_empty() {
        return Err(OracleError::DegenerateInput("no points".into()));
    }
    for (c, v) in points {
        if !c.is_finite() || !v.is_finite() {
            return Err(OracleError::DegenerateInput(format!("non-finite point ({c}, {v})")));
        }
        if *c < 0.0 {
            return Err(OracleError::DegenerateInput(format!("negative cost {c}")));
        }
    }
    let c_max = points.iter().map(|(c, _)| *c).fold(0.0f64, f64::max);
    if c_max == 0.0 {
        return Err(OracleError::DegenerateInput("all costs are zero".into()));
    }
    if points.len() >= 2 && points.iter().all(|(c, _)| *c == points[0].0) {
        return Err(OracleError::DegenerateInput("all points share one cost".into()));
    }
    let f_max = points.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
    let virtual_points = vec![(0.0, 0.0), (c_max, 0.0), (c_max, f_max)];

    let mut staged: Vec<(f64, f64)> = points.iter().copied().chain(virtual_points.iter().copied()).collect();
    staged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // one point per cost level: the best value there
    let mut levels: Vec<(f64, f64)> = Vec::with_capacity(staged.len());
    for p in staged {
        match levels.last_mut() {
            Some(last) if last.0 == p.0 => last.1 = p.1,
            _ => levels.push(p),
        }
    }

    // upper hull, left to right; collinear points stay as vertices so exact
    // ties register a zero gap
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(levels.len());
    for p in levels {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) > 0.0 {
            hull.pop();
        }
        hull.push(p);
    }

    let report = HullReport { points: Vec::new(), hull, virtual_points };
    let scored = points
        .iter()
        .map(|&(cost, value)| {
            let gap = (report.value_at(cost) - value).max(0.0);
            let on_hull = gap <= 1e-12 || report.hull.iter().any(|&(hc, hv)| hc == cost && hv == value);
            HullPoint { cost, value, gap, on_hull }
        })
        .collect();
    Ok(HullReport { points: scored, ..report })
}
