//! Greedy selection engines under dual budgets: an eager rescanning greedy,
//! a lazy priority-queue variant, and a wrapper that runs the lazy engine
//! under all three cost modes and keeps the best result.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{CostError, CostModel};
use crate::domain::{Assignment, Budget, Cost, DomainError, Element};
use crate::objective::{EvalError, Fidelity, Objective};

/// How the denominator of the gain-per-cost rule is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Every element costs 1: pick the largest raw gain.
    UniformCost,
    /// Divide gains by parameter cost.
    ParamRatio,
    /// Divide gains by multiply-add cost.
    MaddsRatio,
}

impl CostMode {
    /// The three modes in canonical order; earlier modes win ties.
    pub const ALL: [CostMode; 3] = [CostMode::UniformCost, CostMode::ParamRatio, CostMode::MaddsRatio];

    pub fn unit_cost(self, cost: Cost) -> u64 {
        match self {
            CostMode::UniformCost => 1,
            CostMode::ParamRatio => cost.params,
            CostMode::MaddsRatio => cost.madds,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CostMode::UniformCost => "uc",
            CostMode::ParamRatio => "apr",
            CostMode::MaddsRatio => "amr",
        }
    }
}

/// Priority of a candidate: gain divided by mode cost. Zero-cost elements
/// sort above every finite ratio and among themselves by raw gain.
#[derive(Debug, Clone, Copy)]
enum GainKey {
    Finite { ratio: f64 },
    Free { gain: f64 },
}

impl GainKey {
    fn new(gain: f64, unit_cost: u64) -> Self {
        if unit_cost == 0 {
            GainKey::Free { gain }
        } else {
            GainKey::Finite { ratio: gain / unit_cost as f64 }
        }
    }

    fn as_f64(self) -> f64 {
        match self {
            GainKey::Finite { ratio } => ratio,
            GainKey::Free { .. } => f64::INFINITY,
        }
    }

    fn cmp_key(self, other: GainKey) -> Ordering {
        match (self, other) {
            (GainKey::Free { gain: a }, GainKey::Free { gain: b }) => a.total_cmp(&b),
            (GainKey::Free { .. }, GainKey::Finite { .. }) => Ordering::Greater,
            (GainKey::Finite { .. }, GainKey::Free { .. }) => Ordering::Less,
            (GainKey::Finite { ratio: a }, GainKey::Finite { ratio: b }) => a.total_cmp(&b),
        }
    }
}

/// One queue slot in the lazy engine. `freshness` is the selection size the
/// key was computed against; a popped entry whose freshness matches the
/// current size needs no recomputation.
#[derive(Debug, Clone)]
struct QueueEntry {
    element: Element,
    key: GainKey,
    gain: f64,
    /// Objective value of the probed extension, kept so a fresh accept can
    /// reuse the evaluated number bit for bit.
    f_with: f64,
    freshness: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // max-heap: larger key first; key ties go to the smaller (position, type)
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp_key(other.key)
            .then_with(|| other.element.cmp(&self.element))
    }
}

/// What happened at one step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAction {
    /// A fresh marginal gain was computed for the element.
    Evaluate,
    /// The element joined the selection.
    Accept,
    /// A recomputed key was pushed back into the queue.
    Reinsert,
    /// A popped element could no longer be added (position taken or budget).
    SkipInfeasible,
}

impl TraceAction {
    pub fn label(self) -> &'static str {
        match self {
            TraceAction::Evaluate => "evaluate",
            TraceAction::Accept => "accept",
            TraceAction::Reinsert => "reinsert",
            TraceAction::SkipInfeasible => "skip_infeasible",
        }
    }
}

/// One row of the run trace.
///
/// `f_after` is the objective value right after the action (for `evaluate`
/// rows, the value of the probed extension); cost columns always describe
/// the accepted selection; `evaluations` is the cumulative backend miss
/// count within the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub action: TraceAction,
    pub element: Element,
    pub key_before: Option<f64>,
    pub key_after: Option<f64>,
    pub f_after: f64,
    pub params_after: u64,
    pub madds_after: u64,
    pub evaluations: u64,
}

/// Counters for one engine run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchStats {
    /// Backend evaluations (cache misses) spent by this run.
    pub evaluations: u64,
    pub queue_pops: u64,
    pub reinserts: u64,
    /// Largest budget-to-element-cost ratio over singleton-feasible
    /// elements; a capacity measure of the instance.
    pub phi: f64,
    #[serde(skip, default)]
    pub wall_time: Duration,
}

/// Outcome of one engine run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub assignment: Assignment,
    /// Objective value of `assignment` (a fresh evaluate reproduces it).
    pub value: f64,
    pub cost: Cost,
    pub mode: CostMode,
    /// Block type ids of filled positions in position order.
    pub block_sequence: Vec<u32>,
    pub stats: SearchStats,
    #[serde(skip, default)]
    pub trace: Vec<TraceEvent>,
}

/// Engine switches; the defaults match the documented behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    /// Stop as soon as the best feasible marginal gain is not positive
    /// (off by default: budget exhaustion is the only stop rule).
    pub stop_on_nonpositive_gain: bool,
    /// Accept a recomputed key only after re-scoring the runner-up entry
    /// too, instead of comparing against its possibly stale key.
    pub paper_literal_lazy: bool,
    /// Evaluate the first round of singleton gains in parallel when the
    /// objective allows concurrent scoring.
    pub parallel_first_pass: bool,
}

/// Search failures.
#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("corrupt trace: {0}")]
    TraceCorrupt(String),
}

/// Largest `budget / element_cost` ratio over elements that fit the budgets
/// on their own; zero when nothing fits, infinite when a fitting element is
/// free on some axis.
fn compute_phi(cost: &dyn CostModel, ground: &[Element], budget: Budget) -> Result<f64, CostError> {
    let base = cost.base_cost();
    let mut phi: f64 = 0.0;
    for &e in ground {
        let ec = cost.element_cost(e)?;
        if !budget.admits(base + ec) {
            continue;
        }
        let p = if ec.params == 0 { f64::INFINITY } else { budget.max_params as f64 / ec.params as f64 };
        let m = if ec.madds == 0 { f64::INFINITY } else { budget.max_madds as f64 / ec.madds as f64 };
        phi = phi.max(p.max(m));
    }
    Ok(phi)
}

struct RunState<'a> {
    obj: &'a Objective,
    fidelity: Fidelity,
    mode: CostMode,
    assignment: Assignment,
    current_cost: Cost,
    f_current: f64,
    trace: Vec<TraceEvent>,
    step: u64,
    miss_base: u64,
}

impl<'a> RunState<'a> {
    fn new(
        obj: &'a Objective,
        cost: &dyn CostModel,
        fidelity: Fidelity,
        mode: CostMode,
    ) -> Result<Self, SearchError> {
        let miss_base = obj.misses();
        let assignment = Assignment::empty();
        let current_cost = cost.base_cost();
        let f_current = obj.evaluate(&assignment, fidelity)?;
        Ok(RunState {
            obj,
            fidelity,
            mode,
            assignment,
            current_cost,
            f_current,
            trace: Vec::new(),
            step: 0,
            miss_base,
        })
    }

    fn evaluations(&self) -> u64 {
        self.obj.misses() - self.miss_base
    }

    fn push_event(
        &mut self,
        action: TraceAction,
        element: Element,
        key_before: Option<f64>,
        key_after: Option<f64>,
        f_after: f64,
    ) {
        self.step += 1;
        self.trace.push(TraceEvent {
            step: self.step,
            action,
            element,
            key_before,
            key_after,
            f_after,
            params_after: self.current_cost.params,
            madds_after: self.current_cost.madds,
            evaluations: self.evaluations(),
        });
    }

    /// Marginal gain of `e`, along with the extended value and key.
    fn probe(&self, e: Element, unit_cost: u64) -> Result<(GainKey, f64, f64), SearchError> {
        let extended = self.assignment.with(e)?;
        let f_with = self.obj.evaluate(&extended, self.fidelity)?;
        let gain = f_with - self.f_current;
        Ok((GainKey::new(gain, unit_cost), gain, f_with))
    }

    fn accept(&mut self, e: Element, cand_cost: Cost, f_with: f64, key_before: Option<f64>, key: GainKey) -> Result<(), SearchError> {
        self.assignment = self.assignment.with(e)?;
        self.current_cost = cand_cost;
        self.f_current = f_with;
        self.push_event(TraceAction::Accept, e, key_before, Some(key.as_f64()), f_with);
        Ok(())
    }

    fn finish(self, phi: f64, queue_pops: u64, reinserts: u64, started: Instant) -> SearchResult {
        let evaluations = self.evaluations();
        SearchResult {
            block_sequence: self.assignment.block_sequence(),
            value: self.f_current,
            cost: self.current_cost,
            mode: self.mode,
            stats: SearchStats {
                evaluations,
                queue_pops,
                reinserts,
                phi,
                wall_time: started.elapsed(),
            },
            assignment: self.assignment,
            trace: self.trace,
        }
    }
}

/// Eager cost-effective greedy: every round rescans all still-addable
/// elements, computes fresh gains, and takes the best key.
///
/// Ties break lexicographically on (position, type). An empty ground set is
/// not an error: the result is the empty assignment. Negative gains are
/// still eligible unless `stop_on_nonpositive_gain` is set.
pub fn run_greedy(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    mode: CostMode,
    fidelity: Fidelity,
    opts: &EngineOptions,
) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let phi = compute_phi(cost, ground, budget)?;
    let mut state = RunState::new(obj, cost, fidelity, mode)?;

    loop {
        let mut best: Option<(GainKey, f64, Element, Cost, f64)> = None;
        for &e in ground {
            if state.assignment.contains_position(e.position) {
                continue;
            }
            let ec = cost.element_cost(e)?;
            let cand_cost = state.current_cost + ec;
            if !budget.admits(cand_cost) {
                continue;
            }
            let (key, gain, f_with) = state.probe(e, mode.unit_cost(ec))?;
            state.push_event(TraceAction::Evaluate, e, None, Some(key.as_f64()), f_with);
            let better = match &best {
                None => true,
                // strict: the first-scanned element keeps ties, and ground
                // order is (position, type) ascending
                Some((bk, ..)) => key.cmp_key(*bk) == Ordering::Greater,
            };
            if better {
                best = Some((key, gain, e, cand_cost, f_with));
            }
        }
        let Some((key, gain, e, cand_cost, f_with)) = best else { break };
        if opts.stop_on_nonpositive_gain && gain <= 0.0 {
            break;
        }
        state.accept(e, cand_cost, f_with, Some(key.as_f64()), key)?;
    }
    Ok(state.finish(phi, 0, 0, started))
}

/// Lazy cost-effective greedy over a stale-tolerant priority queue.
///
/// Singleton keys seed the queue; afterwards the top entry is popped and
/// either accepted outright (its key is fresh for the current selection
/// size), or re-scored and accepted immediately when it would still pop
/// ahead of the next queued entry, or pushed back otherwise. Elements whose
/// position has been taken are dropped for good; budget misfits are dropped
/// too, since remaining budget only shrinks. Selections match the eager
/// engine exactly, including its smaller-element tie rule.
pub fn run_lazy_ceg(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    mode: CostMode,
    fidelity: Fidelity,
    opts: &EngineOptions,
) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let phi = compute_phi(cost, ground, budget)?;
    let mut state = RunState::new(obj, cost, fidelity, mode)?;

    // Round one: singleton gains for every element that fits on its own.
    let mut seeds: Vec<(Element, Cost)> = Vec::new();
    for &e in ground {
        let ec = cost.element_cost(e)?;
        if budget.admits(state.current_cost + ec) {
            seeds.push((e, ec));
        }
    }
    let mut heap: BinaryHeap<QueueEntry> = BinaryHeap::with_capacity(seeds.len());
    if opts.parallel_first_pass && obj.concurrency_safe() {
        use rayon::prelude::*;
        let empty = state.assignment.clone();
        let scored: Vec<Result<f64, SearchError>> = seeds
            .par_iter()
            .map(|&(e, _)| Ok(obj.evaluate(&empty.with(e)?, fidelity)?))
            .collect();
        for (&(e, ec), f_with) in seeds.iter().zip(scored) {
            let f_with = f_with?;
            let gain = f_with - state.f_current;
            let key = GainKey::new(gain, mode.unit_cost(ec));
            state.push_event(TraceAction::Evaluate, e, None, Some(key.as_f64()), f_with);
            heap.push(QueueEntry { element: e, key, gain, f_with, freshness: 0 });
        }
    } else {
        for &(e, ec) in &seeds {
            let (key, gain, f_with) = state.probe(e, mode.unit_cost(ec))?;
            state.push_event(TraceAction::Evaluate, e, None, Some(key.as_f64()), f_with);
            heap.push(QueueEntry { element: e, key, gain, f_with, freshness: 0 });
        }
    }

    let mut queue_pops = 0u64;
    let mut reinserts = 0u64;
    'outer: while let Some(top) = heap.pop() {
        queue_pops += 1;
        let stale_key = top.key.as_f64();
        if state.assignment.contains_position(top.element.position) {
            state.push_event(TraceAction::SkipInfeasible, top.element, Some(stale_key), None, state.f_current);
            continue;
        }
        let ec = cost.element_cost(top.element)?;
        let cand_cost = state.current_cost + ec;
        if !budget.admits(cand_cost) {
            state.push_event(TraceAction::SkipInfeasible, top.element, Some(stale_key), None, state.f_current);
            continue;
        }
        if top.freshness == state.assignment.len() {
            if opts.stop_on_nonpositive_gain && top.gain <= 0.0 {
                break;
            }
            // the key was computed against the current selection: reuse the
            // extension value it came from, no new backend call needed
            state.accept(top.element, cand_cost, top.f_with, Some(stale_key), top.key)?;
            continue;
        }
        let (key, gain, f_with) = state.probe(top.element, mode.unit_cost(ec))?;
        state.push_event(TraceAction::Evaluate, top.element, Some(stale_key), Some(key.as_f64()), f_with);
        let fresh_entry = QueueEntry {
            element: top.element,
            key,
            gain,
            f_with,
            freshness: state.assignment.len(),
        };
        let accept_now = if opts.paper_literal_lazy {
            // compare against a freshly re-scored runner-up rather than its
            // queued key; stale unusable entries at the top are discarded
            // here exactly as a pop would discard them
            loop {
                match heap.peek() {
                    None => break true,
                    Some(next) => {
                        let next = next.clone();
                        if state.assignment.contains_position(next.element.position) {
                            heap.pop();
                            queue_pops += 1;
                            state.push_event(TraceAction::SkipInfeasible, next.element, Some(next.key.as_f64()), None, state.f_current);
                            continue;
                        }
                        let nec = cost.element_cost(next.element)?;
                        if !budget.admits(state.current_cost + nec) {
                            heap.pop();
                            queue_pops += 1;
                            state.push_event(TraceAction::SkipInfeasible, next.element, Some(next.key.as_f64()), None, state.f_current);
                            continue;
                        }
                        let (nkey, _, nf) = state.probe(next.element, mode.unit_cost(nec))?;
                        state.push_event(TraceAction::Evaluate, next.element, Some(next.key.as_f64()), Some(nkey.as_f64()), nf);
                        // same tie policy as the queue: equal keys go to the
                        // smaller element
                        break key
                            .cmp_key(nkey)
                            .then_with(|| next.element.cmp(&top.element))
                            != Ordering::Less;
                    }
                }
            }
        } else {
            // accept only if the recomputed entry would still pop first; a
            // key tie against a smaller element goes back into the queue so
            // both engines break ties identically
            match heap.peek() {
                None => true,
                Some(next) => fresh_entry.cmp(next) != Ordering::Less,
            }
        };
        if accept_now {
            if opts.stop_on_nonpositive_gain && gain <= 0.0 {
                break 'outer;
            }
            state.accept(top.element, cand_cost, f_with, Some(stale_key), key)?;
        } else {
            reinserts += 1;
            state.push_event(TraceAction::Reinsert, top.element, Some(stale_key), Some(key.as_f64()), state.f_current);
            heap.push(fresh_entry);
        }
    }
    Ok(state.finish(phi, queue_pops, reinserts, started))
}

/// One cost mode's slice of a three-mode run.
#[derive(Debug, Clone, Serialize)]
pub struct ModeOutcome {
    pub mode: CostMode,
    pub result: Option<SearchResult>,
    pub error: Option<String>,
}

/// Result of the three-mode search.
#[derive(Debug, Clone, Serialize)]
pub struct RcasResult {
    /// The best surviving mode's result, re-valued at the refine fidelity.
    pub winner: SearchResult,
    pub modes: Vec<ModeOutcome>,
    /// One entry per failed mode; empty on a clean run.
    pub warnings: Vec<String>,
}

/// Run the lazy engine under uniform-cost, parameter-ratio and madds-ratio
/// modes, re-evaluate each winner at `refine_fidelity`, and keep the best.
///
/// Mode order breaks value ties: uniform cost beats parameter ratio beats
/// madds ratio. A failing mode becomes a warning as long as at least one
/// mode survives; the first error propagates only when all three fail.
pub fn run_rcas(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    fidelity: Fidelity,
    refine_fidelity: Fidelity,
    opts: &EngineOptions,
) -> Result<RcasResult, SearchError> {
    let mut modes = Vec::with_capacity(3);
    let mut warnings = Vec::new();
    let mut first_err: Option<SearchError> = None;
    for mode in CostMode::ALL {
        let attempt = run_lazy_ceg(obj, cost, ground, budget, mode, fidelity, opts).and_then(|mut r| {
            r.value = obj.evaluate(&r.assignment, refine_fidelity)?;
            Ok(r)
        });
        match attempt {
            Ok(result) => modes.push(ModeOutcome { mode, result: Some(result), error: None }),
            Err(err) => {
                warnings.push(format!("mode {} failed: {err}", mode.label()));
                modes.push(ModeOutcome { mode, result: None, error: Some(err.to_string()) });
                if first_err.is_none() {
                    first_err = Some(err);
                }
            }
        }
    }
    let mut winner: Option<&SearchResult> = None;
    for outcome in &modes {
        if let Some(r) = &outcome.result {
            // strictly greater replaces: earlier modes keep ties
            if winner.map_or(true, |w| r.value > w.value) {
                winner = Some(r);
            }
        }
    }
    match winner {
        Some(w) => Ok(RcasResult { winner: w.clone(), modes, warnings }),
        None => Err(first_err.expect("no winner implies at least one error")),
    }
}

/// Rebuild the final assignment from a trace by replaying its accept rows.
pub fn replay_trace(trace: &[TraceEvent]) -> Result<Assignment, SearchError> {
    let mut assignment = Assignment::empty();
    let mut last_step = 0u64;
    for event in trace {
        if event.step <= last_step {
            return Err(SearchError::TraceCorrupt(format!(
                "step numbers must increase strictly; {} follows {}",
                event.step, last_step
            )));
        }
        last_step = event.step;
        if event.action == TraceAction::Accept {
            assignment = assignment.with(event.element).map_err(|e| {
                SearchError::TraceCorrupt(format!("accept at step {} is invalid: {e}", event.step))
            })?;
        }
    }
    Ok(assignment)
}

/// Trace CSV column header.
pub const TRACE_CSV_HEADER: &str =
    "step,action,position,type,key_before,key_after,F_after,params_after,madds_after,evaluations";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a trace as CSV, one row per event, stable across runs.
pub fn write_trace_csv<W: Write>(trace: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for ev in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            ev.step,
            ev.action.label(),
            ev.element.position,
            ev.element.block,
            fmt_opt(ev.key_before),
            fmt_opt(ev.key_after),
            ev.f_after,
            ev.params_after,
            ev.madds_after,
            ev.evaluations
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::TableCostModel;
    use crate::objective::{CoverageOracle, ExplicitOracle, ModularOracle};

    fn e(p: u32, b: u32) -> Element {
        Element::new(p, b)
    }

    /// Two elements: a cheap low-value one and an expensive high-value one
    /// whose gain-per-parameter is worse. The parameter-ratio rule walks
    /// into the trap; uniform cost does not.
    fn trap_instance() -> (Objective, TableCostModel, Vec<Element>, Budget) {
        let obj = Objective::new(Box::new(
            ModularOracle::new(vec![(e(0, 1), 3.0), (e(1, 1), 200.0)]).unwrap(),
        ));
        let cost = TableCostModel::new(
            vec![((0, 1), Cost::new(1, 1)), ((1, 1), Cost::new(100, 1))],
            Cost::ZERO,
        );
        (obj, cost, vec![e(0, 1), e(1, 1)], Budget::new(100, 1_000_000))
    }

    #[test]
    fn param_ratio_greedy_takes_the_trap() {
        let (obj, cost, ground, budget) = trap_instance();
        let opts = EngineOptions::default();
        let r = run_greedy(&obj, &cost, &ground, budget, CostMode::ParamRatio, Fidelity::FULL, &opts).unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.assignment.elements(), vec![e(0, 1)]);
        assert_eq!(r.cost, Cost::new(1, 1));
    }

    #[test]
    fn uniform_cost_greedy_avoids_the_trap() {
        let (obj, cost, ground, budget) = trap_instance();
        let opts = EngineOptions::default();
        let r = run_greedy(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &opts).unwrap();
        assert_eq!(r.value, 200.0);
        assert_eq!(r.assignment.elements(), vec![e(1, 1)]);
    }

    #[test]
    fn three_mode_run_keeps_the_best_and_reports_all() {
        let (obj, cost, ground, budget) = trap_instance();
        let opts = EngineOptions::default();
        let r = run_rcas(&obj, &cost, &ground, budget, Fidelity::FULL, Fidelity::FULL, &opts).unwrap();
        assert_eq!(r.winner.value, 200.0);
        assert_eq!(r.winner.mode, CostMode::UniformCost);
        assert!(r.warnings.is_empty());
        let values: Vec<f64> = r.modes.iter().map(|m| m.result.as_ref().unwrap().value).collect();
        assert_eq!(values, vec![200.0, 3.0, 200.0]);
    }

    #[test]
    fn lazy_matches_eager_on_a_coverage_instance() {
        let weights = vec![5.0, 3.0, 2.0, 1.0, 1.0];
        let covers = vec![
            (e(0, 1), vec![0]),
            (e(0, 2), vec![1, 2]),
            (e(1, 1), vec![0, 1]),
            (e(1, 2), vec![3]),
            (e(2, 1), vec![2, 3, 4]),
            (e(2, 2), vec![4]),
        ];
        let cost = TableCostModel::new(
            covers.iter().enumerate().map(|(i, (el, _))| {
                ((el.position, el.block), Cost::new(2 + i as u64, 3 + i as u64))
            }).collect::<Vec<_>>(),
            Cost::ZERO,
        );
        let ground: Vec<Element> = covers.iter().map(|(el, _)| *el).collect();
        let budget = Budget::new(9, 14);
        let opts = EngineOptions::default();
        for mode in CostMode::ALL {
            let eager_obj = Objective::new(Box::new(CoverageOracle::new(weights.clone(), covers.clone()).unwrap()));
            let lazy_obj = Objective::new(Box::new(CoverageOracle::new(weights.clone(), covers.clone()).unwrap()));
            let eager = run_greedy(&eager_obj, &cost, &ground, budget, mode, Fidelity::FULL, &opts).unwrap();
            let lazy = run_lazy_ceg(&lazy_obj, &cost, &ground, budget, mode, Fidelity::FULL, &opts).unwrap();
            assert_eq!(eager.assignment, lazy.assignment, "mode {:?}", mode);
            assert_eq!(eager.value, lazy.value);
            assert!(lazy.stats.evaluations <= eager.stats.evaluations);
        }
    }

    #[test]
    fn lazy_handles_a_gain_that_grows_after_an_add() {
        // deliberately supermodular: the pair is worth far more than the
        // parts, so the stale key underestimates after the first accept
        let values = vec![
            (Assignment::empty(), 0.0),
            (Assignment::from_elements([e(0, 1)]).unwrap(), 0.3),
            (Assignment::from_elements([e(1, 1)]).unwrap(), 0.2),
            (Assignment::from_elements([e(0, 1), e(1, 1)]).unwrap(), 0.9),
        ];
        let ground = vec![e(0, 1), e(1, 1)];
        let cost = TableCostModel::new(
            vec![((0, 1), Cost::new(1, 1)), ((1, 1), Cost::new(1, 1))],
            Cost::ZERO,
        );
        let budget = Budget::new(10, 10);
        let opts = EngineOptions::default();
        let obj = Objective::new(Box::new(ExplicitOracle::new(values.clone())));
        let lazy = run_lazy_ceg(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &opts).unwrap();
        assert_eq!(lazy.assignment.len(), 2);
        assert_eq!(lazy.value, 0.9);
        let obj = Objective::new(Box::new(ExplicitOracle::new(values)));
        let eager = run_greedy(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &opts).unwrap();
        assert_eq!(eager.value, 0.9);
    }

    #[test]
    fn empty_ground_set_yields_empty_result() {
        let obj = Objective::new(Box::new(ModularOracle::new(vec![]).unwrap()));
        let cost = TableCostModel::new(vec![], Cost::ZERO);
        let opts = EngineOptions::default();
        for result in [
            run_greedy(&obj, &cost, &[], Budget::new(10, 10), CostMode::UniformCost, Fidelity::FULL, &opts).unwrap(),
            run_lazy_ceg(&obj, &cost, &[], Budget::new(10, 10), CostMode::UniformCost, Fidelity::FULL, &opts).unwrap(),
        ] {
            assert!(result.assignment.is_empty());
            assert_eq!(result.value, 0.0);
            assert_eq!(result.stats.phi, 0.0);
        }
    }

    #[test]
    fn zero_budget_forces_empty_selection() {
        let (obj, cost, ground, _) = trap_instance();
        let opts = EngineOptions::default();
        let r = run_lazy_ceg(&obj, &cost, &ground, Budget::new(0, 0), CostMode::UniformCost, Fidelity::FULL, &opts).unwrap();
        assert!(result_is_empty(&r));
        fn result_is_empty(r: &SearchResult) -> bool {
            r.assignment.is_empty() && r.block_sequence.is_empty()
        }
    }

    #[test]
    fn zero_cost_elements_sort_first_by_raw_gain() {
        let obj = Objective::new(Box::new(
            ModularOracle::new(vec![(e(0, 1), 0.2), (e(1, 1), 0.5), (e(2, 1), 50.0)]).unwrap(),
        ));
        // two free elements and one with an enormous finite ratio
        let cost = TableCostModel::new(
            vec![((0, 1), Cost::new(0, 0)), ((1, 1), Cost::new(0, 0)), ((2, 1), Cost::new(1, 1))],
            Cost::ZERO,
        );
        let ground = vec![e(0, 1), e(1, 1), e(2, 1)];
        let opts = EngineOptions::default();
        let r = run_greedy(&obj, &cost, &ground, Budget::new(10, 10), CostMode::ParamRatio, Fidelity::FULL, &opts).unwrap();
        let accepts: Vec<Element> = r
            .trace
            .iter()
            .filter(|ev| ev.action == TraceAction::Accept)
            .map(|ev| ev.element)
            .collect();
        // free elements first, higher raw gain first among them
        assert_eq!(accepts, vec![e(1, 1), e(0, 1), e(2, 1)]);
    }

    #[test]
    fn nonpositive_gain_stop_is_opt_in() {
        // second element adds nothing
        let weights = vec![1.0];
        let covers = vec![(e(0, 1), vec![0]), (e(1, 1), vec![0])];
        let cost = TableCostModel::new(
            vec![((0, 1), Cost::new(1, 1)), ((1, 1), Cost::new(1, 1))],
            Cost::ZERO,
        );
        let ground = vec![e(0, 1), e(1, 1)];
        let budget = Budget::new(10, 10);
        let obj = Objective::new(Box::new(CoverageOracle::new(weights.clone(), covers.clone()).unwrap()));
        let default_run = run_greedy(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &EngineOptions::default()).unwrap();
        assert_eq!(default_run.assignment.len(), 2, "zero-gain elements are still taken by default");
        let obj = Objective::new(Box::new(CoverageOracle::new(weights, covers).unwrap()));
        let stopping = EngineOptions { stop_on_nonpositive_gain: true, ..Default::default() };
        let stopped = run_greedy(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &stopping).unwrap();
        assert_eq!(stopped.assignment.len(), 1);
    }

    #[test]
    fn paper_literal_lazy_agrees_on_submodular_input() {
        let weights = vec![4.0, 2.0, 1.0];
        let covers = vec![(e(0, 1), vec![0]), (e(1, 1), vec![0, 1]), (e(2, 1), vec![2])];
        let cost = TableCostModel::new(
            vec![((0, 1), Cost::new(2, 2)), ((1, 1), Cost::new(3, 3)), ((2, 1), Cost::new(1, 1))],
            Cost::ZERO,
        );
        let ground = vec![e(0, 1), e(1, 1), e(2, 1)];
        let budget = Budget::new(6, 6);
        let standard_obj = Objective::new(Box::new(CoverageOracle::new(weights.clone(), covers.clone()).unwrap()));
        let literal_obj = Objective::new(Box::new(CoverageOracle::new(weights, covers).unwrap()));
        let standard = run_lazy_ceg(&standard_obj, &cost, &ground, budget, CostMode::ParamRatio, Fidelity::FULL, &EngineOptions::default()).unwrap();
        let literal_opts = EngineOptions { paper_literal_lazy: true, ..Default::default() };
        let literal = run_lazy_ceg(&literal_obj, &cost, &ground, budget, CostMode::ParamRatio, Fidelity::FULL, &literal_opts).unwrap();
        assert_eq!(standard.assignment, literal.assignment);
        assert_eq!(standard.value, literal.value);
    }

    #[test]
    fn trace_replay_reconstructs_the_selection() {
        let (obj, cost, ground, budget) = trap_instance();
        let r = run_lazy_ceg(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &EngineOptions::default()).unwrap();
        assert_eq!(replay_trace(&r.trace).unwrap(), r.assignment);
    }

    #[test]
    fn trace_replay_rejects_corruption() {
        let (obj, cost, ground, budget) = trap_instance();
        let r = run_lazy_ceg(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &EngineOptions::default()).unwrap();
        let mut doubled = r.trace.clone();
        let accept = doubled.iter().find(|ev| ev.action == TraceAction::Accept).unwrap().clone();
        let mut dup = accept.clone();
        dup.step = doubled.last().unwrap().step + 1;
        doubled.push(dup);
        assert!(matches!(replay_trace(&doubled), Err(SearchError::TraceCorrupt(_))));
        let mut reordered = r.trace.clone();
        reordered[0].step = 99;
        assert!(matches!(replay_trace(&reordered), Err(SearchError::TraceCorrupt(_))));
    }

    #[test]
    fn trace_csv_has_the_documented_columns() {
        let (obj, cost, ground, budget) = trap_instance();
        let r = run_lazy_ceg(&obj, &cost, &ground, budget, CostMode::UniformCost, Fidelity::FULL, &EngineOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&r.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_CSV_HEADER);
        assert_eq!(text.lines().count(), r.trace.len() + 1);
    }

    #[test]
    fn parallel_first_pass_matches_serial() {
        let weights: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let covers: Vec<(Element, Vec<u32>)> =
            (0..10u32).map(|p| (e(p, 1), vec![p, (p + 1) % 10])).collect();
        let cost = TableCostModel::new(
            (0..10u32).map(|p| ((p, 1), Cost::new(1 + p as u64 % 3, 1))).collect::<Vec<_>>(),
            Cost::ZERO,
        );
        let ground: Vec<Element> = (0..10).map(|p| e(p, 1)).collect();
        let budget = Budget::new(8, 20);
        let serial_obj = Objective::new(Box::new(CoverageOracle::new(weights.clone(), covers.clone()).unwrap()));
        let parallel_obj = Objective::new(Box::new(CoverageOracle::new(weights, covers).unwrap()));
        let serial = run_lazy_ceg(&serial_obj, &cost, &ground, budget, CostMode::ParamRatio, Fidelity::FULL, &EngineOptions::default()).unwrap();
        let popts = EngineOptions { parallel_first_pass: true, ..Default::default() };
        let parallel = run_lazy_ceg(&parallel_obj, &cost, &ground, budget, CostMode::ParamRatio, Fidelity::FULL, &popts).unwrap();
        assert_eq!(serial.assignment, parallel.assignment);
        assert_eq!(serial.value, parallel.value);
        assert_eq!(serial.stats.evaluations, parallel.stats.evaluations);
    }
}
