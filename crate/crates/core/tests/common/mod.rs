//! Independent reference implementations the integration tests check the
//! library against. Everything here is deliberately naive: counting loops,
//! plain recursion and quadratic scans, sharing no code with the crate.

#![allow(dead_code)]

use rcas_core::costmodel::CostModel;
use rcas_core::domain::{Assignment, BlockType, Budget, Cost, Element, Position};
use rcas_core::objective::{Fidelity, Objective};

/// Parameter count of one grouped convolution, found by enumerating every
/// weight: each output channel sees `cin / groups` inputs through a `k x k`
/// window.
fn counted_conv_params(cin: u64, cout: u64, groups: u64, k: u64) -> u64 {
    let mut params = 0u64;
    for _out_channel in 0..cout {
        for _in_channel in 0..cin / groups {
            for _ky in 0..k {
                for _kx in 0..k {
                    params += 1;
                }
            }
        }
    }
    params
}

/// Multiply-adds of the same convolution: every output location applies
/// every weight once.
fn counted_conv_madds(params: u64, out_h: u64, out_w: u64) -> u64 {
    let mut madds = 0u64;
    for _y in 0..out_h {
        for _x in 0..out_w {
            madds += params;
        }
    }
    madds
}

/// Cost of one block at one position, derived by weight enumeration rather
/// than closed-form arithmetic. Returns `None` when the shape is not
/// realizable (fractional channels or indivisible groups), which the
/// library is expected to reject.
pub fn enumerated_block_cost(block: &BlockType, position: &Position) -> Option<Cost> {
    let c1 = position.in_channels as u64;
    let c2 = position.out_channels as u64;
    let (num, den) = (block.expansion_factor.numer(), block.expansion_factor.denom());
    if (c1 * num) % den != 0 {
        return None;
    }
    let expanded = c1 * num / den;
    let ge = block.expansion_groups as u64;
    let gp = block.projection_groups as u64;
    if expanded == 0 || c1 % ge != 0 || expanded % ge != 0 || expanded % gp != 0 || c2 % gp != 0 {
        return None;
    }
    let s = position.stride as u64;
    let (h, w) = (position.height as u64, position.width as u64);
    if s == 0 || h % s != 0 || w % s != 0 {
        return None;
    }
    let k = block.kernel as u64;

    // expansion: 1x1 at the input resolution
    let p_e = counted_conv_params(c1, expanded, ge, 1);
    let m_e = counted_conv_madds(p_e, h, w);
    // depthwise: k x k, one group per channel, strided output
    let p_d = counted_conv_params(expanded, expanded, expanded, k);
    let m_d = counted_conv_madds(p_d, h / s, w / s);
    // projection: 1x1 at the output resolution
    let p_p = counted_conv_params(expanded, c2, gp, 1);
    let m_p = counted_conv_madds(p_p, h / s, w / s);

    Some(Cost::new(p_e + p_d + p_p, m_e + m_d + m_p))
}

/// Plain cost-effective greedy written from the definition: rescan every
/// element each round, divide fresh gains by the chosen unit cost, take the
/// best, repeat until nothing fits. Ties keep the smallest (position, type).
pub fn naive_greedy(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    unit: impl Fn(Cost) -> u64,
    fidelity: Fidelity,
) -> (Assignment, f64) {
    let mut picked = Assignment::empty();
    let mut f_now = obj.evaluate(&picked, fidelity).expect("reference eval");
    loop {
        let mut best: Option<(f64, Element, f64)> = None;
        for &e in ground {
            if picked.contains_position(e.position) {
                continue;
            }
            let total = cost.assignment_cost(&picked).expect("reference cost")
                + cost.element_cost(e).expect("reference cost");
            if !budget.admits(total) {
                continue;
            }
            let f_with = obj
                .evaluate(&picked.with(e).expect("free position"), fidelity)
                .expect("reference eval");
            let unit_cost = unit(cost.element_cost(e).expect("reference cost"));
            let key = if unit_cost == 0 { f64::INFINITY } else { (f_with - f_now) / unit_cost as f64 };
            if best.as_ref().map_or(true, |(bk, ..)| key > *bk) {
                best = Some((key, e, f_with));
            }
        }
        match best {
            Some((_, e, f_with)) => {
                picked = picked.with(e).expect("free position");
                f_now = f_with;
            }
            None => return (picked, f_now),
        }
    }
}

/// Exhaustive optimum by straightforward recursion over positions in
/// ascending order, trying "leave empty" before each type. Ties keep the
/// first assignment in that order, which is also the library's stated
/// tie-break.
pub fn recursive_brute(
    obj: &Objective,
    cost: &dyn CostModel,
    ground: &[Element],
    budget: Budget,
    fidelity: Fidelity,
) -> (Assignment, f64) {
    let mut positions: Vec<(u32, Vec<u32>)> = Vec::new();
    for e in ground {
        match positions.iter_mut().find(|(p, _)| *p == e.position) {
            Some((_, types)) => types.push(e.block),
            None => positions.push((e.position, vec![e.block])),
        }
    }
    positions.sort();
    for (_, types) in &mut positions {
        types.sort_unstable();
        types.dedup();
    }

    fn descend(
        obj: &Objective,
        cost: &dyn CostModel,
        positions: &[(u32, Vec<u32>)],
        budget: Budget,
        fidelity: Fidelity,
        depth: usize,
        current: Assignment,
        best: &mut Option<(Assignment, f64)>,
    ) {
        if depth == positions.len() {
            let total = cost.assignment_cost(&current).expect("reference cost");
            if !budget.admits(total) {
                return;
            }
            let v = obj.evaluate(&current, fidelity).expect("reference eval");
            if best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                *best = Some((current, v));
            }
            return;
        }
        let (pos, types) = &positions[depth];
        descend(obj, cost, positions, budget, fidelity, depth + 1, current.clone(), best);
        for &t in types {
            let next = current.with(Element::new(*pos, t)).expect("fresh position");
            descend(obj, cost, positions, budget, fidelity, depth + 1, next, best);
        }
    }

    let mut best = None;
    descend(obj, cost, &positions, budget, fidelity, 0, Assignment::empty(), &mut best);
    best.expect("the empty assignment is always feasible or nothing is")
}

/// Height of the concave envelope over a point cloud at `x`, computed the
/// slow way: the best interpolation over all point pairs straddling `x`.
pub fn envelope_at(points: &[(f64, f64)], x: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &(px, py) in points {
        if px == x {
            best = best.max(py);
        }
        for &(qx, qy) in points {
            if px < x && x < qx {
                let t = (x - px) / (qx - px);
                best = best.max(py + t * (qy - py));
            }
        }
    }
    best
}
