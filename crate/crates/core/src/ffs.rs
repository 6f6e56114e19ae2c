//! Feasible-solution recovery from a relaxation point.
//!
//! [`ffs1`] fixes the network: a mixed-integer LP that keeps storage close
//! to the relaxation's levels, delivers every plant its required quantity
//! and picks at most one pipeline per node and step. It is solved by branch
//! and bound over the pipeline binaries on top of [`DualSimplex`].
//! [`ffs2`] then pushes qualities forward through the chosen flows.

use crate::error::{PoolingError, Result};
use crate::model::{Instance, NodeKind, Schedule};
use crate::simplex::{DualSimplex, LpProblem, LpStatus, Sense};
use std::cmp::Ordering;

/// Weight of the storage-tracking term.
pub const DEFAULT_ALPHA: f64 = 100.0;
/// Absolute optimality gap at which branch and bound stops.
pub const TOL_MIP: f64 = 1e-6;
pub const DEFAULT_NODE_LIMIT: usize = 100_000;
/// Stored quantities at or below this are treated as an empty node.
pub const EMPTY_EPS: f64 = 1e-9;

const INT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ffs1Options {
    pub alpha: f64,
    pub tol_mip: f64,
    pub node_limit: usize,
}

impl Default for Ffs1Options {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tol_mip: TOL_MIP,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

/// Row families of the FFS1 model, in the order used to name the first
/// infeasible one.
const FAMILIES: [&str; 7] = [
    "flow bounds",
    "source balance",
    "tank balance",
    "plant quantity",
    "plant quality",
    "one pipeline",
    "storage tracking",
];

/// The FFS1 model as an LP over `(a, u, p, s, q, v)` with `u ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct Ffs1Problem {
    pub lp: LpProblem,
    pub alpha: f64,
    /// Family of every LP row, indexing [`FAMILIES`].
    row_family: Vec<usize>,
    flow: Vec<Vec<usize>>,
    used: Vec<Vec<usize>>,
    /// `[state][node]`, `None` for fixed states and plants.
    quantity: Vec<Vec<Option<usize>>>,
    plant_quality: Vec<Vec<usize>>,
    shortage: Vec<Vec<usize>>,
}

impl Ffs1Problem {
    /// `reference` supplies the target levels (`quantity`) and the stream
    /// qualities used in the plant rows (`quality`), both by state.
    pub fn build(inst: &Instance, reference: &Schedule, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PoolingError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        reference.check_dims(inst)?;
        let h = inst.horizon();
        let arcs = inst.arcs();
        let mut lp = LpProblem::default();
        let mut row_family = Vec::new();
        let mut add_row = |lp: &mut LpProblem, fam: usize, coefs: Vec<(usize, f64)>, sense: Sense, rhs: f64| {
            lp.add_row(coefs, sense, rhs);
            row_family.push(fam);
        };

        let flow: Vec<Vec<usize>> = (0..h)
            .map(|_| {
                arcs.iter()
                    .map(|arc| lp.add_var(arc.cost, 0.0, arc.upper))
                    .collect::<Vec<_>>()
            })
            .collect();
        let used: Vec<Vec<usize>> = (0..h)
            .map(|_| arcs.iter().map(|_| lp.add_var(0.0, 0.0, 1.0)).collect())
            .collect();

        let mut quantity = vec![vec![None; inst.num_nodes()]; h + 1];
        let mut upper_p = vec![0.0; inst.num_nodes()];
        for i in inst.sources().chain(inst.tanks()) {
            let node = &inst.nodes()[i];
            let (lo, hi) = match node.kind {
                NodeKind::Source => {
                    let total: f64 = (0..h).map(|t| inst.supply(i, t).0).sum();
                    (0.0, node.initial_quantity + total)
                }
                _ => (node.min_storage, node.max_storage),
            };
            upper_p[i] = hi;
            for t in 1..=h {
                let (l, u) = if node.kind == NodeKind::Source && t == h {
                    (0.0, 0.0)
                } else {
                    (lo, hi)
                };
                quantity[t][i] = Some(lp.add_var(0.0, l, u));
            }
        }
        let n_plants = inst.num_plants();
        let mut plant_quality = vec![vec![0; n_plants]; h];
        let mut shortage = vec![vec![0; n_plants]; h];
        for t in 0..h {
            for i in inst.plants() {
                let k = inst.plant_index(i);
                let feed: Vec<f64> = inst
                    .incoming(i)
                    .iter()
                    .map(|&e| reference.quality[t][arcs[e].from])
                    .collect();
                let lo = feed.iter().fold(0.0f64, |a, &b| a.min(b));
                let hi = feed.iter().fold(0.0f64, |a, &b| a.max(b));
                plant_quality[t][k] = lp.add_var(0.0, lo, hi);
                let (_, rq) = inst.demand(i, t);
                shortage[t][k] = lp.add_var(1.0, 0.0, rq.max(0.0));
            }
        }

        // Flow bounds.
        for t in 0..h {
            for (e, arc) in arcs.iter().enumerate() {
                add_row(
                    &mut lp,
                    0,
                    vec![(flow[t][e], 1.0), (used[t][e], -arc.upper)],
                    Sense::Le,
                    0.0,
                );
                if arc.lower > 0.0 {
                    add_row(
                        &mut lp,
                        0,
                        vec![(flow[t][e], 1.0), (used[t][e], -arc.lower)],
                        Sense::Ge,
                        0.0,
                    );
                }
            }
        }
        // Balances.
        for t in 0..h {
            for i in inst.sources().chain(inst.tanks()) {
                let is_source = inst.kind(i) == NodeKind::Source;
                let mut coefs = vec![(quantity[t + 1][i].expect("storage state"), 1.0)];
                let mut rhs = 0.0;
                match quantity[t][i] {
                    Some(k) => coefs.push((k, -1.0)),
                    None => rhs += inst.nodes()[i].initial_quantity,
                }
                for &e in inst.outgoing(i) {
                    coefs.push((flow[t][e], 1.0));
                }
                if is_source {
                    rhs += inst.supply(i, t).0;
                } else {
                    for &e in inst.incoming(i) {
                        coefs.push((flow[t][e], -1.0));
                    }
                }
                add_row(&mut lp, if is_source { 1 } else { 2 }, coefs, Sense::Eq, rhs);
            }
        }
        // Plants.
        for t in 0..h {
            for i in inst.plants() {
                let k = inst.plant_index(i);
                let (rc, rq) = inst.demand(i, t);
                let inc = inst.incoming(i);
                add_row(
                    &mut lp,
                    3,
                    inc.iter().map(|&e| (flow[t][e], 1.0)).collect(),
                    Sense::Eq,
                    rc,
                );
                let mut coefs = vec![(plant_quality[t][k], rc)];
                for &e in inc {
                    let qbar = reference.quality[t][arcs[e].from];
                    if qbar != 0.0 {
                        coefs.push((flow[t][e], -qbar));
                    }
                }
                add_row(&mut lp, 4, coefs, Sense::Eq, 0.0);
                add_row(
                    &mut lp,
                    4,
                    vec![(plant_quality[t][k], 1.0), (shortage[t][k], 1.0)],
                    Sense::Ge,
                    rq,
                );
            }
        }
        // One pipeline per node and step.
        for t in 0..h {
            for i in 0..inst.num_nodes() {
                let inc: Vec<usize> = inst.incoming(i).iter().chain(inst.outgoing(i)).copied().collect();
                if inc.len() >= 2 {
                    add_row(
                        &mut lp,
                        5,
                        inc.iter().map(|&e| (used[t][e], 1.0)).collect(),
                        Sense::Le,
                        1.0,
                    );
                }
            }
        }
        // |p − p̄| split; the final state is not penalized.
        for t in 1..h {
            for i in inst.sources().chain(inst.tanks()) {
                let p = quantity[t][i].expect("storage state");
                let pbar = reference.quantity[t][i];
                let s = lp.add_var(alpha, 0.0, upper_p[i] + pbar.abs());
                add_row(&mut lp, 6, vec![(p, 1.0), (s, -1.0)], Sense::Le, pbar);
                add_row(&mut lp, 6, vec![(p, 1.0), (s, 1.0)], Sense::Ge, pbar);
            }
        }
        Ok(Self {
            lp,
            alpha,
            row_family,
            flow,
            used,
            quantity,
            plant_quality,
            shortage,
        })
    }

    /// LP variable indices of the pipeline binaries, by step then arc.
    pub fn binaries(&self) -> Vec<usize> {
        self.used.iter().flatten().copied().collect()
    }

    /// The LP with every binary fixed to the given pattern (step-major).
    pub fn with_pattern(&self, pattern: &[bool]) -> LpProblem {
        let mut lp = self.lp.clone();
        for (&j, &on) in self.binaries().iter().zip(pattern) {
            let v = if on { 1.0 } else { 0.0 };
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        lp
    }

    fn restricted(&self, families: usize) -> LpProblem {
        let mut lp = self.lp.clone();
        lp.rows = self
            .lp
            .rows
            .iter()
            .zip(&self.row_family)
            .filter(|(_, &f)| f < families)
            .map(|(r, _)| r.clone())
            .collect();
        lp
    }

    /// Name of the first row family (in model order) whose addition makes
    /// the continuous relaxation infeasible.
    pub fn first_infeasible_family(&self) -> Result<Option<&'static str>> {
        for k in 1..=FAMILIES.len() {
            let mut s = DualSimplex::new(&self.restricted(k))?;
            if s.solve()? == LpStatus::Infeasible {
                return Ok(Some(FAMILIES[k - 1]));
            }
        }
        Ok(None)
    }

    fn decode(&self, inst: &Instance, x: &[f64], pattern: &[Vec<bool>]) -> Ffs1Solution {
        let h = inst.horizon();
        let mut s = Schedule::empty(inst);
        for t in 0..h {
            for e in 0..inst.arcs().len() {
                s.flow[t][e] = x[self.flow[t][e]].max(0.0);
                s.used[t][e] = pattern[t][e];
            }
        }
        for t in 1..=h {
            for i in 0..inst.num_nodes() {
                if let Some(k) = self.quantity[t][i] {
                    s.quantity[t][i] = x[k];
                }
            }
        }
        let mut plant_quality = vec![vec![0.0; inst.num_plants()]; h];
        for t in 0..h {
            for k in 0..inst.num_plants() {
                plant_quality[t][k] = x[self.plant_quality[t][k]];
                s.shortage[t][k] = x[self.shortage[t][k]].max(0.0);
            }
        }
        Ffs1Solution {
            schedule: s,
            plant_quality,
            objective: self.lp.objective(x),
            bound: f64::NEG_INFINITY,
            root_bound: f64::NEG_INFINITY,
            nodes: 0,
            lp_iterations: 0,
            status: Ffs1Status::Optimal,
            incumbents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ffs1Status {
    /// Gap closed to the tolerance.
    Optimal,
    /// Node limit reached; `bound` holds the best remaining lower bound.
    NodeLimit,
}

/// FFS1 output. `schedule` carries the flows, pipeline choice, quantities
/// and shortages; its quality entries are not set (that is FFS2's job).
#[derive(Debug, Clone)]
pub struct Ffs1Solution {
    pub schedule: Schedule,
    /// `[t][plant index]` plant qualities from the linearized plant rows.
    pub plant_quality: Vec<Vec<f64>>,
    pub objective: f64,
    /// Lower bound on the MILP optimum when the search stopped.
    pub bound: f64,
    /// Optimal value of the continuous relaxation at the root.
    pub root_bound: f64,
    pub nodes: usize,
    /// Dual simplex iterations over all nodes.
    pub lp_iterations: usize,
    pub status: Ffs1Status,
    /// Objective of every accepted incumbent, in order.
    pub incumbents: Vec<f64>,
}

impl Ffs1Solution {
    pub fn gap(&self) -> f64 {
        (self.objective - self.bound).max(0.0)
    }
}

/// A branch-and-bound node: binaries fixed so far and the parent's bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    pub id: usize,
    pub fixed: Vec<(usize, bool)>,
    pub bound: f64,
    pub depth: usize,
}

/// Arcs sharing an endpoint with arc `e` (excluding `e`).
fn conflicts(inst: &Instance, e: usize) -> Vec<usize> {
    let arc = &inst.arcs()[e];
    let mut out: Vec<usize> = [arc.from, arc.to]
        .iter()
        .flat_map(|&v| inst.incoming(v).iter().chain(inst.outgoing(v)).copied())
        .filter(|&f| f != e)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Pipeline pattern implied by positive flow, if it is admissible.
fn flow_pattern(inst: &Instance, prob: &Ffs1Problem, x: &[f64]) -> Option<Vec<Vec<bool>>> {
    let h = inst.horizon();
    let mut pattern = vec![vec![false; inst.arcs().len()]; h];
    for t in 0..h {
        let mut busy = vec![false; inst.num_nodes()];
        for (e, arc) in inst.arcs().iter().enumerate() {
            let a = x[prob.flow[t][e]];
            if a <= INT_TOL * (1.0 + arc.upper) {
                continue;
            }
            if busy[arc.from] || busy[arc.to] || a < arc.lower - INT_TOL * (1.0 + arc.lower) {
                return None;
            }
            busy[arc.from] = true;
            busy[arc.to] = true;
            pattern[t][e] = true;
        }
    }
    Some(pattern)
}

/// Solves FFS1 to within `opts.tol_mip` by depth-first branch and bound
/// with best-bound backtracking.
pub fn ffs1(inst: &Instance, reference: &Schedule, opts: &Ffs1Options) -> Result<Ffs1Solution> {
    let prob = Ffs1Problem::build(inst, reference, opts.alpha)?;
    solve_ffs1(inst, &prob, opts)
}

pub fn solve_ffs1(inst: &Instance, prob: &Ffs1Problem, opts: &Ffs1Options) -> Result<Ffs1Solution> {
    let h = inst.horizon();
    let m = inst.arcs().len();
    let var_of = |t: usize, e: usize| prob.used[t][e];
    let mut lp = DualSimplex::new(&prob.lp)?;

    let mut incumbent: Option<(f64, Vec<f64>, Vec<Vec<bool>>)> = None;
    let mut incumbents = Vec::new();
    let mut open: Vec<BnbNode> = Vec::new();
    let mut next_id = 1;
    let mut dive = Some(BnbNode {
        id: 0,
        fixed: Vec::new(),
        bound: f64::NEG_INFINITY,
        depth: 0,
    });
    let mut nodes = 0;
    let mut root_bound = f64::NEG_INFINITY;
    let cutoff =
        |inc: &Option<(f64, Vec<f64>, Vec<Vec<bool>>)>| inc.as_ref().map_or(f64::INFINITY, |i| i.0 - opts.tol_mip);

    loop {
        let node = match dive.take() {
            Some(n) => n,
            // Until a first incumbent exists, backtrack to the newest node;
            // afterwards to the best bound, then the older node.
            None if incumbent.is_none() => match open.pop() {
                Some(n) => n,
                None => break,
            },
            None => {
                let best = open.iter().enumerate().min_by(|a, b| {
                    a.1.bound
                        .partial_cmp(&b.1.bound)
                        .unwrap_or(Ordering::Equal)
                        .then(a.1.id.cmp(&b.1.id))
                });
                match best {
                    Some((k, _)) => open.swap_remove(k),
                    None => break,
                }
            }
        };
        if node.bound >= cutoff(&incumbent) {
            continue;
        }
        if nodes >= opts.node_limit {
            open.push(node);
            break;
        }
        nodes += 1;

        for t in 0..h {
            for e in 0..m {
                lp.set_bounds(var_of(t, e), 0.0, 1.0);
            }
        }
        for &(j, on) in &node.fixed {
            let v = if on { 1.0 } else { 0.0 };
            lp.set_bounds(j, v, v);
        }
        match lp.solve()? {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                if node.id == 0 {
                    let fam = prob.first_infeasible_family()?.unwrap_or("one pipeline");
                    return Err(PoolingError::Infeasible(format!("first infeasible row family: {fam}")));
                }
                continue;
            }
            LpStatus::IterLimit => {
                return Err(PoolingError::Numerical {
                    phase: "ffs1",
                    msg: format!("simplex iteration limit at node {}", node.id),
                })
            }
        }
        let mut x = lp.x();
        let mut obj = prob.lp.objective(&x);
        if node.id == 0 {
            root_bound = obj;
        }
        if obj >= cutoff(&incumbent) {
            continue;
        }
        if flow_pattern(inst, prob, &x).is_some() {
            // Candidate incumbent: drop accumulated drift first.
            if lp.polish()? != LpStatus::Optimal {
                return Err(PoolingError::Numerical {
                    phase: "ffs1",
                    msg: format!("node {} lost optimality after refactoring", node.id),
                });
            }
            x = lp.x();
            obj = prob.lp.objective(&x);
            if let Some(pattern) = flow_pattern(inst, prob, &x) {
                if obj < cutoff(&incumbent) {
                    incumbents.push(obj);
                    incumbent = Some((obj, x, pattern));
                }
                continue;
            }
        }

        // Most fractional binary; ties by (step, arc).
        let mut pick = None;
        let mut best = INT_TOL;
        for t in 0..h {
            for e in 0..m {
                let u = x[var_of(t, e)];
                let frac = u.min(1.0 - u);
                if frac > best + 1e-12 {
                    best = frac;
                    pick = Some((t, e));
                }
            }
        }
        let (t, e) = match pick {
            Some(te) => te,
            None => {
                // Binaries are integral but some arc carries flow with its
                // binary at zero tolerance; branch on the first such arc.
                let mut found = None;
                'outer: for t in 0..h {
                    for e in 0..m {
                        let u = x[var_of(t, e)];
                        if u < 0.5 && x[prob.flow[t][e]] > INT_TOL * (1.0 + inst.arcs()[e].upper) {
                            found = Some((t, e));
                            break 'outer;
                        }
                    }
                }
                found.ok_or_else(|| PoolingError::Numerical {
                    phase: "ffs1",
                    msg: "integral binaries but the flow pattern is inadmissible".into(),
                })?
            }
        };
        let j = var_of(t, e);
        let mut one = node.fixed.clone();
        one.push((j, true));
        for f in conflicts(inst, e) {
            one.push((var_of(t, f), false));
        }
        let mut zero = node.fixed;
        zero.push((j, false));
        dive = Some(BnbNode {
            id: next_id,
            fixed: one,
            bound: obj,
            depth: node.depth + 1,
        });
        open.push(BnbNode {
            id: next_id + 1,
            fixed: zero,
            bound: obj,
            depth: node.depth + 1,
        });
        next_id += 2;
    }

    let Some((obj, x, pattern)) = incumbent else {
        return Err(PoolingError::Infeasible(if nodes >= opts.node_limit {
            format!(
                "node limit {} reached without a feasible pipeline choice",
                opts.node_limit
            )
        } else {
            "no pipeline choice satisfies the one-pipeline rows".into()
        }));
    };
    let open_bound = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let mut sol = prob.decode(inst, &x, &pattern);
    sol.objective = obj;
    sol.bound = open_bound.min(obj);
    sol.root_bound = root_bound;
    sol.nodes = nodes;
    sol.lp_iterations = lp.iterations();
    sol.status = if obj - sol.bound <= opts.tol_mip {
        Ffs1Status::Optimal
    } else {
        Ffs1Status::NodeLimit
    };
    sol.incumbents = incumbents;
    Ok(sol)
}

/// FFS2 output: the full schedule and any empty-node events met on the way.
#[derive(Debug, Clone)]
pub struct Ffs2Output {
    pub schedule: Schedule,
    pub diagnostics: Vec<String>,
}

/// Forward quality recursion over the FFS1 flows and quantities. A node
/// whose next quantity is zero gets quality zero.
pub fn ffs2(inst: &Instance, sol: &Ffs1Solution) -> Result<Ffs2Output> {
    let mut s = sol.schedule.clone();
    s.check_dims(inst)?;
    let arcs = inst.arcs();
    let mut diagnostics = Vec::new();
    for (i, node) in inst.nodes().iter().enumerate() {
        s.quality[0][i] = if node.kind == NodeKind::Plant {
            0.0
        } else {
            node.initial_quality
        };
    }
    for t in 0..inst.horizon() {
        for i in inst.sources().chain(inst.tanks()) {
            let (p, q, pn) = (s.quantity[t][i], s.quality[t][i], s.quantity[t + 1][i]);
            let out: f64 = inst.outgoing(i).iter().map(|&e| s.flow[t][e]).sum();
            let inmix: f64 = if inst.kind(i) == NodeKind::Source {
                let (sa, sq) = inst.supply(i, t);
                sa * sq
            } else {
                inst.incoming(i)
                    .iter()
                    .map(|&e| s.flow[t][e] * s.quality[t][arcs[e].from])
                    .sum()
            };
            s.quality[t + 1][i] = if pn > EMPTY_EPS {
                (p * q + inmix - out * q) / pn
            } else {
                if t + 1 < inst.horizon() || inst.kind(i) != NodeKind::Source {
                    diagnostics.push(format!("node {} empty at state {}: quality set to 0", i + 1, t + 1));
                }
                0.0
            };
        }
        s.set_plant_quality(inst, t);
    }
    Ok(Ffs2Output {
        schedule: s,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, GeneratorSpec};
    use crate::model::fixtures::*;
    use crate::model::{residuals, InstanceData};
    use proptest::prelude::*;

    /// Reference point from simulating the generator's witness schedule.
    fn witness_reference(inst: &Instance) -> Schedule {
        let flows = crate::generator::witness_flows(inst).expect("witness");
        Schedule::simulate(inst, &flows).unwrap()
    }

    fn chain() -> Instance {
        // source → tank → plant, two steps, no supply.
        Instance::new(InstanceData {
            nodes: vec![source(0.0, 3.0), tank(12.0, 2.0, 30.0), plant()],
            arcs: vec![arc(0, 1, 20.0, 1.0), arc(1, 2, 20.0, 1.0)],
            horizon: 2,
            supply_quantity: vec![vec![0.0, 0.0]],
            supply_quality: vec![vec![3.0, 3.0]],
            demand_quantity: vec![vec![5.0, 6.0]],
            demand_quality: vec![vec![1.0, 1.0]],
            shortage_cost: vec![100.0],
        })
        .unwrap()
    }

    #[test]
    fn chain_delivers_required_quantity() {
        let inst = chain();
        let reference = Schedule::empty(&inst);
        let sol = ffs1(&inst, &reference, &Ffs1Options::default()).unwrap();
        assert_eq!(sol.status, Ffs1Status::Optimal);
        // The plant needs its pipeline every step, so the tank cannot also
        // receive at step 0; the source ships its 4 units at step 1.
        assert_eq!(sol.schedule.used[0], vec![false, true]);
        assert!((sol.schedule.flow[0][1] - 5.0).abs() < 1e-9);
        assert!((sol.schedule.flow[1][1] - 6.0).abs() < 1e-9);
        assert!((sol.schedule.quantity[2][1] - 1.0).abs() < 1e-9);
        // Transport 11, tracking 100·|7 − 0|, and a full shortage of 1 at
        // step 1 since the empty reference has quality 0 there.
        assert!((sol.objective - (11.0 + 700.0 + 1.0)).abs() < 1e-7, "{}", sol.objective);
        let out = ffs2(&inst, &sol).unwrap();
        let r = residuals(&inst, &out.schedule).unwrap();
        assert!(r.dynamics() <= 1e-8, "{r:?}");
    }

    #[test]
    fn infeasible_names_a_family() {
        // Plant needs more than the only pipeline carries.
        let inst = Instance::new(InstanceData {
            nodes: vec![source(0.0, 3.0), tank(10.0, 2.0, 30.0), plant()],
            arcs: vec![arc(0, 1, 20.0, 1.0), arc(1, 2, 4.0, 1.0)],
            horizon: 1,
            supply_quantity: vec![vec![0.0]],
            supply_quality: vec![vec![3.0]],
            demand_quantity: vec![vec![5.0]],
            demand_quality: vec![vec![1.0]],
            shortage_cost: vec![100.0],
        })
        .unwrap();
        let err = ffs1(&inst, &Schedule::empty(&inst), &Ffs1Options::default()).unwrap_err();
        assert!(err.to_string().contains("plant quantity"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let inst = chain();
        let opts = Ffs1Options {
            alpha: 0.0,
            ..Ffs1Options::default()
        };
        assert!(ffs1(&inst, &Schedule::empty(&inst), &opts).is_err());
    }

    #[test]
    fn zero_quality_requirement_has_no_shortage() {
        let mut data = chain().into_data();
        data.demand_quality = vec![vec![0.0, 0.0]];
        let inst = Instance::new(data).unwrap();
        let sol = ffs1(&inst, &Schedule::empty(&inst), &Ffs1Options::default()).unwrap();
        let out = ffs2(&inst, &sol).unwrap();
        assert!(out.schedule.shortage.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn tank_mixing_example() {
        // p = 1 at quality 2, inflow 1 at quality 4, no outflow → quality 3.
        let inst = Instance::new(InstanceData {
            nodes: vec![source(0.0, 4.0), tank(1.0, 2.0, 10.0), tank(5.0, 1.0, 10.0), plant()],
            arcs: vec![arc(0, 1, 5.0, 1.0), arc(2, 3, 5.0, 1.0)],
            horizon: 1,
            supply_quantity: vec![vec![1.0]],
            supply_quality: vec![vec![4.0]],
            demand_quantity: vec![vec![1.0]],
            demand_quality: vec![vec![3.0]],
            shortage_cost: vec![1.0],
        })
        .unwrap();
        let mut sched = Schedule::empty(&inst);
        sched.flow[0] = vec![1.0, 1.0];
        sched.used[0] = vec![true, true];
        sched.quantity[1] = vec![0.0, 2.0, 4.0, 0.0];
        let sol = Ffs1Solution {
            schedule: sched,
            plant_quality: vec![vec![0.0]],
            objective: 0.0,
            bound: 0.0,
            root_bound: 0.0,
            nodes: 0,
            lp_iterations: 0,
            status: Ffs1Status::Optimal,
            incumbents: vec![],
        };
        let out = ffs2(&inst, &sol).unwrap();
        assert!((out.schedule.quality[1][1] - 3.0).abs() < 1e-15);
        // Plant fed by the second tank at quality 1 with RC = 1.
        assert!((out.schedule.quality[0][3] - 1.0).abs() < 1e-15);
        assert!((out.schedule.shortage[0][0] - 2.0).abs() < 1e-15);
        // The source emptied at its final state; no diagnostic for that.
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn generated_instance_bnb_properties() {
        let g = generate(&GeneratorSpec::new(1, 2, 1, 2, 4)).unwrap();
        let inst = &g.instance;
        let reference = witness_reference(inst);
        let sol = ffs1(inst, &reference, &Ffs1Options::default()).unwrap();
        assert_eq!(sol.status, Ffs1Status::Optimal);
        assert!(sol.objective >= sol.root_bound - 1e-9);
        assert!(sol.incumbents.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.gap() <= TOL_MIP);
        let out = ffs2(inst, &sol).unwrap();
        let r = residuals(inst, &out.schedule).unwrap();
        assert!(r.dynamics() <= 1e-8, "{r:?}");
    }

    #[test]
    fn ffs2_is_idempotent() {
        let g = generate(&GeneratorSpec::new(2, 3, 2, 3, 9)).unwrap();
        let inst = &g.instance;
        let sol = ffs1(inst, &witness_reference(inst), &Ffs1Options::default()).unwrap();
        let first = ffs2(inst, &sol).unwrap();
        let mut again = sol.clone();
        again.schedule = first.schedule.clone();
        let second = ffs2(inst, &again).unwrap();
        assert_eq!(first.schedule, second.schedule);
    }

    #[test]
    fn tracking_zero_weight_is_cheapest_transport() {
        // With the witness as reference and a tiny weight, the objective
        // cannot exceed the witness's own transport cost.
        let g = generate(&GeneratorSpec::new(1, 2, 1, 3, 2)).unwrap();
        let inst = &g.instance;
        let reference = witness_reference(inst);
        let transport: f64 = (0..inst.horizon())
            .map(|t| {
                inst.arcs()
                    .iter()
                    .enumerate()
                    .map(|(e, a)| a.cost * reference.flow[t][e])
                    .sum::<f64>()
            })
            .sum();
        let opts = Ffs1Options {
            alpha: 1e-9,
            ..Ffs1Options::default()
        };
        let sol = ffs1(inst, &reference, &opts).unwrap();
        let rq: f64 = (0..inst.horizon()).map(|t| inst.demand(inst.plants().start, t).1).sum();
        assert!(sol.objective <= transport + rq + 1e-6);
    }

    #[test]
    fn conflicts_share_an_endpoint() {
        // Arc 0 is source 0 → tank 1.
        assert_eq!(conflicts(&small(1), 0), vec![1, 2, 3, 4]);
    }

    /// Minimum over every admissible pipeline pattern, each solved as an
    /// LP by the interior-point route.
    fn enumerate_optimum(inst: &Instance, prob: &Ffs1Problem) -> f64 {
        let (h, m) = (inst.horizon(), inst.arcs().len());
        let per_step: Vec<u32> = (0..1u32 << m)
            .filter(|&mask| {
                let mut busy = vec![0; inst.num_nodes()];
                for (e, a) in inst.arcs().iter().enumerate() {
                    if mask >> e & 1 == 1 {
                        busy[a.from] += 1;
                        busy[a.to] += 1;
                    }
                }
                busy.iter().all(|&k| k <= 1)
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; h];
        loop {
            let pattern: Vec<bool> = idx
                .iter()
                .flat_map(|&k| {
                    let mask = per_step[k];
                    (0..m).map(move |e| mask >> e & 1 == 1)
                })
                .collect();
            let c = conic::solve(&prob.with_pattern(&pattern).to_conic(), &conic::SolverConfig::default()).unwrap();
            if c.status == conic::Status::Optimal {
                best = best.min(c.primal_objective);
            }
            let mut t = 0;
            while t < h {
                idx[t] += 1;
                if idx[t] < per_step.len() {
                    break;
                }
                idx[t] = 0;
                t += 1;
            }
            if t == h {
                return best;
            }
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        for (inst, reference) in [
            (
                small(2),
                Schedule::simulate(&small(2), &[vec![3.0, 0.0, 0.0, 0.0, 0.0, 4.0], vec![0.0; 6]]).unwrap(),
            ),
            {
                let g = generate(&GeneratorSpec::new(1, 2, 1, 2, 11)).unwrap();
                let r = witness_reference(&g.instance);
                (g.instance, r)
            },
        ] {
            let prob = Ffs1Problem::build(&inst, &reference, DEFAULT_ALPHA).unwrap();
            let sol = solve_ffs1(&inst, &prob, &Ffs1Options::default()).unwrap();
            let brute = enumerate_optimum(&inst, &prob);
            assert!(
                (sol.objective - brute).abs() <= 1e-6 * (1.0 + brute.abs()),
                "{} vs {brute}",
                sol.objective
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn ffs_schedules_satisfy_dynamics(seed in 0u64..1000, h in 1usize..4) {
            let g = generate(&GeneratorSpec::new(1, 2, 1, h, seed)).unwrap();
            let inst = &g.instance;
            let sol = ffs1(inst, &witness_reference(inst), &Ffs1Options::default()).unwrap();
            prop_assert!(sol.objective >= sol.root_bound - 1e-9);
            let out = ffs2(inst, &sol).unwrap();
            let r = residuals(inst, &out.schedule).unwrap();
            prop_assert!(r.dynamics() <= 1e-8, "{:?}", r);
            for row in &out.schedule.used {
                for i in 0..inst.num_nodes() {
                    let k = inst.incoming(i).iter().chain(inst.outgoing(i)).filter(|&&e| row[e]).count();
                    prop_assert!(k <= 1);
                }
            }
        }
    }
}
