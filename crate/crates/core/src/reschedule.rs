//! Rescheduling: repeatedly solve a relaxation on the remaining horizon,
//! recover a feasible schedule, and repair the steps up to the first
//! shortage before moving on.

use crate::error::{PoolingError, Result};
use crate::ffs::{ffs1, ffs2, Ffs1Options, Ffs1Solution, EMPTY_EPS};
use crate::model::{step_storage, Instance, NodeKind, Schedule};
use crate::qcqp::{build_qcqp, DEFAULT_DELTA};
use crate::relax::{lift, solve_relaxation, PairSet, RelaxKind};
use conic::SolverConfig;
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverOptions {
    pub relax: RelaxKind,
    pub delta: f64,
    pub ffs: Ffs1Options,
    pub conic: SolverConfig,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            relax: RelaxKind::Lp,
            delta: DEFAULT_DELTA,
            ffs: Ffs1Options::default(),
            conic: SolverConfig::default(),
        }
    }
}

/// A relaxation solve followed by FFS1 and FFS2.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub relax_objective: f64,
    pub relax_iterations: usize,
    pub ffs1: Ffs1Solution,
    pub schedule: Schedule,
    pub diagnostics: Vec<String>,
}

pub fn recover(inst: &Instance, opts: &RecoverOptions) -> Result<Recovered> {
    let q = build_qcqp(inst, opts.delta)?;
    let m = lift(&q, PairSet::Support)?;
    let relax = solve_relaxation(&m, opts.relax, &opts.conic)?;
    let reference = Schedule::from_vector(inst, &relax.x)?;
    let sol = ffs1(inst, &reference, &opts.ffs)?;
    let out = ffs2(inst, &sol)?;
    Ok(Recovered {
        relax_objective: relax.objective,
        relax_iterations: relax.solution.iterations,
        ffs1: sol,
        schedule: out.schedule,
        diagnostics: out.diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairCase {
    /// Every plant meets its quality requirement; flows are trimmed.
    Excess,
    /// Some plant falls short; tanks are re-matched to plants.
    Shortage,
}

/// Selects the repair for step `t` of a recovered schedule.
pub fn case_select(inst: &Instance, s: &Schedule, t: usize) -> RepairCase {
    let short = inst.plants().any(|i| s.quality[t][i] < inst.demand(i, t).1);
    if short {
        RepairCase::Shortage
    } else {
        RepairCase::Excess
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepairFailure {
    /// No tank assignment covers every plant's requirement.
    NoMatching { step: usize },
    /// A feeding node has zero quality, so the pinned flow is undefined.
    EmptyFeeder { step: usize, node: usize },
}

/// Greedy index-monotone assignment of tanks to plants.
///
/// `plants` and `tanks` are already in priority order; `fits(i, j)` says
/// whether tank `tanks[j]` can serve plant `plants[i]`. Each plant takes the
/// first fitting tank after the one taken by the previous plant. Returns
/// tank positions, one per plant.
pub fn monotone_matching(n_plants: usize, n_tanks: usize, fits: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    let mut next = 0;
    let mut out = Vec::with_capacity(n_plants);
    for i in 0..n_plants {
        let j = (next..n_tanks).find(|&j| fits(i, j))?;
        out.push(j);
        next = j + 1;
    }
    Some(out)
}

/// Flow a node can still send at step `t` from stock `p`.
fn available(inst: &Instance, i: usize, t: usize, p: f64) -> f64 {
    let node = &inst.nodes()[i];
    match node.kind {
        NodeKind::Source => p + inst.supply(i, t).0,
        NodeKind::Tank => p - node.min_storage,
        NodeKind::Plant => 0.0,
    }
    .max(0.0)
}

fn headroom(inst: &Instance, j: usize, p: f64) -> f64 {
    let node = &inst.nodes()[j];
    match node.kind {
        NodeKind::Tank => (node.max_storage - p).max(0.0),
        _ => f64::INFINITY,
    }
}

/// Flow that brings plant `i` to its required quality from a single
/// feeder of quality `q`.
fn pinned_flow(inst: &Instance, i: usize, t: usize, feeder: usize, q: f64) -> std::result::Result<f64, RepairFailure> {
    let (rc, rq) = inst.demand(i, t);
    if rq == 0.0 {
        return Ok(0.0);
    }
    if q <= EMPTY_EPS {
        return Err(RepairFailure::EmptyFeeder { step: t, node: feeder });
    }
    Ok(rc * rq / q)
}

/// Repaired flows for one step where every plant has a surplus. Active
/// pipelines stay active; plant feeds are cut to the required quality and
/// refills from sources are topped up to what fits.
pub fn repair_excess(
    inst: &Instance,
    plus: &Schedule,
    t: usize,
    p: &[f64],
    q: &[f64],
) -> std::result::Result<Vec<f64>, RepairFailure> {
    let arcs = inst.arcs();
    let mut flow = vec![0.0; arcs.len()];
    for (e, arc) in arcs.iter().enumerate() {
        if !plus.used[t][e] {
            continue;
        }
        let cap = arc
            .upper
            .min(available(inst, arc.from, t, p[arc.from]))
            .min(headroom(inst, arc.to, p[arc.to]));
        let want = match (inst.kind(arc.from), inst.kind(arc.to)) {
            (_, NodeKind::Plant) => pinned_flow(inst, arc.to, t, arc.from, q[arc.from])?,
            (NodeKind::Source, NodeKind::Tank) => f64::INFINITY,
            _ => plus.flow[t][e],
        };
        flow[e] = want.min(cap).max(0.0);
    }
    Ok(flow)
}

/// Repaired flows for one step with a shortage: plants are matched to the
/// strongest tanks, and the strongest sources refill the weakest tanks
/// left over.
pub fn repair_shortage(
    inst: &Instance,
    t: usize,
    p: &[f64],
    q: &[f64],
) -> std::result::Result<Vec<f64>, RepairFailure> {
    let arcs = inst.arcs();
    let mut flow = vec![0.0; arcs.len()];

    let tank_supply = |j: usize, cap: f64| (p[j] - inst.nodes()[j].min_storage).min(cap).max(0.0) * q[j];
    let best_cap = |i: usize, to: NodeKind| {
        inst.outgoing(i)
            .iter()
            .filter(|&&e| inst.kind(arcs[e].to) == to)
            .map(|&e| arcs[e].upper)
            .fold(0.0f64, f64::max)
    };
    let desc = |a: (usize, f64), b: (usize, f64)| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));

    let mut plants: Vec<(usize, f64)> = inst
        .plants()
        .map(|i| {
            let (rc, rq) = inst.demand(i, t);
            (i, rc * rq)
        })
        .collect();
    plants.sort_by(|&a, &b| desc(a, b));
    let mut tanks: Vec<(usize, f64)> = inst
        .tanks()
        .map(|j| (j, tank_supply(j, best_cap(j, NodeKind::Plant))))
        .collect();
    tanks.sort_by(|&a, &b| desc(a, b));

    let fits = |pi: usize, tj: usize| {
        let (i, d) = plants[pi];
        let j = tanks[tj].0;
        inst.find_arc(j, i).is_some_and(|e| tank_supply(j, arcs[e].upper) >= d)
    };
    let matching = monotone_matching(plants.len(), tanks.len(), fits).ok_or(RepairFailure::NoMatching { step: t })?;
    let mut matched = vec![false; inst.num_nodes()];
    for (pi, &tj) in matching.iter().enumerate() {
        let (i, j) = (plants[pi].0, tanks[tj].0);
        let e = inst.find_arc(j, i).expect("matched arc");
        flow[e] = pinned_flow(inst, i, t, j, q[j])?;
        matched[j] = true;
    }

    let mut sources: Vec<(usize, f64)> = inst
        .sources()
        .map(|k| (k, available(inst, k, t, p[k]).min(best_cap(k, NodeKind::Tank)) * q[k]))
        .collect();
    sources.sort_by(|&a, &b| desc(a, b));
    let mut free: Vec<(usize, f64)> = inst
        .tanks()
        .filter(|&j| !matched[j])
        .map(|j| (j, tank_supply(j, best_cap(j, NodeKind::Plant))))
        .collect();
    free.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let limit = inst
        .num_sources()
        .min(inst.num_tanks().saturating_sub(inst.num_plants()));
    let mut paired = 0;
    for &(k, _) in &sources {
        if paired == limit {
            break;
        }
        let pick = free.iter().position(|&(j, _)| inst.find_arc(k, j).is_some());
        let Some(pos) = pick else { continue };
        let (j, _) = free.remove(pos);
        let e = inst.find_arc(k, j).expect("source arc");
        flow[e] = available(inst, k, t, p[k])
            .min(arcs[e].upper)
            .min(headroom(inst, j, p[j]));
        paired += 1;
    }
    Ok(flow)
}

/// Repairs steps `0..=last` of a recovered schedule, choosing the case per
/// step from the recovered plant qualities. States follow the exact
/// dynamics of the repaired flows.
pub fn repair_window(
    inst: &Instance,
    plus: &Schedule,
    last: usize,
) -> std::result::Result<(Schedule, Vec<RepairCase>), RepairFailure> {
    let mut s = plus.clone();
    let mut cases = Vec::with_capacity(last + 1);
    for t in 0..=last {
        let (p, q) = (s.quantity[t].clone(), s.quality[t].clone());
        let case = case_select(inst, plus, t);
        let flow = match case {
            RepairCase::Excess => repair_excess(inst, plus, t, &p, &q)?,
            RepairCase::Shortage => repair_shortage(inst, t, &p, &q)?,
        };
        let (pn, qn) = step_storage(inst, t, &flow, &p, &q);
        for i in inst.sources().chain(inst.tanks()) {
            s.quantity[t + 1][i] = pn[i];
            s.quality[t + 1][i] = qn[i];
        }
        s.used[t] = match case {
            RepairCase::Excess => plus.used[t].clone(),
            RepairCase::Shortage => flow.iter().map(|&a| a > 0.0).collect(),
        };
        s.flow[t] = flow;
        s.set_plant_quality(inst, t);
        cases.push(case);
    }
    Ok((s, cases))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// The last recovered schedule had no shortage.
    Satisfied,
    /// Every step was accepted through repairs.
    HorizonReached,
    /// No tank matching existed; the unrepaired schedule was kept from
    /// `step` on.
    Unrepairable { step: usize },
    /// FFS1 had no solution on the remaining horizon; storage is held from
    /// `step` on.
    Stalled { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// First step of the horizon solved in this iteration.
    pub start: usize,
    /// First step with a shortage, if any.
    pub first_shortage: Option<usize>,
    pub cases: Vec<RepairCase>,
    pub relax_objective: f64,
    /// Set when the window was left unrepaired because a feeder was empty.
    pub aborted: bool,
}

/// Loop state: the accepted schedule up to `start` and the iteration log.
#[derive(Debug, Clone)]
pub struct RescheduleState {
    pub start: usize,
    pub best: Schedule,
    pub history: Vec<IterationRecord>,
}

impl RescheduleState {
    pub fn new(inst: &Instance) -> Self {
        Self {
            start: 0,
            best: Schedule::empty(inst),
            history: Vec::new(),
        }
    }

    /// Copies steps `0..=last` of a schedule on the tail starting at
    /// `self.start` into the accepted schedule.
    fn splice(&mut self, inst: &Instance, part: &Schedule, last: usize) {
        let o = self.start;
        for t in 0..=last {
            self.best.flow[o + t].clone_from(&part.flow[t]);
            self.best.used[o + t].clone_from(&part.used[t]);
            self.best.shortage[o + t].clone_from(&part.shortage[t]);
            for i in 0..inst.num_nodes() {
                if inst.kind(i) == NodeKind::Plant {
                    self.best.quality[o + t][i] = part.quality[t][i];
                } else {
                    self.best.quantity[o + t + 1][i] = part.quantity[t + 1][i];
                    self.best.quality[o + t + 1][i] = part.quality[t + 1][i];
                }
            }
        }
    }

    /// Zero flows from `self.start` to the horizon.
    fn hold(&mut self, inst: &Instance) {
        for t in self.start..inst.horizon() {
            self.best.flow[t].iter_mut().for_each(|a| *a = 0.0);
            self.best.used[t].iter_mut().for_each(|u| *u = false);
            let (pn, qn) = step_storage(
                inst,
                t,
                &self.best.flow[t],
                &self.best.quantity[t],
                &self.best.quality[t],
            );
            for i in inst.sources().chain(inst.tanks()) {
                self.best.quantity[t + 1][i] = pn[i];
                self.best.quality[t + 1][i] = qn[i];
            }
            self.best.set_plant_quality(inst, t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RescheduleOutcome {
    pub schedule: Schedule,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

impl RescheduleOutcome {
    pub fn unrepairable(&self) -> bool {
        matches!(self.termination, Termination::Unrepairable { .. })
    }
}

/// Runs the rescheduling loop. `initial` is a recovery already computed on
/// the full horizon; it is reused for the first iteration.
pub fn reschedule(inst: &Instance, opts: &RecoverOptions, initial: Option<Recovered>) -> Result<RescheduleOutcome> {
    let h = inst.horizon();
    let mut state = RescheduleState::new(inst);
    let mut initial = initial;
    let termination = loop {
        if state.start >= h {
            break Termination::HorizonReached;
        }
        let tail = if state.start == 0 {
            inst.clone()
        } else {
            inst.tail(
                state.start,
                &state.best.quantity[state.start],
                &state.best.quality[state.start],
            )?
        };
        let rec = match initial.take() {
            Some(r) if state.start == 0 => r,
            _ => match recover(&tail, opts) {
                Ok(r) => r,
                Err(PoolingError::Infeasible(reason)) => {
                    state.hold(inst);
                    break Termination::Stalled {
                        step: state.start,
                        reason,
                    };
                }
                Err(e) => return Err(e),
            },
        };
        let plus = rec.schedule;
        let first = (0..tail.horizon()).find(|&t| plus.shortage[t].iter().any(|&v| v > 0.0));
        let mut record = IterationRecord {
            start: state.start,
            first_shortage: first.map(|t| t + state.start),
            cases: Vec::new(),
            relax_objective: rec.relax_objective,
            aborted: false,
        };
        let Some(last) = first else {
            state.splice(inst, &plus, tail.horizon() - 1);
            state.history.push(record);
            break Termination::Satisfied;
        };
        match repair_window(&tail, &plus, last) {
            Ok((fixed, cases)) => {
                record.cases = cases;
                state.splice(inst, &fixed, last);
            }
            Err(RepairFailure::NoMatching { step }) => {
                let at = state.start + step;
                state.splice(inst, &plus, tail.horizon() - 1);
                state.history.push(record);
                break Termination::Unrepairable { step: at };
            }
            Err(RepairFailure::EmptyFeeder { .. }) => {
                record.aborted = true;
                state.splice(inst, &plus, last);
            }
        }
        state.history.push(record);
        state.start += last + 1;
    };
    Ok(RescheduleOutcome {
        schedule: state.best,
        termination,
        history: state.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, Family, GeneratorSpec};
    use crate::model::fixtures::*;
    use crate::model::{residuals, sucs_ratio, InstanceData};
    use proptest::prelude::*;

    /// Source 0, tanks 1 and 2, plants 3 and 4, every tank→plant arc.
    fn two_by_two(p1: f64, p2: f64, q1: f64, q2: f64, rq: [f64; 2]) -> Instance {
        let mut t1 = tank(p1, q1, 50.0);
        t1.min_storage = 1.0;
        Instance::new(InstanceData {
            nodes: vec![source(0.0, 5.0), t1, tank(p2, q2, 50.0), plant(), plant()],
            arcs: vec![
                arc(0, 1, 10.0, 1.0),
                arc(0, 2, 10.0, 1.0),
                arc(1, 3, 10.0, 1.0),
                arc(1, 4, 10.0, 1.0),
                arc(2, 3, 10.0, 1.0),
                arc(2, 4, 10.0, 1.0),
            ],
            horizon: 1,
            supply_quantity: vec![vec![4.0]],
            supply_quality: vec![vec![5.0]],
            demand_quantity: vec![vec![2.0], vec![2.0]],
            demand_quality: vec![vec![rq[0]], vec![rq[1]]],
            shortage_cost: vec![10.0, 10.0],
        })
        .unwrap()
    }

    fn with_quality(inst: &Instance, t: usize, q: &[f64]) -> Schedule {
        let mut s = Schedule::empty(inst);
        for (k, i) in inst.plants().enumerate() {
            s.quality[t][i] = q[k];
        }
        s
    }

    #[test]
    fn case_boundary_is_excess() {
        let inst = two_by_two(10.0, 10.0, 3.0, 3.0, [2.0, 3.0]);
        assert_eq!(
            case_select(&inst, &with_quality(&inst, 0, &[2.0, 3.0]), 0),
            RepairCase::Excess
        );
        assert_eq!(
            case_select(&inst, &with_quality(&inst, 0, &[2.0, 2.9]), 0),
            RepairCase::Shortage
        );
        assert_eq!(
            case_select(&inst, &with_quality(&inst, 0, &[5.0, 2.9]), 0),
            RepairCase::Shortage
        );
    }

    #[test]
    fn pinned_feed_arithmetic() {
        // RC = 2, RQ = 4, feeder quality 2 → flow 4, the same as trimming
        // 10 by RC·(q̃ − RQ)/q = 2·(10 − 4)/2 when q̃ = 10·2/2.
        let inst = two_by_two(10.0, 10.0, 2.0, 2.0, [4.0, 0.0]);
        assert_eq!(pinned_flow(&inst, 3, 0, 1, 2.0).unwrap(), 4.0);
        assert_eq!(10.0 - 2.0 * (10.0 - 4.0) / 2.0, 4.0);
        assert_eq!(pinned_flow(&inst, 4, 0, 1, 0.0).unwrap(), 0.0);
        assert!(matches!(
            pinned_flow(&inst, 3, 0, 1, 0.0),
            Err(RepairFailure::EmptyFeeder { node: 1, .. })
        ));
    }

    #[test]
    fn excess_refill_is_capped_by_stock() {
        // Source stock 0 with supply 3 this step, arc cap 5, tank headroom
        // 10: the refill ships 3 and the source empties with quality 0.
        let inst = Instance::new(InstanceData {
            nodes: vec![source(0.0, 5.0), tank(40.0, 2.0, 50.0), plant()],
            arcs: vec![arc(0, 1, 5.0, 1.0), arc(1, 2, 10.0, 1.0)],
            horizon: 1,
            supply_quantity: vec![vec![3.0]],
            supply_quality: vec![vec![5.0]],
            demand_quantity: vec![vec![1.0]],
            demand_quality: vec![vec![1.0]],
            shortage_cost: vec![1.0],
        })
        .unwrap();
        let mut plus = Schedule::empty(&inst);
        plus.used[0] = vec![true, false];
        plus.flow[0] = vec![1.0, 0.0];
        let s = &plus;
        let flow = repair_excess(&inst, s, 0, &s.quantity[0], &s.quality[0]).unwrap();
        assert_eq!(flow, vec![3.0, 0.0]);
        let (p, q) = step_storage(&inst, 0, &flow, &s.quantity[0], &s.quality[0]);
        assert_eq!((p[0], q[0]), (0.0, 0.0));
        assert!((q[1] - (40.0 * 2.0 + 3.0 * 5.0) / 43.0).abs() < 1e-15);
    }

    #[test]
    fn single_tank_match_meets_requirement() {
        let inst = Instance::new(InstanceData {
            nodes: vec![source(0.0, 5.0), tank(10.0, 3.0, 50.0), plant()],
            arcs: vec![arc(0, 1, 5.0, 1.0), arc(1, 2, 10.0, 1.0)],
            horizon: 1,
            supply_quantity: vec![vec![0.0]],
            supply_quality: vec![vec![5.0]],
            demand_quantity: vec![vec![2.0]],
            demand_quality: vec![vec![2.0]],
            shortage_cost: vec![1.0],
        })
        .unwrap();
        let plus = Schedule::simulate(&inst, &[vec![0.0, 0.5]]).unwrap();
        assert_eq!(case_select(&inst, &plus, 0), RepairCase::Shortage);
        let (s, cases) = repair_window(&inst, &plus, 0).unwrap();
        assert_eq!(cases, vec![RepairCase::Shortage]);
        assert!((s.flow[0][1] - 4.0 / 3.0).abs() < 1e-15);
        assert!((s.quality[0][2] - 2.0).abs() < 1e-12);
        assert_eq!(s.shortage[0], vec![0.0]);
    }

    #[test]
    fn weak_tanks_are_unrepairable() {
        // Each tank can supply at most 1·1 quality mass against D = 4.
        let inst = two_by_two(2.0, 1.0, 1.0, 1.0, [2.0, 2.0]);
        let plus = Schedule::simulate(&inst, &[vec![0.0; 6]]).unwrap();
        assert_eq!(
            repair_window(&inst, &plus, 0).unwrap_err(),
            RepairFailure::NoMatching { step: 0 }
        );
    }

    #[test]
    fn shortage_repair_matches_and_refills() {
        // D = (4, 6) → plant 4 first. S: tank 1 = min(10 − 1, 10)·3 = 27,
        // tank 2 = min(20, 10)·2 = 20. Plant 4 takes tank 1, plant 3 takes
        // tank 2; no tank is left to refill.
        let inst = two_by_two(10.0, 20.0, 3.0, 2.0, [2.0, 3.0]);
        let plus = Schedule::simulate(&inst, &[vec![0.0; 6]]).unwrap();
        let (s, _) = repair_window(&inst, &plus, 0).unwrap();
        assert!((s.flow[0][3] - 2.0).abs() < 1e-15);
        assert!((s.flow[0][4] - 2.0).abs() < 1e-15);
        assert_eq!(s.flow[0][0] + s.flow[0][1], 0.0);
        assert_eq!(s.shortage[0], vec![0.0, 0.0]);
        let r = residuals(&inst, &s).unwrap();
        // Only the source terminal condition can fail (4 units unshipped).
        assert!(r.dynamics() <= 4.0 + 1e-12);
    }

    /// Every index-monotone assignment that fits, in lexicographic order.
    fn all_matchings(n_p: usize, n_t: usize, fits: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
        fn rec(
            i: usize,
            from: usize,
            n_p: usize,
            n_t: usize,
            fits: &dyn Fn(usize, usize) -> bool,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if i == n_p {
                out.push(cur.clone());
                return;
            }
            for j in from..n_t {
                if fits(i, j) {
                    cur.push(j);
                    rec(i + 1, j + 1, n_p, n_t, fits, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(0, 0, n_p, n_t, fits, &mut Vec::new(), &mut out);
        out
    }

    proptest! {
        #[test]
        fn greedy_matching_is_first_feasible(
            n_p in 0usize..6,
            n_t in 0usize..8,
            bits in proptest::collection::vec(any::<bool>(), 48),
        ) {
            let fits = |i: usize, j: usize| bits[i * 8 + j];
            let all = all_matchings(n_p, n_t, &fits);
            let greedy = monotone_matching(n_p, n_t, fits);
            prop_assert_eq!(greedy, all.first().cloned());
        }
    }

    #[test]
    fn generated_shortage_matching_agrees_with_search() {
        for seed in 0..8 {
            let g = generate(&GeneratorSpec::new(2, 6, 4, 1, seed)).unwrap();
            let inst = &g.instance;
            let s = Schedule::empty(inst);
            let (p, q) = (&s.quantity[0], &s.quality[0]);
            let arcs = inst.arcs();
            let mut plants: Vec<usize> = inst.plants().collect();
            let d = |i: usize| {
                let (rc, rq) = inst.demand(i, 0);
                rc * rq
            };
            plants.sort_by(|&a, &b| d(b).total_cmp(&d(a)).then(a.cmp(&b)));
            let supply = |j: usize, cap: f64| (p[j] - inst.nodes()[j].min_storage).min(cap).max(0.0) * q[j];
            let cap = |j: usize| {
                inst.plants()
                    .filter_map(|i| inst.find_arc(j, i))
                    .map(|e| arcs[e].upper)
                    .fold(0.0, f64::max)
            };
            let mut tanks: Vec<usize> = inst.tanks().collect();
            tanks.sort_by(|&a, &b| supply(b, cap(b)).total_cmp(&supply(a, cap(a))).then(a.cmp(&b)));
            let fits = |pi: usize, tj: usize| {
                let (i, j) = (plants[pi], tanks[tj]);
                inst.find_arc(j, i).is_some_and(|e| supply(j, arcs[e].upper) >= d(i))
            };
            let all = all_matchings(plants.len(), tanks.len(), &fits);
            match repair_shortage(inst, 0, p, q) {
                Ok(flow) => {
                    let first = all.first().expect("repair found a matching the search missed");
                    for (pi, &tj) in first.iter().enumerate() {
                        let e = inst.find_arc(tanks[tj], plants[pi]).unwrap();
                        assert!(flow[e] > 0.0 || d(plants[pi]) == 0.0);
                    }
                }
                Err(RepairFailure::NoMatching { .. }) => assert!(all.is_empty()),
                Err(e) => panic!("{e:?}"),
            }
        }
    }

    #[test]
    fn slack_instance_is_satisfied() {
        let g = generate(&GeneratorSpec::new(1, 2, 1, 3, 5).with_family(Family::Slack)).unwrap();
        let out = reschedule(&g.instance, &RecoverOptions::default(), None).unwrap();
        assert!(!out.history.is_empty());
        let r = residuals(&g.instance, &out.schedule).unwrap();
        assert!(r.dynamics() <= 1e-6, "{r:?}");
        assert_eq!(
            sucs_ratio(&g.instance, &out.schedule).unwrap(),
            1.0,
            "{:?}",
            out.termination
        );
    }

    #[test]
    fn accepted_steps_strictly_increase() {
        for seed in 0..4 {
            let g = generate(&GeneratorSpec::new(1, 2, 1, 4, seed).with_family(Family::Starved)).unwrap();
            let out = reschedule(&g.instance, &RecoverOptions::default(), None).unwrap();
            assert!(out.history.len() <= g.instance.horizon());
            assert!(out.history.windows(2).all(|w| w[0].start < w[1].start));
        }
    }
}
