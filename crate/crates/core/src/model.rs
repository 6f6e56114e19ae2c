//! Pooling instances, schedules and exact residual evaluation of the
//! time-discretized P-formulation.
//!
//! Nodes are numbered sources first, then intermediate tanks, then plants.
//! Time steps are `0..horizon`; states (quantity, quality) are indexed
//! `0..=horizon`, where state `t` holds the values *before* step `t` and
//! state `0` is the initial condition from the instance.

use crate::error::{PoolingError, Result};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Source,
    Tank,
    Plant,
}

impl NodeKind {
    fn rank(self) -> u8 {
        match self {
            NodeKind::Source => 0,
            NodeKind::Tank => 1,
            NodeKind::Plant => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub initial_quantity: f64,
    pub initial_quality: f64,
    /// Storage bounds; only meaningful for tanks.
    pub min_storage: f64,
    pub max_storage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub lower: f64,
    pub upper: f64,
    /// Transport cost per unit of flow.
    pub cost: f64,
}

/// Raw instance contents. Time series are indexed `[k][t]` where `k`
/// counts sources (resp. plants) from zero in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceData {
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc>,
    pub horizon: usize,
    pub supply_quantity: Vec<Vec<f64>>,
    pub supply_quality: Vec<Vec<f64>>,
    pub demand_quantity: Vec<Vec<f64>>,
    pub demand_quality: Vec<Vec<f64>>,
    /// Penalty per unit of quality shortage, per plant.
    pub shortage_cost: Vec<f64>,
}

/// A validated pooling instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    data: InstanceData,
    n_sources: usize,
    n_tanks: usize,
    n_plants: usize,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

fn invalid(msg: impl Into<String>) -> PoolingError {
    PoolingError::InvalidInstance(msg.into())
}

fn check_series(name: &str, s: &[Vec<f64>], rows: usize, horizon: usize) -> Result<()> {
    if s.len() != rows || s.iter().any(|r| r.len() != horizon) {
        return Err(invalid(format!("{name} must be {rows} series of length {horizon}")));
    }
    if s.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{name} must be finite and nonnegative")));
    }
    Ok(())
}

impl Instance {
    pub fn new(data: InstanceData) -> Result<Self> {
        if data.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        for w in data.nodes.windows(2) {
            if w[0].kind.rank() > w[1].kind.rank() {
                return Err(invalid("nodes must be ordered sources, tanks, plants"));
            }
        }
        let count = |k| data.nodes.iter().filter(|n| n.kind == k).count();
        let (n_sources, n_tanks, n_plants) = (count(NodeKind::Source), count(NodeKind::Tank), count(NodeKind::Plant));
        let n = data.nodes.len();

        for (i, node) in data.nodes.iter().enumerate() {
            let vals = [
                node.initial_quantity,
                node.initial_quality,
                node.min_storage,
                node.max_storage,
            ];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(format!("node {} has a negative or non-finite constant", i + 1)));
            }
            if node.kind == NodeKind::Tank {
                if node.min_storage > node.max_storage {
                    return Err(invalid(format!("tank {} has pmin > pmax", i + 1)));
                }
                if node.initial_quantity < node.min_storage || node.initial_quantity > node.max_storage {
                    return Err(invalid(format!("tank {} starts outside its storage bounds", i + 1)));
                }
            }
        }

        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for (e, arc) in data.arcs.iter().enumerate() {
            if arc.from >= n || arc.to >= n {
                return Err(invalid(format!("arc {} references a missing node", e + 1)));
            }
            if arc.from == arc.to || !seen.insert((arc.from, arc.to)) {
                return Err(invalid(format!("arc {} is a self-loop or duplicate", e + 1)));
            }
            let (kf, kt) = (data.nodes[arc.from].kind, data.nodes[arc.to].kind);
            let ok = kf.rank() < kt.rank() || (kf == NodeKind::Tank && kt == NodeKind::Tank);
            if !ok {
                return Err(invalid(format!(
                    "arc {} runs against the source→tank→plant order",
                    e + 1
                )));
            }
            let vals = [arc.lower, arc.upper, arc.cost];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || arc.lower > arc.upper {
                return Err(invalid(format!("arc {} needs finite 0 ≤ L ≤ U and CA ≥ 0", e + 1)));
            }
            outgoing[arc.from].push(e);
            incoming[arc.to].push(e);
        }

        let h = data.horizon;
        check_series("supply quantity", &data.supply_quantity, n_sources, h)?;
        check_series("supply quality", &data.supply_quality, n_sources, h)?;
        check_series("demand quantity", &data.demand_quantity, n_plants, h)?;
        check_series("demand quality", &data.demand_quality, n_plants, h)?;
        if data.demand_quantity.iter().flatten().any(|&v| v <= 0.0) {
            return Err(invalid("required quantity RC must be positive"));
        }
        if data.shortage_cost.len() != n_plants || data.shortage_cost.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("one finite nonnegative shortage cost per plant is required"));
        }

        Ok(Self {
            data,
            n_sources,
            n_tanks,
            n_plants,
            incoming,
            outgoing,
        })
    }

    pub fn data(&self) -> &InstanceData {
        &self.data
    }

    pub fn into_data(self) -> InstanceData {
        self.data
    }

    pub fn horizon(&self) -> usize {
        self.data.horizon
    }

    pub fn nodes(&self) -> &[Node] {
        &self.data.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.data.arcs
    }

    pub fn num_nodes(&self) -> usize {
        self.data.nodes.len()
    }

    pub fn num_sources(&self) -> usize {
        self.n_sources
    }

    pub fn num_tanks(&self) -> usize {
        self.n_tanks
    }

    pub fn num_plants(&self) -> usize {
        self.n_plants
    }

    pub fn sources(&self) -> Range<usize> {
        0..self.n_sources
    }

    pub fn tanks(&self) -> Range<usize> {
        self.n_sources..self.n_sources + self.n_tanks
    }

    pub fn plants(&self) -> Range<usize> {
        self.n_sources + self.n_tanks..self.num_nodes()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.data.nodes[node].kind
    }

    /// Position of a plant node among the plants.
    pub fn plant_index(&self, node: usize) -> usize {
        node - self.n_sources - self.n_tanks
    }

    /// Arc ids entering `node`.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    /// Arc ids leaving `node`.
    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    pub fn find_arc(&self, from: usize, to: usize) -> Option<usize> {
        self.outgoing[from]
            .iter()
            .copied()
            .find(|&e| self.data.arcs[e].to == to)
    }

    pub fn supply(&self, source: usize, t: usize) -> (f64, f64) {
        (
            self.data.supply_quantity[source][t],
            self.data.supply_quality[source][t],
        )
    }

    /// `(RC, RQ)` for a plant node at step `t`.
    pub fn demand(&self, plant: usize, t: usize) -> (f64, f64) {
        let k = self.plant_index(plant);
        (self.data.demand_quantity[k][t], self.data.demand_quality[k][t])
    }

    pub fn shortage_cost(&self, plant: usize) -> f64 {
        self.data.shortage_cost[self.plant_index(plant)]
    }

    pub fn total_required_quality(&self) -> f64 {
        self.data.demand_quality.iter().flatten().sum()
    }

    /// The same network restricted to steps `start..horizon`, with the given
    /// node state as the new initial condition.
    pub fn tail(&self, start: usize, quantity: &[f64], quality: &[f64]) -> Result<Instance> {
        if start >= self.horizon() {
            return Err(PoolingError::InvalidParameter(format!(
                "tail start {start} is past the horizon {}",
                self.horizon()
            )));
        }
        let mut data = self.data.clone();
        data.horizon -= start;
        for (i, node) in data.nodes.iter_mut().enumerate() {
            if node.kind == NodeKind::Plant {
                continue;
            }
            let mut p = quantity[i].max(0.0);
            if node.kind == NodeKind::Tank {
                p = p.clamp(node.min_storage, node.max_storage);
            }
            node.initial_quantity = p;
            node.initial_quality = quality[i].max(0.0);
        }
        let cut = |s: &mut Vec<Vec<f64>>| s.iter_mut().for_each(|r| *r = r[start..].to_vec());
        cut(&mut data.supply_quantity);
        cut(&mut data.supply_quality);
        cut(&mut data.demand_quantity);
        cut(&mut data.demand_quality);
        Instance::new(data)
    }
}

/// Position of every decision variable of the P-formulation in the flat
/// vector `x = (a, p, q, v)`.
///
/// * `a` is ordered by step, then arc.
/// * `p` holds states `1..horizon` for sources and tanks, then the final
///   state for tanks only (the final source state is fixed to zero).
/// * `q` holds plant qualities at step 0, then states `1..horizon` for all
///   nodes, then the final state for tanks.
/// * `v` is ordered by step, then plant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    horizon: usize,
    n_arcs: usize,
    n_sources: usize,
    n_tanks: usize,
    n_plants: usize,
    pub p_offset: usize,
    pub q_offset: usize,
    pub v_offset: usize,
    pub len: usize,
}

impl VariableLayout {
    pub fn new(inst: &Instance) -> Self {
        let h = inst.horizon();
        let (s, i, p) = (inst.num_sources(), inst.num_tanks(), inst.num_plants());
        let n_arcs = inst.arcs().len();
        let n_a = h * n_arcs;
        let n_p = (h - 1) * (s + i) + i;
        let n_q = p + (h - 1) * (s + i + p) + i;
        let n_v = h * p;
        Self {
            horizon: h,
            n_arcs,
            n_sources: s,
            n_tanks: i,
            n_plants: p,
            p_offset: n_a,
            q_offset: n_a + n_p,
            v_offset: n_a + n_p + n_q,
            len: n_a + n_p + n_q + n_v,
        }
    }

    pub fn num_flow(&self) -> usize {
        self.p_offset
    }

    pub fn num_quantity(&self) -> usize {
        self.q_offset - self.p_offset
    }

    pub fn num_quality(&self) -> usize {
        self.v_offset - self.q_offset
    }

    pub fn num_shortage(&self) -> usize {
        self.len - self.v_offset
    }

    pub fn flow(&self, t: usize, arc: usize) -> usize {
        t * self.n_arcs + arc
    }

    fn n_storage(&self) -> usize {
        self.n_sources + self.n_tanks
    }

    fn n_nodes(&self) -> usize {
        self.n_storage() + self.n_plants
    }

    /// Quantity variable for `node` at state `t`, or `None` when the value
    /// is instance data (state 0), fixed (final source state) or absent
    /// (plants).
    pub fn quantity(&self, t: usize, node: usize) -> Option<usize> {
        if node >= self.n_storage() || t == 0 || t > self.horizon {
            return None;
        }
        if t < self.horizon {
            Some(self.p_offset + (t - 1) * self.n_storage() + node)
        } else if node >= self.n_sources {
            Some(self.p_offset + (self.horizon - 1) * self.n_storage() + node - self.n_sources)
        } else {
            None
        }
    }

    /// Quality variable for `node` at state `t`; `None` for instance data
    /// and for states without a variable.
    pub fn quality(&self, t: usize, node: usize) -> Option<usize> {
        let plant = node >= self.n_storage();
        if t == 0 {
            return plant.then(|| self.q_offset + node - self.n_storage());
        }
        if t < self.horizon {
            Some(self.q_offset + self.n_plants + (t - 1) * self.n_nodes() + node)
        } else if t == self.horizon && node >= self.n_sources && !plant {
            Some(self.q_offset + self.n_plants + (self.horizon - 1) * self.n_nodes() + node - self.n_sources)
        } else {
            None
        }
    }

    pub fn shortage(&self, t: usize, plant_index: usize) -> usize {
        self.v_offset + t * self.n_plants + plant_index
    }
}

/// A complete assignment of the P-formulation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `[t][arc]`, `t < horizon`.
    pub flow: Vec<Vec<f64>>,
    /// Pipeline use, `[t][arc]`.
    pub used: Vec<Vec<bool>>,
    /// `[t][node]`, `t ≤ horizon`; plants carry no quantity and stay 0.
    pub quantity: Vec<Vec<f64>>,
    /// `[t][node]`, `t ≤ horizon`; plant entries at `t = horizon` stay 0.
    pub quality: Vec<Vec<f64>>,
    /// `[t][plant index]`.
    pub shortage: Vec<Vec<f64>>,
}

impl Schedule {
    /// All flows zero, initial state from the instance, later states zero.
    pub fn empty(inst: &Instance) -> Self {
        let (h, n, m, p) = (inst.horizon(), inst.num_nodes(), inst.arcs().len(), inst.num_plants());
        let mut quantity = vec![vec![0.0; n]; h + 1];
        let mut quality = vec![vec![0.0; n]; h + 1];
        for (i, node) in inst.nodes().iter().enumerate() {
            if node.kind != NodeKind::Plant {
                quantity[0][i] = node.initial_quantity;
                quality[0][i] = node.initial_quality;
            }
        }
        Self {
            flow: vec![vec![0.0; m]; h],
            used: vec![vec![false; m]; h],
            quantity,
            quality,
            shortage: vec![vec![0.0; p]; h],
        }
    }

    pub fn check_dims(&self, inst: &Instance) -> Result<()> {
        let (h, n, m, p) = (inst.horizon(), inst.num_nodes(), inst.arcs().len(), inst.num_plants());
        let ok = self.flow.len() == h
            && self.flow.iter().all(|r| r.len() == m)
            && self.used.len() == h
            && self.used.iter().all(|r| r.len() == m)
            && self.quantity.len() == h + 1
            && self.quantity.iter().all(|r| r.len() == n)
            && self.quality.len() == h + 1
            && self.quality.iter().all(|r| r.len() == n)
            && self.shortage.len() == h
            && self.shortage.iter().all(|r| r.len() == p);
        if ok {
            Ok(())
        } else {
            Err(PoolingError::DimensionMismatch(format!(
                "schedule does not match an instance with horizon {h}, {n} nodes, {m} arcs, {p} plants"
            )))
        }
    }

    /// Runs the dynamics forward from the initial state for the given
    /// flows. Pipeline use is set wherever the flow is positive; plant
    /// qualities are the inflow averages and shortages the resulting
    /// deficits. An emptied node gets quality 0.
    pub fn simulate(inst: &Instance, flow: &[Vec<f64>]) -> Result<Self> {
        let mut s = Self::empty(inst);
        if flow.len() != inst.horizon() || flow.iter().any(|r| r.len() != inst.arcs().len()) {
            return Err(PoolingError::DimensionMismatch("flow matrix shape".into()));
        }
        s.flow = flow.to_vec();
        s.used = flow.iter().map(|r| r.iter().map(|&a| a > 0.0).collect()).collect();
        for t in 0..inst.horizon() {
            let (p, q) = step_storage(inst, t, &s.flow[t], &s.quantity[t], &s.quality[t]);
            for i in inst.sources().chain(inst.tanks()) {
                s.quantity[t + 1][i] = p[i];
                s.quality[t + 1][i] = q[i];
            }
            s.set_plant_quality(inst, t);
        }
        Ok(s)
    }

    /// Recomputes plant qualities and shortages at step `t` from the flows
    /// and the storage qualities at state `t`.
    pub fn set_plant_quality(&mut self, inst: &Instance, t: usize) {
        for i in inst.plants() {
            let (rc, rq) = inst.demand(i, t);
            let mix: f64 = inst
                .incoming(i)
                .iter()
                .map(|&e| self.flow[t][e] * self.quality[t][inst.arcs()[e].from])
                .sum();
            let q = mix / rc;
            self.quality[t][i] = q;
            self.shortage[t][inst.plant_index(i)] = shortage_of(rq, q);
        }
    }

    /// Flat `x = (a, p, q, v)` vector in [`VariableLayout`] order.
    pub fn to_vector(&self, inst: &Instance) -> Vec<f64> {
        let lay = VariableLayout::new(inst);
        let mut x = vec![0.0; lay.len];
        for t in 0..inst.horizon() {
            for e in 0..inst.arcs().len() {
                x[lay.flow(t, e)] = self.flow[t][e];
            }
            for i in inst.plants() {
                x[lay.shortage(t, inst.plant_index(i))] = self.shortage[t][inst.plant_index(i)];
            }
        }
        for t in 0..=inst.horizon() {
            for i in 0..inst.num_nodes() {
                if let Some(k) = lay.quantity(t, i) {
                    x[k] = self.quantity[t][i];
                }
                if let Some(k) = lay.quality(t, i) {
                    x[k] = self.quality[t][i];
                }
            }
        }
        x
    }

    /// Inverse of [`Schedule::to_vector`]; fixed entries come from the
    /// instance and pipeline use is inferred from positive flow.
    pub fn from_vector(inst: &Instance, x: &[f64]) -> Result<Self> {
        let lay = VariableLayout::new(inst);
        if x.len() < lay.len {
            return Err(PoolingError::DimensionMismatch(format!(
                "vector has {} entries, layout needs {}",
                x.len(),
                lay.len
            )));
        }
        let mut s = Self::empty(inst);
        for t in 0..inst.horizon() {
            for e in 0..inst.arcs().len() {
                s.flow[t][e] = x[lay.flow(t, e)];
                s.used[t][e] = s.flow[t][e] > 0.0;
            }
            for k in 0..inst.num_plants() {
                s.shortage[t][k] = x[lay.shortage(t, k)];
            }
        }
        for t in 0..=inst.horizon() {
            for i in 0..inst.num_nodes() {
                if let Some(k) = lay.quantity(t, i) {
                    s.quantity[t][i] = x[k];
                }
                if let Some(k) = lay.quality(t, i) {
                    s.quality[t][i] = x[k];
                }
            }
        }
        Ok(s)
    }

    /// `ΣΣ CA·a + ΣΣ CQ·RC·v`.
    pub fn cost(&self, inst: &Instance) -> f64 {
        let mut c = 0.0;
        for t in 0..inst.horizon() {
            for (e, arc) in inst.arcs().iter().enumerate() {
                c += arc.cost * self.flow[t][e];
            }
            for i in inst.plants() {
                let (rc, _) = inst.demand(i, t);
                c += inst.shortage_cost(i) * rc * self.shortage[t][inst.plant_index(i)];
            }
        }
        c
    }
}

/// Shortage values at or below this threshold are treated as zero so that
/// rounding in the mixing arithmetic does not register as a deficit.
pub const SHORTAGE_EPS: f64 = 1e-9;

pub(crate) fn shortage_of(required: f64, quality: f64) -> f64 {
    let d = required - quality;
    if d <= SHORTAGE_EPS * (1.0 + required.abs()) {
        0.0
    } else {
        d
    }
}

/// One step of the source and tank dynamics. Returns the next quantity and
/// quality for every node (plant entries are left at zero).
pub(crate) fn step_storage(inst: &Instance, t: usize, flow: &[f64], p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = inst.num_nodes();
    let mut pn = vec![0.0; n];
    let mut qn = vec![0.0; n];
    for i in inst.sources().chain(inst.tanks()) {
        let out: f64 = inst.outgoing(i).iter().map(|&e| flow[e]).sum();
        let (mut inflow, mut inmix) = (0.0, 0.0);
        if inst.kind(i) == NodeKind::Source {
            let (sa, sq) = inst.supply(i, t);
            inflow += sa;
            inmix += sa * sq;
        } else {
            for &e in inst.incoming(i) {
                inflow += flow[e];
                inmix += flow[e] * q[inst.arcs()[e].from];
            }
        }
        let pnext = p[i] + inflow - out;
        pn[i] = pnext;
        qn[i] = if pnext > 0.0 {
            (p[i] * q[i] + inmix - out * q[i]) / pnext
        } else {
            0.0
        };
    }
    (pn, qn)
}

/// Sucs ratio `(ΣRQ − Σv) / ΣRQ`, clamped to `[0, 1]`.
pub fn sucs_ratio(inst: &Instance, s: &Schedule) -> Result<f64> {
    s.check_dims(inst)?;
    let total = inst.total_required_quality();
    if total <= 0.0 {
        return Err(PoolingError::UndefinedRatio);
    }
    let short: f64 = s.shortage.iter().flatten().sum();
    Ok(((total - short) / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualFamily {
    FlowBounds,
    OnePipeline,
    SourceBalance,
    SourceQuality,
    TankBalance,
    StorageBounds,
    TankQuality,
    PlantQuality,
    Shortage,
}

impl ResidualFamily {
    pub const ALL: [ResidualFamily; 9] = [
        ResidualFamily::FlowBounds,
        ResidualFamily::OnePipeline,
        ResidualFamily::SourceBalance,
        ResidualFamily::SourceQuality,
        ResidualFamily::TankBalance,
        ResidualFamily::StorageBounds,
        ResidualFamily::TankQuality,
        ResidualFamily::PlantQuality,
        ResidualFamily::Shortage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResidualFamily::FlowBounds => "flow bounds",
            ResidualFamily::OnePipeline => "one pipeline",
            ResidualFamily::SourceBalance => "source balance",
            ResidualFamily::SourceQuality => "source quality",
            ResidualFamily::TankBalance => "tank balance",
            ResidualFamily::StorageBounds => "storage bounds",
            ResidualFamily::TankQuality => "tank quality",
            ResidualFamily::PlantQuality => "plant quality",
            ResidualFamily::Shortage => "shortage",
        }
    }
}

/// Largest violation within one constraint family and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyResidual {
    pub family: ResidualFamily,
    pub max: f64,
    /// `(step or state index, node or arc id)` of the largest violation.
    pub at: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub families: Vec<FamilyResidual>,
}

impl ResidualReport {
    pub fn get(&self, family: ResidualFamily) -> f64 {
        self.families.iter().find(|f| f.family == family).map_or(0.0, |f| f.max)
    }

    pub fn max(&self) -> f64 {
        self.families.iter().fold(0.0, |m, f| m.max(f.max))
    }

    /// Largest residual over every family except the shortage definition.
    pub fn dynamics(&self) -> f64 {
        self.families
            .iter()
            .filter(|f| f.family != ResidualFamily::Shortage)
            .fold(0.0, |m, f| m.max(f.max))
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

struct Collector {
    families: Vec<FamilyResidual>,
}

impl Collector {
    fn add(&mut self, family: ResidualFamily, t: usize, id: usize, value: f64) {
        let slot = self.families.iter_mut().find(|f| f.family == family).expect("family");
        if value > slot.max || (value.is_nan() && !slot.max.is_nan()) {
            slot.max = value;
            slot.at = Some((t, id));
        }
    }
}

/// Default feasibility tolerance for [`ResidualReport::is_feasible`].
pub const TOL_FEAS: f64 = 1e-6;

/// Violation of every constraint family of the P-formulation.
pub fn residuals(inst: &Instance, s: &Schedule) -> Result<ResidualReport> {
    use ResidualFamily::*;
    s.check_dims(inst)?;
    let mut c = Collector {
        families: ResidualFamily::ALL
            .iter()
            .map(|&family| FamilyResidual {
                family,
                max: 0.0,
                at: None,
            })
            .collect(),
    };
    let h = inst.horizon();
    let arcs = inst.arcs();

    for t in 0..h {
        let (a, u) = (&s.flow[t], &s.used[t]);
        for (e, arc) in arcs.iter().enumerate() {
            let ue = if u[e] { 1.0 } else { 0.0 };
            let v = (ue * arc.lower - a[e]).max(a[e] - ue * arc.upper).max(-a[e]).max(0.0);
            c.add(FlowBounds, t, e, v);
        }
        for i in 0..inst.num_nodes() {
            let k = inst
                .incoming(i)
                .iter()
                .chain(inst.outgoing(i))
                .filter(|&&e| u[e])
                .count();
            c.add(OnePipeline, t, i, (k as f64 - 1.0).max(0.0));
        }

        let (p, q, pn, qn) = (&s.quantity[t], &s.quality[t], &s.quantity[t + 1], &s.quality[t + 1]);
        for i in inst.sources() {
            let (sa, sq) = inst.supply(i, t);
            let out: f64 = inst.outgoing(i).iter().map(|&e| a[e]).sum();
            c.add(SourceBalance, t, i, (pn[i] - p[i] - sa + out).abs());
            c.add(SourceBalance, t + 1, i, (-pn[i]).max(0.0));
            let mix = pn[i] * qn[i] - p[i] * q[i] - sa * sq + out * q[i];
            c.add(SourceQuality, t, i, mix.abs());
        }
        for i in inst.tanks() {
            let inflow: f64 = inst.incoming(i).iter().map(|&e| a[e]).sum();
            let out: f64 = inst.outgoing(i).iter().map(|&e| a[e]).sum();
            c.add(TankBalance, t, i, (pn[i] - p[i] - inflow + out).abs());
            let inmix: f64 = inst.incoming(i).iter().map(|&e| a[e] * q[arcs[e].from]).sum();
            let mix = pn[i] * qn[i] - p[i] * q[i] - inmix + out * q[i];
            c.add(TankQuality, t, i, mix.abs());
        }
        for i in inst.plants() {
            let (rc, rq) = inst.demand(i, t);
            let inmix: f64 = inst.incoming(i).iter().map(|&e| a[e] * q[arcs[e].from]).sum();
            c.add(PlantQuality, t, i, (q[i] - inmix / rc).abs());
            let v = s.shortage[t][inst.plant_index(i)];
            c.add(Shortage, t, i, (rq - q[i] - v).max(-v).max(0.0));
        }
    }
    for i in inst.sources() {
        c.add(SourceBalance, h, i, s.quantity[h][i].abs());
    }
    for t in 0..=h {
        for i in inst.tanks() {
            let node = &inst.nodes()[i];
            let p = s.quantity[t][i];
            c.add(
                StorageBounds,
                t,
                i,
                (node.min_storage - p).max(p - node.max_storage).max(0.0),
            );
        }
    }
    Ok(ResidualReport { families: c.families })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_counts_match_instance_one_shape() {
        // 1 source, 2 tanks, 1 plant, 10 steps, complete tank graph: 6 arcs.
        let inst = small(10);
        let lay = VariableLayout::new(&inst);
        assert_eq!(inst.arcs().len(), 6);
        assert_eq!(
            (
                lay.num_flow(),
                lay.num_quantity(),
                lay.num_quality(),
                lay.num_shortage(),
                lay.len
            ),
            (60, 29, 39, 10, 138)
        );
    }

    #[test]
    fn layout_is_a_bijection() {
        let inst = small(4);
        let lay = VariableLayout::new(&inst);
        let mut hit = vec![0; lay.len];
        for t in 0..4 {
            for e in 0..6 {
                hit[lay.flow(t, e)] += 1;
            }
            hit[lay.shortage(t, 0)] += 1;
        }
        for t in 0..=4 {
            for i in 0..4 {
                if let Some(k) = lay.quantity(t, i) {
                    hit[k] += 1;
                }
                if let Some(k) = lay.quality(t, i) {
                    hit[k] += 1;
                }
            }
        }
        assert!(hit.iter().all(|&h| h == 1));
    }

    #[test]
    fn mixing_step_has_zero_residual() {
        // Tank at p = 1, q = 2 receives 1 unit of quality 4.
        let nodes = vec![source(1.0, 4.0), tank(1.0, 2.0, 10.0), plant()];
        let arcs = vec![arc(0, 1, 5.0, 1.0), arc(1, 2, 5.0, 1.0)];
        let inst = Instance::new(InstanceData {
            nodes,
            arcs,
            horizon: 1,
            supply_quantity: vec![vec![0.0]],
            supply_quality: vec![vec![4.0]],
            demand_quantity: vec![vec![1.0]],
            demand_quality: vec![vec![1.0]],
            shortage_cost: vec![1.0],
        })
        .unwrap();
        let s = Schedule::simulate(&inst, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(s.quantity[1][1], 2.0);
        assert_eq!(s.quality[1][1], 3.0);
        let r = residuals(&inst, &s).unwrap();
        assert_eq!(r.get(ResidualFamily::TankQuality), 0.0);
        assert_eq!(r.get(ResidualFamily::TankBalance), 0.0);
    }

    #[test]
    fn idle_plants_have_full_shortage_and_zero_residual() {
        let inst = small(3);
        let mut s = Schedule::simulate(&inst, &vec![vec![0.0; 6]; 3]).unwrap();
        for t in 0..3 {
            assert_eq!(s.quality[t][3], 0.0);
            assert_eq!(s.shortage[t][0], 2.5);
        }
        s.shortage[1][0] = 2.5;
        assert_eq!(residuals(&inst, &s).unwrap().get(ResidualFamily::Shortage), 0.0);
    }

    #[test]
    fn sucs_ratio_examples() {
        let inst = small(4);
        let mut s = Schedule::empty(&inst);
        assert_eq!(sucs_ratio(&inst, &s).unwrap(), 1.0);
        // ΣRQ = 10; a total shortage of 0.5 gives 0.95.
        s.shortage[0][0] = 0.25;
        s.shortage[3][0] = 0.25;
        assert!((sucs_ratio(&inst, &s).unwrap() - 0.95).abs() < 1e-15);
        for t in 0..4 {
            s.shortage[t][0] = 2.5;
        }
        assert_eq!(sucs_ratio(&inst, &s).unwrap(), 0.0);
    }

    #[test]
    fn sucs_ratio_requires_positive_requirement() {
        let mut data = small(2).into_data();
        data.demand_quality = vec![vec![0.0, 0.0]];
        let inst = Instance::new(data).unwrap();
        assert!(matches!(
            sucs_ratio(&inst, &Schedule::empty(&inst)),
            Err(PoolingError::UndefinedRatio)
        ));
    }

    #[test]
    fn rejects_bad_instances() {
        let mut data = small(2).into_data();
        data.arcs.push(fixtures::arc(3, 1, 1.0, 1.0));
        assert!(Instance::new(data).is_err());
        let mut data = small(2).into_data();
        data.demand_quantity[0][1] = 0.0;
        assert!(Instance::new(data).is_err());
        let mut data = small(2).into_data();
        data.nodes[1].initial_quantity = 50.0;
        assert!(Instance::new(data).is_err());
    }

    #[test]
    fn vector_round_trip() {
        let inst = small(3);
        let flow = vec![
            vec![5.0, 0.0, 0.0, 0.0, 0.0, 4.0],
            vec![0.0; 6],
            vec![0.0, 6.0, 0.0, 0.0, 6.0, 0.0],
        ];
        let mut s = Schedule::simulate(&inst, &flow).unwrap();
        // The final source state is not a variable.
        s.quantity[3][0] = 0.0;
        s.quality[3][0] = 0.0;
        let back = Schedule::from_vector(&inst, &s.to_vector(&inst)).unwrap();
        assert_eq!(back.flow, s.flow);
        assert_eq!(back.quantity, s.quantity);
        assert_eq!(back.quality, s.quality);
        assert_eq!(back.shortage, s.shortage);
    }

    /// Straight-line re-evaluation of the largest residual, written
    /// without the shared collector or adjacency lists.
    fn oracle_max_residual(inst: &Instance, s: &Schedule) -> f64 {
        let mut worst = 0.0f64;
        let arcs = inst.arcs();
        let h = inst.horizon();
        for t in 0..h {
            for (e, arc) in arcs.iter().enumerate() {
                let u = s.used[t][e] as u8 as f64;
                worst = worst
                    .max(u * arc.lower - s.flow[t][e])
                    .max(s.flow[t][e] - u * arc.upper);
                worst = worst.max(-s.flow[t][e]);
            }
            for i in 0..inst.num_nodes() {
                let mut k = 0.0;
                let mut inflow = 0.0;
                let mut out = 0.0;
                let mut inmix = 0.0;
                for (e, arc) in arcs.iter().enumerate() {
                    if arc.to == i || arc.from == i {
                        k += s.used[t][e] as u8 as f64;
                    }
                    if arc.to == i {
                        inflow += s.flow[t][e];
                        inmix += s.flow[t][e] * s.quality[t][arc.from];
                    }
                    if arc.from == i {
                        out += s.flow[t][e];
                    }
                }
                worst = worst.max(k - 1.0);
                let (p, q, pn, qn) = (
                    s.quantity[t][i],
                    s.quality[t][i],
                    s.quantity[t + 1][i],
                    s.quality[t + 1][i],
                );
                match inst.kind(i) {
                    NodeKind::Source => {
                        let (sa, sq) = inst.supply(i, t);
                        worst = worst.max((pn - (p + sa - out)).abs()).max(-pn);
                        worst = worst.max((pn * qn - (p * q + sa * sq - out * q)).abs());
                    }
                    NodeKind::Tank => {
                        worst = worst.max((pn - (p + inflow - out)).abs());
                        worst = worst.max((pn * qn - (p * q + inmix - out * q)).abs());
                    }
                    NodeKind::Plant => {
                        let (rc, rq) = inst.demand(i, t);
                        worst = worst.max((q - inmix / rc).abs());
                        let v = s.shortage[t][inst.plant_index(i)];
                        worst = worst.max(rq - q - v).max(-v);
                    }
                }
            }
        }
        for i in inst.sources() {
            worst = worst.max(s.quantity[h][i].abs());
        }
        for t in 0..=h {
            for i in inst.tanks() {
                let n = &inst.nodes()[i];
                worst = worst
                    .max(n.min_storage - s.quantity[t][i])
                    .max(s.quantity[t][i] - n.max_storage);
            }
        }
        worst
    }

    proptest! {
        #[test]
        fn perturbed_schedule_matches_oracle(
            flows in proptest::collection::vec(0.0f64..8.0, 18),
            noise in proptest::collection::vec(-0.5f64..0.5, 40),
            mask in proptest::collection::vec(any::<bool>(), 18),
        ) {
            let inst = small(3);
            let flow: Vec<Vec<f64>> = (0..3)
                .map(|t| (0..6).map(|e| if mask[t * 6 + e] { flows[t * 6 + e] } else { 0.0 }).collect())
                .collect();
            let mut s = Schedule::simulate(&inst, &flow).unwrap();
            let mut k = 0;
            for t in 1..=3 {
                for i in 0..3 {
                    s.quantity[t][i] += noise[k];
                    s.quality[t][i] += noise[k + 1];
                    k += 2;
                }
            }
            s.used[1][2] = !s.used[1][2];
            let r = residuals(&inst, &s).unwrap();
            let expect = oracle_max_residual(&inst, &s).max(0.0);
            prop_assert!((r.max() - expect).abs() <= 1e-12 * (1.0 + expect));
        }

        #[test]
        fn simulated_schedules_satisfy_dynamics(
            flows in proptest::collection::vec(0.0f64..3.0, 24),
        ) {
            let inst = small(4);
            let flow: Vec<Vec<f64>> = flows.chunks(6).map(|c| c.to_vec()).collect();
            let s = Schedule::simulate(&inst, &flow).unwrap();
            prop_assume!(s.quantity[1..].iter().all(|p| p[..3].iter().all(|&v| v > 1e-6)));
            let r = residuals(&inst, &s).unwrap();
            for f in [ResidualFamily::SourceQuality, ResidualFamily::TankBalance,
                      ResidualFamily::TankQuality, ResidualFamily::PlantQuality, ResidualFamily::Shortage] {
                prop_assert!(r.get(f) <= 1e-9, "{:?} = {}", f, r.get(f));
            }
            let again = residuals(&inst, &s).unwrap();
            prop_assert_eq!(r, again);
        }

        #[test]
        fn sucs_ratio_is_monotone_in_shortage(extra in 0.0f64..3.0, t in 0usize..4) {
            let inst = small(4);
            let mut s = Schedule::empty(&inst);
            s.shortage[1][0] = 0.7;
            let before = sucs_ratio(&inst, &s).unwrap();
            s.shortage[t][0] += extra;
            prop_assert!(sucs_ratio(&inst, &s).unwrap() <= before);
        }
    }
}
