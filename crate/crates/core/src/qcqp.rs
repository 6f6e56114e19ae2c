//! General quadratic programs with zero-diagonal quadratic rows, and the
//! pooling builder that produces one.
//!
//! A [`Qcqp`] is
//!
//! ```text
//! minimize    q0ᵀx + c0 + δ·Σλ
//! subject to  −λ_k ≤ xᵀQ_k x + q_kᵀx + γ_k ≤ λ_k     (banded quadratic rows)
//!             −λ_r ≤ L_r x − b_r ≤ λ_r                (banded linear rows)
//!             xᵀG_k x + g_kᵀx + β_k ≤ 0               (quadratic inequalities)
//!             M x ≤ h                                 (linear inequalities)
//!             ℓ ≤ x ≤ u,  λ ≥ 0
//! ```
//!
//! Quadratic matrices are stored as strictly-upper entries `(i, j, Q_ij)`
//! with `i < j`, so that `xᵀQx = Σ 2·Q_ij·x_i·x_j`.

use crate::error::{PoolingError, Result};
use crate::model::{Instance, ResidualFamily, VariableLayout};

/// Where a pooling row came from; absent for hand-built programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub family: ResidualFamily,
    pub t: usize,
    pub node: usize,
}

/// `xᵀQx + qᵀx + γ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadRow {
    pub quad: Vec<(usize, usize, f64)>,
    pub lin: Vec<(usize, f64)>,
    pub constant: f64,
    pub tag: Option<RowTag>,
}

impl QuadRow {
    pub fn value(&self, x: &[f64]) -> f64 {
        let q: f64 = self.quad.iter().map(|&(i, j, v)| 2.0 * v * x[i] * x[j]).sum();
        let l: f64 = self.lin.iter().map(|&(i, v)| v * x[i]).sum();
        q + l + self.constant
    }
}

/// `coefsᵀx` compared against `rhs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinRow {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub tag: Option<RowTag>,
}

impl LinRow {
    /// `coefsᵀx − rhs`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, v)| v * x[i]).sum::<f64>() - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qcqp {
    pub n: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    /// Equalities relaxed to `±λ` bands.
    pub quad_rows: Vec<QuadRow>,
    pub lin_eq: Vec<LinRow>,
    /// Unrelaxed `≤ 0` quadratic rows.
    pub quad_ineq: Vec<QuadRow>,
    /// `coefsᵀx ≤ rhs`.
    pub lin_ineq: Vec<LinRow>,
    pub lower: Vec<f64>,
    /// May be `+∞`.
    pub upper: Vec<f64>,
    pub delta: f64,
}

impl Qcqp {
    /// Checks dimensions, bounds and the zero-diagonal property.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let dim = |m: String| Err(PoolingError::DimensionMismatch(m));
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return dim(format!("objective and bounds must have length {n}"));
        }
        for r in self.quad_rows.iter().chain(&self.quad_ineq) {
            for &(i, j, v) in &r.quad {
                if i == j {
                    return Err(PoolingError::InvalidParameter(format!(
                        "quadratic row has diagonal entry ({i}, {i})"
                    )));
                }
                if i > j || j >= n || !v.is_finite() {
                    return dim(format!("quadratic entry ({i}, {j}) is not strictly upper within {n}"));
                }
            }
            if r.lin.iter().any(|&(i, v)| i >= n || !v.is_finite()) || !r.constant.is_finite() {
                return dim("linear part of a quadratic row is out of range".into());
            }
        }
        for r in self.lin_eq.iter().chain(&self.lin_ineq) {
            if r.coefs.iter().any(|&(i, v)| i >= n || !v.is_finite()) || !r.rhs.is_finite() {
                return dim("linear row is out of range".into());
            }
        }
        for k in 0..n {
            if !(self.lower[k] <= self.upper[k]) || !self.lower[k].is_finite() || self.upper[k] == f64::NEG_INFINITY {
                return Err(PoolingError::InvalidParameter(format!(
                    "bounds of variable {k} are inconsistent"
                )));
            }
        }
        if self.num_lambda() > 0 && !(self.delta > 0.0) {
            return Err(PoolingError::InvalidParameter("penalty weight must be positive".into()));
        }
        Ok(())
    }

    /// One penalty variable per banded row: quadratic rows first.
    pub fn num_lambda(&self) -> usize {
        self.quad_rows.len() + self.lin_eq.len()
    }

    /// Sets every penalty to the band width needed by `x`.
    pub fn tight_lambda(&self, x: &[f64]) -> Vec<f64> {
        self.quad_rows
            .iter()
            .map(|r| r.value(x).abs())
            .chain(self.lin_eq.iter().map(|r| r.value(x).abs()))
            .collect()
    }
}

/// Objective and raw row values of a [`Qcqp`] at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub quad_rows: Vec<f64>,
    pub lin_eq: Vec<f64>,
    pub quad_ineq: Vec<f64>,
    pub lin_ineq: Vec<f64>,
    /// Largest violation of bands, inequalities and bounds (including `λ ≥ 0`).
    pub max_violation: f64,
}

pub fn eval(p: &Qcqp, x: &[f64], lambda: &[f64]) -> Result<Evaluation> {
    if x.len() != p.n || lambda.len() != p.num_lambda() {
        return Err(PoolingError::DimensionMismatch(format!(
            "expected {} variables and {} penalties, got {} and {}",
            p.n,
            p.num_lambda(),
            x.len(),
            lambda.len()
        )));
    }
    let objective = p.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
        + p.objective_constant
        + p.delta * lambda.iter().sum::<f64>();
    let quad_rows: Vec<f64> = p.quad_rows.iter().map(|r| r.value(x)).collect();
    let lin_eq: Vec<f64> = p.lin_eq.iter().map(|r| r.value(x)).collect();
    let quad_ineq: Vec<f64> = p.quad_ineq.iter().map(|r| r.value(x)).collect();
    let lin_ineq: Vec<f64> = p.lin_ineq.iter().map(|r| r.value(x)).collect();

    let mut viol = 0.0f64;
    for (v, l) in quad_rows.iter().chain(&lin_eq).zip(lambda) {
        viol = viol.max(v.abs() - l).max(-l);
    }
    for v in quad_ineq.iter().chain(&lin_ineq) {
        viol = viol.max(*v);
    }
    for k in 0..p.n {
        viol = viol.max(p.lower[k] - x[k]).max(x[k] - p.upper[k]);
    }
    Ok(Evaluation {
        objective,
        quad_rows,
        lin_eq,
        quad_ineq,
        lin_ineq,
        max_violation: viol.max(0.0),
    })
}

/// A factor in a pooling row: a decision variable or a known constant.
#[derive(Debug, Clone, Copy)]
enum Val {
    Var(usize),
    Const(f64),
}

#[derive(Default)]
struct RowBuilder {
    quad: Vec<(usize, usize, f64)>,
    lin: Vec<(usize, f64)>,
    constant: f64,
}

impl RowBuilder {
    fn term(&mut self, a: Val, c: f64) {
        match a {
            Val::Var(i) => self.lin.push((i, c)),
            Val::Const(v) => self.constant += c * v,
        }
    }

    fn prod(&mut self, a: Val, b: Val, c: f64) {
        match (a, b) {
            (Val::Var(i), Val::Var(j)) => {
                assert_ne!(i, j, "pooling rows are bilinear");
                self.quad.push((i.min(j), i.max(j), 0.5 * c));
            }
            (Val::Var(i), Val::Const(v)) | (Val::Const(v), Val::Var(i)) => self.lin.push((i, c * v)),
            (Val::Const(u), Val::Const(v)) => self.constant += c * u * v,
        }
    }

    fn quad_row(self, tag: RowTag) -> QuadRow {
        QuadRow {
            quad: merge3(self.quad),
            lin: merge2(self.lin),
            constant: self.constant,
            tag: Some(tag),
        }
    }

    /// `lin + constant = 0` as `lin = −constant`.
    fn lin_row(self, tag: RowTag) -> LinRow {
        debug_assert!(self.quad.is_empty());
        LinRow {
            coefs: merge2(self.lin),
            rhs: -self.constant,
            tag: Some(tag),
        }
    }
}

fn merge2(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (i, c) in v {
        match out.last_mut() {
            Some(l) if l.0 == i => l.1 += c,
            _ => out.push((i, c)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

fn merge3(mut v: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    v.sort_by_key(|e| (e.0, e.1));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(v.len());
    for (i, j, c) in v {
        match out.last_mut() {
            Some(l) if l.0 == i && l.1 == j => l.2 += c,
            _ => out.push((i, j, c)),
        }
    }
    out.retain(|e| e.2 != 0.0);
    out
}

struct Vars<'a> {
    inst: &'a Instance,
    lay: VariableLayout,
}

impl Vars<'_> {
    fn a(&self, t: usize, e: usize) -> Val {
        Val::Var(self.lay.flow(t, e))
    }

    fn p(&self, t: usize, i: usize) -> Val {
        match self.lay.quantity(t, i) {
            Some(k) => Val::Var(k),
            None if t == 0 => Val::Const(self.inst.nodes()[i].initial_quantity),
            None => Val::Const(0.0),
        }
    }

    fn q(&self, t: usize, i: usize) -> Val {
        match self.lay.quality(t, i) {
            Some(k) => Val::Var(k),
            None if t == 0 => Val::Const(self.inst.nodes()[i].initial_quality),
            None => Val::Const(0.0),
        }
    }
}

/// One-pipeline rows in product form and the relaxed flow bounds
/// `0 ≤ a ≤ U` that replace the pipeline-use binaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    /// For each node and step with at least two incident arcs, the sum of
    /// products over unordered pairs of distinct incident arcs.
    pub rows: Vec<QuadRow>,
    /// Upper bound of every flow variable, in layout order.
    pub flow_upper: Vec<f64>,
}

pub fn eliminate_binaries(inst: &Instance) -> Elimination {
    let lay = VariableLayout::new(inst);
    let mut rows = Vec::new();
    for t in 0..inst.horizon() {
        for i in 0..inst.num_nodes() {
            let arcs: Vec<usize> = inst.incoming(i).iter().chain(inst.outgoing(i)).copied().collect();
            if arcs.len() < 2 {
                continue;
            }
            let mut b = RowBuilder::default();
            for (k, &e) in arcs.iter().enumerate() {
                for &f in &arcs[k + 1..] {
                    b.prod(Val::Var(lay.flow(t, e)), Val::Var(lay.flow(t, f)), 1.0);
                }
            }
            rows.push(b.quad_row(RowTag {
                family: ResidualFamily::OnePipeline,
                t,
                node: i,
            }));
        }
    }
    let flow_upper = (0..inst.horizon())
        .flat_map(|_| inst.arcs().iter().map(|a| a.upper))
        .collect();
    Elimination { rows, flow_upper }
}

/// Default penalty weight on the band variables.
pub const DEFAULT_DELTA: f64 = 1e-4;

/// Penalty-relaxed QCQP of the time-discretized pooling problem, with
/// variables in [`VariableLayout`] order.
pub fn build_qcqp(inst: &Instance, delta: f64) -> Result<Qcqp> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(PoolingError::InvalidParameter(format!(
            "penalty weight must be positive, got {delta}"
        )));
    }
    let lay = VariableLayout::new(inst);
    let v = Vars { inst, lay: lay.clone() };
    let n = lay.len;
    let arcs = inst.arcs();
    let tag = |family, t, node| RowTag { family, t, node };

    let elim = eliminate_binaries(inst);
    let mut quad_rows = elim.rows;
    let mut lin_eq = Vec::new();
    let mut lin_ineq = Vec::new();

    for t in 0..inst.horizon() {
        for i in inst.sources() {
            let (sa, sq) = inst.supply(i, t);
            let mut bal = RowBuilder::default();
            bal.term(v.p(t + 1, i), -1.0);
            bal.term(v.p(t, i), 1.0);
            bal.constant += sa;
            let mut mix = RowBuilder::default();
            mix.prod(v.p(t + 1, i), v.q(t + 1, i), -1.0);
            mix.prod(v.p(t, i), v.q(t, i), 1.0);
            mix.constant += sa * sq;
            for &e in inst.outgoing(i) {
                bal.term(v.a(t, e), -1.0);
                mix.prod(v.a(t, e), v.q(t, i), -1.0);
            }
            lin_eq.push(bal.lin_row(tag(ResidualFamily::SourceBalance, t, i)));
            quad_rows.push(mix.quad_row(tag(ResidualFamily::SourceQuality, t, i)));
        }
        for i in inst.tanks() {
            let mut bal = RowBuilder::default();
            bal.term(v.p(t + 1, i), -1.0);
            bal.term(v.p(t, i), 1.0);
            let mut mix = RowBuilder::default();
            mix.prod(v.p(t + 1, i), v.q(t + 1, i), -1.0);
            mix.prod(v.p(t, i), v.q(t, i), 1.0);
            for &e in inst.incoming(i) {
                bal.term(v.a(t, e), 1.0);
                mix.prod(v.a(t, e), v.q(t, arcs[e].from), 1.0);
            }
            for &e in inst.outgoing(i) {
                bal.term(v.a(t, e), -1.0);
                mix.prod(v.a(t, e), v.q(t, i), -1.0);
            }
            lin_eq.push(bal.lin_row(tag(ResidualFamily::TankBalance, t, i)));
            quad_rows.push(mix.quad_row(tag(ResidualFamily::TankQuality, t, i)));
        }
        for i in inst.plants() {
            let (rc, rq) = inst.demand(i, t);
            let mut mix = RowBuilder::default();
            mix.term(v.q(t, i), -1.0);
            for &e in inst.incoming(i) {
                mix.prod(v.a(t, e), v.q(t, arcs[e].from), 1.0 / rc);
            }
            quad_rows.push(mix.quad_row(tag(ResidualFamily::PlantQuality, t, i)));

            let k = lay.shortage(t, inst.plant_index(i));
            let qi = lay.quality(t, i).expect("plant quality is a variable for every step");
            lin_ineq.push(LinRow {
                coefs: vec![(qi.min(k), -1.0), (qi.max(k), -1.0)],
                rhs: -rq,
                tag: Some(tag(ResidualFamily::Shortage, t, i)),
            });
        }
    }

    let mut objective = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![f64::INFINITY; n];
    for t in 0..inst.horizon() {
        for (e, arc) in arcs.iter().enumerate() {
            objective[lay.flow(t, e)] = arc.cost;
            upper[lay.flow(t, e)] = elim.flow_upper[lay.flow(t, e)];
        }
        for i in inst.plants() {
            let (rc, rq) = inst.demand(i, t);
            let k = lay.shortage(t, inst.plant_index(i));
            objective[k] = inst.shortage_cost(i) * rc;
            upper[k] = rq;
        }
    }
    for i in inst.sources() {
        let cap = inst.nodes()[i].initial_quantity + inst.data().supply_quantity[i].iter().sum::<f64>();
        for t in 1..=inst.horizon() {
            if let Some(k) = lay.quantity(t, i) {
                upper[k] = cap;
            }
        }
    }
    for i in inst.tanks() {
        let node = &inst.nodes()[i];
        for t in 1..=inst.horizon() {
            if let Some(k) = lay.quantity(t, i) {
                lower[k] = node.min_storage;
                upper[k] = node.max_storage;
            }
        }
    }

    let p = Qcqp {
        n,
        objective,
        objective_constant: 0.0,
        quad_rows,
        lin_eq,
        quad_ineq: Vec::new(),
        lin_ineq,
        lower,
        upper,
        delta,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{residuals, InstanceData, Schedule};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pipeline_value(flows: &[f64]) -> f64 {
        let row = QuadRow {
            quad: (0..flows.len())
                .flat_map(|i| (i + 1..flows.len()).map(move |j| (i, j, 0.5)))
                .collect(),
            ..Default::default()
        };
        row.value(flows)
    }

    #[test]
    fn one_pipeline_products() {
        assert_eq!(pipeline_value(&[0.0, 3.0]), 0.0);
        assert_eq!(pipeline_value(&[2.0, 3.0]), 6.0);
        // one entering arc with 2, one leaving with 5
        assert_eq!(pipeline_value(&[2.0, 5.0]), 10.0);
    }

    #[test]
    fn one_pipeline_rows_follow_incidence() {
        let inst = small(2);
        let elim = eliminate_binaries(&inst);
        // source: 2 arcs, each tank: 4 arcs, plant: 2 arcs
        let pairs: Vec<usize> = elim.rows.iter().take(4).map(|r| r.quad.len()).collect();
        assert_eq!(pairs, vec![1, 6, 6, 1]);
        assert_eq!(elim.rows.len(), 8);
        assert!(elim.flow_upper.iter().all(|&u| u == 20.0));
    }

    #[test]
    fn instance_one_shape_counts() {
        let inst = small(10);
        let p = build_qcqp(&inst, DEFAULT_DELTA).unwrap();
        let lay = VariableLayout::new(&inst);
        assert_eq!(p.n, 138);
        assert_eq!(lay.num_flow(), 60);
        // one-pipeline 4 + source quality 1 + tank quality 2 + plant quality 1, per step
        assert_eq!(p.quad_rows.len(), 80);
        assert_eq!(p.lin_eq.len(), 30);
        assert_eq!(p.num_lambda(), 110);
    }

    #[test]
    fn direct_feed_has_no_products() {
        let inst = Instance::new(InstanceData {
            nodes: vec![source(2.0, 3.0), plant()],
            arcs: vec![arc(0, 1, 5.0, 1.0)],
            horizon: 1,
            supply_quantity: vec![vec![0.0]],
            supply_quality: vec![vec![3.0]],
            demand_quantity: vec![vec![2.0]],
            demand_quality: vec![vec![1.0]],
            shortage_cost: vec![10.0],
        })
        .unwrap();
        let p = build_qcqp(&inst, 1.0).unwrap();
        assert!(p.quad_rows.iter().all(|r| r.quad.is_empty()));
        // x = (a, q_plant, v); ship everything: q = 2·3/2 = 3, no shortage
        let x = [2.0, 3.0, 0.0];
        let e = eval(&p, &x, &vec![0.0; p.num_lambda()]).unwrap();
        assert_eq!(e.max_violation, 0.0);
        assert_eq!(e.objective, 2.0);
    }

    #[test]
    fn rejects_nonpositive_delta() {
        assert!(build_qcqp(&small(2), 0.0).is_err());
        assert!(build_qcqp(&small(2), -1.0).is_err());
    }

    #[test]
    fn eval_examples() {
        let p = Qcqp {
            n: 3,
            objective: vec![1.0, -1.0, 0.0],
            objective_constant: 0.0,
            quad_rows: vec![QuadRow {
                quad: vec![(0, 1, 0.5)],
                ..Default::default()
            }],
            lin_eq: vec![],
            quad_ineq: vec![],
            lin_ineq: vec![],
            lower: vec![0.0; 3],
            upper: vec![10.0; 3],
            delta: 1.0,
        };
        let zero = eval(&p, &[0.0; 3], &[0.0]).unwrap();
        assert_eq!(zero.objective, 0.0);
        let e = eval(&p, &[2.0, 3.0, 1.0], &[6.0]).unwrap();
        assert_eq!(e.quad_rows, vec![6.0]);
        assert_eq!(e.objective, 2.0 - 3.0 + 6.0);
        assert_eq!(e.max_violation, 0.0);
        assert!(eval(&p, &[0.0; 2], &[0.0]).is_err());
    }

    #[test]
    fn eval_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..6usize);
            let mut dense = vec![vec![0.0; n]; n];
            let mut quad = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_range(0.0..1.0) < 0.6 {
                        let v = rng.random_range(-2.0..2.0);
                        quad.push((i, j, v));
                        dense[i][j] = v;
                        dense[j][i] = v;
                    }
                }
            }
            let lin: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
            let row = QuadRow {
                quad,
                lin: lin.clone(),
                constant: 0.3,
                tag: None,
            };
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut expect = 0.3;
            for i in 0..n {
                for j in 0..n {
                    expect += x[i] * dense[i][j] * x[j];
                }
                expect += lin[i].1 * x[i];
            }
            assert!((row.value(&x) - expect).abs() < 1e-12);
        }
    }

    /// Flow patterns that respect the one-pipeline rule on `small`, with
    /// the source idle: arcs (1,2),(2,1),(1,3),(2,3) in ids 2..6.
    fn pattern(code: u8, amount: f64, amount2: f64) -> Vec<f64> {
        let mut f = vec![0.0; 6];
        match code % 5 {
            0 => {}
            1 => f[2] = amount,
            2 => f[3] = amount,
            3 => f[4] = amount,
            _ => f[5] = amount2,
        }
        f
    }

    proptest! {
        #[test]
        fn simulated_schedules_satisfy_bands_with_zero_penalty(
            codes in proptest::collection::vec(any::<u8>(), 4),
            amounts in proptest::collection::vec(0.0f64..6.0, 4),
        ) {
            let mut data = small(4).into_data();
            data.supply_quantity = vec![vec![0.0; 4]];
            let inst = Instance::new(data).unwrap();
            let flow: Vec<Vec<f64>> = (0..4).map(|t| pattern(codes[t], amounts[t], amounts[t] * 0.5)).collect();
            let s = Schedule::simulate(&inst, &flow).unwrap();
            prop_assume!(residuals(&inst, &s).unwrap().max() <= 1e-12);

            let p = build_qcqp(&inst, DEFAULT_DELTA).unwrap();
            let x = s.to_vector(&inst);
            let e = eval(&p, &x, &vec![0.0; p.num_lambda()]).unwrap();
            prop_assert!(e.max_violation <= 1e-9, "violation {}", e.max_violation);
            prop_assert!((e.objective - s.cost(&inst)).abs() <= 1e-9 * (1.0 + e.objective));
        }

        #[test]
        fn relaxed_flow_bounds_contain_original(lower in 0.0f64..5.0, width in 0.0f64..5.0, frac in 0.0f64..1.0, used: bool) {
            let upper = lower + width;
            let a = if used { lower + frac * width } else { 0.0 };
            let u = used as u8 as f64;
            prop_assert!(u * lower <= a && a <= u * upper);
            prop_assert!((0.0..=upper).contains(&a));
        }
    }
}
