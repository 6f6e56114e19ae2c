//! Single-period pooling problems in the P-formulation (the Haverly,
//! Foulds and similar literature problems), read from a plain-text file
//! and turned into a [`Qcqp`].
//!
//! ```text
//! pooling-standard 1
//! qualities 1
//! inputs
//! # id cost lower upper quality…
//! 1 6 0 - 3
//! 2 16 0 - 1
//! 3 10 0 - 2
//! pools
//! # id capacity
//! 4 -
//! outputs
//! # id price lower upper max-quality…
//! 5 9 0 100 2.5
//! 6 15 0 200 1.5
//! arcs
//! # from to cost upper
//! 1 4 0 -
//! 2 4 0 -
//! 4 5 0 -
//! 4 6 0 -
//! 3 5 0 -
//! 3 6 0 -
//! ```
//!
//! `-` stands for "no bound". Inputs feed pools or outputs, pools feed
//! outputs. The objective is
//! `Σ_arcs (cost(from) + cost(arc) − price(to))·flow`, to be minimized.
//!
//! The variables are the arc flows in file order followed by one quality
//! per pool and quality attribute. Pool balances are hard linear rows,
//! pool quality definitions are banded bilinear rows
//! `Σ_in λ·f − q·Σ_out f`, and output quality limits are bilinear
//! inequalities. Flow bounds are the tightest of the arc, endpoint and
//! pool capacities; pool qualities lie within the range of the inputs
//! that can reach the pool.

use crate::error::{PoolingError, Result};
use crate::io::{err, index, num, tokens, Token};
use crate::qcqp::{LinRow, Qcqp, QuadRow};
use std::collections::HashMap;

pub const STANDARD_FORMAT: &str = "pooling-standard";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardKind {
    Input,
    Pool,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardNode {
    pub id: usize,
    pub kind: StandardKind,
    /// Unit cost for inputs, unit price for outputs, zero for pools.
    pub value: f64,
    pub lower: f64,
    /// Availability, pool capacity or demand limit.
    pub upper: f64,
    /// Input qualities or output quality limits; empty for pools.
    pub quality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardArc {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardProblem {
    pub qualities: usize,
    pub nodes: Vec<StandardNode>,
    /// Endpoints are positions in `nodes`.
    pub arcs: Vec<StandardArc>,
}

fn bound(tok: Token<'_>, none: f64) -> Result<f64> {
    if tok.text == "-" {
        Ok(none)
    } else {
        num(tok)
    }
}

pub fn parse_standard(text: &str) -> Result<StandardProblem> {
    let mut qualities = None;
    let mut section: Option<StandardKind> = None;
    let mut in_arcs = false;
    let mut header_seen = false;
    let mut nodes = Vec::new();
    let mut raw_arcs = Vec::new();
    let mut last_line = 1;
    for (k, l) in text.lines().enumerate() {
        let toks = tokens(l, k + 1);
        let Some(&head) = toks.first() else { continue };
        last_line = k + 1;
        if !header_seen {
            if head.text != STANDARD_FORMAT || toks.len() != 2 || toks[1].text != "1" {
                return Err(err(
                    head.line,
                    head.column,
                    format!("expected header `{STANDARD_FORMAT} 1`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let width = |n: usize| {
            if toks.len() == n {
                Ok(())
            } else {
                Err(err(
                    head.line,
                    head.column,
                    format!("expected {n} fields, found {}", toks.len()),
                ))
            }
        };
        match head.text {
            "qualities" => {
                width(2)?;
                qualities = Some(index(toks[1])?);
                continue;
            }
            "inputs" | "pools" | "outputs" => {
                width(1)?;
                section = Some(match head.text {
                    "inputs" => StandardKind::Input,
                    "pools" => StandardKind::Pool,
                    _ => StandardKind::Output,
                });
                in_arcs = false;
                continue;
            }
            "arcs" => {
                width(1)?;
                section = None;
                in_arcs = true;
                continue;
            }
            _ => {}
        }
        let nq = qualities.ok_or_else(|| err(head.line, head.column, "`qualities` must come before the data"))?;
        if in_arcs {
            width(4)?;
            raw_arcs.push((
                toks[0],
                index(toks[0])?,
                toks[1],
                index(toks[1])?,
                num(toks[2])?,
                bound(toks[3], f64::INFINITY)?,
            ));
            continue;
        }
        let kind = section.ok_or_else(|| {
            err(
                head.line,
                head.column,
                format!("unexpected `{}` outside a section", head.text),
            )
        })?;
        let node = match kind {
            StandardKind::Pool => {
                width(2)?;
                StandardNode {
                    id: index(toks[0])?,
                    kind,
                    value: 0.0,
                    lower: 0.0,
                    upper: bound(toks[1], f64::INFINITY)?,
                    quality: Vec::new(),
                }
            }
            _ => {
                width(4 + nq)?;
                let none = if kind == StandardKind::Output {
                    f64::INFINITY
                } else {
                    f64::NAN
                };
                let quality = toks[4..]
                    .iter()
                    .map(|&t| {
                        if kind == StandardKind::Output {
                            bound(t, none)
                        } else {
                            num(t)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                StandardNode {
                    id: index(toks[0])?,
                    kind,
                    value: num(toks[1])?,
                    lower: num(toks[2])?,
                    upper: bound(toks[3], f64::INFINITY)?,
                    quality,
                }
            }
        };
        if nodes.iter().any(|n: &StandardNode| n.id == node.id) {
            return Err(err(head.line, head.column, format!("duplicate node id {}", node.id)));
        }
        nodes.push(node);
    }
    if !header_seen {
        return Err(err(1, 1, "empty file"));
    }
    let qualities = qualities.ok_or_else(|| err(last_line, 1, "missing `qualities`"))?;
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
    let mut arcs = Vec::with_capacity(raw_arcs.len());
    for (ft, f, tt, t, cost, upper) in raw_arcs {
        let from = *pos
            .get(&f)
            .ok_or_else(|| err(ft.line, ft.column, format!("unknown node id {f}")))?;
        let to = *pos
            .get(&t)
            .ok_or_else(|| err(tt.line, tt.column, format!("unknown node id {t}")))?;
        let ok = matches!(
            (nodes[from].kind, nodes[to].kind),
            (StandardKind::Input, StandardKind::Pool)
                | (StandardKind::Input, StandardKind::Output)
                | (StandardKind::Pool, StandardKind::Output)
        );
        if !ok {
            return Err(err(
                ft.line,
                ft.column,
                "arcs run input→pool, input→output or pool→output",
            ));
        }
        arcs.push(StandardArc { from, to, cost, upper });
    }
    Ok(StandardProblem { qualities, nodes, arcs })
}

impl StandardProblem {
    pub fn num_pools(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == StandardKind::Pool).count()
    }

    /// Index of the quality variable of pool `node` for attribute `k`.
    pub fn quality_var(&self, node: usize, k: usize) -> usize {
        let rank = self.nodes[..node]
            .iter()
            .filter(|n| n.kind == StandardKind::Pool)
            .count();
        self.arcs.len() + rank * self.qualities + k
    }

    pub fn num_vars(&self) -> usize {
        self.arcs.len() + self.num_pools() * self.qualities
    }

    fn incoming(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arcs.len()).filter(move |&e| self.arcs[e].to == node)
    }

    fn outgoing(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arcs.len()).filter(move |&e| self.arcs[e].from == node)
    }

    /// Objective value of a flow vector.
    pub fn objective(&self, flow: &[f64]) -> f64 {
        self.arcs.iter().zip(flow).map(|(a, f)| self.unit_cost(a) * f).sum()
    }

    fn unit_cost(&self, a: &StandardArc) -> f64 {
        let from = &self.nodes[a.from];
        let to = &self.nodes[a.to];
        let mut c = a.cost;
        if from.kind == StandardKind::Input {
            c += from.value;
        }
        if to.kind == StandardKind::Output {
            c -= to.value;
        }
        c
    }
}

/// Builds the banded QCQP of a standard pooling problem.
pub fn build_standard_qcqp(sp: &StandardProblem, delta: f64) -> Result<Qcqp> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(PoolingError::InvalidParameter(format!(
            "penalty weight must be positive, got {delta}"
        )));
    }
    let n = sp.num_vars();
    let mut objective = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![f64::INFINITY; n];
    for (e, a) in sp.arcs.iter().enumerate() {
        objective[e] = sp.unit_cost(a);
        upper[e] = a.upper.min(sp.nodes[a.from].upper).min(sp.nodes[a.to].upper);
    }
    let mut quad_rows = Vec::new();
    let mut quad_ineq = Vec::new();
    let mut lin_ineq = Vec::new();

    for (i, node) in sp.nodes.iter().enumerate() {
        let through: Vec<usize> = match node.kind {
            StandardKind::Input => sp.outgoing(i).collect(),
            _ => sp.incoming(i).collect(),
        };
        if node.upper.is_finite() {
            lin_ineq.push(LinRow {
                coefs: through.iter().map(|&e| (e, 1.0)).collect(),
                rhs: node.upper,
                tag: None,
            });
        }
        if node.lower > 0.0 {
            lin_ineq.push(LinRow {
                coefs: through.iter().map(|&e| (e, -1.0)).collect(),
                rhs: -node.lower,
                tag: None,
            });
        }
        match node.kind {
            StandardKind::Input => {}
            StandardKind::Pool => {
                let inc: Vec<usize> = sp.incoming(i).collect();
                let out: Vec<usize> = sp.outgoing(i).collect();
                // Kept hard: a penalized band would let pools create flow at cost δ.
                let balance: Vec<(usize, f64)> = inc
                    .iter()
                    .map(|&e| (e, 1.0))
                    .chain(out.iter().map(|&e| (e, -1.0)))
                    .collect();
                lin_ineq.push(LinRow {
                    coefs: balance.iter().map(|&(e, v)| (e, -v)).collect(),
                    rhs: 0.0,
                    tag: None,
                });
                lin_ineq.push(LinRow {
                    coefs: balance,
                    rhs: 0.0,
                    tag: None,
                });
                for k in 0..sp.qualities {
                    let qv = sp.quality_var(i, k);
                    let feeds: Vec<f64> = inc.iter().map(|&e| sp.nodes[sp.arcs[e].from].quality[k]).collect();
                    if feeds.is_empty() {
                        upper[qv] = 0.0;
                    } else {
                        lower[qv] = feeds.iter().copied().fold(f64::INFINITY, f64::min);
                        upper[qv] = feeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    }
                    quad_rows.push(QuadRow {
                        quad: out.iter().map(|&e| (e.min(qv), e.max(qv), -0.5)).collect(),
                        lin: inc.iter().zip(&feeds).map(|(&e, &l)| (e, l)).collect(),
                        constant: 0.0,
                        tag: None,
                    });
                }
            }
            StandardKind::Output => {
                for k in 0..sp.qualities {
                    let limit = node.quality[k];
                    if !limit.is_finite() {
                        continue;
                    }
                    let mut quad = Vec::new();
                    let mut lin = Vec::new();
                    for e in sp.incoming(i) {
                        let from = sp.arcs[e].from;
                        match sp.nodes[from].kind {
                            StandardKind::Input => lin.push((e, sp.nodes[from].quality[k] - limit)),
                            _ => {
                                let qv = sp.quality_var(from, k);
                                quad.push((e.min(qv), e.max(qv), 0.5));
                                lin.push((e, -limit));
                            }
                        }
                    }
                    quad_ineq.push(QuadRow {
                        quad,
                        lin,
                        constant: 0.0,
                        tag: None,
                    });
                }
            }
        }
    }
    let q = Qcqp {
        n,
        objective,
        objective_constant: 0.0,
        quad_rows,
        lin_eq: Vec::new(),
        quad_ineq,
        lin_ineq,
        lower,
        upper,
        delta,
    };
    q.validate()?;
    Ok(q)
}
