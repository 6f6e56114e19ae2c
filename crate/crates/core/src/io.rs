//! Plain-text instance files.
//!
//! ```text
//! pooling-instance 1
//! horizon 2
//! nodes
//! # id kind p1 q1 pmin pmax
//! 1 source 0 3 0 0
//! 2 tank 10 2 0 40
//! 3 plant 0 0 0 0
//! arcs
//! # from to L U CA
//! 1 2 0 20 1
//! 2 3 0 20 3
//! supply
//! # source t SA SQ
//! 1 1 5 3
//! 1 2 6 3
//! demand
//! # plant t RC RQ CQ
//! 3 1 4 2.5 100
//! 3 2 5 2.5 100
//! ```
//!
//! The first non-blank line is the versioned header. Node ids are any
//! distinct positive integers; nodes are reordered sources, tanks, plants
//! (keeping file order within a kind). Steps `t` run from 1 to the horizon.
//! Every source needs a supply row and every plant a demand row for each
//! step; a plant's shortage cost `CQ` must be the same at every step.
//! Blank lines and text after `#` are ignored.

use crate::error::{PoolingError, Result};
use crate::model::{Arc, Instance, InstanceData, Node, NodeKind};
use std::collections::HashMap;
use std::fmt::Write as _;

pub const FORMAT_NAME: &str = "pooling-instance";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy)]
pub(crate) struct Token<'a> {
    pub text: &'a str,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn err(line: usize, column: usize, msg: impl Into<String>) -> PoolingError {
    PoolingError::Parse {
        line,
        column,
        msg: msg.into(),
    }
}

pub(crate) fn tokens(line: &str, number: usize) -> Vec<Token<'_>> {
    let body = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (k, ch) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(k),
            (true, Some(s)) => {
                out.push(Token {
                    text: &body[s..k],
                    line: number,
                    column: body[..s].chars().count() + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub(crate) fn num(tok: Token<'_>) -> Result<f64> {
    let v: f64 = tok
        .text
        .parse()
        .map_err(|_| err(tok.line, tok.column, format!("expected a number, found `{}`", tok.text)))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(tok.line, tok.column, "value must be finite"))
    }
}

pub(crate) fn index(tok: Token<'_>) -> Result<usize> {
    match tok.text.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(err(
            tok.line,
            tok.column,
            format!("expected a positive integer, found `{}`", tok.text),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Nodes,
    Arcs,
    Supply,
    Demand,
}

/// Parses an instance file.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let header = loop {
        match lines.next() {
            Some((n, l)) => {
                let t = tokens(l, n);
                if !t.is_empty() {
                    break t;
                }
            }
            None => return Err(err(1, 1, "empty file")),
        }
    };
    if header[0].text != FORMAT_NAME {
        return Err(err(
            header[0].line,
            header[0].column,
            format!("expected header `{FORMAT_NAME} {FORMAT_VERSION}`"),
        ));
    }
    match header.get(1) {
        Some(v) if v.text == FORMAT_VERSION.to_string() && header.len() == 2 => {}
        Some(v) => {
            return Err(err(
                v.line,
                v.column,
                format!("unsupported format version `{}`", v.text),
            ))
        }
        None => {
            return Err(err(
                header[0].line,
                header[0].column + FORMAT_NAME.len(),
                "missing format version",
            ))
        }
    }

    let mut horizon = None;
    let mut section = None;
    let mut nodes: Vec<(usize, Token<'_>, Node)> = Vec::new();
    let mut arcs: Vec<(Token<'_>, usize, Token<'_>, usize, Arc)> = Vec::new();
    let mut supply: Vec<(Token<'_>, Vec<Token<'_>>)> = Vec::new();
    let mut demand: Vec<(Token<'_>, Vec<Token<'_>>)> = Vec::new();
    let mut last_line = header[0].line;

    for (n, l) in lines {
        let toks = tokens(l, n);
        if toks.is_empty() {
            continue;
        }
        last_line = n;
        let head = toks[0];
        let expect = |k: usize| {
            if toks.len() == k {
                Ok(())
            } else {
                let at = toks.get(k).copied().unwrap_or(*toks.last().unwrap());
                Err(err(
                    at.line,
                    at.column,
                    format!("expected {k} fields, found {}", toks.len()),
                ))
            }
        };
        match head.text {
            "horizon" => {
                expect(2)?;
                if horizon.is_some() {
                    return Err(err(head.line, head.column, "horizon given twice"));
                }
                horizon = Some(index(toks[1])?);
                section = None;
                continue;
            }
            "nodes" | "arcs" | "supply" | "demand" => {
                expect(1)?;
                section = Some(match head.text {
                    "nodes" => Section::Nodes,
                    "arcs" => Section::Arcs,
                    "supply" => Section::Supply,
                    _ => Section::Demand,
                });
                continue;
            }
            _ => {}
        }
        match section {
            None => {
                return Err(err(
                    head.line,
                    head.column,
                    format!("unexpected `{}` outside a section", head.text),
                ))
            }
            Some(Section::Nodes) => {
                expect(6)?;
                let id = index(toks[0])?;
                let kind = match toks[1].text {
                    "source" => NodeKind::Source,
                    "tank" => NodeKind::Tank,
                    "plant" => NodeKind::Plant,
                    other => {
                        return Err(err(
                            toks[1].line,
                            toks[1].column,
                            format!("unknown node kind `{other}`"),
                        ))
                    }
                };
                let node = Node {
                    kind,
                    initial_quantity: num(toks[2])?,
                    initial_quality: num(toks[3])?,
                    min_storage: num(toks[4])?,
                    max_storage: num(toks[5])?,
                };
                if nodes.iter().any(|n| n.0 == id) {
                    return Err(err(toks[0].line, toks[0].column, format!("duplicate node id {id}")));
                }
                nodes.push((id, toks[0], node));
            }
            Some(Section::Arcs) => {
                expect(5)?;
                let arc = Arc {
                    from: 0,
                    to: 0,
                    lower: num(toks[2])?,
                    upper: num(toks[3])?,
                    cost: num(toks[4])?,
                };
                arcs.push((toks[0], index(toks[0])?, toks[1], index(toks[1])?, arc));
            }
            Some(Section::Supply) => {
                expect(4)?;
                supply.push((toks[0], toks));
            }
            Some(Section::Demand) => {
                expect(5)?;
                demand.push((toks[0], toks));
            }
        }
    }

    let h = horizon.ok_or_else(|| err(last_line, 1, "missing `horizon`"))?;
    let rank = |k: NodeKind| match k {
        NodeKind::Source => 0,
        NodeKind::Tank => 1,
        NodeKind::Plant => 2,
    };
    nodes.sort_by_key(|n| rank(n.2.kind));
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, n)| (n.0, k)).collect();
    let lookup = |tok: Token<'_>, id: usize| {
        pos.get(&id)
            .copied()
            .ok_or_else(|| err(tok.line, tok.column, format!("unknown node id {id}")))
    };

    let mut arc_list = Vec::with_capacity(arcs.len());
    for (ft, f, tt, t, mut arc) in arcs {
        arc.from = lookup(ft, f)?;
        arc.to = lookup(tt, t)?;
        arc_list.push(arc);
    }
    let sources: Vec<usize> = (0..nodes.len())
        .filter(|&k| nodes[k].2.kind == NodeKind::Source)
        .collect();
    let plants: Vec<usize> = (0..nodes.len())
        .filter(|&k| nodes[k].2.kind == NodeKind::Plant)
        .collect();

    let step = |tok: Token<'_>| -> Result<usize> {
        let t = index(tok)?;
        if t > h {
            return Err(err(tok.line, tok.column, format!("step {t} is past the horizon {h}")));
        }
        Ok(t - 1)
    };
    let mut sa = vec![vec![None; h]; sources.len()];
    let mut sq = vec![vec![0.0; h]; sources.len()];
    for (_, toks) in &supply {
        let node = lookup(toks[0], index(toks[0])?)?;
        let k = sources.iter().position(|&s| s == node).ok_or_else(|| {
            err(
                toks[0].line,
                toks[0].column,
                "supply row for a node that is not a source",
            )
        })?;
        let t = step(toks[1])?;
        if sa[k][t].is_some() {
            return Err(err(toks[0].line, toks[0].column, "duplicate supply row"));
        }
        sa[k][t] = Some(num(toks[2])?);
        sq[k][t] = num(toks[3])?;
    }
    let mut rc = vec![vec![None; h]; plants.len()];
    let mut rq = vec![vec![0.0; h]; plants.len()];
    let mut cq: Vec<Option<f64>> = vec![None; plants.len()];
    for (_, toks) in &demand {
        let node = lookup(toks[0], index(toks[0])?)?;
        let k = plants.iter().position(|&p| p == node).ok_or_else(|| {
            err(
                toks[0].line,
                toks[0].column,
                "demand row for a node that is not a plant",
            )
        })?;
        let t = step(toks[1])?;
        if rc[k][t].is_some() {
            return Err(err(toks[0].line, toks[0].column, "duplicate demand row"));
        }
        rc[k][t] = Some(num(toks[2])?);
        rq[k][t] = num(toks[3])?;
        let c = num(toks[4])?;
        match cq[k] {
            Some(prev) if prev != c => {
                return Err(err(
                    toks[4].line,
                    toks[4].column,
                    "shortage cost must be the same at every step",
                ))
            }
            _ => cq[k] = Some(c),
        }
    }
    let complete = |rows: Vec<Vec<Option<f64>>>, ids: &[usize], what: &str| -> Result<Vec<Vec<f64>>> {
        rows.into_iter()
            .zip(ids)
            .map(|(r, &k)| {
                r.iter()
                    .enumerate()
                    .map(|(t, v)| {
                        v.ok_or_else(|| {
                            err(
                                last_line,
                                1,
                                format!("node {} has no {what} row for step {}", nodes[k].0, t + 1),
                            )
                        })
                    })
                    .collect()
            })
            .collect()
    };
    let supply_quantity = complete(sa, &sources, "supply")?;
    let demand_quantity = complete(rc, &plants, "demand")?;
    let data = InstanceData {
        nodes: nodes.iter().map(|n| n.2.clone()).collect(),
        arcs: arc_list,
        horizon: h,
        supply_quantity,
        supply_quality: sq,
        demand_quantity,
        demand_quality: rq,
        shortage_cost: cq.into_iter().map(|c| c.unwrap_or(0.0)).collect(),
    };
    Instance::new(data).map_err(|e| match e {
        PoolingError::InvalidInstance(msg) => err(last_line, 1, msg),
        other => other,
    })
}

/// Writes an instance in the file format. Node ids are positions plus one.
pub fn write_instance(inst: &Instance) -> String {
    let mut s = String::new();
    let kind = |k: NodeKind| match k {
        NodeKind::Source => "source",
        NodeKind::Tank => "tank",
        NodeKind::Plant => "plant",
    };
    let _ = writeln!(s, "{FORMAT_NAME} {FORMAT_VERSION}");
    let _ = writeln!(s, "horizon {}", inst.horizon());
    let _ = writeln!(s, "nodes");
    let _ = writeln!(s, "# id kind p1 q1 pmin pmax");
    for (i, n) in inst.nodes().iter().enumerate() {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            i + 1,
            kind(n.kind),
            n.initial_quantity,
            n.initial_quality,
            n.min_storage,
            n.max_storage
        );
    }
    let _ = writeln!(s, "arcs");
    let _ = writeln!(s, "# from to L U CA");
    for a in inst.arcs() {
        let _ = writeln!(s, "{} {} {} {} {}", a.from + 1, a.to + 1, a.lower, a.upper, a.cost);
    }
    let _ = writeln!(s, "supply");
    let _ = writeln!(s, "# source t SA SQ");
    for i in inst.sources() {
        for t in 0..inst.horizon() {
            let (q, c) = inst.supply(i, t);
            let _ = writeln!(s, "{} {} {} {}", i + 1, t + 1, q, c);
        }
    }
    let _ = writeln!(s, "demand");
    let _ = writeln!(s, "# plant t RC RQ CQ");
    for i in inst.plants() {
        for t in 0..inst.horizon() {
            let (rc, rq) = inst.demand(i, t);
            let _ = writeln!(s, "{} {} {} {} {}", i + 1, t + 1, rc, rq, inst.shortage_cost(i));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, GeneratorSpec};
    use crate::model::fixtures::small;
    use proptest::prelude::*;

    const EXAMPLE: &str = "\
pooling-instance 1
horizon 2
nodes
# id kind p1 q1 pmin pmax
1 source 0 3 0 0
2 tank 10 2 0 40
3 plant 0 0 0 0
arcs
1 2 0 20 1
2 3 0 20 3
supply
1 1 5 3
1 2 6 3
demand
3 1 4 2.5 100
3 2 5 2.5 100   # trailing comment
";

    fn parse_err(text: &str) -> (usize, usize, String) {
        match parse_instance(text).unwrap_err() {
            PoolingError::Parse { line, column, msg } => (line, column, msg),
            e => panic!("not a parse error: {e}"),
        }
    }

    #[test]
    fn parses_documented_example() {
        let inst = parse_instance(EXAMPLE).unwrap();
        assert_eq!((inst.horizon(), inst.num_nodes(), inst.arcs().len()), (2, 3, 2));
        assert_eq!(inst.supply(0, 1), (6.0, 3.0));
        assert_eq!(inst.demand(2, 0), (4.0, 2.5));
        assert_eq!(inst.shortage_cost(2), 100.0);
    }

    #[test]
    fn reorders_nodes_by_kind() {
        let text = EXAMPLE
            .replace(
                "1 source 0 3 0 0\n2 tank 10 2 0 40\n3 plant 0 0 0 0",
                "9 plant 0 0 0 0\n2 tank 10 2 0 40\n1 source 0 3 0 0",
            )
            .replace("2 3 0 20 3", "2 9 0 20 3")
            .replace("3 1 4", "9 1 4")
            .replace("3 2 5", "9 2 5");
        let a = parse_instance(EXAMPLE).unwrap();
        let b = parse_instance(&text).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reports_line_and_column() {
        assert_eq!(parse_err("").0, 1);
        let (l, c, _) = parse_err("pooling-instance 2\n");
        assert_eq!((l, c), (1, 18));
        let (l, c, m) = parse_err(&EXAMPLE.replace("2 tank 10 2 0 40", "2 tank 10 x 0 40"));
        assert_eq!((l, c), (6, 11), "{m}");
        let (l, c, m) = parse_err(&EXAMPLE.replace("2 3 0 20 3", "2 7 0 20 3"));
        assert_eq!((l, c), (10, 3), "{m}");
        let (l, _, m) = parse_err(&EXAMPLE.replace("1 2 6 3\n", ""));
        assert!(m.contains("no supply row for step 2"), "{m}");
        assert_eq!(l, 15);
        let (_, c, m) = parse_err(&EXAMPLE.replace("3 2 5 2.5 100", "3 2 5 2.5 90"));
        assert_eq!(c, 11, "{m}");
        let (l, c, _) = parse_err(&EXAMPLE.replace("1 1 5 3", "1 3 5 3"));
        assert_eq!((l, c), (12, 3));
    }

    #[test]
    fn model_validation_surfaces_as_parse_error() {
        let (_, _, m) = parse_err(&EXAMPLE.replace("2 3 0 20 3", "3 2 0 20 3"));
        assert!(!m.is_empty());
    }

    #[test]
    fn fixture_round_trip() {
        let inst = small(4);
        assert_eq!(parse_instance(&write_instance(&inst)).unwrap(), inst);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generated_round_trip(s in 1usize..4, i in 1usize..5, p in 1usize..4, h in 1usize..5, seed in 0u64..10_000) {
            let g = generate(&GeneratorSpec::new(s, i, p, h, seed)).unwrap();
            let text = write_instance(&g.instance);
            let back = parse_instance(&text).unwrap();
            prop_assert_eq!(&back, &g.instance);
            prop_assert_eq!(write_instance(&back), text);
        }
    }
}
