//! Plain-text serialization of a [`ConicProblem`], for reproducing solver
//! runs outside the toolkit.
//!
//! ```text
//! conic 1
//! dims <n> <m>
//! offset <value>
//! cones <count>
//! z <dim> | l <dim> | q <dim>
//! c
//! <n values, one per line>
//! b
//! <m values>
//! a <nnz>
//! <row> <col> <value>
//! ```

use crate::cones::Cone;
use crate::problem::ConicProblem;
use crate::sparse::CscMatrix;
use crate::ConicError;
use std::fmt::Write;

pub fn write_problem(p: &ConicProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic 1");
    let _ = writeln!(out, "dims {} {}", p.num_vars(), p.num_rows());
    let _ = writeln!(out, "offset {}", p.offset);
    let _ = writeln!(out, "cones {}", p.cones.len());
    for c in &p.cones {
        let (tag, d) = match c {
            Cone::Zero(d) => ("z", d),
            Cone::Nonneg(d) => ("l", d),
            Cone::Soc(d) => ("q", d),
        };
        let _ = writeln!(out, "{tag} {d}");
    }
    let _ = writeln!(out, "c");
    for v in &p.c {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(out, "b");
    for v in &p.b {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(out, "a {}", p.a.nnz());
    for j in 0..p.a.ncols {
        for (i, v) in p.a.col(j) {
            let _ = writeln!(out, "{i} {j} {v}");
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, ConicError> {
        loop {
            match self.inner.next() {
                Some((k, l)) => {
                    self.line = k + 1;
                    let l = l.trim();
                    if !l.is_empty() && !l.starts_with('#') {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> ConicError {
        ConicError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Vec<&'a str>, ConicError> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(kw) {
            return Err(self.err(format!("expected `{kw}`")));
        }
        Ok(parts.collect())
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T, ConicError> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }
}

pub fn read_problem(text: &str) -> Result<ConicProblem, ConicError> {
    let mut l = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let v = l.keyword("conic")?;
    if v != ["1"] {
        return Err(l.err("unsupported version"));
    }
    let d = l.keyword("dims")?;
    if d.len() != 2 {
        return Err(l.err("dims takes two values"));
    }
    let (n, m): (usize, usize) = (l.num(d[0])?, l.num(d[1])?);
    let o = l.keyword("offset")?;
    let offset: f64 = l.num(o.first().ok_or_else(|| l.err("missing offset"))?)?;
    let k = l.keyword("cones")?;
    let ncones: usize = l.num(k.first().ok_or_else(|| l.err("missing cone count"))?)?;
    let mut cones = Vec::with_capacity(ncones);
    for _ in 0..ncones {
        let line = l.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(l.err("cone line takes a tag and a dimension"));
        }
        let dim: usize = l.num(parts[1])?;
        cones.push(match parts[0] {
            "z" => Cone::Zero(dim),
            "l" => Cone::Nonneg(dim),
            "q" => Cone::Soc(dim),
            t => return Err(l.err(format!("unknown cone tag `{t}`"))),
        });
    }
    l.keyword("c")?;
    let mut c = Vec::with_capacity(n);
    for _ in 0..n {
        let s = l.next()?;
        c.push(l.num(s)?);
    }
    l.keyword("b")?;
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        let s = l.next()?;
        b.push(l.num(s)?);
    }
    let a = l.keyword("a")?;
    let nnz: usize = l.num(a.first().ok_or_else(|| l.err("missing nnz"))?)?;
    let mut trip = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let line = l.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(l.err("matrix entry takes row, column and value"));
        }
        let (i, j, v): (usize, usize, f64) = (l.num(parts[0])?, l.num(parts[1])?, l.num(parts[2])?);
        if i >= m || j >= n {
            return Err(l.err("matrix entry out of range"));
        }
        trip.push((i, j, v));
    }
    let a = CscMatrix::from_triplets(m, n, &trip);
    Ok(ConicProblem::new(c, a, b, cones)?.with_offset(offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = CscMatrix::from_triplets(3, 2, &[(0, 0, 1.5), (1, 1, -0.1), (2, 0, 1e-17)]);
        let p = ConicProblem::new(
            vec![0.3, -2.0],
            a,
            vec![1.0, 0.0, 2.0],
            vec![Cone::Zero(1), Cone::Nonneg(2)],
        )
        .unwrap()
        .with_offset(0.1);
        let q = read_problem(&write_problem(&p)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn reports_line_of_error() {
        let err = read_problem("conic 1\ndims 1 x\n").unwrap_err();
        assert!(matches!(err, ConicError::Parse { line: 2, .. }));
    }
}
