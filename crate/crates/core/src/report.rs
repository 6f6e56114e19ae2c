//! CSV and plain-text renderings of solve reports and schedules.

use crate::error::{PoolingError, Result};
use crate::model::{Instance, NodeKind, Schedule};
use crate::pipeline::SolveReport;
use std::io::Write;

pub const REPORT_HEADER: [&str; 16] = [
    "name",
    "relax",
    "mode",
    "variables",
    "relax_start",
    "relax_final",
    "relax_other",
    "recovered_objective",
    "sucs_ratio",
    "dynamics_residual",
    "ffs_nodes",
    "iterations",
    "relax_seconds",
    "ffs_seconds",
    "reschedule_seconds",
    "total_seconds",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> PoolingError {
    PoolingError::Io(std::io::Error::other(e.to_string()))
}

fn fields(r: &SolveReport) -> Vec<String> {
    vec![
        r.name.clone(),
        r.relax.name().to_string(),
        r.mode.name().to_string(),
        r.variables.to_string(),
        r.relax_start.to_string(),
        opt(r.relax_final),
        opt(r.relax_other),
        opt(r.recovered_objective),
        opt(r.sucs_ratio),
        opt(r.dynamics_residual),
        opt(r.ffs_nodes),
        r.iterations.to_string(),
        r.times.relax.as_secs_f64().to_string(),
        r.times.ffs.as_secs_f64().to_string(),
        r.times.reschedule.as_secs_f64().to_string(),
        r.times.total.as_secs_f64().to_string(),
    ]
}

/// Writes reports as CSV with [`REPORT_HEADER`] plus a final
/// `termination` column.
pub fn write_reports_csv<W: Write>(out: W, reports: &[SolveReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REPORT_HEADER.to_vec();
    header.push("termination");
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut row = fields(r);
        row.push(r.termination.clone());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a file written by [`write_reports_csv`], each row as
/// `(column, cell)` pairs; blank cells are `None`.
pub fn read_reports_csv(text: &str) -> Result<Vec<Vec<(String, Option<String>)>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let expected = REPORT_HEADER.iter().copied().chain(["termination"]);
    if !header.iter().eq(expected) {
        return Err(PoolingError::Parse {
            line: 1,
            column: 1,
            msg: "unexpected report header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), (!v.is_empty()).then(|| v.to_string())))
                .collect(),
        );
    }
    Ok(rows)
}

fn num(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

/// Aligned text table, one row per report.
pub fn format_table(reports: &[SolveReport]) -> String {
    let head = [
        "name",
        "relax",
        "mode",
        "n",
        "relax start",
        "relax final",
        "other",
        "recovered",
        "sucs",
        "dyn",
        "time(s)",
        "termination",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.relax.name().to_string(),
                r.mode.name().to_string(),
                r.variables.to_string(),
                num(Some(r.relax_start), 4),
                num(r.relax_final, 4),
                num(r.relax_other, 4),
                num(r.recovered_objective, 4),
                num(r.sucs_ratio, 4),
                r.dynamics_residual.map(|v| format!("{v:.1e}")).unwrap_or_default(),
                format!("{:.2}", r.times.total.as_secs_f64()),
                r.termination.clone(),
            ]
        })
        .collect();
    align_table(&head, &rows, 3)
}

/// Pads cells into columns; the first `left` columns are left-aligned,
/// the last one is left unpadded, the rest are right-aligned.
pub fn align_table(head: &[&str], rows: &[Vec<String>], left: usize) -> String {
    let mut width: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let last = cells.len().saturating_sub(1);
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(&width).enumerate() {
            if k == last {
                s.push_str(c);
            } else if k < left {
                s.push_str(&format!("{c:<w$}  "));
            } else {
                s.push_str(&format!("{c:>w$}  "));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&head.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

/// Writes a schedule as CSV rows `record,step,a,b,value`: `flow,t,from,to,a`,
/// `quantity,t,node,,p`, `quality,t,node,,q` and `shortage,t,plant,,v`.
/// Storage states run over `0..=horizon`, flows and plant values over the
/// steps.
pub fn write_schedule_csv<W: Write>(out: W, inst: &Instance, s: &Schedule) -> Result<()> {
    s.check_dims(inst)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record", "step", "a", "b", "value"]).map_err(csv_err)?;
    let h = inst.horizon();
    for t in 0..h {
        for (e, arc) in inst.arcs().iter().enumerate() {
            let row = [
                "flow".to_string(),
                t.to_string(),
                arc.from.to_string(),
                arc.to.to_string(),
                s.flow[t][e].to_string(),
            ];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    for t in 0..=h {
        for i in 0..inst.num_nodes() {
            let plant = inst.kind(i) == NodeKind::Plant;
            if plant && t == h {
                continue;
            }
            if !plant {
                let row = [
                    "quantity".to_string(),
                    t.to_string(),
                    i.to_string(),
                    String::new(),
                    s.quantity[t][i].to_string(),
                ];
                w.write_record(&row).map_err(csv_err)?;
            }
            let row = [
                "quality".to_string(),
                t.to_string(),
                i.to_string(),
                String::new(),
                s.quality[t][i].to_string(),
            ];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    for t in 0..h {
        for (k, i) in inst.plants().enumerate() {
            let row = [
                "shortage".to_string(),
                t.to_string(),
                i.to_string(),
                String::new(),
                s.shortage[t][k].to_string(),
            ];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
