//! Report assembly and rendering: named sections of check lines with a
//! plain-text view and a flat CSV mirror, plus trajectory dumps. Rendering
//! is deterministic so reports produced with the same seed compare
//! byte-for-byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{DiscreteTrajectory, Mesh};
use crate::ocp::StationaryTupleOcp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Info,
    Inconclusive,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
            Status::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportLine {
    pub check: String,
    pub status: Status,
    pub value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub lines: Vec<ReportLine>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub title: String,
    /// Echo of the run configuration, rendered verbatim at the top.
    pub config: Vec<(String, String)>,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), config: Vec::new(), sections: Vec::new() }
    }

    pub fn config(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.config.push((key.into(), value.into()));
    }

    pub fn section(&mut self, name: impl Into<String>) -> &mut Section {
        self.sections.push(Section { name: name.into(), lines: Vec::new() });
        self.sections.last_mut().unwrap()
    }

    /// True when no line failed (info and inconclusive lines do not count
    /// as failures).
    pub fn all_passed(&self) -> bool {
        !self
            .sections
            .iter()
            .flat_map(|s| &s.lines)
            .any(|l| l.status == Status::Fail)
    }

    pub fn any_inconclusive(&self) -> bool {
        self.sections
            .iter()
            .flat_map(|s| &s.lines)
            .any(|l| l.status == Status::Inconclusive)
    }
}

impl Section {
    pub fn line(
        &mut self,
        check: impl Into<String>,
        status: Status,
        value: Option<f64>,
        detail: impl Into<String>,
    ) -> &mut Self {
        self.lines.push(ReportLine {
            check: check.into(),
            status,
            value,
            detail: detail.into(),
        });
        self
    }
}

/// Fixed-width scientific notation; the same bits always render to the
/// same text.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9e}")
    }
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", report.title);
    for (k, v) in &report.config {
        let _ = writeln!(out, "# {k} = {v}");
    }
    for section in &report.sections {
        let _ = writeln!(out, "\n[{}]", section.name);
        for l in &section.lines {
            let val = l.value.map(fmt_float).unwrap_or_default();
            let mut row = format!("{:<32} {:<12} {:<18}", l.check, l.status.label(), val);
            if !l.detail.is_empty() {
                let _ = write!(row, " {}", l.detail);
            }
            let _ = writeln!(out, "{}", row.trim_end());
        }
    }
    out
}

fn csv_quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat mirror of the text report: section,check,status,value,detail.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from("section,check,status,value,detail\n");
    for section in &report.sections {
        for l in &section.lines {
            let val = l.value.map(fmt_float).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_quote(&section.name),
                csv_quote(&l.check),
                l.status.label(),
                val,
                csv_quote(&l.detail)
            );
        }
    }
    out
}

/// Node-indexed dump of a trajectory: t, x..., u... (controls repeat the
/// interval value at the left node, blank at the final node).
pub fn trajectory_csv(traj: &DiscreteTrajectory, mesh: &Mesh) -> String {
    let n = traj.x[0].len();
    let m = traj.u[0].len();
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",x{}", j + 1);
    }
    for j in 0..m {
        let _ = write!(out, ",u{}", j + 1);
    }
    out.push('\n');
    for i in 0..=mesh.n_intervals {
        let _ = write!(out, "{}", fmt_float(mesh.node(i)));
        for j in 0..n {
            let _ = write!(out, ",{}", fmt_float(traj.x[i][j]));
        }
        for j in 0..m {
            if i < mesh.n_intervals {
                let _ = write!(out, ",{}", fmt_float(traj.u[i][j]));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Like trajectory_csv with adjoint and multiplier columns appended.
pub fn stationary_csv(tuple: &StationaryTupleOcp, mesh: &Mesh) -> String {
    let n = tuple.traj.x[0].len();
    let m = tuple.traj.u[0].len();
    let k = tuple.lambda.lambda[0].len();
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",x{}", j + 1);
    }
    for j in 0..m {
        let _ = write!(out, ",u{}", j + 1);
    }
    for j in 0..n {
        let _ = write!(out, ",p{}", j + 1);
    }
    for j in 0..k {
        let _ = write!(out, ",lambda{}", j + 1);
    }
    out.push('\n');
    for i in 0..=mesh.n_intervals {
        let _ = write!(out, "{}", fmt_float(mesh.node(i)));
        for j in 0..n {
            let _ = write!(out, ",{}", fmt_float(tuple.traj.x[i][j]));
        }
        for j in 0..m {
            if i < mesh.n_intervals {
                let _ = write!(out, ",{}", fmt_float(tuple.traj.u[i][j]));
            } else {
                out.push(',');
            }
        }
        for j in 0..n {
            let _ = write!(out, ",{}", fmt_float(tuple.p.p[i][j]));
        }
        for j in 0..k {
            if i < mesh.n_intervals {
                let _ = write!(out, ",{}", fmt_float(tuple.lambda.lambda[i][j]));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Write through a sibling temp file and rename, so readers never observe
/// a half-written report.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|f| f.to_str()).unwrap_or("report")
        )),
        None => Path::new(".report.tmp").to_path_buf(),
    };
    std::fs::write(&tmp, content)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}
