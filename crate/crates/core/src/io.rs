//! File formats: table JSON with a JSON-lines sidecar for the joint support,
//! path and realization JSON lines, and scan CSV.

use std::io::Write;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::config::MAX_DIMENSION;
use crate::core_process::CoreRealization;
use crate::cramer::A4Case;
use crate::error::{Error, Result};
use crate::monte_carlo::ScanRow;
use crate::oracle::{CoefficientTables, JointEntry, TableBounds};
use crate::prob::{parse_rational, Prob, ProbValue};
use crate::walk::{PathRecord, Site};

/// Largest table range accepted from a file.
pub const MAX_TABLE_N: i64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationMass {
    /// Unresolved mass of the zero-environment sweep, per `n`.
    pub p0: Vec<f64>,
    /// Unresolved mass of the environment sweep, per `n`.
    pub env: Vec<f64>,
    /// The part of `env` that can still end with no inner separating level;
    /// bounds `b`. Defaults to `env`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactColumns {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub u: Vec<String>,
    pub v: Vec<String>,
}

/// The table file. `a`, `b`, `u`, `v` are lower bounds; adding the matching
/// truncation mass gives the upper bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub n_max: i64,
    pub exhaustive: bool,
    #[serde(default)]
    pub step_cap: Option<usize>,
    pub up_prob: f64,
    #[serde(default)]
    pub a4_case: Option<A4Case>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub truncation_mass: TruncationMass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactColumns>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_n_max: Option<i64>,
}

impl TableFile {
    pub fn from_tables<W: Prob>(t: &CoefficientTables<W>, a4_case: Option<A4Case>) -> Self {
        let f = |v: &[W]| v.iter().map(W::to_f64).collect::<Vec<f64>>();
        let s = |v: &[W]| v.iter().map(|x| x.exact_string().unwrap_or_default()).collect::<Vec<String>>();
        TableFile {
            n_max: t.n_max,
            exhaustive: t.exhaustive,
            step_cap: t.step_cap,
            up_prob: t.up_prob,
            a4_case,
            a: f(&t.a),
            b: f(&t.b),
            u: f(&t.u),
            v: f(&t.v),
            truncation_mass: TruncationMass {
                p0: f(&t.unresolved_p0),
                env: f(&t.unresolved_env),
                eta: Some(f(&t.unresolved_eta)),
            },
            exact: W::EXACT.then(|| ExactColumns {
                a: s(&t.a),
                b: s(&t.b),
                u: s(&t.u),
                v: s(&t.v),
            }),
            joint_n_max: t.joint_n_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0..=MAX_TABLE_N).contains(&self.n_max) {
            return Err(Error::config("n_max", format!("must be in 0..={MAX_TABLE_N}")));
        }
        let len = self.n_max as usize + 1;
        let cols: [(&str, &Vec<f64>); 7] = [
            ("a", &self.a),
            ("b", &self.b),
            ("u", &self.u),
            ("v", &self.v),
            ("truncation_mass.p0", &self.truncation_mass.p0),
            ("truncation_mass.env", &self.truncation_mass.env),
            ("truncation_mass.eta", self.truncation_mass.eta.as_ref().unwrap_or(&self.truncation_mass.env)),
        ];
        for (name, col) in cols {
            if col.len() != len {
                return Err(Error::config(name, format!("expected {len} entries, got {}", col.len())));
            }
            if col.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::config(name, "entries must lie in [0, 1]"));
            }
        }
        if !(self.up_prob > 0.0 && self.up_prob <= 1.0) {
            return Err(Error::config("up_prob", "must lie in (0, 1]"));
        }
        if let Some(ex) = &self.exact {
            for (name, col) in [("exact.a", &ex.a), ("exact.b", &ex.b), ("exact.u", &ex.u), ("exact.v", &ex.v)] {
                if col.len() != len {
                    return Err(Error::config(name, format!("expected {len} entries, got {}", col.len())));
                }
                for x in col {
                    parse_rational(x).map_err(|e| Error::config(name, e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> TableBounds {
        let hi = |v: &[f64], t: &[f64]| v.iter().zip(t).map(|(x, e)| x + e).collect::<Vec<f64>>();
        let mut a_hi = hi(&self.a, &self.truncation_mass.p0);
        a_hi[0] = 0.0;
        TableBounds {
            n_max: self.n_max,
            exhaustive: self.exhaustive,
            up_prob: self.up_prob,
            a_lo: self.a.clone(),
            a_hi,
            b_lo: self.b.clone(),
            b_hi: hi(&self.b, self.truncation_mass.eta.as_ref().unwrap_or(&self.truncation_mass.env)),
            u_lo: self.u.clone(),
            u_hi: hi(&self.u, &self.truncation_mass.env),
            v_lo: self.v.clone(),
            v_hi: hi(&self.v, &self.truncation_mass.p0),
        }
    }

    /// Rebuilds scalar tables (exact columns when present) plus the joint support.
    pub fn to_tables<W: Prob>(&self, joint: &[JointLine]) -> Result<CoefficientTables<W>> {
        self.validate()?;
        let col = |exact: Option<&Vec<String>>, approx: &[f64]| -> Result<Vec<W>> {
            match exact {
                Some(e) => e.iter().map(|s| Ok(W::from_rational(&parse_rational(s)?))).collect(),
                None => approx.iter().map(|x| Ok(W::from_rational(&float_rational(*x)?))).collect(),
            }
        };
        let ex = self.exact.as_ref();
        let mut env_joint = Vec::new();
        let mut p0_joint = Vec::new();
        for line in joint {
            let entry = line.to_entry()?;
            match line.side {
                JointSide::Env => env_joint.push(entry),
                JointSide::P0 => p0_joint.push(entry),
            }
        }
        Ok(CoefficientTables {
            n_max: self.n_max,
            exhaustive: self.exhaustive,
            step_cap: self.step_cap,
            a: col(ex.map(|e| &e.a), &self.a)?,
            b: col(ex.map(|e| &e.b), &self.b)?,
            u: col(ex.map(|e| &e.u), &self.u)?,
            v: col(ex.map(|e| &e.v), &self.v)?,
            unresolved_p0: col(None, &self.truncation_mass.p0)?,
            unresolved_env: col(None, &self.truncation_mass.env)?,
            unresolved_eta: col(None, self.truncation_mass.eta.as_ref().unwrap_or(&self.truncation_mass.env))?,
            env_joint,
            p0_joint,
            joint_n_max: self.joint_n_max,
            up_prob: self.up_prob,
            nodes: 0,
        })
    }
}

fn float_rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::Parse(format!("non-finite value {x}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointSide {
    Env,
    P0,
}

/// One line of the joint-support sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLine {
    pub side: JointSide,
    pub n: i64,
    pub path: Vec<Site>,
    pub weight: ProbValue,
    pub levels: Vec<i64>,
}

impl JointLine {
    pub fn from_entry<W: Prob>(side: JointSide, e: &JointEntry<W>) -> Result<Self> {
        let weight = match e.weight.exact_string() {
            Some(s) => parse_rational(&s)?,
            None => float_rational(e.weight.to_f64())?,
        };
        Ok(JointLine {
            side,
            n: e.n,
            path: e.path.clone(),
            weight: ProbValue(weight),
            levels: e.levels.clone(),
        })
    }

    fn to_entry<W: Prob>(&self) -> Result<JointEntry<W>> {
        check_path(&self.path)?;
        if self.levels.is_empty() || self.levels.last() != Some(&self.n) {
            return Err(Error::Parse("joint line: levels must end at n".into()));
        }
        if self.path.last().map(Site::level) != Some(self.n) {
            return Err(Error::Parse("joint line: path must end at height n".into()));
        }
        Ok(JointEntry {
            n: self.n,
            path: self.path.clone(),
            weight: W::from_rational(&self.weight.0),
            levels: self.levels.clone(),
        })
    }
}

fn check_path(points: &[Site]) -> Result<()> {
    let Some(first) = points.first() else {
        return Err(Error::Parse("path has no points".into()));
    };
    let d = first.dim();
    if d == 0 || d > MAX_DIMENSION {
        return Err(Error::Parse(format!("path dimension must be in 1..={MAX_DIMENSION}")));
    }
    if points.iter().any(|p| p.dim() != d) {
        return Err(Error::Parse("path points disagree on dimension".into()));
    }
    Ok(())
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

fn write_lines<T: Serialize>(items: &[T], out: &mut dyn Write) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_tables_json(text: &str) -> Result<TableFile> {
    let file: TableFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub fn render_tables_json(file: &TableFile) -> Result<String> {
    serde_json::to_string_pretty(file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_joint_jsonl(text: &str) -> Result<Vec<JointLine>> {
    let lines: Vec<JointLine> = parse_lines(text, "joint")?;
    for l in &lines {
        check_path(&l.path)?;
    }
    Ok(lines)
}

pub fn joint_lines<W: Prob>(t: &CoefficientTables<W>) -> Result<Vec<JointLine>> {
    let env = t.env_joint.iter().map(|e| JointLine::from_entry(JointSide::Env, e));
    let p0 = t.p0_joint.iter().map(|e| JointLine::from_entry(JointSide::P0, e));
    env.chain(p0).collect()
}

pub fn write_joint_jsonl(lines: &[JointLine], out: &mut dyn Write) -> Result<()> {
    write_lines(lines, out)
}

pub fn parse_paths_jsonl(text: &str) -> Result<Vec<PathRecord>> {
    let paths: Vec<PathRecord> = parse_lines(text, "path")?;
    for p in &paths {
        check_path(&p.points)?;
    }
    Ok(paths)
}

pub fn write_paths_jsonl(paths: &[PathRecord], out: &mut dyn Write) -> Result<()> {
    write_lines(paths, out)
}

pub fn parse_realizations_jsonl(text: &str) -> Result<Vec<CoreRealization>> {
    let reals: Vec<CoreRealization> = parse_lines(text, "realization")?;
    for r in &reals {
        check_path(&r.points)?;
        if r.nu_bar.len() != r.t_bar.len() {
            return Err(Error::Parse("nu_bar and T_bar differ in length".into()));
        }
    }
    Ok(reals)
}

pub fn write_realizations_jsonl(reals: &[CoreRealization], out: &mut dyn Write) -> Result<()> {
    write_lines(reals, out)
}

pub fn write_scan_csv(rows: &[ScanRow], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_scan_csv(text: &str) -> Result<Vec<ScanRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
