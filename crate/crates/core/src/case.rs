//! Case files.
//!
//! ```toml
//! [header]
//! schema_version = 1
//! n_nodes = 2
//! rx_ratio = 0.0     # shared R/X ratio, tan(kappa)
//! slack = 1
//!
//! [[nodes]]
//! id = 1             # 1-based
//! p_set = 0.0        # p.u.
//! q_set = 0.0        # p.u.
//! v_set = 1.0        # optional voltage set point, p.u.
//!
//! [[branches]]
//! from = 1
//! to = 2
//! b = 1.0            # susceptance magnitude, p.u.
//! ```
//!
//! Node ids in files are 1-based and are shifted to 0-based indices on load.
//! Unknown fields are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{Branch, Grid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub grid: Grid,
    pub p_set: Vec<f64>,
    pub q_set: Vec<f64>,
    pub v_set: Vec<Option<f64>>,
    /// 0-based slack index.
    pub slack: usize,
}

impl Case {
    /// Voltage set points, defaulting to 1.0 where none is given.
    pub fn v_set_or_unity(&self) -> Vec<f64> {
        self.v_set.iter().map(|v| v.unwrap_or(1.0)).collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    header: RawHeader,
    nodes: Vec<RawNode>,
    #[serde(default)]
    branches: Vec<RawBranch>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    schema_version: u32,
    n_nodes: usize,
    #[serde(default)]
    rx_ratio: f64,
    slack: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: usize,
    p_set: f64,
    q_set: f64,
    v_set: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    from: usize,
    to: usize,
    b: f64,
}

pub fn load_case(path: impl AsRef<Path>) -> Result<Case> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::CaseParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_case(&text).map_err(|e| match e {
        Error::CaseParse { message, .. } => Error::CaseParse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn parse_case(text: &str) -> Result<Case> {
    let parse_err = |message: String| Error::CaseParse {
        path: "<string>".into(),
        message,
    };
    let raw: RawCase = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let h = raw.header;
    if h.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: h.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let n = h.n_nodes;
    let index = |id: usize, what: &str| -> Result<usize> {
        if id == 0 || id > n {
            Err(Error::InvalidGrid(format!("{what}: node id {id} out of range 1..={n}")))
        } else {
            Ok(id - 1)
        }
    };

    let slack = index(h.slack, "header.slack")?;
    let mut p_set = vec![f64::NAN; n];
    let mut q_set = vec![f64::NAN; n];
    let mut v_set = vec![None; n];
    let mut seen = vec![false; n];
    for node in &raw.nodes {
        let i = index(node.id, "nodes")?;
        if seen[i] {
            return Err(Error::InvalidGrid(format!("nodes: duplicate id {}", node.id)));
        }
        seen[i] = true;
        if let Some(v) = node.v_set {
            if !(v > 0.0) {
                return Err(Error::NonPositiveVoltage { node: i, value: v });
            }
        }
        p_set[i] = node.p_set;
        q_set[i] = node.q_set;
        v_set[i] = node.v_set;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidGrid(format!("nodes: missing entry for id {}", i + 1)));
    }

    let branches = raw
        .branches
        .iter()
        .map(|b| Ok(Branch::new(index(b.from, "branches")?, index(b.to, "branches")?, b.b)))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(n, branches, h.rx_ratio)?;
    Ok(Case {
        grid,
        p_set,
        q_set,
        v_set,
        slack,
    })
}

/// Directory holding the bundled case files.
pub fn bundled_cases_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("cases")
}

pub fn bundled_case(name: &str) -> Result<Case> {
    load_case(bundled_cases_dir().join(format!("{name}.toml")))
}
