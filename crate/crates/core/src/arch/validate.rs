use std::fmt;

use serde::{Deserialize, Serialize};

use super::cell::{CellSpec, CellType};
use super::genotype::Genotype;
use super::op::OpFamily;
use super::space::SearchSpaceSpec;
use super::ArchError;

/// Cap on average-pooling edges per causal cell.
pub const AVG_POOL_CAP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub cell: Option<CellType>,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cell {
            Some(c) => write!(f, "[{c} cell] {}: {}", self.rule, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_structure(cell: &CellSpec, space: &SearchSpaceSpec) -> Result<(), ArchError> {
    let max_to = space.output_node();
    for e in &cell.edges {
        if e.to < 2 || e.to >= max_to {
            return Err(ArchError::Structure {
                cell: cell.cell_type,
                detail: format!("edge target {} outside intermediate range 2..{max_to}", e.to),
            });
        }
        if e.from >= e.to {
            return Err(ArchError::Structure {
                cell: cell.cell_type,
                detail: format!("edge {} -> {} is not forward", e.from, e.to),
            });
        }
        e.op.check().map_err(|err| ArchError::Structure {
            cell: cell.cell_type,
            detail: err.to_string(),
        })?;
    }
    Ok(())
}

fn check_cell(cell: &CellSpec, space: &SearchSpaceSpec, report: &mut ValidationReport) {
    let cell_kind = cell.cell_type;
    let mut push = |rule: &str, detail: String| {
        report.violations.push(Violation { cell: Some(cell_kind), rule: rule.into(), detail });
    };
    let k = space.retain_k as usize;
    for node in 2..space.output_node() {
        let incoming = cell.incoming(node);
        if incoming.len() != k {
            push(
                "retain-k",
                format!("node {node} has {} incoming edges, expected {k}", incoming.len()),
            );
        }
        let mut froms: Vec<usize> = incoming.iter().map(|e| e.from).collect();
        froms.sort_unstable();
        froms.dedup();
        if froms.len() != incoming.len() {
            push("distinct-predecessors", format!("node {node} repeats a predecessor"));
        }
    }
    for e in &cell.edges {
        if e.op.family == OpFamily::Zero {
            push("no-zero-op", format!("edge {} -> {} carries the zero op", e.from, e.to));
        }
        if space.op_index(&e.op).is_none() && e.op.family != OpFamily::Zero {
            push(
                "op-in-space",
                format!("edge {} -> {} op {} is not in space {}", e.from, e.to, e.op.name(), space.name),
            );
        }
        if cell.cell_type == CellType::Causal && !e.op.causal && e.op.time_blocks().iter().sum::<u32>() > 0
        {
            push(
                "causal-padding",
                format!("edge {} -> {} op {} looks ahead inside a causal cell", e.from, e.to, e.op.name()),
            );
        }
    }
    if cell.cell_type == CellType::Causal {
        let pools = cell.edges.iter().filter(|e| e.op.family == OpFamily::AvgPool).count();
        if pools > AVG_POOL_CAP {
            push(
                "avg-pool-cap",
                format!("{pools} average-pooling edges exceed the cap of {AVG_POOL_CAP}"),
            );
        }
    }
}

/// Rule checking for a structurally well-formed genotype. Malformed node
/// indices or impossible op parameters are an `Err`; rule violations are
/// collected into the report.
pub fn validate_genotype(
    g: &Genotype,
    space: &SearchSpaceSpec,
) -> Result<ValidationReport, ArchError> {
    let mut report = ValidationReport::default();
    if g.space != space.name {
        report.violations.push(Violation {
            cell: None,
            rule: "space-name".into(),
            detail: format!("genotype space {} does not match {}", g.space, space.name),
        });
    }
    for cell in [&g.causal_cell, &g.reduction_cell] {
        check_structure(cell, space)?;
        check_cell(cell, space, &mut report);
    }
    if g.causal_cell.cell_type != CellType::Causal || g.reduction_cell.cell_type != CellType::Reduction
    {
        report.violations.push(Violation {
            cell: None,
            rule: "cell-roles".into(),
            detail: "cell slots must hold a causal and a reduction cell".into(),
        });
    }
    Ok(report)
}
