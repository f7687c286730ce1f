use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cell::{CellSpec, CellType, Edge};
use super::genotype::{Genotype, GenotypeMetadata};
use super::space::{SearchSpaceSpec, SpaceName};
use super::ArchError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    from: usize,
    to: usize,
    op: String,
    /// Present only when the op's padding differs from the cell default
    /// (causal cells default to causal ops, reduction cells to centered).
    #[serde(skip_serializing_if = "Option::is_none")]
    causal: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
struct GenotypeDoc {
    version: u32,
    space: String,
    causal_cell: CellDoc,
    reduction_cell: CellDoc,
    #[serde(default)]
    metadata: GenotypeMetadata,
}

fn default_causal(cell_type: CellType) -> bool {
    cell_type == CellType::Causal
}

fn cell_doc(cell: &CellSpec) -> CellDoc {
    let default = default_causal(cell.cell_type);
    let edges = cell
        .sorted_edges()
        .into_iter()
        .map(|e| EdgeDoc {
            from: e.from,
            to: e.to,
            op: e.op.name(),
            causal: if e.op.causal == default { None } else { Some(e.op.causal) },
        })
        .collect();
    CellDoc { edges }
}

/// Canonical JSON encoding: object keys sorted, two-space indent, trailing
/// newline. Byte-stable for equal genotypes.
pub fn encode_genotype(g: &Genotype) -> String {
    let doc = GenotypeDoc {
        version: SCHEMA_VERSION,
        space: g.space.as_str().to_string(),
        causal_cell: cell_doc(&g.causal_cell),
        reduction_cell: cell_doc(&g.reduction_cell),
        metadata: g.metadata.clone(),
    };
    // Round-tripping through Value sorts every object's keys.
    let value = serde_json::to_value(&doc).expect("genotype serializes");
    let mut text = serde_json::to_string_pretty(&sorted(value)).expect("value prints");
    text.push('\n');
    text
}

fn sorted(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = serde_json::Map::new();
            for (k, val) in entries {
                out.insert(k, sorted(val));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

fn parse_cell(
    doc: &CellDoc,
    cell_type: CellType,
    space: &SearchSpaceSpec,
) -> Result<CellSpec, ArchError> {
    let default = default_causal(cell_type);
    let max_to = space.output_node();
    let mut edges = Vec::with_capacity(doc.edges.len());
    for (i, e) in doc.edges.iter().enumerate() {
        let location = format!("{cell_type}_cell.edges[{i}]");
        let base = space.find_op(&e.op).ok_or_else(|| ArchError::Parse {
            location: location.clone(),
            detail: format!("unknown op {:?} for space {}", e.op, space.name),
        })?;
        if e.to < 2 || e.to >= max_to {
            return Err(ArchError::Parse {
                location,
                detail: format!("edge target {} outside intermediate range 2..{max_to}", e.to),
            });
        }
        if e.from >= e.to {
            return Err(ArchError::Parse {
                location,
                detail: format!("edge source {} must precede target {}", e.from, e.to),
            });
        }
        let causal = e.causal.unwrap_or(default);
        edges.push(Edge { from: e.from, to: e.to, op: base.with_causal(causal) });
    }
    Ok(CellSpec::new(cell_type, edges))
}

pub fn parse_genotype(text: &str) -> Result<Genotype, ArchError> {
    let doc: GenotypeDoc = serde_json::from_str(text).map_err(|e| ArchError::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    if doc.version != SCHEMA_VERSION {
        return Err(ArchError::Parse {
            location: "version".into(),
            detail: format!("unsupported schema version {} (expected {SCHEMA_VERSION})", doc.version),
        });
    }
    let space_name = SpaceName::parse(&doc.space).ok_or_else(|| ArchError::Parse {
        location: "space".into(),
        detail: format!("unknown space {:?}", doc.space),
    })?;
    let space = SearchSpaceSpec::preset(space_name);
    Ok(Genotype {
        space: space_name,
        causal_cell: parse_cell(&doc.causal_cell, CellType::Causal, &space)?,
        reduction_cell: parse_cell(&doc.reduction_cell, CellType::Reduction, &space)?,
        metadata: doc.metadata,
    })
}
