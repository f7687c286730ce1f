//! Architecture description: operations, cells, genotypes, macro layout.

mod cell;
mod codec;
mod genotype;
mod op;
mod plan;
mod space;
mod validate;

pub use cell::{CellSpec, CellType, Edge};
pub use codec::{encode_genotype, parse_genotype, SCHEMA_VERSION};
pub use genotype::{sample_genotype, Genotype, GenotypeMetadata, StageRecord};
pub use op::{OpFamily, OperationKind};
pub use plan::{build_macro_plan, HeadSpec, MacroPlan};
pub use space::{SearchSpaceSpec, SpaceName};
pub use validate::{validate_genotype, ValidationReport, Violation, AVG_POOL_CAP};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid macro plan: {0}")]
    Plan(String),
    #[error("invalid operation: {0}")]
    Op(String),
    #[error("malformed {cell} cell: {detail}")]
    Structure { cell: CellType, detail: String },
    #[error("genotype parse error at {location}: {detail}")]
    Parse { location: String, detail: String },
    #[error("genotype failed validation:\n{0}")]
    Invalid(ValidationReport),
}
