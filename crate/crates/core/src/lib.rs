//! Architecture search toolkit for low-latency streaming sequence models.
//!
//! The crate is organized around a small number of layers:
//!
//! * [`arch`] describes candidate operations, cells, genotypes and the macro
//!   layout of a network, together with a JSON codec and validation rules.
//! * [`latency`] computes algorithmic latency of genotypes and search spaces
//!   by longest-path analysis over cell graphs, in integer input frames.
//! * [`tensor`] is a minimal 4-D tensor engine with reverse-mode gradients,
//!   sufficient for the operation set used here and nothing more.
//! * [`builder`] assembles weight-sharing supernets and discrete evaluation
//!   networks from a search space or genotype.
//! * [`search`] runs the staged bilevel search loop and turns relaxed edge
//!   scores into discrete genotypes.
//! * [`verify`] measures the empirical lookahead of a built network by
//!   perturbation probing and certifies it against the static analysis.
//! * [`data`] generates and serializes the synthetic frame-labeling task used
//!   for search and evaluation runs.
//! * [`cli`] implements the command-line workflows on top of the above.

pub mod arch;
pub mod builder;
pub mod cli;
pub mod data;
pub mod latency;
pub mod search;
pub mod tensor;
pub mod verify;

pub use arch::{
    build_macro_plan, encode_genotype, parse_genotype, validate_genotype, CellSpec, CellType,
    Edge, Genotype, MacroPlan, OperationKind, SearchSpaceSpec, SpaceName,
};
pub use latency::{cell_latency, network_latency, op_right_context, space_latency_bound, LatencyReport};
