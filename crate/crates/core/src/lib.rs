//! Static analysis and source rewriting that inserts OpenMP target data
//! mappings and updates into C programs with offloaded kernels.

pub mod access;
pub mod astcfg;
pub mod bounds;
pub mod cli;
pub mod dataflow;
pub mod error;
pub mod frontend;
pub mod interproc;
pub mod rewriter;
pub mod simulator;
pub mod source;

pub use error::{Diagnostic, Error, Result, Severity};
pub use source::{SourceFile, Span};
