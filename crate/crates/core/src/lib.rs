//! Static analyzer for EVM bytecode that reconstructs a context-sensitive
//! control-flow graph, infers abstract memory slots and their read/write
//! accesses, and reports writes that are provably never read (needless
//! writes). A concrete-execution oracle validates the analysis on fixtures
//! and randomly generated programs.

pub mod access;
pub mod asm;
pub mod builder;
pub mod cfg;
pub mod fixpoint;
pub mod fixtures;
pub mod generator;
pub mod needless;
pub mod opcode;
pub mod oracle;
pub mod pipeline;
pub mod slot;

pub use asm::{disassemble, fuse_fmp_accesses, parse_input, strip_metadata, Disassembly, FmpAccess, Instruction};
pub use cfg::{Cfg, CfgError, CfgLimits, ProgramPoint};
pub use opcode::Opcode;
pub use pipeline::{analyze, analyze_contract, run_corpus, AnalyzeConfig, AnalysisReport};
pub use slot::SlotId;
