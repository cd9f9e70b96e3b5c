//! Executable machinery for checking direct refinements between open
//! modules: a block-based memory model, memory injections, Kripke memory
//! relations with their transitivity constructions, open labeled transition
//! systems with semantic linking, simulation conventions with a rewrite
//! engine, and a small two-language compiler whose passes are validated by
//! co-execution.

pub mod compiler;
pub mod conv;
pub mod gen;
pub mod inject;
pub mod json;
pub mod kmr;
pub mod lang;
pub mod mem;
pub mod scenarios;
pub mod sem;
pub mod specs;
