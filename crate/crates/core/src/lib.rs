//! Translation of formal proof traces into natural-language proofs.
//!
//! The pipeline informalizes each tactic step through a per-tactic template
//! catalog and a premise library, arranges the steps in a dependency tree, and
//! summarizes that tree bottom-up into prose. The [`eval`] module holds the
//! measurement machinery used to judge the outputs.

pub mod backend;
pub mod eval;
pub mod informalize;
pub mod pipeline;
pub mod premise;
pub mod summarize;
pub mod template;
pub mod text;
pub mod trace;
pub mod tree;
