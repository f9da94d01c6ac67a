//! Desk-scale laboratory for temporal dense retrieval.
//!
//! The crate covers the full experiment lifecycle: synthetic temporal-QA
//! corpus generation, contrastive fine-tuning of a small dense encoder
//! (full, regularized, LoRA, and per-specifier variants), parameter-average
//! model merging, exact top-k retrieval with ensembling and routing
//! strategies, and Recall/nDCG evaluation with per-specifier breakdowns.

pub mod corpuslab;
pub mod encoder;
pub mod evalkit;
pub mod experiment;
pub mod mergekit;
pub mod retrieval;
pub mod timeparse;
pub mod trainlab;
