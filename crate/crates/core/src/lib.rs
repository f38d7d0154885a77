//! Automated CPT E/M coding: guideline rules, exemplar retrieval, LLM
//! classification with critique and voting, and an evaluation harness.

pub mod audit;
pub mod domain;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod retrieval;
pub mod rules;
