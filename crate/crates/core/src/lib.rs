//! Social computational design pipeline: shape grammars, a design-space
//! embedding, a conditional GAN for corpus expansion, Bayesian causal-map
//! scoring, a grammar-constrained completion model and design sessions.

pub mod bayes;
pub mod fixtures;
pub mod gan;
pub mod grammar;
pub mod nn;
pub mod pipeline;
pub mod session;
pub mod transformer;
pub mod vecspace;
