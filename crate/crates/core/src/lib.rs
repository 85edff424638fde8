//! Core library for benchmarking dense-network image classifiers against
//! non-gradient black-box attacks.
//!
//! The pieces fit together as a pipeline:
//!
//! * [`data`] ingests MNIST-shaped IDX files, picks per-class representative
//!   images, and draws seeded evaluation subsets.
//! * [`nn`] is a minimal dense feed-forward network with two loss heads,
//!   backpropagation, SGD training, and a finite-difference gradient checker.
//! * [`defense`] assembles the five defended classifiers (input binarization,
//!   image-recall heads, color-depth reduction, total-variation denoising),
//!   each exposing a single black-box `predict`.
//! * [`attacks`] holds four derivative-free attacks that only see the model's
//!   decision, each operating under an explicit query budget.
//! * [`resistance`] measures the resistance ratio Ω = failed attacks / total
//!   inputs over an evaluation set, plus multi-run stability.

pub mod attacks;
pub mod data;
pub mod defense;
pub mod nn;
pub mod resistance;

pub use attacks::{AttackBudget, AttackKind, AttackResult, DecisionModel, DecisionOracle};
pub use data::{Dataset, EvalSet, Image, PixelDomain, RepresentativeSet, Split};
pub use defense::{DefendedModel, PreprocessConfig, VariantKind};
pub use nn::{Activation, DenseNet, LossKind, TrainConfig};
pub use resistance::{ResistanceResult, StabilityReport};
