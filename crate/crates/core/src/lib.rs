//! Off-policy learning of daily ICU lab-test orders from logged data.
//!
//! The pipeline: generate (or load) a cohort of ICU stays, derive per-stay
//! order bounds from a clinical rule set, train a 48h→24h status forecaster,
//! estimate the order propensity density with a conditional spline flow, and
//! learn an order policy by Lagrangian gradient descent-ascent under a
//! density (overlap) constraint. A benchmark harness evaluates the learned
//! policies against random, bound, and physician baselines.

pub mod config;
pub mod data;
pub mod explain;
pub mod forecast;
pub mod gps;
pub mod numeric;
pub mod outcome;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod rules;
pub mod synth;

pub use data::{FeatureCatalog, FeatureStats, PatientStay, StayWindow, K};
pub use outcome::{Metrics, OutcomeConfig};
pub use rules::{OrderBounds, RuleSet};
