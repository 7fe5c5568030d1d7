//! Capability-aware orchestration of heterogeneous binary detectors.
//!
//! A compact parametric agent decides, round by round, which simulated
//! detector ("tool") to invoke for a sample and when to stop and commit to a
//! real/fake verdict. Tools are described to the agent through capability
//! profiles compiled from calibration data. The agent is trained with
//! group-relative policy optimization from binary labels only, and can be
//! handed new tools at inference time without retraining.
//!
//! Module map:
//!
//! ```text
//! domain        samples, tags, actions, trajectories, JSONL log format
//! sim           scenario config, dataset generation, synthetic detectors
//! profile       per-tag calibration metrics and profile compilation
//! orchestrator  the select / analyze / conclude episode loop
//! policy        featurizer, shared per-tool scorer, heuristic reference
//! grpo          reward decomposition, group advantages, training loop
//! baselines     ensemble baselines and the Bayes-optimal oracle
//! metrics       R-Acc / F-Acc / B-Acc / F1 and report rendering
//! pipeline      end-to-end helpers shared by the CLI and the tests
//! ```

pub mod baselines;
pub mod domain;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod orchestrator;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod profile;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
