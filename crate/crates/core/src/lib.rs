#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Fair and private federated learning on tabular data.
//!
//! Each agent first trains a fair teacher on its own shard (never shared),
//! then distills it into a student with DP-SGD; only student parameters are
//! averaged across agents. The crate also ships the non-private baselines,
//! a Rényi-DP accountant, data loading and the experiment/report runner.

pub mod accountant;
pub mod config;
pub mod data;
pub mod distill;
pub mod dp;
mod error;
pub mod experiment;
pub mod fairness;
pub mod federation;
pub mod nn;
pub mod seed;

pub use accountant::{calibrate_sigma, epsilon, PrivacyLedger, RdpCurve};
pub use config::{parse_config, Mode, Phase1Config, Phase2Config, RunConfig};
pub use data::{Batch, ShardPlan, TabularDataset};
pub use distill::TeacherSnapshot;
pub use dp::{DpConfig, DpTrainState};
pub use error::{Error, Result};
pub use experiment::{emit_report, run, sweep, ReportFormat, RunReport};
pub use fairness::{FairnessMetricKind, LagrangeState};
pub use federation::{Agent, AggregationRound, FairTrainState, MetricsReport, WireMessage};
pub use nn::{GradBatch, Mlp, ParamVector};
