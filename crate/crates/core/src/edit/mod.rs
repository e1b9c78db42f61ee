// SPDX-License-Identifier: MIT OR Apache-2.0

//! Batched MLP weight editing with optional same-subject value merging.

mod apply;
mod config;
mod covariance;
mod finetune;
mod keys;
mod request;
mod update;
mod value;

pub use apply::{apply_edit_batch, group_batch, CovarianceSet, EditLog, EditMode, EditOutcome, EditPlan, LayerPlan};
pub use config::{CovarianceHyper, EditConfig, FinetuneHyper, ValueHyper};
pub use covariance::{covariance_from_keys, covariance_sample, estimate_covariance, CovarianceEstimate};
pub use finetune::{finetune_baseline, FinetuneOutcome};
pub use keys::{compute_key, compute_key_with_prefixes, KeyVector};
pub use request::{contexts_for, sample_prefixes, EditContext, EditRequest};
pub use update::closed_form_update;
pub use value::{optimize_value, optimize_value_merged, ValueVector};
