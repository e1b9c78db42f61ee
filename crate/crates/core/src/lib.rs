// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod data;
pub mod diagnostics;
pub mod edit;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod tokenizer;

pub use error::{Error, Result};
