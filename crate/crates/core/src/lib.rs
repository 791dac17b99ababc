//! Photoplethysmogram (PPG) stress detection toolkit.
//!
//! The pipeline runs raw PPG through a zero-phase Butterworth band-pass,
//! detects systolic peaks, derives RR intervals, slices each recording into
//! labeled sliding windows, extracts a fixed catalog of heart-rate-variability
//! features, ranks them by ANOVA F-value and classifies relaxed vs stressed
//! windows with LDA (KNN and SGD-logistic baselines) under
//! leave-one-subject-out evaluation.
//!
//! [`signal_io::synth_cohort`] generates deterministic cohorts with planted
//! heart-rate and HRV differences; they serve as ground truth for the rest of
//! the crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod hrv;
pub mod models;
pub mod pulse;
pub mod signal_io;

pub use error::{Error, Result};
