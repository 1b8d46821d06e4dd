#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dsp;
pub mod hrv;
pub mod ingest;
pub mod qrs;
pub mod seed;
pub mod synth;
pub mod windows;
pub mod pipeline;
pub mod models;
pub mod eval;
