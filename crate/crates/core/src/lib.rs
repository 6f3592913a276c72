#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod contact;
pub mod device;
pub mod dsp;
pub mod experiment;
pub mod psychophysics;
pub mod seed;
pub mod signal;
pub mod stats;
