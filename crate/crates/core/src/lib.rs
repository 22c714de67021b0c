#![no_std]

extern crate alloc;

pub mod eval;
pub mod mae;
pub mod numcore;
pub mod pipeline;
pub mod recording;
pub mod synth;
pub mod trainer;
