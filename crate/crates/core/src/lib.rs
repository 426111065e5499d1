pub mod eval;
pub mod features;
pub mod kv;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod signal_io;
pub mod stl;
pub mod synth;
