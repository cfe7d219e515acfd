pub mod flow;
pub mod grid;
pub mod track;
pub mod video;
pub mod synth;
pub mod metrics;
pub mod experiments;
pub mod readout;
pub mod server;
pub mod cli;
