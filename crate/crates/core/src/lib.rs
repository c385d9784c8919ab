//! Simulator and measurement-analysis toolkit for a persistent-current-biased,
//! current-actuated rf-SQUID Wheatstone-bridge microwave switch.

pub mod model;
pub mod bias;
pub mod trap;
pub mod microwave;
pub mod bessel;
pub mod modulation;
pub mod analysis;
pub mod config;
pub mod io;
pub mod pipeline;
