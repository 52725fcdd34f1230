//! Construction, acceleration, and open-system verification of holonomic
//! quantum gates in decoherence-free subspaces of cavity-coupled spin qubits.
//!
//! The crate is organized bottom-up:
//! - [`hilbert`]: dense complex linear algebra and state bookkeeping;
//! - [`schedule`]: piecewise control-angle trajectories;
//! - [`counterdiabatic`]: transitionless-driving correction Hamiltonians;
//! - [`holonomy`]: dark-state gate Hamiltonians, encodings, Wilson loops;
//! - [`dynamics`]: Schroedinger and Lindblad integration;
//! - [`nv`]: the dispersive cavity-mediated coupling layer;
//! - [`gate`]: end-to-end gate runs at three modeling layers;
//! - [`scenario`]: reference scenarios with pinned target fidelities.
//!
//! Units: angular frequency in rad/us, time in us. A quantity quoted as
//! `2 pi x f MHz` enters as `TAU * f` in these units.

pub mod counterdiabatic;
pub mod dynamics;
pub mod error;
pub mod gate;
pub mod hilbert;
pub mod holonomy;
pub mod nv;
pub mod scenario;
pub mod schedule;

pub use error::{Error, Result};

// Every `rust` block in the guide compiles and runs as a doc-test, so the
// book cannot drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/encodings.md")]
    pub struct Encodings;
    #[doc = include_str!("../../../book/src/loops.md")]
    pub struct Loops;
    #[doc = include_str!("../../../book/src/counterdiabatic.md")]
    pub struct Counterdiabatic;
    #[doc = include_str!("../../../book/src/layers.md")]
    pub struct Layers;
    #[doc = include_str!("../../../book/src/open-system.md")]
    pub struct OpenSystem;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
    #[doc = include_str!("../../../book/src/limitations.md")]
    pub struct Limitations;
}
