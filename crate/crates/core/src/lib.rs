//! Quasi-static simulation of radial distribution feeders with local,
//! communication-free reactive-power controllers for loss minimization,
//! a reactive reserve for low-voltage ride-through, a centralized baseline,
//! and a full-day experiment harness.

pub mod capability;
pub mod control;
pub mod harness;
pub mod lvrt;
pub mod netmodel;
pub mod opf;
pub mod powerflow;
