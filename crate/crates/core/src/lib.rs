//! Exact computations with psi-decorated stable trees on moduli spaces of
//! stable curves.
//!
//! The crate builds the "B-classes" attached to stable rooted trees (by a
//! push-forward definition, by a closed level/string formula and through the
//! generating polynomial `P`), the genus-0 double-ramification side classes,
//! and pairs all of them against psi monomials using Witten–Kontsevich
//! intersection numbers.  Everything is exact rational arithmetic.
//!
//! Modules, bottom-up:
//! * [`graph_core`]: decorated trees, canonical forms, classes and their
//!   elementary operations;
//! * [`tree_enum`]: enumeration of rooted stable trees and decorations;
//! * [`b_classes`]: the B-classes, chain classes and relation classes;
//! * [`dr_side`]: genus-0 double-ramification side classes;
//! * [`intersect`]: psi-intersection numbers, pairings and the persistent
//!   correlator cache;
//! * [`cli`]: verification sweeps and the command-line front end.

pub mod b_classes;
pub mod cli;
pub mod dr_side;
pub mod error;
pub mod graph_core;
pub mod intersect;
pub mod rational;
pub mod tree_enum;

pub use error::{Error, Result};
pub use graph_core::{DecoratedTree, TautClass};
pub use rational::Rational;
