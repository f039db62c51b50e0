//! Exact computational toolkit for locating certified bilinear varieties inside
//! dense transverse subsets of F_p^nG x F_p^nH.
//!
//! A set A in G x H is transverse when every horizontal slice is a nonempty
//! subspace of G and every vertical slice is a nonempty subspace of H. The
//! pipeline in [`extract`] turns such a set into a bilinear variety
//! {(x, y) in U x V' : beta(x, y) = 0} together with an exhaustive containment
//! certificate; every probabilistic step is derandomized by exact counting at
//! this scale, so outputs are certified rather than merely likely.

pub mod extract;
pub mod grid;
pub mod lemmas;
pub mod linalg;
pub mod lss;
pub mod report;
pub mod rng;
pub mod variety;

pub use linalg::{FieldSpec, LinalgError, MatP, Subspace, VecP};
