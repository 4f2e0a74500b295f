//! Polyvector fields on ℝⁿ, generalised t-flows and their ⋆-action,
//! quasi-Lie schemes, superposition rules and the quasi-Lie invariants of
//! the generalised Abel family.
//!
//! The crate is `no_std` and only needs `alloc`. Scalar coefficient functions
//! are written in a small expression language ([`expr`]) so that every field
//! carries exact derivatives; numerical work (integration, least squares,
//! finite differences) is done in `f64`.
//!
//! ```
//! use quasilie_core::fields::{PolyField, VectorSystem};
//!
//! let field = PolyField::parse(&["t"], &["x"], &[&["x"]], &[]).unwrap();
//! let v = field.eval(0, &[0.0], &[2.0]).unwrap();
//! assert_eq!(v, vec![2.0]);
//! ```

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod expr;
pub mod families;
pub mod fields;
pub mod flows;
pub mod invariants;
pub mod linalg;
pub mod schemes;
pub mod superposition;

mod math;
