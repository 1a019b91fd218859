//! Numerical laboratory for horospherical dynamics on products of PSL(2,R).
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI and thread
//! pools live in the `horolab` companion crate.

#![no_std]
// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub(crate) mod math;
pub mod rank_one;
pub mod product;
pub mod quasimetric;
pub mod schottky;
pub mod growth;
pub mod dynamics;
