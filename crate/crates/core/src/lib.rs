//! Estimation of cell-to-cell variation and module state of health for
//! battery modules with parallel-connected cells, from module-level
//! constant-current charging curves.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curves;
pub mod error;
pub mod featsel;
pub mod features;
pub mod infotheory;
pub mod interp;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rvr;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
