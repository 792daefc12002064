//! Data-parallel map helpers.
//!
//! With the `parallel` feature (the default) work is spread over the rayon
//! pool; without it the same helpers run sequentially. Output order always
//! matches input order, so both builds produce identical results.

use crate::error::Result;

#[cfg(feature = "parallel")]
pub(crate) fn try_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn try_map_zip<A, B, U, F>(left: &[A], right: &mut [B], f: F) -> Result<Vec<U>>
where
    A: Sync,
    B: Send,
    U: Send,
    F: Fn(&A, &mut B) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    left.par_iter()
        .zip(right.par_iter_mut())
        .map(|(a, b)| f(a, b))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_zip<A, B, U, F>(left: &[A], right: &mut [B], f: F) -> Result<Vec<U>>
where
    F: Fn(&A, &mut B) -> Result<U>,
{
    left.iter()
        .zip(right.iter_mut())
        .map(|(a, b)| f(a, b))
        .collect()
}
