//! Data-parallel iteration with a sequential fallback.
//!
//! With the `parallel` feature (default) these macros expand to rayon
//! iterators; without it they expand to plain std iterators. Call sites use
//! only the adapter subset both share (`map`, `filter_map`, `enumerate`,
//! `collect`, `sum`), and every reduction collects into an ordered `Vec`
//! first so results are identical either way.

#[cfg(feature = "parallel")]
macro_rules! par_iter {
    ($e:expr) => {
        rayon::iter::IntoParallelRefIterator::par_iter($e)
    };
}

#[cfg(not(feature = "parallel"))]
macro_rules! par_iter {
    ($e:expr) => {
        ($e).iter()
    };
}

#[cfg(feature = "parallel")]
macro_rules! into_par_iter {
    ($e:expr) => {
        rayon::iter::IntoParallelIterator::into_par_iter($e)
    };
}

#[cfg(not(feature = "parallel"))]
macro_rules! into_par_iter {
    ($e:expr) => {
        ::std::iter::IntoIterator::into_iter($e)
    };
}

pub(crate) use into_par_iter;
pub(crate) use par_iter;

/// Whether this build dispatches work to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Traits the expanded adapters need in scope.
pub(crate) mod prelude {
    #[cfg(feature = "parallel")]
    pub(crate) use rayon::iter::{IndexedParallelIterator, ParallelIterator};
}
