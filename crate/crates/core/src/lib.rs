pub mod linalg;
pub mod network;
pub mod rate;
pub mod surrogate;
pub mod solvers;
pub mod driver;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always matches index order.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
