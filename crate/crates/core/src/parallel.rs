//! Data-parallel helpers.
//!
//! With the `rayon` feature enabled, the helpers below fan work out over the
//! rayon global pool. Without it (or after `set_enabled(false)`) they run
//! sequentially. Every helper preserves input order, so results are
//! identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Switches the parallel path on or off at runtime. Has no effect when the
/// crate is built without the `rayon` feature.
pub fn set_enabled(enabled: bool) {
    ENABLED.store(enabled, Ordering::Relaxed);
}

/// Sizes the global pool. `0` keeps rayon's default; `1` runs sequentially.
/// Only the first call can size the pool.
pub fn set_threads(n: usize) {
    if n == 1 {
        set_enabled(false);
        return;
    }
    #[cfg(feature = "rayon")]
    if n > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Whether the helpers currently dispatch to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "rayon") && ENABLED.load(Ordering::Relaxed)
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Runs `f` on each `width`-long row of `data` with a per-worker scratch
/// value produced by `init`.
pub fn rows_for_each_init<S, I, F>(data: &mut [f64], width: usize, init: I, f: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "rayon")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(width)
            .enumerate()
            .for_each_init(&init, |scratch, (i, row)| f(scratch, i, row));
        return;
    }
    let mut scratch = init();
    for (i, row) in data.chunks_mut(width).enumerate() {
        f(&mut scratch, i, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v: Vec<usize> = (0..1000).collect();
        let out = map(&v, |x| x * 2);
        assert_eq!(out, v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_range(5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn rows_visit_every_row_once() {
        let mut data = vec![0.0; 12];
        rows_for_each_init(&mut data, 3, || (), |_, i, row| {
            for v in row.iter_mut() {
                *v += i as f64;
            }
        });
        assert_eq!(data, vec![0., 0., 0., 1., 1., 1., 2., 2., 2., 3., 3., 3.]);
    }
}
