//! Order-preserving map helpers over independent work items.
//!
//! With the `parallel` feature (default) these run on rayon; without it they
//! fall back to plain iterators. Output order always matches input order, and
//! every work item receives pre-derived seeds, so both modes produce
//! byte-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over borrowed items, preserving order.
#[cfg(feature = "parallel")]
pub fn map_ref<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ref<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map over owned items (environments, branch states), preserving order.
#[cfg(feature = "parallel")]
pub fn map_owned<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_owned<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Run `f` under a worker budget: 0 means the default pool, 1 a single
/// worker, any other value a dedicated pool of that size. Without the
/// `parallel` feature the budget is ignored and `f` runs inline.
#[cfg(feature = "parallel")]
pub fn with_budget<R, F>(budget: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if budget == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(budget)
        .build()
        .expect("worker pool construction");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_budget<R, F>(_budget: usize, f: F) -> R
where
    F: FnOnce() -> R,
{
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_ref_preserves_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = map_ref(&items, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn budgeted_runs_match_unbudgeted() {
        let items: Vec<u64> = (0..64).collect();
        let a = with_budget(1, || map_ref(&items, |x| x * x));
        let b = with_budget(0, || map_ref(&items, |x| x * x));
        assert_eq!(a, b);
    }
}
