//! Data-parallel helpers with a sequential fallback.
//!
//! All heavy loops in this crate are embarrassingly parallel over
//! independent items (documents, batches, sweep cells), each seeded on its
//! own, so results are identical whether they run on rayon or on one
//! thread. `par_map` picks the backend from the `parallel` feature;
//! `seq_map` is always sequential and exists so benchmarks can compare the
//! two paths directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    seq_map(items, f)
}

/// Sequential reference path for `par_map`.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_matches_seq_and_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(17);
        assert_eq!(par_map(&items, f), seq_map(&items, f));
    }
}
