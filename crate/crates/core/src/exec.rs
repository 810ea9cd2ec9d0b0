//! Sequential / data-parallel dispatch.
//!
//! All parallel call sites go through these helpers so that the crate builds
//! and behaves identically with the `parallel` feature turned off. Closures
//! receive the element index, which callers use to key random streams.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when compiled with the `parallel` feature; otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is the index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len` slices of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Zips two mutable slices element-wise and applies `f(index, a, b)`.
pub fn for_each_zip_mut<A, B, F>(exec: Execution, a: &mut [A], b: &mut [B], f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut A, &mut B) + Sync + Send,
{
    assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        a.par_iter_mut().zip(b.par_iter_mut()).enumerate().for_each(|(i, (x, y))| f(i, x, y));
        return;
    }
    let _ = exec;
    a.iter_mut().zip(b.iter_mut()).enumerate().for_each(|(i, (x, y))| f(i, x, y));
}

/// Walks `rows` (flat, `row_len` values per row) and `states` (one per row) in
/// blocks of `rows_per_block`, calling `f(first_row, row_block, state_block)`.
pub fn for_each_row_block_mut<T, S, F>(
    exec: Execution,
    rows: &mut [T],
    row_len: usize,
    states: &mut [S],
    rows_per_block: usize,
    f: F,
) where
    T: Send,
    S: Send,
    F: Fn(usize, &mut [T], &mut [S]) + Sync + Send,
{
    assert!(row_len > 0 && rows_per_block > 0);
    assert_eq!(rows.len(), row_len * states.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        rows.par_chunks_mut(row_len * rows_per_block)
            .zip(states.par_chunks_mut(rows_per_block))
            .enumerate()
            .for_each(|(b, (r, s))| f(b * rows_per_block, r, s));
        return;
    }
    let _ = exec;
    rows.chunks_mut(row_len * rows_per_block)
        .zip(states.chunks_mut(rows_per_block))
        .enumerate()
        .for_each(|(b, (r, s))| f(b * rows_per_block, r, s));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let seq = map_indexed(Execution::Sequential, 1000, |i| i * i);
        let par = map_indexed(Execution::Parallel, 1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }

    #[test]
    fn chunk_helpers_cover_everything() {
        let mut v = vec![0usize; 103];
        for_each_chunk_mut(Execution::Parallel, &mut v, 10, |ci, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = ci * 10 + j;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }

    #[test]
    fn row_blocks_align_rows_and_states() {
        let mut rows = vec![0usize; 3 * 17];
        let mut states = vec![0usize; 17];
        for_each_row_block_mut(Execution::Parallel, &mut rows, 3, &mut states, 4, |first, r, s| {
            for (j, st) in s.iter_mut().enumerate() {
                *st = first + j;
                r[3 * j..3 * j + 3].iter_mut().for_each(|x| *x = first + j);
            }
        });
        assert!(states.iter().enumerate().all(|(i, &s)| i == s));
        assert!(rows.iter().enumerate().all(|(i, &x)| x == i / 3));
    }
}
