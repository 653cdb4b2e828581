//! Sequential / rayon execution switch.
//!
//! Work is split into fixed-size chunks independent of the thread count.
//! Each chunk is folded sequentially and chunk results are combined in chunk
//! order, so the parallel and sequential paths produce identical bits.

/// Chunk length used by [`Execution::chunked_sum`].
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    Parallel,
}

impl Execution {
    /// The default for the current build: parallel when rayon is compiled in.
    pub fn preferred() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered map over a slice.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Sum of `f(item)` vectors of length `dim`, reduced chunk by chunk in a
    /// fixed order.
    pub fn chunked_sum<T, F>(self, items: &[T], dim: usize, f: F) -> Vec<f64>
    where
        T: Sync,
        F: Fn(&T, &mut [f64]) + Sync + Send,
    {
        let fold_chunk = |chunk: &[T]| {
            let mut acc = vec![0.0; dim];
            for item in chunk {
                f(item, &mut acc);
            }
            acc
        };
        let partials: Vec<Vec<f64>> = {
            #[cfg(feature = "parallel")]
            {
                if self.is_parallel() {
                    use rayon::prelude::*;
                    items.par_chunks(CHUNK).map(fold_chunk).collect()
                } else {
                    items.chunks(CHUNK).map(fold_chunk).collect()
                }
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.chunks(CHUNK).map(fold_chunk).collect()
            }
        };
        let mut total = vec![0.0; dim];
        for part in partials {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        total
    }
}
