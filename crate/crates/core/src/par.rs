//! Optional data parallelism.
//!
//! With the `parallel` feature (default) per-element work can be spread over the
//! rayon pool. Every parallel loop here writes each output slot from a single
//! closure invocation, so results are bitwise identical to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many elements the sequential path is always taken.
pub const PARALLEL_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Falls back to sequential execution when built without `parallel`.
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    fn engaged(self, len: usize) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel && len >= PARALLEL_THRESHOLD
    }

    /// Fills `out[i] = f(i)`.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.engaged(out.len()) {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }

    /// Maps `0..n` through `f` and collects in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.engaged(n) {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`map`](Self::map) but engages the pool for any `n > 1`; meant for
    /// coarse-grained tasks such as whole simulations.
    pub fn map_tasks<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Parallelism::Parallel && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| (i as f64).sqrt().sin() * 1e3;
        let a = Parallelism::Sequential.map(1000, f);
        let b = Parallelism::Parallel.map(1000, f);
        assert_eq!(a, b);
        let mut c = vec![0.0; 1000];
        Parallelism::Parallel.fill(&mut c, f);
        assert_eq!(a, c);
    }
}
