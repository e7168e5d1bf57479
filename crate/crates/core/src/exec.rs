//! Execution policy for the data-parallel loops (batch items, scoring,
//! dataset generation).
//!
//! Every parallel loop maps items independently and collects results in
//! input order, so reductions downstream see the same operand order no
//! matter how many workers ran. With the `parallel` feature disabled every
//! policy runs sequentially.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    /// Plain loop on the calling thread.
    Sequential,
    /// Rayon's current thread pool.
    #[default]
    Parallel,
}

impl Exec {
    /// `threads == 1` selects the strictly sequential mode.
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    /// Applies `f` to every item, preserving order.
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(usize, &I) -> O + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
            Exec::Parallel => par_map(items, f),
        }
    }

    /// Applies `f` to `0..n`, preserving order.
    pub fn map_range<O, F>(self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        let idx: Vec<usize> = (0..n).collect();
        self.map(&idx, |_, &i| f(i))
    }
}

#[cfg(feature = "parallel")]
fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Caps the global worker pool. Only the first call has an effect.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_policies_preserve_order() {
        let items: Vec<u64> = (0..257).collect();
        let seq = Exec::Sequential.map(&items, |i, x| x * 3 + i as u64);
        let par = Exec::Parallel.map(&items, |i, x| x * 3 + i as u64);
        assert_eq!(seq, par);
        assert_eq!(Exec::from_threads(1), Exec::Sequential);
        assert_eq!(Exec::from_threads(0), Exec::Parallel);
    }
}
