use mfg_core::Executor;
use rayon::prelude::*;

/// Rayon-backed executor; results come back in index order.
#[derive(Clone, Copy, Debug, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).into_par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let out = pool.install(|| RayonExecutor.map(1000, |i| i * i));
        assert!(out.iter().enumerate().all(|(i, &v)| v == i * i));
    }
}
