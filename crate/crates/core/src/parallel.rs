//! Order-preserving map over independent work items. Uses a rayon pool when
//! the `parallel` feature is on and more than one job is requested.

/// Maps `f` over `items`, returning results in input order. `jobs = Some(1)`
/// forces the sequential path; `None` uses rayon's default pool size.
pub fn par_map<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs == Some(1) || items.len() < 2 {
        return seq_map(items, f);
    }
    imp::par_map(items, jobs, f)
}

pub fn seq_map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Whether the data-parallel path is compiled in.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn par_map<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match jobs {
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("thread pool unavailable ({e}), running sequentially");
                    super::seq_map(items, f)
                }
            },
            None => items.par_iter().map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn par_map<T, R, F>(items: &[T], _jobs: Option<usize>, f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        super::seq_map(items, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v: Vec<u64> = (0..100).collect();
        let a = par_map(&v, None, |x| x * x);
        let b = par_map(&v, Some(1), |x| x * x);
        let c = par_map(&v, Some(3), |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a[7], 49);
    }
}
