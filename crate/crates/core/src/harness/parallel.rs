use crate::error::Result;

/// `f(0..n)` on up to `jobs` threads. Results come back in index order, so
/// the output does not depend on `jobs`.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j..n).step_by(jobs).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    for part in parts.drain(..) {
        for (i, r) in part {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn order_and_errors_do_not_depend_on_jobs() {
        let one = par_map(17, 1, |i| Ok(i * i)).unwrap();
        for jobs in [2, 3, 8, 40] {
            assert_eq!(par_map(17, jobs, |i| Ok(i * i)).unwrap(), one);
        }
        let err = par_map(10, 4, |i| {
            if i >= 6 {
                Err(Error::NonFinite { iteration: i })
            } else {
                Ok(i)
            }
        });
        assert!(matches!(err, Err(Error::NonFinite { iteration: 6 })));
        assert!(par_map(0, 4, Ok).unwrap().is_empty());
    }
}
