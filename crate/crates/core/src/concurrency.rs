//! Bounded-width parallel map with input-order results.
//!
//! Remote backends are I/O bound, so this uses plain scoped threads rather than
//! a CPU-sized pool. Workers pull the next index from a shared counter; once
//! any item fails no further items are started.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

pub struct MapOutcome<R, E> {
    /// `None` for items that were never run or that failed.
    pub results: Vec<Option<R>>,
    /// Lowest-index failure, if any.
    pub error: Option<(usize, E)>,
}

impl<R, E> MapOutcome<R, E> {
    pub fn into_result(self) -> Result<Vec<R>, (usize, E)> {
        match self.error {
            Some(err) => Err(err),
            None => Ok(self.results.into_iter().map(|r| r.expect("all items ran")).collect()),
        }
    }
}

pub fn bounded_map<T, R, E, F>(items: &[T], width: usize, f: F) -> MapOutcome<R, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    let width = width.clamp(1, items.len().max(1));
    if width == 1 {
        let mut results = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match f(i, item) {
                Ok(r) => results.push(Some(r)),
                Err(e) => {
                    results.resize_with(items.len(), || None);
                    return MapOutcome {
                        results,
                        error: Some((i, e)),
                    };
                }
            }
        }
        return MapOutcome { results, error: None };
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let errors: Mutex<Vec<(usize, E)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..width {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                match f(i, &items[i]) {
                    Ok(r) => slots.lock().unwrap()[i] = Some(r),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        errors.lock().unwrap().push((i, e));
                    }
                }
            });
        }
    });
    let error = errors.into_inner().unwrap().into_iter().min_by_key(|(i, _)| *i);
    MapOutcome {
        results: slots.into_inner().unwrap(),
        error,
    }
}
