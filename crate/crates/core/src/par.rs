//! Order-preserving parallel map over scoped threads.

/// Environment variable that caps worker threads.
pub const THREADS_ENV: &str = "MOCSE_THREADS";

/// Worker count: `MOCSE_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// `items.map(f)` with results in input order. Items are dealt round-robin
/// to `threads` workers; with one worker everything runs on the caller.
pub fn map<I: Sync, R: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(t)
                        .step_by(threads)
                        .map(|(i, x)| (i, f(x)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for (i, r) in parts.iter_mut().flat_map(|p| p.drain(..)) {
        out[i] = Some(r);
    }
    out.into_iter()
        .map(|r| r.expect("every index produced"))
        .collect()
}
