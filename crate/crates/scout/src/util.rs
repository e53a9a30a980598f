//! Small shared utilities: wall-clock access that works on wasm, a bounded
//! worker pool for fan-out work, and JSON extraction from model text.

/// Milliseconds since the Unix epoch.
#[cfg(not(target_arch = "wasm32"))]
pub fn now_millis() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Milliseconds since the Unix epoch.
#[cfg(target_arch = "wasm32")]
pub fn now_millis() -> u64 {
    js_sys::Date::now() as u64
}

/// Today's date in UTC, derived from [`now_millis`].
pub fn today_utc() -> chrono::NaiveDate {
    let days = now_millis() / 86_400_000;
    chrono::NaiveDate::from_ymd_opt(1970, 1, 1)
        .unwrap()
        .checked_add_days(chrono::Days::new(days))
        .unwrap()
}

/// Applies `f` to every item using up to `width` worker threads and returns
/// the results in input order.
///
/// With `width <= 1` the work runs inline on the calling thread, which is the
/// only mode used on wasm targets. Result order is independent of scheduling,
/// so reductions over the output are deterministic for any width.
pub fn parallel_map<T, R, F>(items: Vec<T>, width: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    if width <= 1 || items.len() <= 1 {
        return items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }

    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let n = items.len();
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..width.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().unwrap().take().expect("slot taken once");
                let out = f(i, item);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Pulls a JSON value out of model text: the whole trimmed text when it is
/// valid JSON, otherwise the contents of the first fenced code block.
pub(crate) fn extract_json(text: &str) -> Result<serde_json::Value, String> {
    let trimmed = text.trim();
    match serde_json::from_str::<serde_json::Value>(trimmed) {
        Ok(v) => return Ok(v),
        Err(first_error) => {
            if let Some(open) = trimmed.find("```") {
                let after = &trimmed[open + 3..];
                let after = after.strip_prefix("json").unwrap_or(after);
                if let Some(close) = after.find("```") {
                    let inner = after[..close].trim();
                    return serde_json::from_str(inner)
                        .map_err(|e| format!("fenced block is not valid JSON: {e}"));
                }
            }
            Err(format!("not valid JSON: {first_error}"))
        }
    }
}
