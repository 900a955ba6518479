//! Retry policy and call accounting shared by every model-service client.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles on every further attempt.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay_ms: 0,
        }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay_ms;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    log::debug!("attempt {attempt}/{attempts} failed: {e}; retrying in {delay} ms");
                    if delay > 0 {
                        thread::sleep(Duration::from_millis(delay));
                    }
                    delay = delay.saturating_mul(2);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Digest of one logical backend call. Cache hits are recorded too, so the log
/// depends only on what was asked, not on what happened to be cached.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallRecord {
    pub backend: String,
    pub request_sha256: String,
    pub response_sha256: String,
}

#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
    live_calls: Mutex<u64>,
}

impl CallLog {
    pub fn record(&self, record: CallRecord) {
        self.records.lock().expect("call log poisoned").push(record);
    }

    pub fn count_live_call(&self) {
        *self.live_calls.lock().expect("call log poisoned") += 1;
    }

    pub fn live_calls(&self) -> u64 {
        *self.live_calls.lock().expect("call log poisoned")
    }

    /// Records sorted for a deterministic manifest regardless of completion order.
    pub fn drain_sorted(&self) -> Vec<CallRecord> {
        let mut records = std::mem::take(&mut *self.records.lock().expect("call log poisoned"));
        records.sort();
        records
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps a transport failure onto the retryable/fatal split.
pub(crate) fn http_error(backend: &str, err: reqwest::Error) -> Error {
    let retryable = err.is_connect() || err.is_timeout() || err.is_request();
    Error::backend(backend, err.to_string(), retryable)
}

pub(crate) fn status_error(backend: &str, status: reqwest::StatusCode, body: &str) -> Error {
    let retryable = status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS;
    Error::backend(
        backend,
        format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()),
        retryable,
    )
}

/// Bounded-parallel ordered map.
pub(crate) fn map_bounded<T, U, F>(items: &[T], max_inflight: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    let threads = max_inflight.max(1);
    if threads == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retries_only_retryable_errors() {
        let mut calls = 0;
        let r: Result<()> = RetryPolicy::no_delay(3).run(|_| {
            calls += 1;
            Err(Error::backend("x", "down", true))
        });
        assert!(r.is_err());
        assert_eq!(calls, 3);

        let mut calls = 0;
        let r: Result<()> = RetryPolicy::no_delay(3).run(|_| {
            calls += 1;
            Err(Error::backend("x", "bad request", false))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn succeeds_after_transient_failure() {
        let r = RetryPolicy::no_delay(3).run(|attempt| {
            if attempt < 3 {
                Err(Error::backend("x", "flaky", true))
            } else {
                Ok(attempt)
            }
        });
        assert_eq!(r.unwrap(), 3);
    }

    #[test]
    fn bounded_map_preserves_order() {
        let items: Vec<u32> = (0..50).collect();
        let out = map_bounded(&items, 4, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
