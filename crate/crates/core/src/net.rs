//! Network guard and in-flight limiting shared by the remote provider clients.
//!
//! Mock runs switch the guard on for the whole process; any remote client
//! constructed or called afterwards fails instead of touching the network.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};

static NETWORK_FORBIDDEN: AtomicBool = AtomicBool::new(false);

pub const FORBID_NETWORK_ENV: &str = "FINMEM_FORBID_NETWORK";

pub fn forbid_network() {
    NETWORK_FORBIDDEN.store(true, Ordering::SeqCst);
}

pub fn network_forbidden() -> bool {
    NETWORK_FORBIDDEN.load(Ordering::SeqCst)
        || std::env::var(FORBID_NETWORK_ENV).is_ok_and(|v| v == "1")
}

pub fn ensure_network_allowed() -> Result<(), String> {
    if network_forbidden() {
        Err("network access is forbidden in this run".to_string())
    } else {
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limit.freed.notify_one();
    }
}
