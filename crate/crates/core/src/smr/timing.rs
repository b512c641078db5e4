//! Sleep helpers for injected delays.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Lowers the calling thread's timer slack so microsecond sleeps are not
/// rounded up by the default 50 us slack.
pub fn tighten_timer_slack() {
    #[cfg(target_os = "linux")]
    unsafe {
        // SAFETY: PR_SET_TIMERSLACK takes an integer argument and only
        // affects the calling thread.
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
    }
}

pub fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

pub fn pause(d: Duration) {
    if !d.is_zero() {
        std::thread::sleep(d);
    }
}

/// Monotonic clock anchored to wall time at creation.
#[derive(Copy, Clone, Debug)]
pub struct Clock {
    start: Instant,
    epoch_ns: u64,
}

impl Clock {
    pub fn new() -> Self {
        let epoch_ns = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        Clock {
            start: Instant::now(),
            epoch_ns,
        }
    }

    pub fn wallclock_ns(&self, at: Instant) -> u64 {
        self.epoch_ns + at.saturating_duration_since(self.start).as_nanos() as u64
    }

    pub fn now_ns(&self) -> u64 {
        self.wallclock_ns(Instant::now())
    }

    pub fn start(&self) -> Instant {
        self.start
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::new()
    }
}
