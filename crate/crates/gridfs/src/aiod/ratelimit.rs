//! Per-connection bandwidth regulation: a token bucket that may run a
//! bounded debt.  `delay_for` is pure over (now, bytes) so tests can
//! check the arithmetic directly; callers sleep for the returned delay.

/// Token bucket over bytes.  A zero rate is the unlimited sentinel.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate_bps: u64,
    capacity: u64,
    /// May go negative: bytes consumed ahead of refill, to be slept off.
    tokens: i128,
    last_ms: u64,
}

impl TokenBucket {
    pub fn new(rate_bps: u64, capacity: u64) -> TokenBucket {
        TokenBucket { rate_bps, capacity: capacity.max(1), tokens: capacity.max(1) as i128, last_ms: 0 }
    }

    /// Default burst: a quarter second of tokens, at least 64 KiB.
    pub fn with_rate(rate_bps: u64) -> TokenBucket {
        TokenBucket::new(rate_bps, (rate_bps / 4).max(64 << 10))
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    fn refill(&mut self, now_ms: u64) {
        if now_ms <= self.last_ms {
            return;
        }
        let elapsed = (now_ms - self.last_ms) as u128;
        let gained = (elapsed * self.rate_bps as u128) / 1000;
        self.tokens = (self.tokens + gained as i128).min(self.capacity as i128);
        self.last_ms = now_ms;
    }

    /// Consume `bytes` and return how long the caller must wait before
    /// sending them, in milliseconds of the same clock as `now_ms`.
    pub fn delay_for(&mut self, now_ms: u64, bytes: u64) -> u64 {
        if self.rate_bps == 0 {
            return 0;
        }
        self.refill(now_ms);
        self.tokens -= bytes as i128;
        if self.tokens >= 0 {
            0
        } else {
            let deficit = (-self.tokens) as u128;
            (deficit * 1000).div_ceil(self.rate_bps as u128) as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    /// Simulated sender: consume `total` bytes in `chunk`-sized sends,
    /// advancing a virtual clock by each returned delay.  Returns the
    /// elapsed virtual milliseconds.
    fn drain(bucket: &mut TokenBucket, total: u64, chunk: u64) -> u64 {
        let mut now = 0u64;
        let mut left = total;
        while left > 0 {
            let n = chunk.min(left);
            now += bucket.delay_for(now, n);
            left -= n;
        }
        now
    }

    #[test]
    fn long_run_throughput_matches_rate() {
        // 10 MiB at 1 MiB/s with a 256 KiB burst: the oracle is
        // (total - capacity) / rate = 9.75 s.
        let mut bucket = TokenBucket::new(MIB, 256 << 10);
        let elapsed = drain(&mut bucket, 10 * MIB, 64 << 10);
        let oracle = ((10 * MIB - (256 << 10)) as u128 * 1000 / MIB as u128) as u64;
        assert!(
            elapsed.abs_diff(oracle) <= 2,
            "elapsed {elapsed} ms vs oracle {oracle} ms"
        );
        // Within 10% of the nominal 10 s.
        assert!((9_000..=11_000).contains(&elapsed), "{elapsed}");
    }

    #[test]
    fn burst_up_to_capacity_is_free() {
        let mut bucket = TokenBucket::new(MIB, MIB);
        assert_eq!(bucket.delay_for(0, MIB), 0);
        // The next byte has to wait.
        assert!(bucket.delay_for(0, 1) > 0);
    }

    #[test]
    fn zero_rate_is_unlimited() {
        let mut bucket = TokenBucket::new(0, 1);
        assert_eq!(bucket.delay_for(0, u64::MAX / 2), 0);
        assert_eq!(bucket.delay_for(1, u64::MAX / 2), 0);
    }

    #[test]
    fn refill_caps_at_capacity() {
        let mut bucket = TokenBucket::new(1000, 500);
        assert_eq!(bucket.delay_for(0, 500), 0);
        // A week later the bucket holds only `capacity` tokens.
        assert_eq!(bucket.delay_for(7 * 24 * 3600 * 1000, 500), 0);
        assert!(bucket.delay_for(7 * 24 * 3600 * 1000, 1) > 0);
    }

    #[test]
    fn independent_buckets_do_not_interact() {
        let mut a = TokenBucket::new(MIB, 64 << 10);
        let mut b = TokenBucket::new(MIB, 64 << 10);
        let ea = drain(&mut a, 10 * MIB, 64 << 10);
        let eb = drain(&mut b, 10 * MIB, 64 << 10);
        assert_eq!(ea, eb);
        assert!((9_000..=11_000).contains(&ea));
    }
}
