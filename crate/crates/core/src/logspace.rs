//! Log-space arithmetic.
//!
//! All message passing runs on natural-log values. The empty sum is
//! `f64::NEG_INFINITY`, and `exp(-inf) == 0` falls out of IEEE arithmetic.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Shift-by-max log-sum-exp over a slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Streaming log-sum-exp accumulator with a running max.
///
/// Rescales the partial sum whenever a new maximum arrives, so a single pass
/// suffices and no temporary buffer is needed in the inner DP loops.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    #[inline]
    pub fn new() -> Self {
        Self {
            max: LOG_ZERO,
            sum: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        if v == LOG_ZERO {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        if self.max == LOG_ZERO {
            LOG_ZERO
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Multiplies a log-space reward by a discount weight, keeping `-inf` intact
/// even when the weight underflows to zero.
#[inline]
pub fn discounted(weight: f64, reward: f64) -> f64 {
    if reward == LOG_ZERO {
        LOG_ZERO
    } else {
        weight * reward
    }
}

/// Difference of two log-space values. `(-inf) - (-inf)` is undefined and
/// returns `None`.
#[inline]
pub fn log_sub_checked(a: f64, b: f64) -> Option<f64> {
    if a == LOG_ZERO && b == LOG_ZERO {
        None
    } else {
        Some(a - b)
    }
}

/// `ln(x)` with `ln(0) = -inf` made explicit.
#[inline]
pub fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        LOG_ZERO
    }
}
