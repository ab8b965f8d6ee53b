//! Deterministic rotating salt codes.
//!
//! A device yields one short decimal code per time step (60 seconds by
//! default). The generator is a pure function of `(device, time)`: callers
//! supply time explicitly, so nothing here reads a clock.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SaltError {
    #[error("code length {0} out of range: expected 4..=9 digits")]
    DigitsOutOfRange(u8),
    #[error("step seconds must be at least 1")]
    ZeroStep,
    #[error("malformed code {got:?}: expected exactly {expected} decimal digits")]
    MalformedCode { expected: u8, got: String },
}

/// Outcome of checking a submitted code against the device's window.
/// `step_offset` is the matching step relative to the current one, so a
/// code from the previous window validates with offset -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaltCheck {
    Accepted { step_offset: i64 },
    Rejected,
}

impl SaltCheck {
    pub fn accepted(&self) -> bool {
        matches!(self, SaltCheck::Accepted { .. })
    }
}

/// A code-generating device: 64-bit seed, code width, and step cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaltDevice {
    seed: u64,
    digits: u8,
    step_seconds: u64,
}

pub const DEFAULT_DIGITS: u8 = 6;
pub const DEFAULT_STEP_SECONDS: u64 = 60;

impl SaltDevice {
    pub fn new(seed: u64, digits: u8, step_seconds: u64) -> Result<Self, SaltError> {
        if !(4..=9).contains(&digits) {
            return Err(SaltError::DigitsOutOfRange(digits));
        }
        if step_seconds == 0 {
            return Err(SaltError::ZeroStep);
        }
        Ok(SaltDevice {
            seed,
            digits,
            step_seconds,
        })
    }

    /// Six digits, rotating every 60 seconds.
    pub fn with_defaults(seed: u64) -> Self {
        SaltDevice {
            seed,
            digits: DEFAULT_DIGITS,
            step_seconds: DEFAULT_STEP_SECONDS,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn digits(&self) -> u8 {
        self.digits
    }

    pub fn step_seconds(&self) -> u64 {
        self.step_seconds
    }

    pub fn step_for(&self, unix_time: u64) -> u64 {
        unix_time / self.step_seconds
    }

    /// The code shown at `unix_time`: constant within one step, changing
    /// at step boundaries.
    pub fn code_at(&self, unix_time: u64) -> String {
        self.code_at_step(self.step_for(unix_time))
    }

    pub fn code_at_step(&self, step: u64) -> String {
        let mut u = self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        u = (u ^ (u >> 33)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        u = (u ^ (u >> 29)).wrapping_mul(0x94D0_49BB_1331_11EB);
        u ^= u >> 32;
        let code = u % 10u64.pow(u32::from(self.digits));
        format!("{code:0width$}", width = usize::from(self.digits))
    }

    /// Accepts the code if it matches any step within `skew_steps` of the
    /// current one. A code of the wrong shape is a format error, distinct
    /// from an honest rejection. When adjacent steps happen to share a
    /// code, the offset closest to zero wins.
    pub fn validate(
        &self,
        code: &str,
        unix_time: u64,
        skew_steps: u32,
    ) -> Result<SaltCheck, SaltError> {
        if code.len() != usize::from(self.digits) || !code.bytes().all(|b| b.is_ascii_digit()) {
            return Err(SaltError::MalformedCode {
                expected: self.digits,
                got: code.to_string(),
            });
        }
        let current = self.step_for(unix_time);
        for magnitude in 0..=i64::from(skew_steps) {
            for offset in [-magnitude, magnitude] {
                let Some(step) = current.checked_add_signed(offset) else {
                    continue;
                };
                if self.code_at_step(step) == code {
                    return Ok(SaltCheck::Accepted {
                        step_offset: offset,
                    });
                }
            }
        }
        Ok(SaltCheck::Rejected)
    }
}
