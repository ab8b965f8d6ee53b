//! Error-rate evaluation over genuine and impostor distance sets: false
//! accept and false reject rates, threshold-swept curves with normal
//! deviate axes, equal error rate, and the enrollment-side ratios.
//!
//! Scores are distances in [0, 1]; a comparison is accepted when its
//! distance is at most the threshold.

use thiserror::Error;

use crate::auth::AuthConfig;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("no impostor scores")]
    EmptyImpostor,
    #[error("no genuine scores")]
    EmptyGenuine,
    #[error("threshold grid must be sorted ascending")]
    UnsortedGrid,
    #[error("attempts must be positive")]
    ZeroAttempts,
    #[error("{failures} failures exceed {attempts} attempts")]
    FailuresExceedAttempts { failures: u64, attempts: u64 },
    #[error("line {line}: {what}")]
    BadScoreLine { line: usize, what: String },
}

/// Genuine and impostor match distances, all validated into [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self, MetricsError> {
        for &d in genuine.iter().chain(impostor.iter()) {
            if !d.is_finite() || !(0.0..=1.0).contains(&d) {
                return Err(MetricsError::ScoreOutOfRange(d));
            }
        }
        Ok(ScoreSet { genuine, impostor })
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }
}

fn check_tau(tau: f64) -> Result<(), MetricsError> {
    if !tau.is_finite() || !(0.0..=1.0).contains(&tau) {
        return Err(MetricsError::ThresholdOutOfRange(tau));
    }
    Ok(())
}

/// Fraction of impostor comparisons wrongly accepted at `tau`.
pub fn far(s: &ScoreSet, tau: f64) -> Result<f64, MetricsError> {
    check_tau(tau)?;
    if s.impostor.is_empty() {
        return Err(MetricsError::EmptyImpostor);
    }
    let hits = s.impostor.iter().filter(|&&d| d <= tau).count();
    Ok(hits as f64 / s.impostor.len() as f64)
}

/// Fraction of genuine comparisons wrongly rejected at `tau`.
pub fn frr(s: &ScoreSet, tau: f64) -> Result<f64, MetricsError> {
    check_tau(tau)?;
    if s.genuine.is_empty() {
        return Err(MetricsError::EmptyGenuine);
    }
    let misses = s.genuine.iter().filter(|&&d| d > tau).count();
    Ok(misses as f64 / s.genuine.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub tau: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub tau: f64,
    pub far: f64,
    pub frr: f64,
    /// Normal deviates of the clamped rates.
    pub far_deviate: f64,
    pub frr_deviate: f64,
}

fn check_grid(taus: &[f64]) -> Result<(), MetricsError> {
    for pair in taus.windows(2) {
        if pair[1] < pair[0] {
            return Err(MetricsError::UnsortedGrid);
        }
    }
    Ok(())
}

/// Pointwise rates along an ascending threshold grid.
pub fn roc_points(s: &ScoreSet, taus: &[f64]) -> Result<Vec<RatePoint>, MetricsError> {
    check_grid(taus)?;
    taus.iter()
        .map(|&tau| {
            Ok(RatePoint {
                tau,
                far: far(s, tau)?,
                frr: frr(s, tau)?,
            })
        })
        .collect()
}

const DEVIATE_CLAMP: f64 = 1e-6;

/// Inverse standard-normal CDF of the rate, clamped away from 0 and 1 so
/// the transform stays finite.
pub fn probit(rate: f64) -> f64 {
    let clamped = rate.clamp(DEVIATE_CLAMP, 1.0 - DEVIATE_CLAMP);
    std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * clamped - 1.0)
}

/// Detection-error-tradeoff points: the rates plus their normal deviates.
pub fn det_points(s: &ScoreSet, taus: &[f64]) -> Result<Vec<DetPoint>, MetricsError> {
    Ok(roc_points(s, taus)?
        .into_iter()
        .map(|p| DetPoint {
            tau: p.tau,
            far: p.far,
            frr: p.frr,
            far_deviate: probit(p.far),
            frr_deviate: probit(p.frr),
        })
        .collect())
}

/// Equal error rate: over the finite candidate set of thresholds (every
/// observed distance plus 0 and 1), the smallest threshold minimizing
/// |FAR - FRR|; the rate reported is the mean of the two at that point.
pub fn eer(s: &ScoreSet) -> Result<(f64, f64), MetricsError> {
    if s.genuine.is_empty() {
        return Err(MetricsError::EmptyGenuine);
    }
    if s.impostor.is_empty() {
        return Err(MetricsError::EmptyImpostor);
    }
    let mut candidates: Vec<f64> = s
        .genuine
        .iter()
        .chain(s.impostor.iter())
        .copied()
        .chain([0.0, 1.0])
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    candidates.dedup();

    let mut best: Option<(f64, f64, f64)> = None; // (gap, tau, eer)
    for tau in candidates {
        let fa = far(s, tau)?;
        let fr = frr(s, tau)?;
        let gap = (fa - fr).abs();
        // Strict improvement only: ties keep the smallest threshold.
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, tau, (fa + fr) / 2.0));
        }
    }
    let (_, tau_star, value) = best.expect("candidate set is non-empty");
    Ok((tau_star, value))
}

/// Failure-to-enroll rate.
pub fn fte(enroll_failures: u64, enroll_attempts: u64) -> Result<f64, MetricsError> {
    ratio(enroll_failures, enroll_attempts)
}

/// Failure-to-capture rate.
pub fn ftc(capture_failures: u64, capture_attempts: u64) -> Result<f64, MetricsError> {
    ratio(capture_failures, capture_attempts)
}

fn ratio(failures: u64, attempts: u64) -> Result<f64, MetricsError> {
    if attempts == 0 {
        return Err(MetricsError::ZeroAttempts);
    }
    if failures > attempts {
        return Err(MetricsError::FailuresExceedAttempts { failures, attempts });
    }
    Ok(failures as f64 / attempts as f64)
}

/// Maximum number of stored reference sets the configuration admits.
pub fn template_capacity(config: &AuthConfig) -> u64 {
    config.max_users as u64 * config.max_refs as u64
}

/// Parses two-column score text: `genuine <distance>` or
/// `impostor <distance>`, one per line.
pub fn parse_scores(text: &str) -> Result<ScoreSet, MetricsError> {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let label = parts.next().unwrap_or_default();
        let value = parts
            .next()
            .ok_or_else(|| MetricsError::BadScoreLine {
                line,
                what: "missing distance".into(),
            })?
            .parse::<f64>()
            .map_err(|e| MetricsError::BadScoreLine {
                line,
                what: format!("bad distance: {e}"),
            })?;
        match label {
            "genuine" => genuine.push(value),
            "impostor" => impostor.push(value),
            other => {
                return Err(MetricsError::BadScoreLine {
                    line,
                    what: format!("unknown label {other:?}"),
                })
            }
        }
    }
    ScoreSet::new(genuine, impostor)
}
