//! Simulated biometric samples, fixed-length feature extraction, fusion of
//! biometric bits with credential bits, and normalized Hamming matching.
//!
//! Samples are opaque byte blobs; the extractor is deterministic so the
//! whole chain stays reproducible. Real signal processing is out of scope.

use std::fmt;
use std::str::FromStr;

use num::BigUint;
use thiserror::Error;

use crate::bitcodec::{self, BitString, Gate, Radix};
use crate::cipher::{self, CipherError};

#[derive(Debug, Error, PartialEq)]
pub enum BiometricError {
    #[error("sample blob must be non-empty")]
    EmptyBlob,
    #[error("feature length {0} must be a positive multiple of 8")]
    BadFeatureLength(usize),
    #[error("salt code {0:?} is not numeric")]
    NonNumericSaltCode(String),
    #[error("cannot compare templates of lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot compare {0} template against {1} template")]
    ModalityMismatch(Modality, Modality),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("malformed template file: {0}")]
    BadTemplateFile(String),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Fingerprint,
    Iris,
    Voice,
    Other,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Fingerprint => "fingerprint",
            Modality::Iris => "iris",
            Modality::Voice => "voice",
            Modality::Other => "other",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fingerprint" => Ok(Modality::Fingerprint),
            "iris" => Ok(Modality::Iris),
            "voice" => Ok(Modality::Voice),
            "other" => Ok(Modality::Other),
            unknown => Err(format!("unknown modality {unknown:?}")),
        }
    }
}

/// Raw sensor output stand-in: a tagged, non-empty byte blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiometricSample {
    modality: Modality,
    blob: Vec<u8>,
}

impl BiometricSample {
    pub fn new(modality: Modality, blob: Vec<u8>) -> Result<Self, BiometricError> {
        if blob.is_empty() {
            return Err(BiometricError::EmptyBlob);
        }
        Ok(BiometricSample { modality, blob })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn blob(&self) -> &[u8] {
        &self.blob
    }
}

/// Fixed-length feature bits extracted from one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTemplate {
    pub bits: BitString,
    pub modality: Modality,
}

impl FeatureTemplate {
    /// Two-line text form: a header with length and modality, then the
    /// bit string.
    pub fn to_file_string(&self) -> String {
        format!("L={} modality={}\n{}\n", self.bits.len(), self.modality, self.bits)
    }

    pub fn from_file_str(s: &str) -> Result<Self, BiometricError> {
        let mut lines = s.lines();
        let header = lines
            .next()
            .ok_or_else(|| BiometricError::BadTemplateFile("missing header".into()))?;
        let body = lines
            .next()
            .ok_or_else(|| BiometricError::BadTemplateFile("missing bit line".into()))?;
        let mut len: Option<usize> = None;
        let mut modality: Option<Modality> = None;
        for field in header.split_whitespace() {
            if let Some(v) = field.strip_prefix("L=") {
                len = Some(v.parse().map_err(|_| {
                    BiometricError::BadTemplateFile(format!("bad length {v:?}"))
                })?);
            } else if let Some(v) = field.strip_prefix("modality=") {
                modality = Some(v.parse().map_err(BiometricError::BadTemplateFile)?);
            }
        }
        let len = len.ok_or_else(|| BiometricError::BadTemplateFile("missing L=".into()))?;
        let modality =
            modality.ok_or_else(|| BiometricError::BadTemplateFile("missing modality=".into()))?;
        let bits: BitString = body
            .trim()
            .parse()
            .map_err(|e| BiometricError::BadTemplateFile(format!("{e}")))?;
        if bits.len() != len {
            return Err(BiometricError::BadTemplateFile(format!(
                "header says {len} bits, body has {}",
                bits.len()
            )));
        }
        Ok(FeatureTemplate { bits, modality })
    }
}

/// Expands the blob's bytes to bits (most-significant bit first), repeats
/// them cyclically, and truncates to exactly `len` bits.
pub fn feature_bits(
    sample: &BiometricSample,
    len: usize,
) -> Result<FeatureTemplate, BiometricError> {
    if len == 0 || !len.is_multiple_of(8) {
        return Err(BiometricError::BadFeatureLength(len));
    }
    let mut bits = BitString::new();
    'fill: loop {
        for byte in &sample.blob {
            for shift in (0..8).rev() {
                bits.push((byte >> shift) & 1 == 1);
                if bits.len() == len {
                    break 'fill;
                }
            }
        }
    }
    Ok(FeatureTemplate {
        bits,
        modality: sample.modality,
    })
}

/// Credential bits: the password's digit value in minimal binary, followed
/// by the salt code's value in minimal binary — two concatenated groups.
pub fn credential_bits(password: &str, salt_code: &str) -> Result<BitString, BiometricError> {
    let digits = cipher::ascii_digits(password)?;
    credential_bits_from_digits(&digits, salt_code)
}

/// Same as [`credential_bits`] but starting from an already-computed
/// password digit value, which is what the template store holds.
pub fn credential_bits_from_digits(
    password_digits: &BigUint,
    salt_code: &str,
) -> Result<BitString, BiometricError> {
    if salt_code.is_empty() || !salt_code.bytes().all(|b| b.is_ascii_digit()) {
        return Err(BiometricError::NonNumericSaltCode(salt_code.to_string()));
    }
    let salt_value: BigUint = salt_code
        .parse()
        .map_err(|_| BiometricError::NonNumericSaltCode(salt_code.to_string()))?;
    let password_part = bitcodec::to_bits(password_digits, Radix::Binary);
    let salt_part = bitcodec::to_bits(&salt_value, Radix::Binary);
    Ok(password_part.concat(&salt_part))
}

/// Bitwise fusion. The shorter input is left zero-padded to the longer
/// length, and the gate is applied position by position.
pub fn fuse(bio: &BitString, cred: &BitString, gate: Gate) -> BitString {
    let len = bio.len().max(cred.len());
    let a = bio.left_pad(len);
    let b = cred.left_pad(len);
    BitString::from_bits(
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| gate.apply(x, y)),
    )
}

/// Bit disagreement count between equal-length strings.
pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<usize, BiometricError> {
    if a.len() != b.len() {
        return Err(BiometricError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    pub accepted: bool,
    /// Normalized Hamming distance in [0, 1].
    pub distance: f64,
}

/// Compares two templates of the same length and modality: distance is
/// the normalized Hamming distance, accepted iff it is at most `tau`.
pub fn match_templates(
    reference: &FeatureTemplate,
    probe: &FeatureTemplate,
    tau: f64,
) -> Result<MatchOutcome, BiometricError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(BiometricError::BadThreshold(tau));
    }
    if reference.modality != probe.modality {
        return Err(BiometricError::ModalityMismatch(
            reference.modality,
            probe.modality,
        ));
    }
    let raw = hamming_distance(&reference.bits, &probe.bits)?;
    let distance = raw as f64 / reference.bits.len() as f64;
    Ok(MatchOutcome {
        accepted: distance <= tau,
        distance,
    })
}
