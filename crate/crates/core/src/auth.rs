//! Enrollment, the template store, per-step template refresh, and the
//! full login decision procedure with lockout.
//!
//! The store is a single logical owner: every mutation goes through an
//! [`AuthService`] method, and records are value-copied out so callers
//! never hold live references into it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num::BigUint;
use thiserror::Error;

use crate::audit::{AuditError, AuditLog, AuthEvent, EventKind};
use crate::biometric::{self, BiometricError, BiometricSample, FeatureTemplate, Modality};
use crate::bitcodec::BitString;
use crate::cipher::{self, CipherError, PipelineConfig};
use crate::salt::{SaltCheck, SaltDevice, SaltError, DEFAULT_STEP_SECONDS};

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("user {0:?} already enrolled")]
    DuplicateUser(String),
    #[error("enrollment needs at least one sample")]
    NoSamples,
    #[error("{got} references exceed the per-user capacity of {max}")]
    TooManyReferences { got: usize, max: usize },
    #[error("store is at its capacity of {max_users} users")]
    StoreFull { max_users: usize },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("reference index {index} out of range: user has {count}")]
    ReferenceIndex { index: usize, count: usize },
    #[error("invalid user id {0:?}: must be non-empty without tabs, newlines, or semicolons")]
    InvalidUserId(String),
    #[error(transparent)]
    Biometric(#[from] BiometricError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Salt(#[from] SaltError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unsupported store version {got:?}")]
    Version { line: usize, got: String },
    #[error("line {line}: {what}")]
    Field { line: usize, what: String },
    #[error("line {line}: duplicate user {user:?}")]
    DuplicateLine { line: usize, user: String },
    #[error("device cadence {0}s cannot be persisted; the store format fixes {DEFAULT_STEP_SECONDS}s")]
    NonDefaultCadence(u64),
}

/// All tunables shared by enrollment, login, and emergency access.
#[derive(Debug, Clone)]
pub struct AuthConfig {
    pub pipeline: PipelineConfig,
    /// Feature template length L, a positive multiple of 8.
    pub feature_len: usize,
    /// Normalized match threshold: accept iff distance <= tau.
    pub tau: f64,
    pub max_refs: usize,
    pub max_users: usize,
    /// Biometric failures tolerated before the record locks.
    pub max_failures: u32,
    /// Salt validation window, in steps either side of now.
    pub skew_steps: u32,
    /// Emergency session lifetime, seconds.
    pub eam_ttl_secs: u64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig {
            pipeline: PipelineConfig::default(),
            feature_len: 256,
            tau: 0.15,
            max_refs: 4,
            max_users: 1024,
            max_failures: 3,
            skew_steps: 1,
            eam_ttl_secs: 600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Active,
    Locked,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Active => "active",
            Status::Locked => "locked",
        })
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(Status::Active),
            "locked" => Ok(Status::Locked),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// Per-user server-side state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentRecord {
    pub user_id: String,
    pub home_server: String,
    pub references: Vec<FeatureTemplate>,
    pub password_digits: BigUint,
    pub device: SaltDevice,
    pub status: Status,
    pub failed_count: u32,
    pub eam_password_digits: BigUint,
}

/// Login decision outcomes, ordered by the checks that produce them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Accept,
    RejectSalt,
    RejectBiometric,
    RejectTemplate,
    UnknownUser,
    LockedOut,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Accept => "Accept",
            Outcome::RejectSalt => "RejectSalt",
            Outcome::RejectBiometric => "RejectBiometric",
            Outcome::RejectTemplate => "RejectTemplate",
            Outcome::UnknownUser => "UnknownUser",
            Outcome::LockedOut => "LockedOut",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Outcome> for EventKind {
    fn from(o: Outcome) -> EventKind {
        match o {
            Outcome::Accept => EventKind::Accept,
            Outcome::RejectSalt => EventKind::RejectSalt,
            Outcome::RejectBiometric => EventKind::RejectBiometric,
            Outcome::RejectTemplate => EventKind::RejectTemplate,
            Outcome::UnknownUser => EventKind::UnknownUser,
            Outcome::LockedOut => EventKind::LockedOut,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthResult {
    pub outcome: Outcome,
    pub distance: Option<f64>,
    pub matched_reference: Option<usize>,
    pub template_value: Option<BigUint>,
}

impl AuthResult {
    fn bare(outcome: Outcome) -> Self {
        AuthResult {
            outcome,
            distance: None,
            matched_reference: None,
            template_value: None,
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.contains(['\t', '\n', '\r', ';'])
}

/// In-memory record map with a line-oriented file form.
///
/// One record per line, tab-separated: version, user id, home server,
/// semicolon-joined references as `<len>:<hexbits>`, password digits,
/// device seed as 16 hex chars, device digit count, status, failure
/// count, and the emergency password digits. Round trips are bit-exact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateStore {
    records: BTreeMap<String, EnrollmentRecord>,
}

const STORE_VERSION: &str = "v1";

impl TemplateStore {
    pub fn new() -> Self {
        TemplateStore::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.records.contains_key(user_id)
    }

    /// Value copy of one record.
    pub fn get(&self, user_id: &str) -> Option<EnrollmentRecord> {
        self.records.get(user_id).cloned()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &String> {
        self.records.keys()
    }

    fn insert(&mut self, record: EnrollmentRecord) {
        self.records.insert(record.user_id.clone(), record);
    }

    fn remove(&mut self, user_id: &str) -> Option<EnrollmentRecord> {
        self.records.remove(user_id)
    }

    pub fn serialize(&self) -> Result<String, StoreError> {
        let mut out = String::new();
        for rec in self.records.values() {
            if rec.device.step_seconds() != DEFAULT_STEP_SECONDS {
                return Err(StoreError::NonDefaultCadence(rec.device.step_seconds()));
            }
            let refs: Vec<String> = rec
                .references
                .iter()
                .map(|t| format!("{}:{}", t.bits.len(), t.bits.to_hex()))
                .collect();
            out.push_str(&format!(
                "{STORE_VERSION}\t{}\t{}\t{}\t{}\t{:016x}\t{}\t{}\t{}\t{}\n",
                rec.user_id,
                rec.home_server,
                refs.join(";"),
                rec.password_digits,
                rec.device.seed(),
                rec.device.digits(),
                rec.status,
                rec.failed_count,
                rec.eam_password_digits,
            ));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        Self::parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    /// Parses `(line number, line)` pairs so callers can offset numbering
    /// when the store body sits inside a larger artifact.
    pub fn parse_lines<'a>(
        lines: impl Iterator<Item = (usize, &'a str)>,
    ) -> Result<Self, StoreError> {
        let mut store = TemplateStore::new();
        for (line, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let field_err = |what: String| StoreError::Field { line, what };
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 10 {
                return Err(field_err(format!("expected 10 fields, got {}", fields.len())));
            }
            if fields[0] != STORE_VERSION {
                return Err(StoreError::Version {
                    line,
                    got: fields[0].to_string(),
                });
            }
            let user_id = fields[1].to_string();
            if !valid_id(&user_id) {
                return Err(field_err(format!("invalid user id {user_id:?}")));
            }
            if store.contains(&user_id) {
                return Err(StoreError::DuplicateLine { line, user: user_id });
            }
            let mut references = Vec::new();
            for part in fields[3].split(';') {
                let (len, hex) = part
                    .split_once(':')
                    .ok_or_else(|| field_err(format!("bad reference {part:?}")))?;
                let len: usize = len
                    .parse()
                    .map_err(|_| field_err(format!("bad reference length {len:?}")))?;
                let bits = BitString::from_hex(hex, len)
                    .map_err(|e| field_err(format!("bad reference bits: {e}")))?;
                // The store format does not carry modality; restored
                // references are tagged with the default.
                references.push(FeatureTemplate {
                    bits,
                    modality: Modality::Fingerprint,
                });
            }
            if references.is_empty() {
                return Err(field_err("record has no references".into()));
            }
            let password_digits: BigUint = fields[4]
                .parse()
                .map_err(|_| field_err(format!("bad password digits {:?}", fields[4])))?;
            if fields[5].len() != 16 {
                return Err(field_err(format!("seed {:?} must be 16 hex chars", fields[5])));
            }
            let seed = u64::from_str_radix(fields[5], 16)
                .map_err(|_| field_err(format!("bad seed {:?}", fields[5])))?;
            let digits: u8 = fields[6]
                .parse()
                .map_err(|_| field_err(format!("bad digit count {:?}", fields[6])))?;
            let device = SaltDevice::new(seed, digits, DEFAULT_STEP_SECONDS)
                .map_err(|e| field_err(e.to_string()))?;
            let status: Status = fields[7].parse().map_err(field_err)?;
            let failed_count: u32 = fields[8]
                .parse()
                .map_err(|_| field_err(format!("bad failure count {:?}", fields[8])))?;
            let eam_password_digits: BigUint = fields[9]
                .parse()
                .map_err(|_| field_err(format!("bad emergency digits {:?}", fields[9])))?;
            store.insert(EnrollmentRecord {
                user_id,
                home_server: fields[2].to_string(),
                references,
                password_digits,
                device,
                status,
                failed_count,
                eam_password_digits,
            });
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        Ok(std::fs::write(path, self.serialize()?)?)
    }
}

/// Everything needed to enroll one user.
#[derive(Debug, Clone)]
pub struct NewUser {
    pub user_id: String,
    pub samples: Vec<BiometricSample>,
    pub password: String,
    pub eam_password: String,
    pub device_seed: u64,
}

/// One server's authentication state: store, audit log, configuration,
/// and the per-step template cache. All mutation is serialized through
/// `&mut self`.
#[derive(Debug)]
pub struct AuthService {
    server_id: String,
    config: AuthConfig,
    store: TemplateStore,
    log: AuditLog,
    template_cache: HashMap<(String, usize), (u64, BigUint)>,
    pub(crate) eam_sessions: HashMap<String, u64>,
}

impl AuthService {
    pub fn new(server_id: impl Into<String>, config: AuthConfig, store: TemplateStore, log: AuditLog) -> Self {
        AuthService {
            server_id: server_id.into(),
            config,
            store,
            log,
            template_cache: HashMap::new(),
            eam_sessions: HashMap::new(),
        }
    }

    pub fn server_id(&self) -> &str {
        &self.server_id
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn store(&self) -> &TemplateStore {
        &self.store
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    /// Swaps in a whole new store (backup restore). Clears caches.
    pub(crate) fn replace_store(&mut self, store: TemplateStore) {
        self.store = store;
        self.template_cache.clear();
        self.eam_sessions.clear();
    }

    pub(crate) fn record_event(
        &mut self,
        ts: u64,
        user: &str,
        outcome: EventKind,
        source: &str,
        is_eam: bool,
        home_server: Option<String>,
    ) -> Result<(), AuditError> {
        self.log.append(AuthEvent {
            ts,
            server: self.server_id.clone(),
            user: user.to_string(),
            outcome,
            source: source.to_string(),
            is_eam,
            home_server,
        })?;
        Ok(())
    }

    pub(crate) fn invalidate_user_cache(&mut self, user_id: &str) {
        self.template_cache.retain(|(u, _), _| u != user_id);
    }

    pub(crate) fn put_record(&mut self, record: EnrollmentRecord) {
        self.invalidate_user_cache(&record.user_id);
        self.store.insert(record);
    }

    pub(crate) fn take_record(&mut self, user_id: &str) -> Option<EnrollmentRecord> {
        self.invalidate_user_cache(user_id);
        self.store.remove(user_id)
    }

    /// Builds the references, derives the password digit values, pairs the
    /// user with a fresh device, and persists the record as Active with a
    /// clean failure count. Emits one enrollment audit event.
    pub fn enroll(
        &mut self,
        new_user: NewUser,
        unix_time: u64,
        source: &str,
    ) -> Result<EnrollmentRecord, AuthError> {
        if !valid_id(&new_user.user_id) {
            return Err(AuthError::InvalidUserId(new_user.user_id));
        }
        if self.store.contains(&new_user.user_id) {
            return Err(AuthError::DuplicateUser(new_user.user_id));
        }
        if self.store.len() >= self.config.max_users {
            return Err(AuthError::StoreFull {
                max_users: self.config.max_users,
            });
        }
        if new_user.samples.is_empty() {
            return Err(AuthError::NoSamples);
        }
        if new_user.samples.len() > self.config.max_refs {
            return Err(AuthError::TooManyReferences {
                got: new_user.samples.len(),
                max: self.config.max_refs,
            });
        }
        let references = new_user
            .samples
            .iter()
            .map(|s| biometric::feature_bits(s, self.config.feature_len))
            .collect::<Result<Vec<_>, _>>()?;
        let record = EnrollmentRecord {
            user_id: new_user.user_id.clone(),
            home_server: self.server_id.clone(),
            references,
            password_digits: cipher::ascii_digits(&new_user.password)?,
            device: SaltDevice::with_defaults(new_user.device_seed),
            status: Status::Active,
            failed_count: 0,
            eam_password_digits: cipher::ascii_digits(&new_user.eam_password)?,
        };
        self.store.insert(record.clone());
        self.record_event(
            unix_time,
            &new_user.user_id,
            EventKind::Enroll,
            source,
            false,
            None,
        )?;
        Ok(record)
    }

    /// The template the server expects for one stored reference at the
    /// given time: the device's current code joined with the stored
    /// password digits, fused over the reference bits, then run through
    /// the pipeline tail.
    pub fn expected_template(
        &self,
        user_id: &str,
        reference_index: usize,
        unix_time: u64,
    ) -> Result<BigUint, AuthError> {
        let rec = self
            .store
            .get(user_id)
            .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))?;
        if reference_index >= rec.references.len() {
            return Err(AuthError::ReferenceIndex {
                index: reference_index,
                count: rec.references.len(),
            });
        }
        let code = rec.device.code_at(unix_time);
        self.template_for(&rec, reference_index, &rec.password_digits, &code)
    }

    fn template_for(
        &self,
        rec: &EnrollmentRecord,
        reference_index: usize,
        password_digits: &BigUint,
        salt_code: &str,
    ) -> Result<BigUint, AuthError> {
        let cred = biometric::credential_bits_from_digits(password_digits, salt_code)?;
        let fused = biometric::fuse(
            &rec.references[reference_index].bits,
            &cred,
            self.config.pipeline.gate,
        );
        let (_, template) = cipher::template_from_bits(&fused, &self.config.pipeline)?;
        Ok(template)
    }

    /// Full login from a raw sample and password text.
    pub fn login(
        &mut self,
        user_id: &str,
        sample: &BiometricSample,
        password: &str,
        salt_code: &str,
        unix_time: u64,
        source: &str,
    ) -> Result<AuthResult, AuthError> {
        let probe = biometric::feature_bits(sample, self.config.feature_len)?;
        let digits = cipher::ascii_digits(password)?;
        self.login_derived(user_id, &probe.bits, &digits, salt_code, unix_time, source, false)
    }

    /// Login from already-derived quantities: feature bits and password
    /// digits. This is the path remote referrals and the emergency-mode
    /// self-check use; raw samples never reach it.
    ///
    /// Checks run in a fixed order - user lookup, lock status, salt
    /// window, biometric distance, then the two-sided template
    /// comparison - and every call appends exactly one audit event.
    #[allow(clippy::too_many_arguments)]
    pub fn login_derived(
        &mut self,
        user_id: &str,
        probe_bits: &BitString,
        password_digits: &BigUint,
        salt_code: &str,
        unix_time: u64,
        source: &str,
        eam_context: bool,
    ) -> Result<AuthResult, AuthError> {
        let result = self.decide(user_id, probe_bits, password_digits, salt_code, unix_time)?;
        self.record_event(
            unix_time,
            user_id,
            result.outcome.into(),
            source,
            eam_context,
            None,
        )?;
        Ok(result)
    }

    fn decide(
        &mut self,
        user_id: &str,
        probe_bits: &BitString,
        password_digits: &BigUint,
        salt_code: &str,
        unix_time: u64,
    ) -> Result<AuthResult, AuthError> {
        let Some(mut rec) = self.store.get(user_id) else {
            return Ok(AuthResult::bare(Outcome::UnknownUser));
        };
        if rec.status == Status::Locked {
            return Ok(AuthResult::bare(Outcome::LockedOut));
        }

        // Salt window first: acceptance is impossible without a live code.
        let matched_step = match rec.device.validate(salt_code, unix_time, self.config.skew_steps)
        {
            Ok(SaltCheck::Accepted { step_offset }) => rec
                .device
                .step_for(unix_time)
                .checked_add_signed(step_offset)
                .expect("validated step exists"),
            Ok(SaltCheck::Rejected) | Err(SaltError::MalformedCode { .. }) => {
                return Ok(AuthResult::bare(Outcome::RejectSalt));
            }
            Err(e) => return Err(e.into()),
        };

        // Best reference by normalized Hamming distance. Comparison is on
        // bits: the store format does not persist modality, so the login
        // path does not discriminate on it.
        let length_ok = probe_bits.len() == self.config.feature_len;
        let mut best: Option<(usize, f64)> = None;
        if length_ok {
            for (i, reference) in rec.references.iter().enumerate() {
                if reference.bits.len() != probe_bits.len() {
                    continue;
                }
                let raw = biometric::hamming_distance(&reference.bits, probe_bits)?;
                let distance = raw as f64 / probe_bits.len() as f64;
                if best.is_none_or(|(_, d)| distance < d) {
                    best = Some((i, distance));
                }
            }
        }
        let biometric_ok = best.is_some_and(|(_, d)| d <= self.config.tau);
        if !biometric_ok {
            rec.failed_count += 1;
            if rec.failed_count >= self.config.max_failures {
                rec.failed_count = self.config.max_failures;
                rec.status = Status::Locked;
            }
            self.put_record(rec);
            let (matched, distance) = best.map_or((None, None), |(i, d)| (Some(i), Some(d)));
            return Ok(AuthResult {
                outcome: Outcome::RejectBiometric,
                distance,
                matched_reference: matched,
                template_value: None,
            });
        }
        let (matched_index, distance) = best.expect("biometric_ok implies a match");

        // Two-sided template check over the matched reference: the stored
        // credentials against the submitted ones, both using the code of
        // the validated step.
        let code = rec.device.code_at_step(matched_step);
        let stored_side = self.template_for(&rec, matched_index, &rec.password_digits, &code)?;
        let submitted_side = self.template_for(&rec, matched_index, password_digits, salt_code)?;
        if stored_side != submitted_side {
            self.put_record(rec);
            return Ok(AuthResult {
                outcome: Outcome::RejectTemplate,
                distance: Some(distance),
                matched_reference: Some(matched_index),
                template_value: None,
            });
        }

        rec.failed_count = 0;
        self.put_record(rec);
        Ok(AuthResult {
            outcome: Outcome::Accept,
            distance: Some(distance),
            matched_reference: Some(matched_index),
            template_value: Some(stored_side),
        })
    }

    /// Recomputes and caches the expected template for every stored
    /// reference at the current step. Returns how many entries were
    /// recomputed; a second call within the same step refreshes nothing.
    pub fn refresh_templates(&mut self, unix_time: u64) -> Result<usize, AuthError> {
        let user_ids: Vec<String> = self.store.user_ids().cloned().collect();
        let mut refreshed = 0;
        for user_id in user_ids {
            let rec = self.store.get(&user_id).expect("listed id exists");
            let step = rec.device.step_for(unix_time);
            for index in 0..rec.references.len() {
                let key = (user_id.clone(), index);
                if matches!(self.template_cache.get(&key), Some((s, _)) if *s == step) {
                    continue;
                }
                let code = rec.device.code_at_step(step);
                let template = self.template_for(&rec, index, &rec.password_digits, &code)?;
                self.template_cache.insert(key, (step, template));
                refreshed += 1;
            }
        }
        Ok(refreshed)
    }

    /// Cached value from the last refresh, if still present.
    pub fn cached_template(&self, user_id: &str, reference_index: usize) -> Option<&BigUint> {
        self.template_cache
            .get(&(user_id.to_string(), reference_index))
            .map(|(_, t)| t)
    }
}
