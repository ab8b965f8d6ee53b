//! Emergency Access Mode: a restricted session that permits exactly three
//! operations - updating one reference, resetting all references, and
//! adding a profile - gated by the emergency password, a live salt code,
//! and an approved change record.
//!
//! The surface is closed: nothing else exists on a session, and no
//! operation lists or returns stored template text. Every event in here
//! is audited with the emergency flag set.

use thiserror::Error;

use crate::audit::EventKind;
use crate::auth::{AuthError, AuthService, EnrollmentRecord, NewUser, Outcome, Status};
use crate::biometric::{self, BiometricSample};
use crate::cipher;
use crate::salt::{SaltCheck, SaltError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApprovalStatus {
    Approved,
    Rejected,
    Pending,
}

/// Minimal change-management record: operations proceed only when the
/// status is Approved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeApproval {
    pub change_id: String,
    pub approvers: Vec<String>,
    pub status: ApprovalStatus,
}

impl ChangeApproval {
    pub fn new(
        change_id: impl Into<String>,
        approvers: Vec<String>,
        status: ApprovalStatus,
    ) -> Result<Self, EamError> {
        if approvers.is_empty() {
            return Err(EamError::NoApprovers);
        }
        Ok(ChangeApproval {
            change_id: change_id.into(),
            approvers,
            status,
        })
    }
}

/// Why a session was refused. Each reason is audited as a denial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EamDenial {
    UnknownUser,
    WrongPassword,
    StaleSalt,
    MalformedSalt,
    Unapproved,
    SessionActive,
}

impl std::fmt::Display for EamDenial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EamDenial::UnknownUser => "unknown user",
            EamDenial::WrongPassword => "wrong emergency password",
            EamDenial::StaleSalt => "stale salt code",
            EamDenial::MalformedSalt => "malformed salt code",
            EamDenial::Unapproved => "change not approved",
            EamDenial::SessionActive => "a session is already open for this user",
        })
    }
}

#[derive(Debug, Error)]
pub enum EamError {
    #[error("emergency access denied: {0}")]
    Denied(EamDenial),
    #[error("session expired")]
    Expired,
    #[error("session is not the active one for this user")]
    NotActiveSession,
    #[error("approval needs at least one approver")]
    NoApprovers,
    #[error("post-change self-check login returned {0}, not Accept")]
    SelfCheckFailed(Outcome),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

/// The operations a session permits. This set is fixed; the session
/// exposes nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EamOp {
    UpdateReference,
    ResetReferences,
    AddProfile,
}

pub const ALLOWED_OPS: [EamOp; 3] = [
    EamOp::UpdateReference,
    EamOp::ResetReferences,
    EamOp::AddProfile,
];

/// An open emergency session for one user. Expires after the configured
/// TTL; one session per user at a time.
#[derive(Debug, Clone)]
pub struct EamSession {
    pub user_id: String,
    pub opened_at: u64,
    pub ttl_seconds: u64,
    pub approval: ChangeApproval,
}

impl EamSession {
    pub fn expired(&self, unix_time: u64) -> bool {
        unix_time >= self.opened_at.saturating_add(self.ttl_seconds)
    }

    pub fn allowed_ops(&self) -> &'static [EamOp] {
        &ALLOWED_OPS
    }
}

/// Opens a session when the emergency password matches, the salt code is
/// live, and the change is approved. A locked record is eligible - this
/// is exactly the recovery path.
pub fn eam_open(
    service: &mut AuthService,
    user_id: &str,
    eam_password: &str,
    salt_code: &str,
    unix_time: u64,
    approval: ChangeApproval,
    source: &str,
) -> Result<EamSession, EamError> {
    let deny = |service: &mut AuthService, denial: EamDenial| -> Result<EamSession, EamError> {
        service
            .record_event(unix_time, user_id, EventKind::EamDenied, source, true, None)
            .map_err(AuthError::from)?;
        Err(EamError::Denied(denial))
    };

    let Some(rec) = service.store().get(user_id) else {
        return deny(service, EamDenial::UnknownUser);
    };
    let submitted = match cipher::ascii_digits(eam_password) {
        Ok(d) => d,
        Err(_) => return deny(service, EamDenial::WrongPassword),
    };
    if submitted != rec.eam_password_digits {
        return deny(service, EamDenial::WrongPassword);
    }
    match rec
        .device
        .validate(salt_code, unix_time, service.config().skew_steps)
    {
        Ok(SaltCheck::Accepted { .. }) => {}
        Ok(SaltCheck::Rejected) => return deny(service, EamDenial::StaleSalt),
        Err(SaltError::MalformedCode { .. }) => return deny(service, EamDenial::MalformedSalt),
        Err(e) => return Err(AuthError::from(e).into()),
    }
    if approval.status != ApprovalStatus::Approved {
        return deny(service, EamDenial::Unapproved);
    }
    let ttl = service.config().eam_ttl_secs;
    if let Some(&opened_at) = service.eam_sessions.get(user_id) {
        if unix_time < opened_at.saturating_add(ttl) {
            return deny(service, EamDenial::SessionActive);
        }
    }
    service.eam_sessions.insert(user_id.to_string(), unix_time);
    service
        .record_event(unix_time, user_id, EventKind::EamOpen, source, true, None)
        .map_err(AuthError::from)?;
    Ok(EamSession {
        user_id: user_id.to_string(),
        opened_at: unix_time,
        ttl_seconds: ttl,
        approval,
    })
}

fn check_session(
    service: &mut AuthService,
    session: &EamSession,
    unix_time: u64,
    source: &str,
) -> Result<(), EamError> {
    let fail = |service: &mut AuthService, err: EamError| -> Result<(), EamError> {
        service
            .record_event(
                unix_time,
                &session.user_id,
                EventKind::EamOpFailed,
                source,
                true,
                None,
            )
            .map_err(AuthError::from)?;
        Err(err)
    };
    if session.expired(unix_time) {
        return fail(service, EamError::Expired);
    }
    if service.eam_sessions.get(&session.user_id) != Some(&session.opened_at) {
        return fail(service, EamError::NotActiveSession);
    }
    Ok(())
}

/// Runs one full login against the just-changed record and fails the
/// operation when that login does not Accept. The attempt itself is
/// audited like any other login, flagged as emergency context.
fn self_check(
    service: &mut AuthService,
    user_id: &str,
    sample: &BiometricSample,
    unix_time: u64,
) -> Result<(), EamError> {
    let rec = service
        .store()
        .get(user_id)
        .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))?;
    let probe = biometric::feature_bits(sample, service.config().feature_len)
        .map_err(AuthError::from)?;
    let code = rec.device.code_at(unix_time);
    let result = service.login_derived(
        user_id,
        &probe.bits,
        &rec.password_digits,
        &code,
        unix_time,
        "eam-self-check",
        true,
    )?;
    if result.outcome != Outcome::Accept {
        return Err(EamError::SelfCheckFailed(result.outcome));
    }
    Ok(())
}

fn commit_or_rollback(
    service: &mut AuthService,
    previous: Option<EnrollmentRecord>,
    user_id: &str,
    check_sample: &BiometricSample,
    unix_time: u64,
    source: &str,
    success_kind: EventKind,
) -> Result<EnrollmentRecord, EamError> {
    match self_check(service, user_id, check_sample, unix_time) {
        Ok(()) => {
            let record = service.store().get(user_id).expect("record just written");
            service
                .record_event(unix_time, user_id, success_kind, source, true, None)
                .map_err(AuthError::from)?;
            Ok(record)
        }
        Err(e) => {
            // Restore the pre-change state wholesale.
            match previous {
                Some(rec) => service.put_record(rec),
                None => {
                    service.take_record(user_id);
                }
            }
            service
                .record_event(unix_time, user_id, EventKind::EamOpFailed, source, true, None)
                .map_err(AuthError::from)?;
            Err(e)
        }
    }
}

/// Replaces one reference with features of the new sample, reactivates
/// the record, and self-checks with a login before committing.
pub fn eam_update_reference(
    service: &mut AuthService,
    session: &EamSession,
    index: usize,
    new_sample: &BiometricSample,
    unix_time: u64,
    source: &str,
) -> Result<EnrollmentRecord, EamError> {
    check_session(service, session, unix_time, source)?;
    let mut rec = service
        .store()
        .get(&session.user_id)
        .ok_or_else(|| AuthError::UnknownUser(session.user_id.clone()))?;
    if index >= rec.references.len() {
        service
            .record_event(
                unix_time,
                &session.user_id,
                EventKind::EamOpFailed,
                source,
                true,
                None,
            )
            .map_err(AuthError::from)?;
        return Err(AuthError::ReferenceIndex {
            index,
            count: rec.references.len(),
        }
        .into());
    }
    let previous = rec.clone();
    rec.references[index] =
        biometric::feature_bits(new_sample, service.config().feature_len).map_err(AuthError::from)?;
    rec.status = Status::Active;
    rec.failed_count = 0;
    service.put_record(rec);
    commit_or_rollback(
        service,
        Some(previous),
        &session.user_id.clone(),
        new_sample,
        unix_time,
        source,
        EventKind::EamUpdateReference,
    )
}

/// Replaces the whole reference set, reactivates the record, and
/// self-checks with the first new sample.
pub fn eam_reset_references(
    service: &mut AuthService,
    session: &EamSession,
    samples: &[BiometricSample],
    unix_time: u64,
    source: &str,
) -> Result<EnrollmentRecord, EamError> {
    check_session(service, session, unix_time, source)?;
    let op_fail = |service: &mut AuthService, err: AuthError| -> Result<EnrollmentRecord, EamError> {
        service
            .record_event(
                unix_time,
                &session.user_id,
                EventKind::EamOpFailed,
                source,
                true,
                None,
            )
            .map_err(AuthError::from)?;
        Err(err.into())
    };
    let Some(mut rec) = service.store().get(&session.user_id) else {
        return op_fail(service, AuthError::UnknownUser(session.user_id.clone()));
    };
    if samples.is_empty() {
        return op_fail(service, AuthError::NoSamples);
    }
    if samples.len() > service.config().max_refs {
        return op_fail(
            service,
            AuthError::TooManyReferences {
                got: samples.len(),
                max: service.config().max_refs,
            },
        );
    }
    let previous = rec.clone();
    let feature_len = service.config().feature_len;
    let references = samples
        .iter()
        .map(|s| biometric::feature_bits(s, feature_len))
        .collect::<Result<Vec<_>, _>>()
        .map_err(AuthError::from)?;
    rec.references = references;
    rec.status = Status::Active;
    rec.failed_count = 0;
    service.put_record(rec);
    commit_or_rollback(
        service,
        Some(previous),
        &session.user_id.clone(),
        &samples[0],
        unix_time,
        source,
        EventKind::EamResetReferences,
    )
}

/// Enrolls a new user from within an emergency session, registering a
/// fresh device seed, then self-checks the new profile with a login.
pub fn eam_add_profile(
    service: &mut AuthService,
    session: &EamSession,
    profile: NewUser,
    unix_time: u64,
    source: &str,
) -> Result<EnrollmentRecord, EamError> {
    check_session(service, session, unix_time, source)?;
    let check_sample = match profile.samples.first() {
        Some(s) => s.clone(),
        None => {
            service
                .record_event(
                    unix_time,
                    &session.user_id,
                    EventKind::EamOpFailed,
                    source,
                    true,
                    None,
                )
                .map_err(AuthError::from)?;
            return Err(AuthError::NoSamples.into());
        }
    };
    let new_user_id = profile.user_id.clone();
    if let Err(e) = service.enroll(profile, unix_time, source) {
        service
            .record_event(
                unix_time,
                &session.user_id,
                EventKind::EamOpFailed,
                source,
                true,
                None,
            )
            .map_err(AuthError::from)?;
        return Err(e.into());
    }
    commit_or_rollback(
        service,
        None,
        &new_user_id,
        &check_sample,
        unix_time,
        source,
        EventKind::EamAddProfile,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::AuditLog;
    use crate::auth::{AuthConfig, TemplateStore};
    use crate::biometric::Modality;

    fn sample(byte: u8) -> BiometricSample {
        BiometricSample::new(Modality::Fingerprint, vec![byte, !byte, 0x77, byte]).unwrap()
    }

    fn approved() -> ChangeApproval {
        ChangeApproval::new(
            "CHG-1",
            vec!["it-manager".into(), "security".into()],
            ApprovalStatus::Approved,
        )
        .unwrap()
    }

    fn setup() -> (AuthService, crate::auth::EnrollmentRecord) {
        let mut svc = AuthService::new(
            "A",
            AuthConfig::default(),
            TemplateStore::new(),
            AuditLog::in_memory(),
        );
        let rec = svc
            .enroll(
                NewUser {
                    user_id: "alice".into(),
                    samples: vec![sample(0xAA)],
                    password: "HELLO".into(),
                    eam_password: "BREAK-GLASS".into(),
                    device_seed: 0xFEED,
                },
                1_000,
                "test",
            )
            .unwrap();
        (svc, rec)
    }

    #[test]
    fn open_with_correct_gate() {
        let (mut svc, rec) = setup();
        let t = 2_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();
        assert_eq!(session.user_id, "alice");
        assert_eq!(session.allowed_ops(), &ALLOWED_OPS);
        let last = svc.log().events().last().unwrap();
        assert_eq!(last.event.outcome, EventKind::EamOpen);
        assert!(last.event.is_eam);
    }

    #[test]
    fn open_denials_are_distinct_and_audited() {
        let (mut svc, rec) = setup();
        let t = 2_000u64;
        let code = rec.device.code_at(t);

        let wrong = eam_open(&mut svc, "alice", "nope", &code, t, approved(), "test");
        assert!(matches!(wrong, Err(EamError::Denied(EamDenial::WrongPassword))));

        let stale = rec.device.code_at(t.saturating_sub(300));
        let old = eam_open(&mut svc, "alice", "BREAK-GLASS", &stale, t, approved(), "test");
        assert!(matches!(old, Err(EamError::Denied(EamDenial::StaleSalt))));

        let mut pending = approved();
        pending.status = ApprovalStatus::Pending;
        let unapproved = eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, pending, "test");
        assert!(matches!(
            unapproved,
            Err(EamError::Denied(EamDenial::Unapproved))
        ));

        let ghost = eam_open(&mut svc, "ghost", "BREAK-GLASS", &code, t, approved(), "test");
        assert!(matches!(ghost, Err(EamError::Denied(EamDenial::UnknownUser))));

        let denials = svc
            .log()
            .events()
            .iter()
            .filter(|e| e.event.outcome == EventKind::EamDenied && e.event.is_eam)
            .count();
        assert_eq!(denials, 4);
    }

    #[test]
    fn locked_user_can_open_and_recover() {
        let (mut svc, rec) = setup();
        let t = 3_000u64;
        let code = rec.device.code_at(t);
        // Lock by repeated biometric failures.
        for i in 0..3 {
            svc.login("alice", &sample(0x00), "HELLO", &code, t + i, "test")
                .unwrap();
        }
        assert_eq!(svc.store().get("alice").unwrap().status, Status::Locked);

        let t2 = t + 10;
        let code2 = rec.device.code_at(t2);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code2, t2, approved(), "test").unwrap();
        let updated =
            eam_update_reference(&mut svc, &session, 0, &sample(0xC3), t2 + 1, "test").unwrap();
        assert_eq!(updated.status, Status::Active);
        assert_eq!(updated.failed_count, 0);

        // The new sample now logs in.
        let t3 = t2 + 2;
        let code3 = rec.device.code_at(t3);
        let login = svc
            .login("alice", &sample(0xC3), "HELLO", &code3, t3, "test")
            .unwrap();
        assert_eq!(login.outcome, Outcome::Accept);
    }

    #[test]
    fn reset_invalidates_old_references() {
        let (mut svc, rec) = setup();
        let t = 4_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();
        eam_reset_references(&mut svc, &session, &[sample(0x3C), sample(0x99)], t + 1, "test")
            .unwrap();

        // Replaying the pre-reset sample can no longer produce Accept.
        let code2 = rec.device.code_at(t + 2);
        let replay = svc
            .login("alice", &sample(0xAA), "HELLO", &code2, t + 2, "test")
            .unwrap();
        assert_eq!(replay.outcome, Outcome::RejectBiometric);
        let fresh = svc
            .login("alice", &sample(0x99), "HELLO", &code2, t + 3, "test")
            .unwrap();
        assert_eq!(fresh.outcome, Outcome::Accept);
        assert_eq!(fresh.matched_reference, Some(1));
    }

    #[test]
    fn sessions_expire_and_are_single_per_user() {
        let (mut svc, rec) = setup();
        let t = 5_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();

        // Second open while the first is live is refused.
        let again = eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t + 1, approved(), "test");
        assert!(matches!(
            again,
            Err(EamError::Denied(EamDenial::SessionActive))
        ));

        // Past the TTL the session refuses operations.
        let late = t + 600;
        let err = eam_update_reference(&mut svc, &session, 0, &sample(0x11), late, "test");
        assert!(matches!(err, Err(EamError::Expired)));

        // And a new session can be opened afterwards.
        let code_late = rec.device.code_at(late);
        assert!(eam_open(&mut svc, "alice", "BREAK-GLASS", &code_late, late, approved(), "test").is_ok());
    }

    #[test]
    fn update_rejects_bad_index() {
        let (mut svc, rec) = setup();
        let t = 6_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();
        let err = eam_update_reference(&mut svc, &session, 7, &sample(0x11), t + 1, "test");
        assert!(matches!(
            err,
            Err(EamError::Auth(AuthError::ReferenceIndex { index: 7, count: 1 }))
        ));
    }

    #[test]
    fn add_profile_enrolls_and_self_checks() {
        let (mut svc, rec) = setup();
        let t = 7_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();
        let added = eam_add_profile(
            &mut svc,
            &session,
            NewUser {
                user_id: "bob".into(),
                samples: vec![sample(0x66)],
                password: "b0b pw".into(),
                eam_password: "bob-em".into(),
                device_seed: 0xB0B,
            },
            t + 1,
            "test",
        )
        .unwrap();
        assert_eq!(added.user_id, "bob");
        assert_eq!(added.status, Status::Active);

        // Duplicate profile is refused and audited as a failed operation.
        let dup = eam_add_profile(
            &mut svc,
            &session,
            NewUser {
                user_id: "bob".into(),
                samples: vec![sample(0x67)],
                password: "x".into(),
                eam_password: "y".into(),
                device_seed: 1,
            },
            t + 2,
            "test",
        );
        assert!(matches!(
            dup,
            Err(EamError::Auth(AuthError::DuplicateUser(_)))
        ));
        let last = svc.log().events().last().unwrap();
        assert_eq!(last.event.outcome, EventKind::EamOpFailed);
    }

    #[test]
    fn approval_requires_approvers() {
        assert!(matches!(
            ChangeApproval::new("CHG-2", vec![], ApprovalStatus::Approved),
            Err(EamError::NoApprovers)
        ));
    }

    #[test]
    fn every_eam_event_is_flagged() {
        let (mut svc, rec) = setup();
        let t = 8_000u64;
        let code = rec.device.code_at(t);
        let session =
            eam_open(&mut svc, "alice", "BREAK-GLASS", &code, t, approved(), "test").unwrap();
        eam_update_reference(&mut svc, &session, 0, &sample(0x21), t + 1, "test").unwrap();
        for e in svc.log().events() {
            let eam_kinds = [
                EventKind::EamOpen,
                EventKind::EamDenied,
                EventKind::EamUpdateReference,
                EventKind::EamResetReferences,
                EventKind::EamAddProfile,
                EventKind::EamOpFailed,
            ];
            if eam_kinds.contains(&e.event.outcome) {
                assert!(e.event.is_eam, "{:?} not flagged", e.event.outcome);
            }
        }
    }
}
