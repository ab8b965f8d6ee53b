//! saltbio-core: biometric-plus-salt server authentication.
//!
//! The pieces, bottom up:
//!
//! - [`bitcodec`] - bit strings, radix expansion, and 4B/5B substitution
//!   block coding.
//! - [`cipher`] - the staged template pipeline: key derivation, ASCII
//!   digit encoding, salt combine, scaling, block coding, and the
//!   truncated sine-series finalizer producing an integer template.
//! - [`salt`] - rotating 60-second salt codes and window validation.
//! - [`biometric`] - simulated samples, feature bit extraction, fusion
//!   with credential bits, and Hamming matching.
//! - [`auth`] - the template store, enrollment, per-step refresh, and the
//!   ordered login decision procedure with lockout.
//! - [`eam`] - emergency access mode: update/reset/add under an approval
//!   gate, with a post-change login self-check.
//! - [`audit`] - append-only JSON-line audit log, end-of-day reports, and
//!   cross-server consolidation.
//! - [`metrics`] - FAR/FRR/ROC/DET/EER evaluation and enrollment ratios.
//! - [`federation`] - referral logins between servers over a line-oriented
//!   wire protocol, plus store backup and restore.
//!
//! Core code never reads the clock: every time-dependent operation takes
//! unix seconds from the caller, so behavior is reproducible.

pub mod audit;
pub mod auth;
pub mod biometric;
pub mod bitcodec;
pub mod cipher;
pub mod eam;
pub mod federation;
pub mod metrics;
pub mod salt;

pub use audit::{AuditLog, AuthEvent, EventKind, LoggedEvent, ReportSummary};
pub use auth::{
    AuthConfig, AuthResult, AuthService, EnrollmentRecord, NewUser, Outcome, Status, TemplateStore,
};
pub use biometric::{BiometricSample, FeatureTemplate, Modality};
pub use bitcodec::{BitString, Gate, NibbleTable, Radix};
pub use cipher::{PipelineConfig, RsaParams, SaltCombineMode, StageTrace};
pub use eam::{ApprovalStatus, ChangeApproval, EamSession};
pub use federation::{LoopbackTransport, ServerNode, TcpTransport, Transport};
pub use metrics::ScoreSet;
pub use salt::{SaltCheck, SaltDevice};
