//! Multi-server referral authentication and store backup/restore.
//!
//! A user enrolled on one server can present at another: the serving node
//! forwards derived quantities only - feature bits, password digits, salt
//! code, time - and the home server runs the full login against its own
//! record. Raw biometric blobs never cross the wire. Both sides audit the
//! attempt, the serving side with a home-server annotation.
//!
//! The wire protocol is one JSON object per line over a stream socket.
//! Transports are pluggable: an in-process loopback serves tests, a TCP
//! client serves the service mode.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use num::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::EventKind;
use crate::auth::{AuthError, AuthResult, AuthService, Outcome, StoreError, TemplateStore};
use crate::biometric::{self, BiometricSample};
use crate::bitcodec::BitString;
use crate::cipher;

pub const WIRE_VERSION: u32 = 1;
const EXPORT_HEADER_PREFIX: &str = "saltbio-export";
const EXPORT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("{0:?} is this node; use a local login")]
    SelfReferral(String),
    #[error("no peer named {0:?} in the registry")]
    UnknownPeer(String),
    #[error("peer name {0:?} cannot refer to this node itself")]
    PeerIsSelf(String),
    #[error("transport to {endpoint}: {detail}")]
    Transport { endpoint: String, detail: String },
    #[error("peer error {code}: {msg}")]
    Remote { code: String, msg: String },
    #[error("unsupported wire version {0}")]
    WireVersion(u32),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("backup artifact: {0}")]
    BadArtifact(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireOp {
    #[serde(rename = "ping")]
    Ping,
    #[serde(rename = "verify_remote")]
    VerifyRemote,
}

/// Derived login quantities. The schema is closed: unknown fields are
/// rejected, which is what keeps raw sample blobs off the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyArgs {
    pub user: String,
    pub feature_bits: String,
    pub bits_len: usize,
    pub password_digits: String,
    pub salt_code: String,
    pub time: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub v: u32,
    pub op: WireOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<VerifyArgs>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFailure {
    pub code: String,
    pub msg: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub v: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireFailure>,
}

impl WireResponse {
    fn success(result: serde_json::Value) -> Self {
        WireResponse {
            v: WIRE_VERSION,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    fn failure(code: &str, msg: String) -> Self {
        WireResponse {
            v: WIRE_VERSION,
            ok: false,
            result: None,
            error: Some(WireFailure {
                code: code.to_string(),
                msg,
            }),
        }
    }
}

fn result_to_value(r: &AuthResult) -> serde_json::Value {
    serde_json::json!({
        "outcome": r.outcome.as_str(),
        "distance": r.distance,
        "matched_reference": r.matched_reference,
        "template_value": r.template_value.as_ref().map(|t| t.to_string()),
    })
}

fn result_from_value(v: &serde_json::Value) -> Result<AuthResult, FederationError> {
    let bad = |what: &str| FederationError::BadResponse(what.to_string());
    let outcome = match v.get("outcome").and_then(|o| o.as_str()) {
        Some("Accept") => Outcome::Accept,
        Some("RejectSalt") => Outcome::RejectSalt,
        Some("RejectBiometric") => Outcome::RejectBiometric,
        Some("RejectTemplate") => Outcome::RejectTemplate,
        Some("UnknownUser") => Outcome::UnknownUser,
        Some("LockedOut") => Outcome::LockedOut,
        other => return Err(bad(&format!("outcome {other:?}"))),
    };
    let template_value = match v.get("template_value") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => {
            Some(s.parse::<BigUint>().map_err(|_| bad("template_value"))?)
        }
        Some(_) => return Err(bad("template_value")),
    };
    Ok(AuthResult {
        outcome,
        distance: v.get("distance").and_then(|d| d.as_f64()),
        matched_reference: v
            .get("matched_reference")
            .and_then(|m| m.as_u64())
            .map(|m| m as usize),
        template_value,
    })
}

/// Delivers one request to a named endpoint and returns the response.
pub trait Transport {
    fn round_trip(
        &mut self,
        endpoint: &str,
        request: &WireRequest,
    ) -> Result<WireResponse, FederationError>;
}

/// TCP client transport: one JSON line out, one JSON line back.
#[derive(Debug, Default)]
pub struct TcpTransport {
    pub timeout: Option<Duration>,
}

impl Transport for TcpTransport {
    fn round_trip(
        &mut self,
        endpoint: &str,
        request: &WireRequest,
    ) -> Result<WireResponse, FederationError> {
        let fail = |detail: String| FederationError::Transport {
            endpoint: endpoint.to_string(),
            detail,
        };
        let stream = TcpStream::connect(endpoint).map_err(|e| fail(e.to_string()))?;
        stream
            .set_read_timeout(self.timeout)
            .map_err(|e| fail(e.to_string()))?;
        let mut writer = stream.try_clone().map_err(|e| fail(e.to_string()))?;
        let line = serde_json::to_string(request).map_err(|e| fail(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| fail(e.to_string()))?;
        writer.flush().map_err(|e| fail(e.to_string()))?;
        let mut reader = BufReader::new(stream);
        let mut response = String::new();
        reader
            .read_line(&mut response)
            .map_err(|e| fail(e.to_string()))?;
        if response.is_empty() {
            return Err(fail("connection closed before a response".into()));
        }
        serde_json::from_str(&response).map_err(|e| fail(format!("bad response JSON: {e}")))
    }
}

/// In-process transport over shared nodes, keyed by node name.
#[derive(Clone, Default)]
pub struct LoopbackTransport {
    nodes: HashMap<String, Arc<Mutex<ServerNode>>>,
}

impl LoopbackTransport {
    pub fn new() -> Self {
        LoopbackTransport::default()
    }

    pub fn register(&mut self, name: impl Into<String>, node: Arc<Mutex<ServerNode>>) {
        self.nodes.insert(name.into(), node);
    }
}

impl Transport for LoopbackTransport {
    fn round_trip(
        &mut self,
        endpoint: &str,
        request: &WireRequest,
    ) -> Result<WireResponse, FederationError> {
        let node = self
            .nodes
            .get(endpoint)
            .ok_or_else(|| FederationError::Transport {
                endpoint: endpoint.to_string(),
                detail: "no such loopback node".into(),
            })?;
        let mut node = node.lock().expect("loopback node lock");
        Ok(node.handle_request(request))
    }
}

/// One server in the federation: its authentication service plus a peer
/// registry mapping server names to endpoint descriptors.
#[derive(Debug)]
pub struct ServerNode {
    pub service: AuthService,
    peers: BTreeMap<String, String>,
}

impl ServerNode {
    pub fn new(service: AuthService) -> Self {
        ServerNode {
            service,
            peers: BTreeMap::new(),
        }
    }

    pub fn server_id(&self) -> &str {
        self.service.server_id()
    }

    pub fn into_service(self) -> AuthService {
        self.service
    }

    /// Registers a peer. The registry never contains this node itself.
    pub fn add_peer(
        &mut self,
        name: impl Into<String>,
        endpoint: impl Into<String>,
    ) -> Result<(), FederationError> {
        let name = name.into();
        if name == self.server_id() {
            return Err(FederationError::PeerIsSelf(name));
        }
        self.peers.insert(name, endpoint.into());
        Ok(())
    }

    pub fn peers(&self) -> &BTreeMap<String, String> {
        &self.peers
    }

    /// Executes one wire request on this node as the home server. Errors
    /// come back as protocol failures, never panics.
    pub fn handle_request(&mut self, request: &WireRequest) -> WireResponse {
        if request.v != WIRE_VERSION {
            return WireResponse::failure(
                "bad_version",
                format!("unsupported wire version {}", request.v),
            );
        }
        match request.op {
            WireOp::Ping => WireResponse::success(serde_json::json!("pong")),
            WireOp::VerifyRemote => {
                let Some(args) = &request.args else {
                    return WireResponse::failure("bad_request", "verify_remote needs args".into());
                };
                if args.feature_bits.len() != args.bits_len {
                    return WireResponse::failure(
                        "bad_request",
                        format!(
                            "bits_len {} does not match feature_bits length {}",
                            args.bits_len,
                            args.feature_bits.len()
                        ),
                    );
                }
                let Ok(bits) = args.feature_bits.parse::<BitString>() else {
                    return WireResponse::failure(
                        "bad_request",
                        "feature_bits must be 0/1 characters".into(),
                    );
                };
                let Ok(digits) = args.password_digits.parse::<BigUint>() else {
                    return WireResponse::failure(
                        "bad_request",
                        "password_digits must be decimal".into(),
                    );
                };
                match self.service.login_derived(
                    &args.user,
                    &bits,
                    &digits,
                    &args.salt_code,
                    args.time,
                    "remote",
                    false,
                ) {
                    Ok(result) => WireResponse::success(result_to_value(&result)),
                    Err(e) => WireResponse::failure("internal", e.to_string()),
                }
            }
        }
    }

    /// Parses one request line, dispatches it, and serializes the
    /// response line. This is the whole per-line server loop body.
    pub fn handle_line(&mut self, line: &str) -> String {
        let response = match serde_json::from_str::<WireRequest>(line) {
            Ok(request) => self.handle_request(&request),
            Err(e) => WireResponse::failure("bad_request", format!("bad request JSON: {e}")),
        };
        serde_json::to_string(&response).expect("response serializes")
    }

    /// Referral login: forwards derived quantities to the named home
    /// server and passes its decision through. Audits locally with the
    /// home-server annotation; referral failures are audited too.
    #[allow(clippy::too_many_arguments)]
    pub fn remote_login(
        &mut self,
        transport: &mut dyn Transport,
        home_server: &str,
        user_id: &str,
        sample: &BiometricSample,
        password: &str,
        salt_code: &str,
        unix_time: u64,
        source: &str,
    ) -> Result<AuthResult, FederationError> {
        if home_server == self.server_id() {
            return Err(FederationError::SelfReferral(home_server.to_string()));
        }
        let referral_failed = |node: &mut ServerNode, err: FederationError| {
            node.service
                .record_event(
                    unix_time,
                    user_id,
                    EventKind::ReferralFailed,
                    source,
                    false,
                    Some(home_server.to_string()),
                )
                .map_err(AuthError::from)?;
            Err(err)
        };

        let Some(endpoint) = self.peers.get(home_server).cloned() else {
            return referral_failed(self, FederationError::UnknownPeer(home_server.to_string()));
        };
        let probe = biometric::feature_bits(sample, self.service.config().feature_len)
            .map_err(AuthError::from)?;
        let digits = cipher::ascii_digits(password).map_err(AuthError::from)?;
        let request = WireRequest {
            v: WIRE_VERSION,
            op: WireOp::VerifyRemote,
            args: Some(VerifyArgs {
                user: user_id.to_string(),
                feature_bits: probe.bits.to_string(),
                bits_len: probe.bits.len(),
                password_digits: digits.to_string(),
                salt_code: salt_code.to_string(),
                time: unix_time,
            }),
        };
        let response = match transport.round_trip(&endpoint, &request) {
            Ok(r) => r,
            Err(e) => return referral_failed(self, e),
        };
        if response.v != WIRE_VERSION {
            return referral_failed(self, FederationError::WireVersion(response.v));
        }
        if !response.ok {
            let failure = response.error.unwrap_or(WireFailure {
                code: "unknown".into(),
                msg: "peer reported failure without detail".into(),
            });
            return referral_failed(
                self,
                FederationError::Remote {
                    code: failure.code,
                    msg: failure.msg,
                },
            );
        }
        let value = response
            .result
            .ok_or_else(|| FederationError::BadResponse("missing result".into()));
        let result = match value.and_then(|v| result_from_value(&v)) {
            Ok(r) => r,
            Err(e) => return referral_failed(self, e),
        };
        self.service
            .record_event(
                unix_time,
                user_id,
                result.outcome.into(),
                source,
                false,
                Some(home_server.to_string()),
            )
            .map_err(AuthError::from)?;
        Ok(result)
    }

    /// Serializes the whole store, bit-exactly, under a one-line header
    /// carrying the server id and export time.
    pub fn export_store(&self, unix_time: u64) -> Result<String, FederationError> {
        let body = self.service.store().serialize()?;
        Ok(format!(
            "{EXPORT_HEADER_PREFIX} {EXPORT_VERSION} server={} at={}\n{}",
            self.server_id(),
            chrono::DateTime::from_timestamp(unix_time as i64, 0)
                .expect("unix seconds in range")
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            body
        ))
    }

    /// Replaces this node's store with the artifact's records. The swap is
    /// all-or-nothing: any malformed line leaves the store untouched.
    pub fn import_store(&mut self, artifact: &str) -> Result<usize, FederationError> {
        let mut lines = artifact.lines();
        let header = lines
            .next()
            .ok_or_else(|| FederationError::BadArtifact("empty artifact".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(EXPORT_HEADER_PREFIX) {
            return Err(FederationError::BadArtifact(format!(
                "bad header {header:?}"
            )));
        }
        let version = parts.next().unwrap_or_default();
        if version != EXPORT_VERSION {
            return Err(FederationError::BadArtifact(format!(
                "unsupported export version {version:?}"
            )));
        }
        // Body line numbers are offset by the header line.
        let store = TemplateStore::parse_lines(
            lines.enumerate().map(|(i, line)| (i + 2, line)),
        )?;
        let count = store.len();
        self.service.replace_store(store);
        Ok(count)
    }
}
