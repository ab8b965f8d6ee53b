//! saltbio: command-line front end for the authentication toolkit.
//!
//! Exit codes: 0 on success (login rejections are outcomes, not errors),
//! 1 on domain errors, 2 on usage errors. Every time-dependent command
//! takes `--at` so runs are reproducible; wall time is the fallback.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num::BigUint;
use rand::RngCore;

use saltbio_core::audit::{self, AuditLog};
use saltbio_core::auth::{AuthConfig, AuthService, NewUser, TemplateStore};
use saltbio_core::biometric::{BiometricSample, Modality};
use saltbio_core::cipher::{self, PipelineConfig, SaltCombineMode};
use saltbio_core::eam::{self, ApprovalStatus, ChangeApproval};
use saltbio_core::federation::{ServerNode, TcpTransport};
use saltbio_core::metrics;
use saltbio_core::salt::{SaltCheck, SaltDevice};
use saltbio_core::{Gate, Radix};

const STORE_ENV: &str = "SALTBIO_STORE";

#[derive(Parser)]
#[command(
    name = "saltbio",
    about = "Biometric-plus-salt server authentication toolkit",
    version,
    arg_required_else_help = true
)]
struct Cli {
    /// Template store path (overrides SALTBIO_STORE).
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    /// Audit log path.
    #[arg(long, global = true, default_value = "saltbio.audit.log")]
    log: PathBuf,

    /// This server's name in audit entries and the federation.
    #[arg(long, global = true, default_value = "local", alias = "id")]
    server_id: String,

    /// Run without writing the store or the audit log.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(flatten)]
    pipeline: PipelineFlags,

    #[command(flatten)]
    matching: MatchFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineFlags {
    /// Encryption scale factor applied after the salt combine.
    #[arg(long = "e", global = true, default_value = "40")]
    scale_factor: BigUint,

    /// Number base for the bit expansion stage: 2, 8, or 16.
    #[arg(long, global = true, default_value = "2")]
    radix: Radix,

    /// Series terms beyond the first (3 sums through the seventh power).
    #[arg(long = "k", global = true, default_value_t = 3)]
    series_terms: u32,

    /// Salt combine mode: multiply or concat.
    #[arg(long, global = true, default_value = "multiply")]
    combine: SaltCombineMode,

    /// Fusion gate: or, and, xor.
    #[arg(long, global = true, default_value = "or")]
    gate: Gate,
}

#[derive(Args)]
struct MatchFlags {
    /// Feature template length in bits (multiple of 8).
    #[arg(long, global = true, default_value_t = 256)]
    feature_len: usize,

    /// Normalized match threshold.
    #[arg(long, global = true, default_value_t = 0.15)]
    tau: f64,

    /// Maximum references per user.
    #[arg(long, global = true, default_value_t = 4)]
    max_refs: usize,

    /// Biometric failures tolerated before lockout.
    #[arg(long, global = true, default_value_t = 3)]
    max_failures: u32,

    /// Salt validation window in steps either side of now.
    #[arg(long, global = true, default_value_t = 1)]
    skew: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Derive key parameters from two primes and a decryption exponent.
    Keygen {
        #[arg(long)]
        p: BigUint,
        #[arg(long)]
        q: BigUint,
        #[arg(long)]
        d: BigUint,
    },
    /// Run the template pipeline over a password and salt, printing the
    /// full stage trace.
    Pipeline {
        #[arg(long)]
        password: String,
        #[arg(long)]
        salt: BigUint,
    },
    /// Print (or check) the rotating code of a device.
    Salt {
        /// Device seed as 64-bit hex.
        #[arg(long)]
        seed: String,
        #[arg(long, default_value_t = 6)]
        digits: u8,
        /// RFC 3339 timestamp or unix seconds.
        #[arg(long)]
        at: Option<String>,
        /// Validate this code against the window instead of printing.
        #[arg(long)]
        check: Option<String>,
    },
    /// Enroll a user from one or more raw sample files.
    Enroll {
        #[arg(long)]
        user: String,
        #[arg(long = "sample", required = true)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        password: String,
        #[arg(long)]
        eam_password: String,
        /// Device seed as 64-bit hex; random when omitted.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        at: Option<String>,
        #[arg(long, default_value = "cli")]
        source: String,
    },
    /// Attempt a login; prints the outcome and exits 0 either way.
    Login {
        #[arg(long)]
        user: String,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        password: String,
        #[arg(long)]
        code: String,
        #[arg(long)]
        at: Option<String>,
        #[arg(long, default_value = "cli")]
        source: String,
        /// Name of the user's home server for a referral login.
        #[arg(long)]
        home: Option<String>,
        /// Peer endpoint as NAME=ADDR; repeatable.
        #[arg(long = "peer")]
        peers: Vec<String>,
    },
    /// Emergency access: update or reset references, or add a profile.
    Eam {
        #[arg(long)]
        user: String,
        #[arg(long)]
        eam_password: String,
        #[arg(long)]
        code: String,
        #[arg(long)]
        at: Option<String>,
        #[arg(long)]
        change_id: String,
        #[arg(long = "approver", required = true)]
        approvers: Vec<String>,
        #[arg(long, value_parser = ["update", "reset", "add"])]
        action: String,
        /// Reference index for update.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long = "sample")]
        samples: Vec<PathBuf>,
        #[arg(long)]
        new_user: Option<String>,
        #[arg(long)]
        new_password: Option<String>,
        #[arg(long)]
        new_eam_password: Option<String>,
        #[arg(long)]
        new_seed: Option<String>,
        #[arg(long, default_value = "cli")]
        source: String,
    },
    /// End-of-day report over the audit log: per server plus consolidated.
    Report {
        /// UTC date, YYYY-MM-DD.
        #[arg(long)]
        date: String,
        /// Restrict to one server.
        #[arg(long)]
        server: Option<String>,
        /// Also write the consolidated report to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error-rate evaluation over a two-column score file.
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        /// Threshold grid step.
        #[arg(long, default_value_t = 0.05)]
        tau_step: f64,
    },
    /// Serve referral verification over TCP, one JSON line per request.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long = "peer")]
        peers: Vec<String>,
    },
    /// Export the store to a backup artifact.
    Backup {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        at: Option<String>,
    },
    /// Replace the store from a backup artifact (all-or-nothing).
    Restore {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() {
    // Die quietly when a downstream pipe closes, like other line tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = AuthConfig {
        pipeline: PipelineConfig::new(
            cli.pipeline.scale_factor.clone(),
            cli.pipeline.combine,
            cli.pipeline.radix,
            cli.pipeline.series_terms,
            cli.pipeline.gate,
        )?,
        feature_len: cli.matching.feature_len,
        tau: cli.matching.tau,
        max_refs: cli.matching.max_refs,
        max_users: 1024,
        max_failures: cli.matching.max_failures,
        skew_steps: cli.matching.skew,
        eam_ttl_secs: 600,
    };
    let store_path = cli
        .store
        .clone()
        .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("saltbio.store"));

    match cli.command {
        Command::Keygen { p, q, d } => cmd_keygen(&p, &q, &d),
        Command::Pipeline { password, salt } => cmd_pipeline(&config, &password, &salt),
        Command::Salt {
            seed,
            digits,
            at,
            check,
        } => cmd_salt(&seed, digits, at.as_deref(), check.as_deref(), cli.matching.skew),
        Command::Metrics { scores, tau_step } => cmd_metrics(&scores, tau_step),
        Command::Report { date, server, out } => {
            cmd_report(&cli.log, &date, server.as_deref(), out.as_deref())
        }
        other => {
            // Everything below operates on the store and audit log.
            let mut ctx =
                ServiceContext::load(&store_path, &cli.log, &cli.server_id, config, cli.dry_run)?;
            match other {
                Command::Enroll {
                    user,
                    samples,
                    password,
                    eam_password,
                    seed,
                    at,
                    source,
                } => ctx.enroll(
                    &user,
                    &samples,
                    &password,
                    &eam_password,
                    seed.as_deref(),
                    at.as_deref(),
                    &source,
                ),
                Command::Login {
                    user,
                    sample,
                    password,
                    code,
                    at,
                    source,
                    home,
                    peers,
                } => ctx.login(
                    &user,
                    &sample,
                    &password,
                    &code,
                    at.as_deref(),
                    &source,
                    home.as_deref(),
                    &peers,
                ),
                Command::Eam {
                    user,
                    eam_password,
                    code,
                    at,
                    change_id,
                    approvers,
                    action,
                    index,
                    samples,
                    new_user,
                    new_password,
                    new_eam_password,
                    new_seed,
                    source,
                } => ctx.eam(EamInvocation {
                    user,
                    eam_password,
                    code,
                    at,
                    change_id,
                    approvers,
                    action,
                    index,
                    samples,
                    new_user,
                    new_password,
                    new_eam_password,
                    new_seed,
                    source,
                }),
                Command::Serve { listen, peers } => ctx.serve(&listen, &peers),
                Command::Backup { out, at } => ctx.backup(&out, at.as_deref()),
                Command::Restore { input } => ctx.restore(&input),
                _ => unreachable!("stateless commands handled above"),
            }
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after the epoch")
        .as_secs()
}

/// `--at` accepts unix seconds or an RFC 3339 timestamp.
fn parse_at(at: Option<&str>) -> Result<u64> {
    let Some(s) = at else {
        return Ok(now_unix());
    };
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(secs);
    }
    let dt = chrono::DateTime::parse_from_rfc3339(s)
        .with_context(|| format!("--at {s:?} is neither unix seconds nor RFC 3339"))?;
    u64::try_from(dt.timestamp()).map_err(|_| anyhow!("--at {s:?} precedes the epoch"))
}

fn parse_seed(seed: &str) -> Result<u64> {
    let trimmed = seed.trim_start_matches("0x");
    u64::from_str_radix(trimmed, 16).with_context(|| format!("seed {seed:?} is not 64-bit hex"))
}

fn read_sample(path: &PathBuf) -> Result<BiometricSample> {
    let blob = std::fs::read(path).with_context(|| format!("reading sample {}", path.display()))?;
    BiometricSample::new(Modality::Fingerprint, blob)
        .map_err(|e| anyhow!("sample {}: {e}", path.display()))
}

fn parse_peers(peers: &[String]) -> Result<Vec<(String, String)>> {
    peers
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(n, a)| (n.to_string(), a.to_string()))
                .ok_or_else(|| anyhow!("peer {p:?} must be NAME=ADDR"))
        })
        .collect()
}

fn cmd_keygen(p: &BigUint, q: &BigUint, d: &BigUint) -> Result<()> {
    let rsa = cipher::keygen(p, q, d)?;
    if !rsa.meets_recommended_strength() {
        eprintln!("warning: primes below the recommended 2048 bits; fine for desk-scale use only");
    }
    println!("p  {}", rsa.p);
    println!("q  {}", rsa.q);
    println!("n  {}", rsa.n);
    println!("m  {}", rsa.m);
    println!("d  {}", rsa.d);
    println!("e  {}", rsa.e);
    Ok(())
}

fn cmd_pipeline(config: &AuthConfig, password: &str, salt: &BigUint) -> Result<()> {
    let trace = cipher::encrypt_password(password, salt, &config.pipeline)?;
    print!("{}", trace.render());
    Ok(())
}

fn cmd_salt(seed: &str, digits: u8, at: Option<&str>, check: Option<&str>, skew: u32) -> Result<()> {
    let device = SaltDevice::new(parse_seed(seed)?, digits, 60)?;
    let t = parse_at(at)?;
    match check {
        None => println!("{}", device.code_at(t)),
        Some(code) => match device.validate(code, t, skew)? {
            SaltCheck::Accepted { step_offset } => println!("accepted offset {step_offset}"),
            SaltCheck::Rejected => println!("rejected"),
        },
    }
    Ok(())
}

fn cmd_metrics(scores: &PathBuf, tau_step: f64) -> Result<()> {
    if !(tau_step > 0.0 && tau_step <= 1.0) {
        bail!("--tau-step must be in (0, 1]");
    }
    let text = std::fs::read_to_string(scores)
        .with_context(|| format!("reading scores {}", scores.display()))?;
    let set = metrics::parse_scores(&text)?;
    let mut grid = Vec::new();
    let mut tau = 0.0;
    while tau < 1.0 {
        grid.push(tau);
        tau += tau_step;
    }
    grid.push(1.0);
    println!("tau     far     frr");
    for p in metrics::roc_points(&set, &grid)? {
        println!("{:<7.4} {:<7.4} {:<7.4}", p.tau, p.far, p.frr);
    }
    println!("det: tau far frr far_deviate frr_deviate");
    for p in metrics::det_points(&set, &grid)? {
        println!(
            "det: {:.4} {:.4} {:.4} {:.4} {:.4}",
            p.tau, p.far, p.frr, p.far_deviate, p.frr_deviate
        );
    }
    let (tau_star, value) = metrics::eer(&set)?;
    println!("eer tau={tau_star} value={value}");
    Ok(())
}

fn cmd_report(
    log_path: &PathBuf,
    date: &str,
    server: Option<&str>,
    out: Option<&std::path::Path>,
) -> Result<()> {
    let date: chrono::NaiveDate = date
        .parse()
        .with_context(|| format!("--date {date:?} must be YYYY-MM-DD"))?;
    let events = if log_path.exists() {
        AuditLog::parse(&std::fs::read_to_string(log_path)?)?
    } else {
        Vec::new()
    };
    let servers: Vec<String> = match server {
        Some(s) => vec![s.to_string()],
        None => audit::servers_in(&events),
    };
    let mut summaries = Vec::new();
    for s in &servers {
        let summary = audit::eod_report(&events, s, date);
        print!("{}", audit::render_report(&summary));
        println!();
        summaries.push(summary);
    }
    let consolidated = audit::consolidate(&summaries)?;
    let rendered = audit::render_report(&consolidated);
    print!("{rendered}");
    if let Some(path) = out {
        std::fs::write(path, &rendered)
            .with_context(|| format!("writing report to {}", path.display()))?;
    }
    Ok(())
}

struct EamInvocation {
    user: String,
    eam_password: String,
    code: String,
    at: Option<String>,
    change_id: String,
    approvers: Vec<String>,
    action: String,
    index: Option<usize>,
    samples: Vec<PathBuf>,
    new_user: Option<String>,
    new_password: Option<String>,
    new_eam_password: Option<String>,
    new_seed: Option<String>,
    source: String,
}

/// Store- and log-backed command context. Saves the store on success
/// unless running dry.
struct ServiceContext {
    service: AuthService,
    store_path: PathBuf,
    dry_run: bool,
}

fn placeholder_service() -> AuthService {
    AuthService::new(
        "tmp",
        AuthConfig::default(),
        TemplateStore::new(),
        AuditLog::in_memory(),
    )
}

impl ServiceContext {
    fn load(
        store_path: &PathBuf,
        log_path: &PathBuf,
        server_id: &str,
        config: AuthConfig,
        dry_run: bool,
    ) -> Result<Self> {
        let store = if store_path.exists() {
            TemplateStore::load(store_path)?
        } else {
            TemplateStore::new()
        };
        let mut log = AuditLog::open(log_path)?;
        if dry_run {
            log.detach();
        }
        Ok(ServiceContext {
            service: AuthService::new(server_id, config, store, log),
            store_path: store_path.clone(),
            dry_run,
        })
    }

    fn persist(&self) -> Result<()> {
        if !self.dry_run {
            self.service.store().save(&self.store_path)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn enroll(
        &mut self,
        user: &str,
        sample_paths: &[PathBuf],
        password: &str,
        eam_password: &str,
        seed: Option<&str>,
        at: Option<&str>,
        source: &str,
    ) -> Result<()> {
        let samples = sample_paths
            .iter()
            .map(read_sample)
            .collect::<Result<Vec<_>>>()?;
        let device_seed = match seed {
            Some(s) => parse_seed(s)?,
            None => rand::thread_rng().next_u64(),
        };
        let t = parse_at(at)?;
        let record = self.service.enroll(
            NewUser {
                user_id: user.to_string(),
                samples,
                password: password.to_string(),
                eam_password: eam_password.to_string(),
                device_seed,
            },
            t,
            source,
        )?;
        self.persist()?;
        println!(
            "enrolled {} with {} reference(s) on {}; device seed {:016x}",
            record.user_id,
            record.references.len(),
            record.home_server,
            record.device.seed()
        );
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn login(
        &mut self,
        user: &str,
        sample_path: &PathBuf,
        password: &str,
        code: &str,
        at: Option<&str>,
        source: &str,
        home: Option<&str>,
        peers: &[String],
    ) -> Result<()> {
        let sample = read_sample(sample_path)?;
        let t = parse_at(at)?;
        let result = match home {
            None => self.service.login(user, &sample, password, code, t, source)?,
            Some(home_name) => {
                let mut node =
                    ServerNode::new(std::mem::replace(&mut self.service, placeholder_service()));
                for (name, addr) in parse_peers(peers)? {
                    node.add_peer(name, addr)?;
                }
                let mut transport = TcpTransport {
                    timeout: Some(std::time::Duration::from_secs(10)),
                };
                let outcome = node.remote_login(
                    &mut transport,
                    home_name,
                    user,
                    &sample,
                    password,
                    code,
                    t,
                    source,
                );
                self.service = node.into_service();
                outcome?
            }
        };
        self.persist()?;
        println!("{}", result.outcome);
        if let Some(d) = result.distance {
            println!("distance {d:.6}");
        }
        if let Some(i) = result.matched_reference {
            println!("matched_reference {i}");
        }
        if let Some(t) = &result.template_value {
            println!("template {t}");
        }
        Ok(())
    }

    fn eam(&mut self, inv: EamInvocation) -> Result<()> {
        let t = parse_at(inv.at.as_deref())?;
        let approval = ChangeApproval::new(
            inv.change_id.clone(),
            inv.approvers.clone(),
            ApprovalStatus::Approved,
        )?;
        let session = eam::eam_open(
            &mut self.service,
            &inv.user,
            &inv.eam_password,
            &inv.code,
            t,
            approval,
            &inv.source,
        )?;
        let samples = inv
            .samples
            .iter()
            .map(read_sample)
            .collect::<Result<Vec<_>>>()?;
        match inv.action.as_str() {
            "update" => {
                let index = inv
                    .index
                    .ok_or_else(|| anyhow!("--index is required for update"))?;
                let sample = samples
                    .first()
                    .ok_or_else(|| anyhow!("--sample is required for update"))?;
                eam::eam_update_reference(&mut self.service, &session, index, sample, t, &inv.source)?;
                println!("updated reference {index} for {}", inv.user);
            }
            "reset" => {
                eam::eam_reset_references(&mut self.service, &session, &samples, t, &inv.source)?;
                println!("reset {} reference(s) for {}", samples.len(), inv.user);
            }
            "add" => {
                let new_user = inv
                    .new_user
                    .ok_or_else(|| anyhow!("--new-user is required for add"))?;
                let new_password = inv
                    .new_password
                    .ok_or_else(|| anyhow!("--new-password is required for add"))?;
                let new_eam = inv
                    .new_eam_password
                    .ok_or_else(|| anyhow!("--new-eam-password is required for add"))?;
                let device_seed = match inv.new_seed.as_deref() {
                    Some(s) => parse_seed(s)?,
                    None => rand::thread_rng().next_u64(),
                };
                let record = eam::eam_add_profile(
                    &mut self.service,
                    &session,
                    NewUser {
                        user_id: new_user.clone(),
                        samples,
                        password: new_password,
                        eam_password: new_eam,
                        device_seed,
                    },
                    t,
                    &inv.source,
                )?;
                println!(
                    "added profile {} with device seed {:016x}",
                    new_user,
                    record.device.seed()
                );
            }
            other => bail!("unknown action {other:?}"),
        }
        self.persist()
    }

    fn serve(&mut self, listen: &str, peers: &[String]) -> Result<()> {
        let mut node =
            ServerNode::new(std::mem::replace(&mut self.service, placeholder_service()));
        for (name, addr) in parse_peers(peers)? {
            node.add_peer(name, addr)?;
        }
        let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
        eprintln!("listening on {listen} as {}", node.server_id());
        let shared = Arc::new(Mutex::new(node));
        let store_path = self.store_path.clone();
        let dry_run = self.dry_run;
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("accept: {e}");
                    continue;
                }
            };
            let shared = shared.clone();
            let store_path = store_path.clone();
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(stream, &shared, &store_path, dry_run) {
                    eprintln!("connection: {e}");
                }
            });
        }
        Ok(())
    }

    fn backup(&mut self, out: &PathBuf, at: Option<&str>) -> Result<()> {
        let t = parse_at(at)?;
        let node = ServerNode::new(std::mem::replace(&mut self.service, placeholder_service()));
        let artifact = node.export_store(t)?;
        self.service = node.into_service();
        let count = artifact.lines().count() - 1;
        if self.dry_run {
            println!(
                "dry run: would export {count} record(s) to {}",
                out.display()
            );
            return Ok(());
        }
        std::fs::write(out, artifact)
            .with_context(|| format!("writing backup to {}", out.display()))?;
        println!("exported {count} record(s) to {}", out.display());
        Ok(())
    }

    fn restore(&mut self, input: &PathBuf) -> Result<()> {
        let artifact = std::fs::read_to_string(input)
            .with_context(|| format!("reading backup {}", input.display()))?;
        let mut node =
            ServerNode::new(std::mem::replace(&mut self.service, placeholder_service()));
        let count = node.import_store(&artifact)?;
        self.service = node.into_service();
        self.persist()?;
        println!("imported {count} record(s) from {}", input.display());
        Ok(())
    }
}

fn serve_connection(
    stream: TcpStream,
    node: &Arc<Mutex<ServerNode>>,
    store_path: &PathBuf,
    dry_run: bool,
) -> Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = {
            let mut node = node.lock().expect("node lock");
            let response = node.handle_line(&line);
            if !dry_run {
                node.service.store().save(store_path)?;
            }
            response
        };
        writeln!(writer, "{response}")?;
        writer.flush()?;
    }
    Ok(())
}
