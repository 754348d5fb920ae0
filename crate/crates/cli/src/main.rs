//! `abd`: command-line front end for attribute-based delegation.

mod home;
mod sim;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, UNIX_EPOCH};

use abd_core::authz::client::{request_access, Client};
use abd_core::authz::server::{spawn, DecisionKind, VerifierService};
use abd_core::authz::{AuthzError, PolicyStore, Verifier};
use abd_core::credential::{
    export_json, import_json_many, issue_credential, remove_credential, store_credential,
    stored_credentials,
};
use abd_core::delegation::{add_delegation, list_delegations, parse_expression, remove_delegation};
use abd_core::discovery::{discover_traced, Limits};
use abd_core::netsim::ResolveError;
use abd_core::petname::is_valid_petname;
use abd_core::scenario::{Scenario, POLICY_ATTRIBUTES, POLICY_RESOURCE};
use abd_core::time::{Clock, SystemClock};
use abd_core::{
    generate_namespace, resolve, Credential, Expiration, Label, Namespace, RecordType, Timestamp,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use home::Home;

const EXIT_DENIED: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "abd",
    version,
    about = "Attribute-based delegation over a signed name system"
)]
struct Cli {
    /// Data directory (default: ~/.abd)
    #[arg(long, env = "ABD_HOME", global = true)]
    home: Option<PathBuf>,
    /// Machine-readable output
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage local namespaces and petnames
    Identity {
        #[command(subcommand)]
        cmd: IdentityCmd,
    },
    /// Add, list and remove attribute delegations
    Delegate {
        #[command(subcommand)]
        cmd: DelegateCmd,
    },
    /// Publish local namespaces to the name system
    Publish {
        #[arg(long)]
        identity: Option<String>,
    },
    /// Issue, import and list credentials
    Cred {
        #[command(subcommand)]
        cmd: CredCmd,
    },
    /// Discover a delegation chain from ISSUER.ATTR to SUBJECT
    Discover(DiscoverArgs),
    /// Look up the records under a label of a namespace
    Resolve {
        #[arg(long)]
        ns: String,
        #[arg(long)]
        label: String,
        #[arg(long = "type", default_value = "ATTR")]
        record_type: RecordType,
    },
    /// Run the HTTP verifier service
    Serve {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Verifier namespace; issuer of every policy attribute
        #[arg(long, default_value = "S")]
        identity: String,
    },
    /// Request access to a resource from a verifier
    Request {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        resource: String,
        #[arg(long)]
        identity: String,
    },
    /// Run the built-in scenario on a simulated DHT
    Sim {
        /// TOML file with [dht] and [workload] sections
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// The built-in anti-doping scenario
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum IdentityCmd {
    /// Create a namespace with a fresh key pair
    Create {
        name: String,
        /// 32-byte hex seed instead of a random key
        #[arg(long)]
        seed: Option<String>,
    },
    /// Give a petname to someone else's public key
    Import {
        name: String,
        key: String,
    },
    Ls,
}

#[derive(Subcommand)]
enum DelegateCmd {
    /// ISSUER.ATTR <- EXPR, then publish
    Add {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        attr: String,
        /// e.g. "WADA.nado.dco" or "C2.employee & C2.controller"
        #[arg(long)]
        expr: String,
        #[arg(long, default_value = "30d", value_parser = humantime::parse_duration)]
        ttl: Duration,
        /// Store the lifetime as relative; it is stamped at each publish
        #[arg(long)]
        relative: bool,
    },
    Ls {
        #[arg(long)]
        issuer: Option<String>,
    },
    /// Remove one delegation, then publish
    Rm {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        attr: String,
        #[arg(long)]
        expr: String,
    },
}

#[derive(Subcommand)]
enum CredCmd {
    /// Issue ISSUER.ATTR <- SUBJECT and print it as JSON
    Issue {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        attr: String,
        #[arg(long, default_value = "30d", value_parser = humantime::parse_duration)]
        ttl: Duration,
    },
    /// Store credentials from a JSON file in their subjects' namespaces
    Import { file: PathBuf },
    /// Drop ISSUER.ATTR credentials held by IDENTITY
    Rm {
        #[arg(long)]
        identity: String,
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        attr: String,
    },
    Ls {
        #[arg(long)]
        identity: Option<String>,
    },
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    issuer: String,
    #[arg(long)]
    attr: String,
    #[arg(long)]
    subject: String,
    /// Credentials JSON (object or array); default: the subject's stored credentials
    #[arg(long)]
    creds: Option<PathBuf>,
    #[arg(long, default_value_t = Limits::default().max_trail_len)]
    max_trail_len: usize,
    #[arg(long, default_value_t = Limits::default().max_nodes)]
    max_nodes: usize,
    #[arg(long, default_value_t = Limits::default().max_lookups)]
    max_lookups: usize,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Create, publish and export the fixture into the data directory
    Init {
        #[arg(long)]
        force: bool,
    },
}

enum Outcome {
    Done,
    Denied,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Denied) => ExitCode::from(EXIT_DENIED),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// The reader of our output went away (`abd sim | head`).
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn fmt_time(t: Timestamp) -> String {
    humantime::format_rfc3339_seconds(UNIX_EPOCH + Duration::from_micros(t.as_micros())).to_string()
}

fn fmt_expiration(e: &Expiration) -> String {
    match e {
        Expiration::Absolute(t) => format!("expires {}", fmt_time(*t)),
        Expiration::Relative(d) => format!("lifetime {}", humantime::format_duration(*d)),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn run(cli: Cli) -> Result<Outcome> {
    let root = cli.home.clone().unwrap_or_else(Home::default_root);
    let json = cli.json;
    let now = SystemClock.now();
    match cli.command {
        Command::Identity { cmd } => identity(&root, cmd, json),
        Command::Delegate { cmd } => delegate(&root, cmd, json, now),
        Command::Publish { identity } => {
            let home = Home::open(&root)?;
            let targets = match identity {
                Some(name) => vec![home.owned(&name)?],
                None => home.owned_all()?,
            };
            for ns in targets {
                publish(&home, ns, now)?;
            }
            Ok(Outcome::Done)
        }
        Command::Cred { cmd } => cred(&root, cmd, json, now),
        Command::Discover(args) => discover_cmd(&root, args, json, now),
        Command::Resolve {
            ns,
            label,
            record_type,
        } => resolve_cmd(&root, &ns, &label, record_type, json, now),
        Command::Serve {
            policy,
            listen,
            identity,
        } => serve(&root, policy, listen, &identity),
        Command::Request {
            endpoint,
            resource,
            identity,
        } => request(&root, &endpoint, &resource, &identity, json, now),
        Command::Sim { config } => {
            let cfg = match config {
                Some(path) => sim::load_config(&path)?,
                None => sim::SimConfig {
                    dht: Default::default(),
                    workload: Default::default(),
                },
            };
            if sim::run(&cfg, now)? {
                Ok(Outcome::Done)
            } else {
                bail!("some lookups failed")
            }
        }
        Command::Scenario {
            cmd: ScenarioCmd::Init { force },
        } => scenario_init(&root, force, now),
    }
}

fn identity(root: &std::path::Path, cmd: IdentityCmd, json: bool) -> Result<Outcome> {
    let mut home = Home::open(root)?;
    match cmd {
        IdentityCmd::Create { name, seed } => {
            if !is_valid_petname(&name) {
                bail!("invalid petname {name:?}");
            }
            if home.names.get(&name).is_some() {
                bail!("petname {name:?} already in use");
            }
            let seed = seed
                .map(|s| {
                    hex::decode(s.trim())
                        .ok()
                        .and_then(|v| <[u8; 32]>::try_from(v).ok())
                        .ok_or_else(|| anyhow!("seed must be 64 hex digits"))
                })
                .transpose()?;
            let ns = Namespace::new(generate_namespace(seed), Some(name.clone()));
            home.store.save(&ns)?;
            home.names.insert(name.clone(), ns.public_key());
            home.save_names()?;
            if json {
                print_json(&json!({"name": name, "key": ns.public_key()}));
            } else {
                println!("{name} {}", ns.public_key());
            }
        }
        IdentityCmd::Import { name, key } => {
            if !is_valid_petname(&name) {
                bail!("invalid petname {name:?}");
            }
            let pk = key
                .parse()
                .map_err(|_| anyhow!("invalid public key {key:?}"))?;
            home.names.insert(name, pk);
            home.save_names()?;
        }
        IdentityCmd::Ls => {
            let rows: Vec<_> = home
                .names
                .iter()
                .map(|(name, pk)| {
                    let local = home.store.contains(pk);
                    (name.to_owned(), *pk, local)
                })
                .collect();
            if json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(n, pk, local)| json!({"name": n, "key": pk, "local": local}))
                    .collect();
                print_json(&json!(v));
            } else {
                for (n, pk, local) in rows {
                    println!("{n:<10} {pk} {}", if local { "local" } else { "remote" });
                }
            }
        }
    }
    Ok(Outcome::Done)
}

fn publish(home: &Home, mut ns: Namespace, now: Timestamp) -> Result<()> {
    let mut backend = home.backend()?;
    let report = ns.publish(&mut backend, now);
    home.store.save(&ns)?;
    let who = home.display(&ns.public_key());
    for l in &report.labels {
        match &l.error {
            Some(e) => eprintln!("publish {who}/{}: {e}", l.label),
            None => eprintln!("published {who}/{}", l.label),
        }
    }
    if !report.is_complete() {
        bail!("publishing {who} failed");
    }
    Ok(())
}

fn delegate(
    root: &std::path::Path,
    cmd: DelegateCmd,
    json: bool,
    now: Timestamp,
) -> Result<Outcome> {
    let home = Home::open(root)?;
    match cmd {
        DelegateCmd::Add {
            issuer,
            attr,
            expr,
            ttl,
            relative,
        } => {
            let mut ns = home.owned(&issuer)?;
            let e = parse_expression(&expr, &home.names)?;
            let exp = if relative {
                Expiration::Relative(ttl)
            } else {
                Expiration::Absolute(now.saturating_add(ttl))
            };
            add_delegation(&mut ns, &attr, &e, exp)?;
            home.store.save(&ns)?;
            println!("{issuer}.{attr} <- {}", e.render(&home.names));
            publish(&home, ns, now)?;
        }
        DelegateCmd::Rm { issuer, attr, expr } => {
            let mut ns = home.owned(&issuer)?;
            let e = parse_expression(&expr, &home.names)?;
            remove_delegation(&mut ns, &attr, &e)?;
            home.store.save(&ns)?;
            publish(&home, ns, now)?;
        }
        DelegateCmd::Ls { issuer } => {
            let spaces = match issuer {
                Some(i) => vec![home.namespace(&i)?],
                None => home.owned_all()?,
            };
            let mut rows = Vec::new();
            for ns in &spaces {
                for (label, expr, exp) in list_delegations(ns) {
                    rows.push((ns.public_key(), label, expr, exp));
                }
            }
            if json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(pk, label, expr, exp)| {
                        json!({
                            "issuer": pk,
                            "attribute": label,
                            "expression": expr.render(&home.names),
                            "type": expr.delegation_type().number(),
                            "entries": expr,
                            "expiration": exp_json(exp),
                        })
                    })
                    .collect();
                print_json(&json!(v));
            } else {
                for (pk, label, expr, exp) in rows {
                    println!(
                        "{}.{label} <- {}  (type {}, {})",
                        home.display(&pk),
                        expr.render(&home.names),
                        expr.delegation_type().number(),
                        fmt_expiration(&exp)
                    );
                }
            }
        }
    }
    Ok(Outcome::Done)
}

fn exp_json(e: &Expiration) -> serde_json::Value {
    match e {
        Expiration::Absolute(t) => json!({"absolute_us": t.as_micros()}),
        Expiration::Relative(d) => json!({"relative_us": d.as_micros() as u64}),
    }
}

fn cred(root: &std::path::Path, cmd: CredCmd, json: bool, now: Timestamp) -> Result<Outcome> {
    let home = Home::open(root)?;
    match cmd {
        CredCmd::Issue {
            issuer,
            subject,
            attr,
            ttl,
        } => {
            let ns = home.owned(&issuer)?;
            let subject = home.key(&subject)?;
            let c = issue_credential(ns.key(), subject, &attr, ttl, now)?;
            println!("{}", export_json(&c));
        }
        CredCmd::Import { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let creds = import_json_many(&text)?;
            for c in &creds {
                let mut ns = home.owned(&c.subject.to_hex()).with_context(|| {
                    format!(
                        "credential subject {} is not a local identity",
                        c.subject.short()
                    )
                })?;
                store_credential(&mut ns, c)?;
                home.store.save(&ns)?;
            }
            eprintln!("imported {} credential(s)", creds.len());
        }
        CredCmd::Rm {
            identity,
            issuer,
            attr,
        } => {
            let mut ns = home.owned(&identity)?;
            let n = remove_credential(&mut ns, &home.key(&issuer)?, &Label::new(attr.as_str())?)?;
            home.store.save(&ns)?;
            eprintln!("removed {n} credential(s)");
            if n == 0 {
                return Ok(Outcome::Denied);
            }
        }
        CredCmd::Ls { identity } => {
            let spaces = match identity {
                Some(i) => vec![home.namespace(&i)?],
                None => home.owned_all()?,
            };
            let creds: Vec<Credential> = spaces.iter().flat_map(stored_credentials).collect();
            if json {
                print_json(&serde_json::to_value(&creds)?);
            } else {
                for c in creds {
                    println!(
                        "{}.{} <- {}  ({}{})",
                        home.display(&c.issuer),
                        c.attribute,
                        home.display(&c.subject),
                        fmt_expiration(&Expiration::Absolute(c.expiration)),
                        if c.verify(now) { "" } else { ", INVALID" }
                    );
                }
            }
        }
    }
    Ok(Outcome::Done)
}

fn subject_creds(home: &Home, subject: &str, file: Option<&PathBuf>) -> Result<Vec<Credential>> {
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Ok(import_json_many(&text)?)
        }
        None => {
            let pk = home.key(subject)?;
            if home.store.contains(&pk) {
                Ok(stored_credentials(&home.namespace(subject)?))
            } else {
                Ok(Vec::new())
            }
        }
    }
}

fn discover_cmd(
    root: &std::path::Path,
    args: DiscoverArgs,
    json: bool,
    now: Timestamp,
) -> Result<Outcome> {
    let home = Home::open(root)?;
    let issuer = home.key(&args.issuer)?;
    let subject = home.key(&args.subject)?;
    let attr = Label::new(args.attr.as_str())?;
    let creds = subject_creds(&home, &args.subject, args.creds.as_ref())?;
    let limits = Limits {
        max_trail_len: args.max_trail_len,
        max_nodes: args.max_nodes,
        max_lookups: args.max_lookups,
    };
    let mut backend = home.backend()?;
    let run = discover_traced(&issuer, &attr, &subject, &creds, &mut backend, now, &limits);
    let trace: Vec<String> = run.trace.iter().map(|e| e.render(&home.names)).collect();
    if json {
        let (found, chain, error) = match &run.result {
            Ok(c) => (
                c.is_some(),
                serde_json::to_value(c)?,
                serde_json::Value::Null,
            ),
            Err(e) => (false, serde_json::Value::Null, json!(e.to_string())),
        };
        print_json(&json!({
            "found": found,
            "chain": chain,
            "error": error,
            "trace": trace,
            "resolves": run.lookups,
        }));
    } else {
        for (i, line) in trace.iter().enumerate() {
            println!("{:>3}. {line}", i + 1);
        }
        match &run.result {
            Ok(Some(chain)) => println!("chain:\n{}", indent(&chain.render(&home.names))),
            Ok(None) => println!("no delegation chain found"),
            Err(_) => {}
        }
    }
    match run.result {
        Ok(Some(_)) => Ok(Outcome::Done),
        Ok(None) => Ok(Outcome::Denied),
        Err(e) => Err(e.into()),
    }
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| format!("  {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn resolve_cmd(
    root: &std::path::Path,
    ns: &str,
    label: &str,
    record_type: RecordType,
    json: bool,
    now: Timestamp,
) -> Result<Outcome> {
    let home = Home::open(root)?;
    let pk = home.key(ns)?;
    let mut backend = home.backend()?;
    let records = match resolve(label, &pk, record_type, &mut backend, now) {
        Ok(r) => r,
        Err(ResolveError::NotFound) => {
            if json {
                print_json(&json!([]));
            } else {
                println!("no records");
            }
            return Ok(Outcome::Denied);
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for r in &records {
        let body = match r.record_type {
            RecordType::Attr => abd_core::delegation::decode_attr_payload(&r.payload)
                .map(|e| {
                    (
                        e.render(&home.names),
                        serde_json::to_value(&e).unwrap_or_default(),
                    )
                })
                .map_err(|e| anyhow!(e)),
            RecordType::Cred => abd_core::credential::decode_cred_payload(&r.payload)
                .map(|c| (c.render(), serde_json::to_value(&c).unwrap_or_default()))
                .map_err(|e| anyhow!(e)),
        }?;
        out.push((r, body));
    }
    if json {
        let v: Vec<_> = out
            .iter()
            .map(|(r, (text, value))| {
                json!({
                    "type": r.record_type.to_string(),
                    "expiration": exp_json(&r.expiration),
                    "text": text,
                    "value": value,
                })
            })
            .collect();
        print_json(&json!(v));
    } else {
        for (r, (text, _)) in out {
            println!(
                "{} {ns}.{label} <- {text}  ({})",
                r.record_type,
                fmt_expiration(&r.expiration)
            );
        }
    }
    Ok(if records.is_empty() {
        Outcome::Denied
    } else {
        Outcome::Done
    })
}

fn serve(
    root: &std::path::Path,
    policy: Option<PathBuf>,
    listen: SocketAddr,
    identity: &str,
) -> Result<Outcome> {
    let home = Home::open(root)?;
    let policy_path = policy.unwrap_or_else(|| home.policy_path());
    let policies = PolicyStore::load(&policy_path)?;
    let mut verifier = Verifier::new(home.key(identity)?, policies);
    verifier.names = home.names.clone();
    let backend = home.backend()?;
    let svc = Arc::new(VerifierService::new(
        verifier,
        Box::new(backend),
        Arc::new(SystemClock),
    ));
    let server = spawn(svc, listen).with_context(|| format!("binding {listen}"))?;
    println!("listening on {}", server.url());
    use std::io::Write;
    std::io::stdout().flush()?;
    server.wait();
    Ok(Outcome::Done)
}

fn request(
    root: &std::path::Path,
    endpoint: &str,
    resource: &str,
    identity: &str,
    json: bool,
    now: Timestamp,
) -> Result<Outcome> {
    let home = Home::open(root)?;
    let ns = home.owned(identity)?;
    let creds = stored_credentials(&ns);
    let mut backend = home.backend()?;
    let client = Client::new(endpoint);
    let out = match request_access(
        &client,
        resource,
        ns.key(),
        &creds,
        &mut backend,
        now,
        &Limits::default(),
    ) {
        Ok(out) => out,
        Err(AuthzError::UnknownResource(id)) => {
            eprintln!("unknown resource {id:?}");
            return Ok(Outcome::Denied);
        }
        Err(e) => return Err(e.into()),
    };
    if json {
        print_json(&serde_json::to_value(&out.reply)?);
    } else {
        let word = match out.reply.decision {
            DecisionKind::Grant => "GRANT",
            DecisionKind::Deny => "DENY",
            DecisionKind::Error => "ERROR",
        };
        println!("{word}");
        for r in &out.reply.reasons {
            println!("  reason: {r}");
        }
        for s in &out.reply.chain_summaries {
            println!("  chain: {s}");
        }
    }
    match out.reply.decision {
        DecisionKind::Grant => Ok(Outcome::Done),
        DecisionKind::Deny => Ok(Outcome::Denied),
        DecisionKind::Error => bail!(
            "verifier could not decide: {}",
            out.reply.reasons.join("; ")
        ),
    }
}

fn scenario_init(root: &std::path::Path, force: bool, now: Timestamp) -> Result<Outcome> {
    let occupied = root
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied {
        if !force {
            bail!(
                "DataDirNotEmpty: {} is not empty (use --force)",
                root.display()
            );
        }
        for dir in ["namespaces", "published", "creds"] {
            let p = root.join(dir);
            if p.exists() {
                std::fs::remove_dir_all(&p)?;
            }
        }
        for file in ["petnames.json", "policy.json"] {
            let p = root.join(file);
            if p.exists() {
                std::fs::remove_file(&p)?;
            }
        }
    }
    let mut home = Home::open(root)?;
    let mut scenario = Scenario::build(now);
    let mut backend = home.backend()?;
    let failed = scenario.publish_all(&mut backend, now);
    if !failed.is_empty() {
        bail!("publishing the scenario failed: {failed:?}");
    }
    for ns in scenario.namespaces.values() {
        home.store.save(ns)?;
    }
    home.names = scenario.names.clone();
    home.save_names()?;
    std::fs::create_dir_all(home.creds_dir())?;
    for (holder, creds) in &scenario.credentials {
        std::fs::write(
            home.creds_dir().join(format!("{holder}.json")),
            serde_json::to_string_pretty(creds)?,
        )?;
    }
    let mut policies = PolicyStore::default();
    policies
        .insert(POLICY_RESOURCE, &POLICY_ATTRIBUTES)
        .map_err(|e| anyhow!(e))?;
    std::fs::write(home.policy_path(), policies.to_json())?;
    for (name, pk) in scenario.names.iter() {
        println!("{name:<6} {pk}");
    }
    Ok(Outcome::Done)
}
