use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};

use puf_auth::calibration::ZoneBounds;
use puf_auth::harness::{self, CalibrateOptions, ExperimentPlan, Scheme};
use puf_auth::protocol::entity::{connect, AuthOutcome};
use puf_auth::protocol::{
    EcSite, Entity, HelperStore, PufSource, ReplayPuf, SimulatedPuf, ThresholdPolicy, VerifierConfig, VerifierServer,
};
use puf_auth::puf_model::{generate_device, write_dump, DeviceParams, Fleet, NoiseProfile};
use puf_auth::{Error, Result};

const OUT_ENV: &str = "PUFAUTH_OUT_DIR";

const EXIT_REJECT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;

#[derive(Parser)]
#[command(name = "pufauth", version, about = "SRAM PUF authentication toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulated fleet sweep and write all CSV tables.
    Sweep(SweepArgs),
    /// Calibrate thresholds from a ber_vs_votes table.
    Calibrate(CalibrateArgs),
    /// Print a summary of a sweep directory.
    Report(ReportArgs),
    /// Run the verifier service.
    Serve(ServeArgs),
    /// Run a scripted entity: optional enrollment then a number of authentications.
    Entity(EntityCmd),
    /// Enroll one entity with a verifier.
    Enroll(EnrollArgs),
    /// Authenticate one entity against a verifier.
    Auth(AuthArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Plan file (JSON); omitted fields take their defaults.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// ber_vs_votes.csv produced by `sweep`.
    #[arg(long)]
    ber: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-6, 1e-9])]
    alpha_far: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha_frr: f64,
    #[arg(long, default_value_t = 64)]
    n_min: usize,
    #[arg(long, default_value_t = 0.5)]
    bias_q: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    sm_min: f64,
    #[arg(long, default_value_t = 0.10)]
    sm_ceil: f64,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, env = OUT_ENV, default_value = "out")]
    dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Site {
    Entity,
    Verifier,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// CRP store (JSON lines).
    #[arg(long)]
    store: PathBuf,
    /// Audit CSV, appended to.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Manual acceptance threshold (BER).
    #[arg(long, required_unless_present = "tau_min", conflicts_with = "tau_min")]
    tau: Option<f64>,
    /// Calibrated reliability bound used as the threshold.
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long, default_value = "none")]
    variant: Scheme,
    #[arg(long, default_value_t = 5)]
    votes: u8,
    #[arg(long, default_value_t = 2048)]
    bits: u32,
    #[arg(long, default_value_t = 0)]
    offset: u32,
    #[arg(long, value_enum, default_value = "entity")]
    ec_site: Site,
    /// Exit after this many connections.
    #[arg(long)]
    max_sessions: Option<usize>,
    /// Per-connection I/O timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct EntityArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    connect: String,
    #[arg(long)]
    device_id: String,
    /// Master seed of the simulated device.
    #[arg(long, conflicts_with = "dump")]
    seed: Option<u64>,
    /// Replay raw reads from a dump file instead of simulating.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Fleet document describing the simulated device.
    #[arg(long, conflicts_with = "dump")]
    fleet: Option<PathBuf>,
    /// Cell count of the simulated device.
    #[arg(long, default_value_t = 2048)]
    bits: usize,
    /// Seed of the read noise; fresh entropy when omitted.
    #[arg(long)]
    read_seed: Option<u64>,
    /// Directory holding helper data.
    #[arg(long, default_value = "helpers")]
    helpers: PathBuf,
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct EntityCmd {
    #[command(flatten)]
    entity: EntityArgs,
    /// Enroll before authenticating.
    #[arg(long)]
    enroll: bool,
    #[arg(long)]
    overwrite: bool,
    #[arg(long, default_value_t = 1)]
    auths: usize,
    /// Write raw reads to this dump file instead of talking to a verifier.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    reads: usize,
}

#[derive(Args)]
struct EnrollArgs {
    #[command(flatten)]
    entity: EntityArgs,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct AuthArgs {
    #[command(flatten)]
    entity: EntityArgs,
}

/// Process exit status for an error; `network` marks commands whose I/O
/// errors are transport failures.
fn exit_code(e: &Error, network: bool) -> u8 {
    match e {
        Error::Remote { .. } | Error::Protocol { .. } | Error::DuplicateEnrollment(_) | Error::UnknownDevice(_) => {
            EXIT_REJECT
        }
        Error::Io(_) if network => EXIT_TRANSPORT,
        _ => EXIT_CONFIG,
    }
}

fn source(a: &EntityArgs) -> Result<Box<dyn PufSource>> {
    if let Some(path) = &a.dump {
        return Ok(Box::new(ReplayPuf::from_dump_file(path)?));
    }
    let device = match &a.fleet {
        Some(path) => {
            let fleet = Fleet::from_json(&std::fs::read_to_string(path)?)?;
            let idx = fleet
                .devices
                .iter()
                .position(|d| d.id == a.device_id)
                .ok_or_else(|| Error::InvalidParameter(format!("device {} not in fleet", a.device_id)))?;
            fleet.materialize()?.swap_remove(idx)
        }
        None => {
            let seed = a
                .seed
                .ok_or_else(|| Error::InvalidParameter("one of --seed, --dump or --fleet is required".into()))?;
            generate_device(seed, &a.device_id, &DeviceParams::unbiased(a.bits, NoiseProfile::default()))?
        }
    };
    Ok(Box::new(SimulatedPuf::new(device, a.read_seed.unwrap_or_else(rand::random))))
}

fn entity(a: &EntityArgs) -> Result<Entity> {
    Ok(Entity::new(a.device_id.clone(), source(a)?, HelperStore::at(&a.helpers)?))
}

fn do_enroll(e: &mut Entity, a: &EntityArgs, overwrite: bool) -> Result<()> {
    let mut link = connect(&a.connect, Duration::from_secs(a.timeout))?;
    e.enroll(&mut link, overwrite)?;
    println!("enrolled {}", e.device_id());
    Ok(())
}

fn do_auth(e: &mut Entity, a: &EntityArgs) -> Result<AuthOutcome> {
    let mut link = connect(&a.connect, Duration::from_secs(a.timeout))?;
    let o = e.authenticate(&mut link)?;
    println!(
        "{} {} hd={}/{} ber={:.6} threshold={}",
        e.device_id(),
        if o.accepted { "accepted" } else { "rejected" },
        o.hd_bits,
        o.n_bits,
        o.measured_ber(),
        o.threshold_bits
    );
    Ok(o)
}

fn verdict(accepted: bool) -> u8 {
    if accepted {
        0
    } else {
        EXIT_REJECT
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Sweep(a) => {
            let mut plan = match &a.plan {
                Some(p) => ExperimentPlan::load(p)?,
                None => ExperimentPlan::default(),
            };
            if let Some(o) = a.out {
                plan.output_dir = o;
            }
            if let Some(s) = a.seed {
                plan.master_seed = s;
            }
            if let Some(d) = a.devices {
                plan.devices = d;
            }
            if let Some(i) = a.iterations {
                plan.iterations = i;
            }
            let t = Instant::now();
            let out = harness::cmd_sweep(&plan)?;
            for f in &out.files {
                println!("{}", f.display());
            }
            eprintln!(
                "{} BER rows, {} calibration rows in {:.1}s",
                out.empirical.ber.len(),
                out.calibration.len(),
                t.elapsed().as_secs_f64()
            );
            Ok(0)
        }
        Cmd::Calibrate(a) => {
            let opts = CalibrateOptions {
                alpha_far: a.alpha_far,
                alpha_frr: a.alpha_frr,
                n_min: a.n_min,
                bias_q: a.bias_q,
                rho_chip: a.rho,
                zone: ZoneBounds::new(a.sm_min, a.sm_ceil)?,
            };
            let rows = harness::cmd_calibrate(&a.ber, &opts, &a.out)?;
            for r in &rows {
                let c = &r.result;
                println!(
                    "n={} N={} {} alpha_far={:e} tau_min={:.6} tau_max={:.6} sm_ec={:.6} recommended={} zone={}",
                    c.n,
                    r.votes,
                    r.variant,
                    c.alpha_far,
                    c.tau_min,
                    c.tau_max,
                    c.sm_ec,
                    c.recommended_tau().map_or("-".into(), |t| format!("{t:.6}")),
                    r.zone.as_str()
                );
            }
            Ok(0)
        }
        Cmd::Report(a) => {
            print!("{}", harness::cmd_report(&a.dir)?);
            Ok(0)
        }
        Cmd::Serve(a) => {
            let policy = match (a.tau, a.tau_min) {
                (Some(t), _) => ThresholdPolicy::manual(t)?,
                (None, Some(t)) => ThresholdPolicy::calibrated(t)?,
                (None, None) => unreachable!("clap requires exactly one threshold"),
            };
            let mut cfg = VerifierConfig::new(&a.store, policy);
            cfg.audit_path = a.audit;
            cfg.variant = a.variant.0;
            cfg.votes = a.votes;
            cfg.challenge_bits = a.bits;
            cfg.challenge_offset = a.offset;
            cfg.ec_site = match a.ec_site {
                Site::Entity => EcSite::Entity,
                Site::Verifier => EcSite::Verifier,
            };
            cfg.io_timeout = Duration::from_secs(a.timeout);
            let server = VerifierServer::bind(&a.listen, cfg)?;
            println!("listening on {}", server.local_addr()?);
            use std::io::Write;
            std::io::stdout().flush()?;
            server.serve_until(&AtomicBool::new(false), a.max_sessions)?;
            Ok(0)
        }
        Cmd::Entity(a) => {
            if let Some(path) = &a.record {
                let mut src = source(&a.entity)?;
                let reads = (0..a.reads).map(|_| src.read()).collect::<Result<Vec<_>>>()?;
                write_dump(std::io::BufWriter::new(std::fs::File::create(path)?), &reads)?;
                println!("wrote {} reads of {} bits to {}", reads.len(), src.n_bits(), path.display());
                return Ok(0);
            }
            let mut e = entity(&a.entity)?;
            if a.enroll {
                do_enroll(&mut e, &a.entity, a.overwrite)?;
            }
            let mut all = true;
            for _ in 0..a.auths {
                all &= do_auth(&mut e, &a.entity)?.accepted;
            }
            Ok(verdict(all))
        }
        Cmd::Enroll(a) => {
            let mut e = entity(&a.entity)?;
            do_enroll(&mut e, &a.entity, a.overwrite)?;
            Ok(0)
        }
        Cmd::Auth(a) => {
            let mut e = entity(&a.entity)?;
            Ok(verdict(do_auth(&mut e, &a.entity)?.accepted))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let network = matches!(cli.cmd, Cmd::Serve(_) | Cmd::Entity(_) | Cmd::Enroll(_) | Cmd::Auth(_));
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e, network))
        }
    }
}
