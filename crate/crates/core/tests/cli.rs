use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

fn pufauth() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pufauth"));
    c.env_remove("PUFAUTH_OUT_DIR");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn pufauth")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("killed by signal")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Serve {
    child: Child,
    addr: String,
}

impl Serve {
    fn start(dir: &Path, extra: &[&str]) -> Serve {
        let mut child = pufauth()
            .args(["serve", "--listen", "127.0.0.1:0", "--bits", "512", "--votes", "5"])
            .arg("--store")
            .arg(dir.join("crp.jsonl"))
            .arg("--audit")
            .arg(dir.join("audit.csv"))
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect(&line).to_owned();
        Serve { child, addr }
    }
}

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn entity_cmd(sub: &str, addr: &str, id: &str, helpers: &Path) -> Command {
    let mut c = pufauth();
    c.args([sub, "--connect", addr, "--device-id", id, "--bits", "512", "--timeout", "5"])
        .arg("--helpers")
        .arg(helpers);
    c
}

#[test]
fn sweep_honours_output_dir_env() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("from-env");
    let o = run(pufauth()
        .args(["sweep", "--devices", "1", "--iterations", "2"])
        .env("PUFAUTH_OUT_DIR", &out));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ber_vs_votes.csv", "sm_scaling.csv", "calibration.json", "plan.json", "timing.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let ber = fs::read_to_string(out.join("ber_vs_votes.csv")).unwrap();
    assert!(ber.starts_with("#schema=pufauth.ber_vs_votes.v1\ndevice,iteration,n,block,N,variant,hd_bits,ber\n"));

    // calibrate and report over the same directory
    let cal = dir.path().join("cal");
    let o = run(pufauth()
        .args(["calibrate", "--alpha-far", "1e-6,1e-9"])
        .arg("--ber")
        .arg(out.join("ber_vs_votes.csv"))
        .arg("--out")
        .arg(&cal));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(cal.join("calibration.csv")).unwrap();
    assert!(csv.starts_with("#schema=pufauth.calibration.v1\nn,N,variant,alpha_far,alpha_frr,tau_min,tau_max"));
    assert_eq!(csv.lines().count(), 2 + 2 * 7 * 5 * 6);

    let o = run(pufauth().arg("report").env("PUFAUTH_OUT_DIR", &out));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("H(7,4)"));
}

#[test]
fn invalid_configuration_exits_3() {
    let dir = TempDir::new().unwrap();
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"devices": 2, "colour": "blue"}"#).unwrap();
    let indivisible = dir.path().join("indivisible.json");
    fs::write(&indivisible, r#"{"base_bits": 2048, "n_grid": [100]}"#).unwrap();
    for plan in [&unknown, &indivisible] {
        let o = run(pufauth().arg("sweep").arg("--plan").arg(plan).arg("--out").arg(dir.path()));
        assert_eq!(code(&o), 3, "{}", plan.display());
    }
    assert_eq!(code(&run(pufauth().args(["sweep", "--bogus"]))), 3);
    assert_eq!(code(&run(pufauth().args(["serve", "--store", "x", "--tau", "0.1", "--tau-min", "0.1"]))), 3);
    assert_eq!(code(&run(pufauth().args(["serve", "--store", "x"]))), 3);
    assert_eq!(code(&run(pufauth().args(["serve", "--store", "x", "--tau", "0.1", "--variant", "H(9,4)"]))), 3);
    assert_eq!(code(&run(pufauth().args(["calibrate", "--ber", "/nonexistent/ber.csv"]))), 3);
    assert_eq!(code(&run(pufauth().arg("--help"))), 0);
}

#[test]
fn enroll_auth_exit_codes() {
    let dir = TempDir::new().unwrap();
    let srv = Serve::start(dir.path(), &["--tau", "0.05", "--variant", "H(8,4)"]);
    let helpers = dir.path().join("helpers");

    let o = run(entity_cmd("enroll", &srv.addr, "dev-0", &helpers).args(["--seed", "7", "--read-seed", "1"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(helpers.join("dev-0_0_512.pufh").exists());

    let o = run(entity_cmd("auth", &srv.addr, "dev-0", &helpers).args(["--seed", "7", "--read-seed", "2"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("dev-0 accepted"));

    // a different physical device under the same identity
    let o = run(entity_cmd("auth", &srv.addr, "dev-0", &helpers).args(["--seed", "8", "--read-seed", "3"]));
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("rejected"));

    let o = run(entity_cmd("auth", &srv.addr, "nobody", &helpers).args(["--seed", "7"]));
    assert_eq!(code(&o), 2);

    let o = run(entity_cmd("enroll", &srv.addr, "dev-0", &helpers).args(["--seed", "7"]));
    assert_eq!(code(&o), 2, "duplicate enrollment");

    let audit = fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert_eq!(audit.lines().next(), Some("timestamp_ms,device_id,measured_ber,tau,accepted,error_code"));
    assert_eq!(audit.lines().count(), 4);
}

#[test]
fn unreachable_verifier_exits_4() {
    // bind then drop to get a port with nothing listening
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = TempDir::new().unwrap();
    let o = run(entity_cmd("auth", &format!("127.0.0.1:{port}"), "dev", &dir.path().join("h")).args(["--seed", "1"]));
    assert_eq!(code(&o), 4);
}

#[test]
fn dump_replay_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dev.dump");
    let o = run(pufauth()
        .args(["entity", "--device-id", "dev-r", "--seed", "3", "--read-seed", "9", "--bits", "512", "--reads", "12"])
        .arg("--record")
        .arg(&dump));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = fs::read(&dump).unwrap();
    // one record per read: u32 LE bit count, then packed bits
    assert_eq!(bytes.len(), 12 * (4 + 64));
    assert_eq!(&bytes[..4], &512u32.to_le_bytes());

    let srv = Serve::start(dir.path(), &["--tau", "0.05", "--variant", "H(12,8)"]);
    let helpers = dir.path().join("helpers");
    let replay = |sub: &str| {
        let mut c = entity_cmd(sub, &srv.addr, "dev-r", &helpers);
        c.arg("--dump").arg(&dump);
        c
    };
    assert_eq!(code(&run(&mut replay("enroll"))), 0);
    let first = run(&mut replay("auth"));
    let second = run(&mut replay("auth"));
    assert_eq!(code(&first), 0);
    assert_eq!(stdout(&first), stdout(&second));
}
