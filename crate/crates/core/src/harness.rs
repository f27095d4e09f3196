//! Experiment harness: fleet simulation sweeps, calibration tables and a
//! plain-text report.
//!
//! Every empirical table is a pure function of the plan. Enrollment reads
//! come from a per-device stream and authentication reads from a per
//! (device, iteration) stream; a vote count `N` uses the first `N` reads of
//! the stream, so configurations are compared on common random numbers.
//! Sub-response sizes are evaluated by partitioning the `base_bits` reads
//! into adjacent blocks.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate, correlation_sweep, bias_sweep, delta_sm_sweep, BiasInput, CalibrationResult, DeltaRow,
    GenuineSample, ImpostorModel, Zone, ZoneBounds, DEFAULT_ALPHA_FRR, DEFAULT_N_MIN,
};
use crate::error::{Error, Result};
use crate::hamming::{decode, enroll_helper, parity_footprint, HammingVariant, HelperData};
use crate::puf_model::{uniformity, Fleet, NoiseProfile, PufDevice};
use crate::response::Response;
use crate::seed;
use crate::stabilizer::MajorityAccumulator;

pub const SCHEMA_VERSION: u32 = 1;

pub const BER_FILE: &str = "ber_vs_votes.csv";
pub const BER_BOX_FILE: &str = "ber_box.csv";
pub const UNIFORMITY_FILE: &str = "uniformity.csv";
pub const PARITY_FILE: &str = "parity_footprint.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SM_SCALING_FILE: &str = "sm_scaling.csv";
pub const DELTA_SM_FILE: &str = "delta_sm.csv";
pub const BIAS_FILE: &str = "bias_sweep.csv";
pub const CORRELATION_FILE: &str = "correlation_sweep.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const CALIBRATION_JSON: &str = "calibration.json";
pub const PLAN_FILE: &str = "plan.json";

/// Error-correction choice of one configuration; `None` means raw response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scheme(pub Option<HammingVariant>);

impl Scheme {
    pub const NONE: Scheme = Scheme(None);

    pub fn all() -> Vec<Scheme> {
        std::iter::once(Scheme::NONE)
            .chain(HammingVariant::ALL.into_iter().map(|v| Scheme(Some(v))))
            .collect()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => v.fmt(f),
            None => f.write_str("none"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("none") || t.is_empty() {
            Ok(Scheme::NONE)
        } else {
            Ok(Scheme(Some(t.parse()?)))
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub master_seed: u64,
    pub devices: usize,
    pub noise: NoiseProfile,
    pub bias_q: f64,
    pub rho_chip: f64,
    pub base_bits: usize,
    pub n_grid: Vec<usize>,
    pub votes: Vec<u8>,
    pub variants: Vec<Scheme>,
    pub iterations: usize,
    pub alpha_far: Vec<f64>,
    pub alpha_frr: f64,
    pub n_min: usize,
    pub zone: ZoneBounds,
    /// `n` values for the analytic tables.
    pub analytic_n_grid: Vec<usize>,
    /// Tightened budgets compared against the first `alpha_far`.
    pub tightened_alpha: Vec<f64>,
    pub bias_grid: Vec<BiasInput>,
    pub rho_grid: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            master_seed: 0x5EED_2024,
            devices: 6,
            noise: NoiseProfile::default(),
            bias_q: 0.5,
            rho_chip: 0.0,
            base_bits: 2048,
            n_grid: doubling(64, 2048),
            votes: vec![1, 3, 5, 10, 20],
            variants: Scheme::all(),
            iterations: 45,
            alpha_far: vec![1e-6, 1e-9],
            alpha_frr: DEFAULT_ALPHA_FRR,
            n_min: DEFAULT_N_MIN,
            zone: ZoneBounds::default(),
            analytic_n_grid: doubling(8, 2048),
            tightened_alpha: vec![1e-7, 1e-8, 1e-9],
            bias_grid: [0.5, 0.52, 0.55, 0.6, 0.65, 0.7]
                .into_iter()
                .map(BiasInput::BitProbability)
                .collect(),
            rho_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn doubling(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |&n| Some(n * 2))
        .take_while(|&n| n <= to)
        .collect()
}

fn check_alpha(a: f64, what: &str) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be in (0,1), got {a}")))
    }
}

fn no_duplicates<T: PartialEq + fmt::Debug>(v: &[T], what: &str) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        if v[..i].contains(x) {
            return Err(Error::invalid(format!("duplicate {what} grid entry {x:?}")));
        }
    }
    Ok(())
}

impl ExperimentPlan {
    pub fn from_json(s: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(s).map_err(|e| Error::invalid(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.devices == 0 || self.iterations == 0 {
            return Err(Error::invalid("devices and iterations must be at least 1"));
        }
        if self.n_grid.is_empty() || self.votes.is_empty() || self.variants.is_empty() {
            return Err(Error::invalid("n, votes and variant grids must be non-empty"));
        }
        if self.alpha_far.is_empty() || self.analytic_n_grid.is_empty() {
            return Err(Error::invalid("alpha_far and analytic_n_grid must be non-empty"));
        }
        no_duplicates(&self.n_grid, "n")?;
        no_duplicates(&self.votes, "votes")?;
        no_duplicates(&self.variants, "variant")?;
        if !(self.bias_q > 0.0 && self.bias_q < 1.0) {
            return Err(Error::invalid(format!("bias_q must be in (0,1), got {}", self.bias_q)));
        }
        if !(0.0..1.0).contains(&self.rho_chip) {
            return Err(Error::invalid(format!("rho_chip must be in [0,1), got {}", self.rho_chip)));
        }
        if self.votes.contains(&0) {
            return Err(Error::invalid("vote counts must be at least 1"));
        }
        if self.base_bits == 0 {
            return Err(Error::invalid("base_bits must be positive"));
        }
        for &n in &self.n_grid {
            if n == 0 || n % 8 != 0 || self.base_bits % n != 0 {
                return Err(Error::NotDivisible {
                    len: self.base_bits,
                    block: n,
                });
            }
            for v in self.variants.iter().filter_map(|s| s.0) {
                if n % v.data_bits() != 0 {
                    return Err(Error::NotDivisible {
                        len: n,
                        block: v.data_bits(),
                    });
                }
            }
        }
        if self.analytic_n_grid.contains(&0) {
            return Err(Error::invalid("analytic n grid entries must be positive"));
        }
        for &a in self.alpha_far.iter().chain(&self.tightened_alpha) {
            check_alpha(a, "alpha_far")?;
        }
        check_alpha(self.alpha_frr, "alpha_frr")?;
        for b in &self.bias_grid {
            b.mismatch_p()?;
        }
        for &r in &self.rho_grid {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("rho grid entry {r} outside [0,1)")));
            }
        }
        ZoneBounds::new(self.zone.sm_min, self.zone.sm_ceil)?;
        Ok(())
    }

    pub fn fleet(&self) -> Fleet {
        Fleet::uniform(
            self.master_seed,
            self.devices,
            self.base_bits,
            self.noise,
            self.bias_q,
            self.rho_chip,
        )
    }

    fn max_votes(&self) -> usize {
        self.votes.iter().copied().max().unwrap_or(1) as usize
    }

    /// Impostor model implied by the fleet's bias and correlation.
    pub fn impostor(&self, n: usize) -> Result<ImpostorModel> {
        ImpostorModel::from_bias_and_correlation(n, self.bias_q, self.rho_chip)
    }
}

/// One authentication attempt on one block of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub device: String,
    pub iteration: usize,
    pub n: usize,
    pub block: usize,
    #[serde(rename = "N")]
    pub votes: u8,
    pub variant: Scheme,
    pub hd_bits: usize,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityRow {
    pub device: String,
    pub iteration: usize,
    #[serde(rename = "N")]
    pub votes: u8,
    pub variant: Scheme,
    pub hamming_weight: usize,
    pub uniformity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Read,
    Mv,
    Ec,
    Store,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Read => "read",
            Stage::Mv => "mv",
            Stage::Ec => "ec",
            Stage::Store => "store",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub stage: Stage,
    pub votes: u8,
    pub variant: Scheme,
    pub micros: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Empirical {
    pub ber: Vec<BerRow>,
    pub uniformity: Vec<UniformityRow>,
    pub timing: Vec<TimingSample>,
}

struct Enrollment {
    /// Indexed like `plan.votes`.
    responses: Vec<Response>,
    /// Indexed by vote position, then variant position.
    helpers: Vec<Vec<Option<HelperData>>>,
}

fn collect_reads(device: &PufDevice, count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<Response>, Vec<f64>) {
    (0..count)
        .map(|_| {
            let t = Instant::now();
            let r = device.sample_response(rng);
            (r, t.elapsed().as_secs_f64() * 1e6)
        })
        .unzip()
}

fn vote(reads: &[Response], votes: usize) -> Result<Response> {
    let mut acc = MajorityAccumulator::new(reads[0].len(), votes)?;
    for r in &reads[..votes] {
        acc.accumulate(r)?;
    }
    acc.finalize()
}

fn enroll_device(plan: &ExperimentPlan, device: &PufDevice) -> Result<Enrollment> {
    let mut rng = seed::stream(plan.master_seed, "enroll", &[device.device_id.as_bytes()]);
    let (reads, _) = collect_reads(device, plan.max_votes(), &mut rng);
    let mut responses = Vec::with_capacity(plan.votes.len());
    let mut helpers = Vec::with_capacity(plan.votes.len());
    for &n_votes in &plan.votes {
        let r = vote(&reads, n_votes as usize)?;
        helpers.push(
            plan.variants
                .iter()
                .map(|s| s.0.map(|v| enroll_helper(&r, v)).transpose())
                .collect::<Result<Vec<_>>>()?,
        );
        responses.push(r);
    }
    Ok(Enrollment { responses, helpers })
}

fn auth_cell(plan: &ExperimentPlan, device: &PufDevice, enrolled: &Enrollment, iteration: usize) -> Result<Empirical> {
    let mut rng = seed::stream(
        plan.master_seed,
        "auth",
        &[device.device_id.as_bytes(), &(iteration as u64).to_be_bytes()],
    );
    let (reads, read_us) = collect_reads(device, plan.max_votes(), &mut rng);
    let mut out = Empirical::default();
    for (vi, &n_votes) in plan.votes.iter().enumerate() {
        let nv = n_votes as usize;
        let t = Instant::now();
        let raw = vote(&reads, nv)?;
        let mv_us = t.elapsed().as_secs_f64() * 1e6;
        let reference = &enrolled.responses[vi];
        for (si, &scheme) in plan.variants.iter().enumerate() {
            let read_total: f64 = read_us[..nv].iter().sum();
            out.timing.push(TimingSample {
                stage: Stage::Read,
                votes: n_votes,
                variant: scheme,
                micros: read_total,
            });
            out.timing.push(TimingSample {
                stage: Stage::Mv,
                votes: n_votes,
                variant: scheme,
                micros: mv_us,
            });
            let corrected = match &enrolled.helpers[vi][si] {
                Some(helper) => {
                    let t = Instant::now();
                    let loaded = HelperData::from_bytes(&helper.to_bytes())?;
                    out.timing.push(TimingSample {
                        stage: Stage::Store,
                        votes: n_votes,
                        variant: scheme,
                        micros: t.elapsed().as_secs_f64() * 1e6,
                    });
                    let t = Instant::now();
                    let c = decode(&raw, &loaded)?.corrected;
                    out.timing.push(TimingSample {
                        stage: Stage::Ec,
                        votes: n_votes,
                        variant: scheme,
                        micros: t.elapsed().as_secs_f64() * 1e6,
                    });
                    c
                }
                None => raw.clone(),
            };
            let diff = reference.xor(&corrected)?;
            for &n in &plan.n_grid {
                for block in 0..plan.base_bits / n {
                    let hd = diff.slice(block * n, n)?.count_ones();
                    out.ber.push(BerRow {
                        device: device.device_id.clone(),
                        iteration,
                        n,
                        block,
                        votes: n_votes,
                        variant: scheme,
                        hd_bits: hd,
                        ber: hd as f64 / n as f64,
                    });
                }
            }
            out.uniformity.push(UniformityRow {
                device: device.device_id.clone(),
                iteration,
                votes: n_votes,
                variant: scheme,
                hamming_weight: corrected.count_ones(),
                uniformity: uniformity(&corrected)?,
            });
        }
    }
    Ok(out)
}

/// Runs the fleet simulation; rows come out in (device, iteration, N,
/// variant, n, block) order regardless of thread scheduling.
pub fn simulate(plan: &ExperimentPlan) -> Result<Empirical> {
    plan.validate()?;
    let devices = plan.fleet().materialize()?;
    let enrollments = devices
        .par_iter()
        .map(|d| enroll_device(plan, d))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..devices.len())
        .flat_map(|d| (0..plan.iterations).map(move |i| (d, i)))
        .collect();
    let parts = cells
        .par_iter()
        .map(|&(d, i)| auth_cell(plan, &devices[d], &enrollments[d], i))
        .collect::<Result<Vec<_>>>()?;
    let mut all = Empirical::default();
    for p in parts {
        all.ber.extend(p.ber);
        all.uniformity.extend(p.uniformity);
        all.timing.extend(p.timing);
    }
    Ok(all)
}

/// Quartiles by linear interpolation between order statistics, whiskers at
/// the most extreme points within 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("box-plot group"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = v.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
        let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
        let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
        let outliers = v.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect();
        Ok(BoxStats {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
            outliers,
        })
    }
}

/// Calibration of one (n, N, variant, alpha_far) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    #[serde(rename = "N")]
    pub votes: u8,
    pub variant: Scheme,
    pub result: CalibrationResult,
    pub zone: Zone,
}

/// Settings for turning genuine BER samples into calibration rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    pub alpha_far: Vec<f64>,
    pub alpha_frr: f64,
    pub n_min: usize,
    pub bias_q: f64,
    pub rho_chip: f64,
    pub zone: ZoneBounds,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        let p = ExperimentPlan::default();
        CalibrateOptions {
            alpha_far: p.alpha_far,
            alpha_frr: p.alpha_frr,
            n_min: p.n_min,
            bias_q: p.bias_q,
            rho_chip: p.rho_chip,
            zone: p.zone,
        }
    }
}

impl From<&ExperimentPlan> for CalibrateOptions {
    fn from(p: &ExperimentPlan) -> Self {
        CalibrateOptions {
            alpha_far: p.alpha_far.clone(),
            alpha_frr: p.alpha_frr,
            n_min: p.n_min,
            bias_q: p.bias_q,
            rho_chip: p.rho_chip,
            zone: p.zone,
        }
    }
}

/// Genuine error counts grouped by configuration key `(variant, N, n)`.
pub type GenuineGroups = BTreeMap<(Scheme, u8, usize), Vec<usize>>;

pub fn group_errors<'a>(rows: impl IntoIterator<Item = &'a BerRow>) -> GenuineGroups {
    let mut g = GenuineGroups::new();
    for r in rows {
        g.entry((r.variant, r.votes, r.n)).or_default().push(r.hd_bits);
    }
    g
}

/// Rows ordered by alpha_far, then variant, N and n.
pub fn calibration_table(groups: &GenuineGroups, opts: &CalibrateOptions) -> Result<Vec<CalibrationRow>> {
    if groups.is_empty() {
        return Err(Error::Empty("genuine BER table"));
    }
    let zone = ZoneBounds::new(opts.zone.sm_min, opts.zone.sm_ceil)?;
    let keys: Vec<_> = opts
        .alpha_far
        .iter()
        .flat_map(|&a| groups.keys().map(move |k| (a, *k)))
        .collect();
    keys.par_iter()
        .map(|&(alpha_far, (variant, votes, n))| {
            let counts = &groups[&(variant, votes, n)];
            let sample = GenuineSample::from_error_counts(n, counts.iter().copied())?;
            let model = ImpostorModel::from_bias_and_correlation(n, opts.bias_q, opts.rho_chip)?;
            let result = calibrate(&model, &sample, alpha_far, opts.alpha_frr, opts.n_min)?;
            let z = zone.classify(&result);
            Ok(CalibrationRow {
                votes,
                variant,
                result,
                zone: z,
            })
        })
        .collect()
}

/// CSV writer preceded by a `#schema=` line.
struct Table {
    w: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(dir: &Path, file: &str, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(dir.join(file))?);
        let name = file.trim_end_matches(".csv");
        writeln!(out, "#schema=pufauth.{name}.v{SCHEMA_VERSION}")?;
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(header)?;
        Ok(Table { w })
    }

    fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.w.write_record(fields)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const CALIBRATION_HEADER: [&str; 13] = [
    "n",
    "N",
    "variant",
    "alpha_far",
    "alpha_frr",
    "tau_min",
    "tau_max",
    "sm_ec",
    "floored",
    "viable",
    "n_valid",
    "recommended_tau",
    "zone",
];

fn write_calibration(dir: &Path, file: &str, rows: &[CalibrationRow]) -> Result<()> {
    let mut t = Table::create(dir, file, &CALIBRATION_HEADER)?;
    for r in rows {
        let c = &r.result;
        t.row([
            c.n.to_string(),
            r.votes.to_string(),
            r.variant.to_string(),
            c.alpha_far.to_string(),
            c.alpha_frr.to_string(),
            c.tau_min.to_string(),
            c.tau_max.to_string(),
            c.sm_ec.to_string(),
            c.floored.to_string(),
            c.viable.to_string(),
            c.n_valid.to_string(),
            opt_f64(c.recommended_tau()),
            r.zone.as_str().to_string(),
        ])?;
    }
    t.finish()
}

const DELTA_HEADER: [&str; 8] = [
    "n",
    "reference_p",
    "shifted_p",
    "reference_alpha",
    "shifted_alpha",
    "tau_max_reference",
    "tau_max_shifted",
    "delta_sm",
];

fn delta_fields(d: &DeltaRow) -> [String; 8] {
    [
        d.n.to_string(),
        d.reference_p.to_string(),
        d.shifted_p.to_string(),
        d.reference_alpha.to_string(),
        d.shifted_alpha.to_string(),
        d.tau_max_reference.to_string(),
        d.tau_max_shifted.to_string(),
        d.delta_sm.to_string(),
    ]
}

fn write_delta(dir: &Path, file: &str, lead: Option<&str>, rows: &[(Option<f64>, DeltaRow)]) -> Result<()> {
    let header: Vec<&str> = lead.into_iter().chain(DELTA_HEADER).collect();
    let mut t = Table::create(dir, file, &header)?;
    for (x, d) in rows {
        let lead_field = x.map(|v| v.to_string());
        t.row(lead_field.into_iter().chain(delta_fields(d)))?;
    }
    t.finish()
}

/// Files written by a sweep and the in-memory tables behind them.
#[derive(Debug)]
pub struct SweepOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub empirical: Empirical,
    pub calibration: Vec<CalibrationRow>,
}

/// Tables whose bytes depend only on the plan; `timing.csv` is wall-clock.
pub const DETERMINISTIC_FILES: [&str; 10] = [
    PLAN_FILE,
    BER_FILE,
    BER_BOX_FILE,
    UNIFORMITY_FILE,
    PARITY_FILE,
    SM_SCALING_FILE,
    DELTA_SM_FILE,
    BIAS_FILE,
    CORRELATION_FILE,
    CALIBRATION_JSON,
];

pub fn cmd_sweep(plan: &ExperimentPlan) -> Result<SweepOutput> {
    plan.validate()?;
    let dir = plan.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(PLAN_FILE), plan.to_json()? + "\n")?;

    let empirical = simulate(plan)?;

    let mut t = Table::create(
        &dir,
        BER_FILE,
        &["device", "iteration", "n", "block", "N", "variant", "hd_bits", "ber"],
    )?;
    for r in &empirical.ber {
        t.row([
            r.device.clone(),
            r.iteration.to_string(),
            r.n.to_string(),
            r.block.to_string(),
            r.votes.to_string(),
            r.variant.to_string(),
            r.hd_bits.to_string(),
            r.ber.to_string(),
        ])?;
    }
    t.finish()?;

    let mut box_groups: BTreeMap<(usize, u8, usize), Vec<f64>> = BTreeMap::new();
    let variant_pos = |s: Scheme| plan.variants.iter().position(|&v| v == s).unwrap_or(usize::MAX);
    for r in &empirical.ber {
        box_groups
            .entry((variant_pos(r.variant), r.votes, r.n))
            .or_default()
            .push(r.ber);
    }
    let mut t = Table::create(
        &dir,
        BER_BOX_FILE,
        &[
            "n",
            "N",
            "variant",
            "count",
            "mean",
            "median",
            "q1",
            "q3",
            "whisker_low",
            "whisker_high",
            "outliers",
            "outlier_values",
        ],
    )?;
    for ((vi, votes, n), values) in &box_groups {
        let s = BoxStats::new(values)?;
        let mut distinct = s.outliers.clone();
        distinct.dedup();
        t.row([
            n.to_string(),
            votes.to_string(),
            plan.variants[*vi].to_string(),
            s.count.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            s.outliers.len().to_string(),
            distinct.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(
        &dir,
        UNIFORMITY_FILE,
        &["device", "iteration", "N", "variant", "hamming_weight", "uniformity"],
    )?;
    for r in &empirical.uniformity {
        t.row([
            r.device.clone(),
            r.iteration.to_string(),
            r.votes.to_string(),
            r.variant.to_string(),
            r.hamming_weight.to_string(),
            r.uniformity.to_string(),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(
        &dir,
        PARITY_FILE,
        &["variant", "n", "codewords", "parity_bits", "nvs_bytes", "code_rate"],
    )?;
    for v in plan.variants.iter().filter_map(|s| s.0) {
        for &n in &plan.n_grid {
            let f = parity_footprint(v, n / 8)?;
            t.row([
                v.to_string(),
                n.to_string(),
                f.blocks.to_string(),
                f.parity_bits.to_string(),
                f.nvs_bytes.to_string(),
                f.code_rate.to_string(),
            ])?;
        }
    }
    t.finish()?;

    let mut timing: BTreeMap<(Stage, usize, u8), Vec<f64>> = BTreeMap::new();
    for s in &empirical.timing {
        timing
            .entry((s.stage, variant_pos(s.variant), s.votes))
            .or_default()
            .push(s.micros);
    }
    let mut t = Table::create(
        &dir,
        TIMING_FILE,
        &["stage", "variant", "N", "samples", "mean_us", "median_us", "q1_us", "q3_us"],
    )?;
    for ((stage, vi, votes), v) in &timing {
        let s = BoxStats::new(v)?;
        t.row([
            stage.as_str().to_string(),
            plan.variants[*vi].to_string(),
            votes.to_string(),
            s.count.to_string(),
            format!("{:.3}", s.mean),
            format!("{:.3}", s.median),
            format!("{:.3}", s.q1),
            format!("{:.3}", s.q3),
        ])?;
    }
    t.finish()?;

    let groups = group_errors(&empirical.ber);
    let mut calibration = calibration_table(&groups, &CalibrateOptions::from(plan))?;
    calibration.sort_by_key(|r| {
        (
            plan.alpha_far.iter().position(|&a| a == r.result.alpha_far),
            variant_pos(r.variant),
            r.votes,
            r.result.n,
        )
    });
    write_calibration(&dir, SM_SCALING_FILE, &calibration)?;
    fs::write(
        dir.join(CALIBRATION_JSON),
        serde_json::to_string_pretty(&calibration)? + "\n",
    )?;

    let p = plan.impostor(1)?.mismatch_p;
    let mut delta = Vec::new();
    for &a in &plan.tightened_alpha {
        delta.extend(delta_sm_sweep(plan.alpha_far[0], a, &plan.analytic_n_grid, p)?.into_iter().map(|d| (None, d)));
    }
    write_delta(&dir, DELTA_SM_FILE, None, &delta)?;

    let mut bias = Vec::new();
    for b in &plan.bias_grid {
        let q = match *b {
            BiasInput::BitProbability(q) => Some(q),
            BiasInput::Mismatch(_) => None,
        };
        bias.extend(
            bias_sweep(&[*b], &plan.analytic_n_grid, plan.alpha_far[0])?
                .into_iter()
                .map(|d| (q, d)),
        );
    }
    write_bias(&dir, &bias)?;

    let corr: Vec<_> = correlation_sweep(&plan.rho_grid, &plan.analytic_n_grid, plan.alpha_far[0])?
        .into_iter()
        .map(|(rho, d)| (Some(rho), d))
        .collect();
    write_delta(&dir, CORRELATION_FILE, Some("rho_chip"), &corr)?;

    let files = [
        PLAN_FILE,
        BER_FILE,
        BER_BOX_FILE,
        UNIFORMITY_FILE,
        PARITY_FILE,
        TIMING_FILE,
        SM_SCALING_FILE,
        CALIBRATION_JSON,
        DELTA_SM_FILE,
        BIAS_FILE,
        CORRELATION_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    Ok(SweepOutput {
        dir,
        files,
        empirical,
        calibration,
    })
}

/// Bias rows carry the bit probability when one was given; rows given as a
/// raw mismatch leave that column empty.
fn write_bias(dir: &Path, rows: &[(Option<f64>, DeltaRow)]) -> Result<()> {
    let header: Vec<&str> = std::iter::once("bit_probability").chain(DELTA_HEADER).collect();
    let mut t = Table::create(dir, BIAS_FILE, &header)?;
    for (q, d) in rows {
        t.row(std::iter::once(opt_f64(*q)).chain(delta_fields(d)))?;
    }
    t.finish()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(File::open(path)?))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::format(format!("{}: missing column `{name}`", path.display())))
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|e| Error::format(format!("line {}: bad `{name}` value {raw:?}: {e}", line_of(rec))))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads the genuine error counts of a `ber_vs_votes` table.
pub fn read_ber_table(path: impl AsRef<Path>) -> Result<GenuineGroups> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let (ci_n, ci_votes, ci_variant, ci_hd) = (
        column(&headers, "n", path)?,
        column(&headers, "N", path)?,
        column(&headers, "variant", path)?,
        column(&headers, "hd_bits", path)?,
    );
    let mut groups = GenuineGroups::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n: usize = field(&rec, ci_n, "n")?;
        let votes: u8 = field(&rec, ci_votes, "N")?;
        let variant: Scheme = field(&rec, ci_variant, "variant")?;
        let hd: usize = field(&rec, ci_hd, "hd_bits")?;
        if n == 0 || hd > n {
            return Err(Error::format(format!("line {}: hd_bits {hd} outside [0, {n}]", line_of(&rec))));
        }
        groups.entry((variant, votes, n)).or_default().push(hd);
    }
    if groups.is_empty() {
        return Err(Error::Empty("genuine BER table"));
    }
    Ok(groups)
}

/// Calibrates every configuration of a BER table and writes
/// `calibration.csv` and `calibration.json` into `out_dir`.
pub fn cmd_calibrate(ber_csv: impl AsRef<Path>, opts: &CalibrateOptions, out_dir: impl AsRef<Path>) -> Result<Vec<CalibrationRow>> {
    for &a in &opts.alpha_far {
        check_alpha(a, "alpha_far")?;
    }
    check_alpha(opts.alpha_frr, "alpha_frr")?;
    let groups = read_ber_table(ber_csv)?;
    let rows = calibration_table(&groups, opts)?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    write_calibration(dir, CALIBRATION_FILE, &rows)?;
    fs::write(dir.join(CALIBRATION_JSON), serde_json::to_string_pretty(&rows)? + "\n")?;
    Ok(rows)
}

/// Plain-text summary of a sweep directory.
pub fn cmd_report(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut out = String::new();

    let path = dir.join(BER_BOX_FILE);
    let mut rdr = csv_reader(&path)?;
    let h = rdr.headers()?.clone();
    let (cn, cv, cs, cm, cmed) = (
        column(&h, "n", &path)?,
        column(&h, "N", &path)?,
        column(&h, "variant", &path)?,
        column(&h, "mean", &path)?,
        column(&h, "median", &path)?,
    );
    let mut ber: Vec<(usize, u8, String, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ber.push((
            field(&rec, cn, "n")?,
            field(&rec, cv, "N")?,
            rec.get(cs).unwrap_or("").to_string(),
            field(&rec, cm, "mean")?,
            field(&rec, cmed, "median")?,
        ));
    }
    let n_top = ber.iter().map(|r| r.0).max().ok_or(Error::Empty("ber_box table"))?;
    let mut votes: Vec<u8> = ber.iter().map(|r| r.1).collect();
    votes.sort_unstable();
    votes.dedup();
    let mut schemes: Vec<String> = Vec::new();
    for r in &ber {
        if !schemes.contains(&r.2) {
            schemes.push(r.2.clone());
        }
    }
    writeln!(out, "Mean post-correction BER (%) at n={n_top}").unwrap();
    write!(out, "{:<10}", "variant").unwrap();
    for v in &votes {
        write!(out, "{:>9}", format!("N={v}")).unwrap();
    }
    out.push('\n');
    for s in &schemes {
        write!(out, "{s:<10}").unwrap();
        for v in &votes {
            let cell = ber.iter().find(|r| r.0 == n_top && r.1 == *v && &r.2 == s);
            match cell {
                Some(r) => write!(out, "{:>9.3}", r.3 * 100.0).unwrap(),
                None => write!(out, "{:>9}", "-").unwrap(),
            }
        }
        out.push('\n');
    }

    let path = dir.join(SM_SCALING_FILE);
    let mut rdr = csv_reader(&path)?;
    let h = rdr.headers()?.clone();
    let idx: Vec<usize> = ["n", "N", "variant", "alpha_far", "tau_min", "tau_max", "sm_ec", "zone"]
        .iter()
        .map(|c| column(&h, c, &path))
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut target = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let zone = rec.get(idx[7]).unwrap_or("").to_string();
        *counts.entry(zone.clone()).or_default() += 1;
        if zone == Zone::Target.as_str() {
            let f = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
            target.push(format!(
                "  n={:<5} N={:<3} {:<8} alpha_far={:<6} tau_min={:.4} tau_max={:.4} sm_ec={:.4}",
                f(0),
                f(1),
                f(2),
                f(3),
                field::<f64>(&rec, idx[4], "tau_min")?,
                field::<f64>(&rec, idx[5], "tau_max")?,
                field::<f64>(&rec, idx[6], "sm_ec")?,
            ));
        }
    }
    writeln!(out, "\nCalibration zones:").unwrap();
    for (z, c) in &counts {
        writeln!(out, "  {z:<17}{c}").unwrap();
    }
    writeln!(out, "\nTarget-zone configurations:").unwrap();
    if target.is_empty() {
        writeln!(out, "  (none)").unwrap();
    }
    for t in target {
        writeln!(out, "{t}").unwrap();
    }
    Ok(out)
}
