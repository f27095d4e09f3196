//! Acceptance-threshold calibration.
//!
//! The impostor Hamming distance is modelled as `X ~ Bin(n, p)` and the false
//! acceptance rate at threshold `tau` is the exact CDF `P[X <= floor(tau * n)]`,
//! summed in log space. The false rejection side stays empirical: `tau_min` is
//! an order statistic of measured genuine BERs. The error-constrained security
//! margin is `tau_max - tau_min`.
//!
//! Every threshold lives on the grid `k / n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when mapping a fractional threshold onto the integer grid, so
/// that `k / n` read back from a float maps to `k` rather than `k - 1`.
pub const GRID_EPS: f64 = 1e-9;

/// Largest integer bit count accepted by `tau`: `floor(tau * n + 1e-9)`, clamped to `[0, n]`.
pub fn threshold_bits(tau: f64, n: usize) -> usize {
    let k = (tau * n as f64 + GRID_EPS).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpostorModel {
    pub n: usize,
    pub mismatch_p: f64,
}

impl ImpostorModel {
    pub fn new(n: usize, mismatch_p: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("impostor model needs n >= 1"));
        }
        if !(mismatch_p > 0.0 && mismatch_p < 1.0) {
            return Err(Error::invalid(format!("mismatch probability must be in (0,1), got {mismatch_p}")));
        }
        Ok(ImpostorModel { n, mismatch_p })
    }

    /// Independent, unbiased responses.
    pub fn ideal(n: usize) -> Result<Self> {
        Self::new(n, 0.5)
    }

    /// Cells power up as 1 with probability `q`; two independent devices
    /// disagree with probability `2q(1 - q)`.
    pub fn from_bit_bias(n: usize, q: f64) -> Result<Self> {
        Self::from_bias_and_correlation(n, q, 0.0)
    }

    pub fn from_bias_and_correlation(n: usize, q: f64, rho_chip: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::invalid(format!("bit probability must be in (0,1), got {q}")));
        }
        if !(0.0..1.0).contains(&rho_chip) {
            return Err(Error::invalid(format!("rho_chip must be in [0,1), got {rho_chip}")));
        }
        Self::new(n, (1.0 - rho_chip) * 2.0 * q * (1.0 - q))
    }

    /// `ln P[X <= k]` for `k = 0..=n`.
    pub fn log_cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n + 1);
        let mut acc = f64::NEG_INFINITY;
        for lp in LogPmf::new(self.n, self.mismatch_p) {
            acc = log_add_exp(acc, lp);
            out.push(acc.min(0.0));
        }
        out
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Iterator over `ln P[X = k]`, `k = 0..=n`, with the binomial coefficient
/// built up incrementally.
struct LogPmf {
    n: usize,
    k: usize,
    ln_choose: f64,
    ln_p: f64,
    ln_q: f64,
}

impl LogPmf {
    fn new(n: usize, p: f64) -> Self {
        LogPmf {
            n,
            k: 0,
            ln_choose: 0.0,
            ln_p: p.ln(),
            ln_q: (-p).ln_1p(),
        }
    }
}

impl Iterator for LogPmf {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.k > self.n {
            return None;
        }
        let k = self.k;
        if k > 0 {
            self.ln_choose += ((self.n - k + 1) as f64).ln() - (k as f64).ln();
        }
        self.k += 1;
        Some(self.ln_choose + k as f64 * self.ln_p + (self.n - k) as f64 * self.ln_q)
    }
}

/// Probability that an impostor is accepted at threshold `tau`.
pub fn far(model: &ImpostorModel, tau: f64) -> f64 {
    let k = threshold_bits(tau.clamp(0.0, 1.0), model.n);
    if k >= model.n {
        return 1.0;
    }
    let acc = LogPmf::new(model.n, model.mismatch_p)
        .take(k + 1)
        .fold(f64::NEG_INFINITY, log_add_exp);
    acc.exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMax {
    pub tau: f64,
    pub bits: usize,
    /// Even `k = 0` violates the FAR budget; `tau` is clamped to 0.
    pub floored: bool,
}

/// Largest grid threshold `k / n` whose FAR stays within `alpha_far`.
pub fn tau_max(model: &ImpostorModel, alpha_far: f64) -> Result<TauMax> {
    check_alpha(alpha_far, "alpha_far")?;
    let ln_alpha = alpha_far.ln();
    let mut acc = f64::NEG_INFINITY;
    let mut best = None;
    for (k, lp) in LogPmf::new(model.n, model.mismatch_p).enumerate() {
        acc = log_add_exp(acc, lp);
        if acc > ln_alpha {
            break;
        }
        best = Some(k);
    }
    Ok(match best {
        Some(k) => TauMax {
            tau: k as f64 / model.n as f64,
            bits: k,
            floored: false,
        },
        None => TauMax {
            tau: 0.0,
            bits: 0,
            floored: true,
        },
    })
}

fn check_alpha(alpha: f64, name: &str) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be in (0,1), got {alpha}")))
    }
}

/// Post-authentication BERs of genuine attempts for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenuineSample {
    pub n: usize,
    pub bers: Vec<f64>,
}

impl GenuineSample {
    pub fn new(n: usize, bers: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("genuine sample needs n >= 1"));
        }
        if let Some(b) = bers.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::invalid(format!("BER {b} outside [0,1]")));
        }
        Ok(GenuineSample { n, bers })
    }

    pub fn from_error_counts(n: usize, counts: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(n, counts.into_iter().map(|c| c as f64 / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.bers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bers.is_empty()
    }

    /// Fraction of attempts rejected at `tau`.
    pub fn frr(&self, tau: f64) -> f64 {
        if self.bers.is_empty() {
            return 0.0;
        }
        let k = threshold_bits(tau, self.n);
        let rejected = self
            .bers
            .iter()
            .filter(|&&b| grid_ceil(b, self.n) > k)
            .count();
        rejected as f64 / self.bers.len() as f64
    }
}

/// Smallest `k` with `k / n >= value`.
fn grid_ceil(value: f64, n: usize) -> usize {
    let k = (value * n as f64 - GRID_EPS).ceil();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

/// Smallest grid threshold whose empirical FRR is at most `alpha_frr`: the
/// `(m - floor(alpha * m))`-th order statistic, snapped up to the `k / n` grid.
pub fn tau_min(sample: &GenuineSample, alpha_frr: f64) -> Result<f64> {
    check_alpha(alpha_frr, "alpha_frr")?;
    if sample.is_empty() {
        return Err(Error::Empty("genuine sample"));
    }
    let m = sample.len();
    let allowed = ((alpha_frr * m as f64) + GRID_EPS).floor() as usize;
    let mut sorted: Vec<usize> = sample.bers.iter().map(|&b| grid_ceil(b, sample.n)).collect();
    sorted.sort_unstable();
    let k = sorted[m - 1 - allowed.min(m - 1)];
    Ok(k as f64 / sample.n as f64)
}

/// Error-constrained security margin; negative when the genuine and impostor
/// distributions overlap under the chosen budgets.
pub fn sm_ec(tau_min: f64, tau_max: f64) -> f64 {
    tau_max - tau_min
}

pub const DEFAULT_ALPHA_FRR: f64 = 0.01;
pub const DEFAULT_N_MIN: usize = 64;
pub const DEFAULT_SM_MIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub n: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub sm_ec: f64,
    pub floored: bool,
    pub viable: bool,
    pub n_valid: bool,
    pub alpha_far: f64,
    pub alpha_frr: f64,
}

impl CalibrationResult {
    /// `tau_BER = tau_min` when a positive margin exists.
    pub fn recommended_tau(&self) -> Option<f64> {
        self.viable.then_some(self.tau_min)
    }
}

pub fn calibrate(
    model: &ImpostorModel,
    sample: &GenuineSample,
    alpha_far: f64,
    alpha_frr: f64,
    n_min: usize,
) -> Result<CalibrationResult> {
    if model.n != sample.n {
        return Err(Error::LengthMismatch {
            expected: model.n,
            actual: sample.n,
        });
    }
    let lo = tau_min(sample, alpha_frr)?;
    let hi = tau_max(model, alpha_far)?;
    let sm = sm_ec(lo, hi.tau);
    Ok(CalibrationResult {
        n: model.n,
        tau_min: lo,
        tau_max: hi.tau,
        sm_ec: sm,
        floored: hi.floored,
        viable: sm > 0.0,
        n_valid: model.n >= n_min,
        alpha_far,
        alpha_frr,
    })
}

/// One analytic `ΔSM_ec` cell: margin lost when moving from the reference
/// impostor model/budget to the shifted one (tau_min cancels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaRow {
    pub n: usize,
    pub reference_p: f64,
    pub shifted_p: f64,
    pub reference_alpha: f64,
    pub shifted_alpha: f64,
    pub tau_max_reference: f64,
    pub tau_max_shifted: f64,
    pub delta_sm: f64,
}

fn delta_row(n: usize, ref_p: f64, ref_alpha: f64, p: f64, alpha: f64) -> Result<DeltaRow> {
    let a = tau_max(&ImpostorModel::new(n, ref_p)?, ref_alpha)?;
    let b = tau_max(&ImpostorModel::new(n, p)?, alpha)?;
    Ok(DeltaRow {
        n,
        reference_p: ref_p,
        shifted_p: p,
        reference_alpha: ref_alpha,
        shifted_alpha: alpha,
        tau_max_reference: a.tau,
        tau_max_shifted: b.tau,
        delta_sm: a.tau - b.tau,
    })
}

fn delta_grid(n_grid: &[usize], ref_p: f64, ref_alpha: f64, p: f64, alpha: f64) -> Result<Vec<DeltaRow>> {
    n_grid
        .par_iter()
        .map(|&n| delta_row(n, ref_p, ref_alpha, p, alpha))
        .collect()
}

/// Margin lost by tightening `alpha_far` from `base_alpha` to `tightened_alpha`.
pub fn delta_sm_sweep(base_alpha: f64, tightened_alpha: f64, n_grid: &[usize], mismatch_p: f64) -> Result<Vec<DeltaRow>> {
    check_alpha(base_alpha, "base alpha")?;
    check_alpha(tightened_alpha, "tightened alpha")?;
    delta_grid(n_grid, mismatch_p, base_alpha, mismatch_p, tightened_alpha)
}

/// How a bias grid value is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInput {
    /// Probability that a cell powers up as 1; mismatch `2q(1 - q)`.
    BitProbability(f64),
    /// Per-bit impostor mismatch probability, used as is.
    Mismatch(f64),
}

impl BiasInput {
    pub fn mismatch_p(self) -> Result<f64> {
        match self {
            BiasInput::BitProbability(q) => Ok(ImpostorModel::from_bit_bias(1, q)?.mismatch_p),
            BiasInput::Mismatch(p) => Ok(ImpostorModel::new(1, p)?.mismatch_p),
        }
    }
}

/// Rows are grouped by bias value, then ordered by `n`.
pub fn bias_sweep(biases: &[BiasInput], n_grid: &[usize], alpha_far: f64) -> Result<Vec<DeltaRow>> {
    check_alpha(alpha_far, "alpha_far")?;
    let mut out = Vec::with_capacity(biases.len() * n_grid.len());
    for b in biases {
        out.extend(delta_grid(n_grid, 0.5, alpha_far, b.mismatch_p()?, alpha_far)?);
    }
    Ok(out)
}

/// Margin lost to inter-chip correlation: reference `p = 0.5`, shifted `p = 0.5 (1 - rho)`.
pub fn correlation_sweep(rho_grid: &[f64], n_grid: &[usize], alpha_far: f64) -> Result<Vec<(f64, DeltaRow)>> {
    check_alpha(alpha_far, "alpha_far")?;
    let mut out = Vec::with_capacity(rho_grid.len() * n_grid.len());
    for &rho in rho_grid {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho_chip must be in [0,1), got {rho}")));
        }
        let p = 0.5 * (1.0 - rho);
        out.extend(
            delta_grid(n_grid, 0.5, alpha_far, p, alpha_far)?
                .into_iter()
                .map(|row| (rho, row)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    /// Inside `[sm_min, sm_ceil]` with `n >= n_min`.
    Target,
    /// Margin above the ceiling: resources could be traded away.
    OverProvisioned,
    /// Positive margin below the safety floor.
    BelowFloor,
    /// `sm_ec <= 0`: no threshold meets both budgets.
    Unviable,
    /// In band, but `n` is below the advisory minimum.
    BelowNMin,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Target => "target",
            Zone::OverProvisioned => "over_provisioned",
            Zone::BelowFloor => "below_floor",
            Zone::Unviable => "unviable",
            Zone::BelowNMin => "below_n_min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneBounds {
    pub sm_min: f64,
    pub sm_ceil: f64,
}

impl Default for ZoneBounds {
    fn default() -> Self {
        ZoneBounds {
            sm_min: DEFAULT_SM_MIN,
            sm_ceil: 0.10,
        }
    }
}

impl ZoneBounds {
    pub fn new(sm_min: f64, sm_ceil: f64) -> Result<Self> {
        if sm_min < 0.0 || sm_ceil <= sm_min {
            return Err(Error::invalid(format!(
                "target zone needs 0 <= sm_min < sm_ceil, got [{sm_min}, {sm_ceil}]"
            )));
        }
        Ok(ZoneBounds { sm_min, sm_ceil })
    }

    pub fn classify(&self, r: &CalibrationResult) -> Zone {
        if r.sm_ec <= 0.0 {
            Zone::Unviable
        } else if r.sm_ec < self.sm_min {
            Zone::BelowFloor
        } else if r.sm_ec > self.sm_ceil {
            Zone::OverProvisioned
        } else if !r.n_valid {
            Zone::BelowNMin
        } else {
            Zone::Target
        }
    }
}

/// Labels every result; callers keep the `Zone::Target` entries.
pub fn target_zone_filter<'a>(
    results: &'a [CalibrationResult],
    bounds: &ZoneBounds,
) -> Result<Vec<(&'a CalibrationResult, Zone)>> {
    let bounds = ZoneBounds::new(bounds.sm_min, bounds.sm_ceil)?;
    Ok(results.iter().map(|r| (r, bounds.classify(r))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(sm: f64, n: usize) -> CalibrationResult {
        CalibrationResult {
            n,
            tau_min: 0.0,
            tau_max: sm.max(0.0),
            sm_ec: sm,
            floored: false,
            viable: sm > 0.0,
            n_valid: n >= DEFAULT_N_MIN,
            alpha_far: 1e-6,
            alpha_frr: 0.01,
        }
    }

    #[test]
    fn far_closed_forms() {
        let m = ImpostorModel::ideal(64).unwrap();
        let f = far(&m, 0.0);
        assert!((f / 0.5f64.powi(64) - 1.0).abs() < 1e-12, "{f}");
        assert!((f - 5.421e-20).abs() / 5.421e-20 < 1e-3);
        let f16 = far(&ImpostorModel::ideal(16).unwrap(), 0.0);
        assert!((f16 - 1.52587890625e-5).abs() < 1e-17);
        for n in [1, 7, 64, 2048] {
            assert_eq!(far(&ImpostorModel::ideal(n).unwrap(), 1.0), 1.0);
        }
        let biased = ImpostorModel::new(10, 0.3).unwrap();
        assert!((far(&biased, 0.0) - 0.7f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn threshold_grid_rounding() {
        assert_eq!(threshold_bits(0.29, 100), 29);
        assert_eq!(threshold_bits(0.03, 100), 3);
        assert_eq!(threshold_bits(41.0 / 2048.0, 2048), 41);
        assert_eq!(threshold_bits(0.0, 10), 0);
        assert_eq!(threshold_bits(1.0, 10), 10);
    }

    #[test]
    fn tau_max_flooring_and_alpha_near_one() {
        let t = tau_max(&ImpostorModel::ideal(16).unwrap(), 1e-6).unwrap();
        assert_eq!((t.tau, t.bits, t.floored), (0.0, 0, true));
        let t = tau_max(&ImpostorModel::ideal(64).unwrap(), 0.999).unwrap();
        assert!(t.tau >= 0.5 && !t.floored);
        assert!(tau_max(&ImpostorModel::ideal(64).unwrap(), 0.0).is_err());
        assert!(tau_max(&ImpostorModel::ideal(64).unwrap(), 1.0).is_err());
    }

    #[test]
    fn tau_max_is_the_largest_admissible_step() {
        let m = ImpostorModel::ideal(256).unwrap();
        let t = tau_max(&m, 1e-6).unwrap();
        assert!(far(&m, t.tau) <= 1e-6);
        assert!(far(&m, (t.bits + 1) as f64 / 256.0) > 1e-6);
    }

    #[test]
    fn tau_min_examples() {
        let zeros = GenuineSample::new(64, vec![0.0; 45]).unwrap();
        assert_eq!(tau_min(&zeros, 0.01).unwrap(), 0.0);

        let mut masked = vec![0.0; 99];
        masked.push(0.10);
        let s = GenuineSample::new(100, masked).unwrap();
        assert_eq!(tau_min(&s, 0.01).unwrap(), 0.0);

        let s = GenuineSample::new(50, vec![0.02; 100]).unwrap();
        assert_eq!(tau_min(&s, 0.01).unwrap(), 0.02);

        // off-grid values snap up
        let s = GenuineSample::new(2048, vec![0.02; 100]).unwrap();
        assert_eq!(tau_min(&s, 0.01).unwrap(), 41.0 / 2048.0);

        assert!(matches!(
            tau_min(&GenuineSample::new(8, vec![]).unwrap(), 0.01),
            Err(Error::Empty(_))
        ));
        assert!(GenuineSample::new(8, vec![1.5]).is_err());
    }

    #[test]
    fn tau_min_matches_exhaustive_threshold_scan() {
        // oracle: scan every grid step, take the first with FRR <= alpha
        let n = 32;
        let counts = [0, 0, 1, 3, 0, 2, 7, 1, 0, 0, 4, 1, 1, 2, 0, 9, 0, 0, 1, 0];
        let s = GenuineSample::from_error_counts(n, counts).unwrap();
        for alpha in [0.01, 0.05, 0.1, 0.15, 0.2, 0.5] {
            let scan = (0..=n)
                .map(|k| k as f64 / n as f64)
                .find(|&t| {
                    let over = counts.iter().filter(|&&c| c as f64 / n as f64 > t + 1e-12).count();
                    over as f64 <= alpha * counts.len() as f64 + 1e-9
                })
                .unwrap();
            assert_eq!(tau_min(&s, alpha).unwrap(), scan, "alpha {alpha}");
            assert!(s.frr(scan) <= alpha + 1e-12);
        }
    }

    #[test]
    fn sm_ec_examples() {
        assert!((sm_ec(0.05, 0.35) - 0.30).abs() < 1e-15);
        assert!((sm_ec(0.40, 0.35) + 0.05).abs() < 1e-15);
        assert_eq!(sm_ec(0.2, 0.2), 0.0);
        let m = ImpostorModel::ideal(64).unwrap();
        let s = GenuineSample::new(64, vec![0.5; 10]).unwrap();
        let r = calibrate(&m, &s, 1e-6, 0.01, 64).unwrap();
        assert!(!r.viable);
        assert_eq!(r.recommended_tau(), None);
    }

    #[test]
    fn calibrate_all_zero_genuine() {
        let m = ImpostorModel::ideal(2048).unwrap();
        let s = GenuineSample::new(2048, vec![0.0; 90]).unwrap();
        let r = calibrate(&m, &s, 1e-6, 0.01, 64).unwrap();
        assert_eq!(r.recommended_tau(), Some(0.0));
        assert_eq!(r.sm_ec, r.tau_max);
        assert!(r.viable && r.n_valid && !r.floored);
        assert!(calibrate(&m, &GenuineSample::new(64, vec![0.0]).unwrap(), 1e-6, 0.01, 64).is_err());
    }

    #[test]
    fn bias_inputs() {
        assert_eq!(BiasInput::BitProbability(0.5).mismatch_p().unwrap(), 0.5);
        assert!((BiasInput::BitProbability(0.4).mismatch_p().unwrap() - 0.48).abs() < 1e-15);
        assert_eq!(BiasInput::Mismatch(0.45).mismatch_p().unwrap(), 0.45);
        assert!(BiasInput::Mismatch(0.0).mismatch_p().is_err());
    }

    #[test]
    fn correlation_zero_is_exactly_zero() {
        let rows = correlation_sweep(&[0.0, 0.2], &[64, 256], 1e-6).unwrap();
        assert!(rows.iter().filter(|(r, _)| *r == 0.0).all(|(_, d)| d.delta_sm == 0.0));
        assert!(rows.iter().filter(|(r, _)| *r == 0.2).all(|(_, d)| (d.shifted_p - 0.4).abs() < 1e-15));
        assert!(correlation_sweep(&[1.0], &[64], 1e-6).is_err());
    }

    #[test]
    fn zone_labels() {
        let b = ZoneBounds::new(0.05, 0.10).unwrap();
        let rs = [result(0.30, 256), result(0.07, 256), result(-0.02, 256), result(0.03, 256), result(0.07, 32)];
        let zones: Vec<Zone> = target_zone_filter(&rs, &b).unwrap().into_iter().map(|(_, z)| z).collect();
        assert_eq!(
            zones,
            [Zone::OverProvisioned, Zone::Target, Zone::Unviable, Zone::BelowFloor, Zone::BelowNMin]
        );
        assert!(ZoneBounds::new(0.1, 0.1).is_err());
        assert!(target_zone_filter(&rs, &ZoneBounds { sm_min: -0.1, sm_ceil: 0.2 }).is_err());
    }
}
