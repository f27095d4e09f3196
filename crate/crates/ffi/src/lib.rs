//! C ABI over the codec and calibration layers.
//!
//! Conventions shared by every entry point:
//! * The return value is a [`PufStatus`]; results travel through out-pointers,
//!   which are left untouched on failure.
//! * Responses are LSB-first packed bytes plus an explicit bit count, the
//!   same layout the wire protocol uses.
//! * Variants are passed as their one-byte file tag (see `puf_variant_tag`).
//! * Panics never cross the boundary; they surface as `PUF_STATUS_PANIC`.
//! * The message behind the most recent failure on the calling thread is
//!   available from `puf_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use puf_auth::calibration::{self, GenuineSample, ImpostorModel};
use puf_auth::hamming::{self, HammingVariant, HelperData};
use puf_auth::{Error, Response};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PufStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    Malformed = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Opaque helper-data handle. Release with `puf_helper_free`.
pub struct PufHelper {
    inner: HelperData,
}

/// Per-block decode accounting.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PufDecodeStats {
    pub clean: usize,
    pub single_corrected: usize,
    pub double_detected: usize,
    pub miscorrection_possible: usize,
    pub bit_flips_applied: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(PufStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::LengthMismatch { .. } | Error::NotDivisible { .. } => PufStatus::LengthMismatch,
            Error::Format(_) => PufStatus::Malformed,
            _ => PufStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: PufStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> PufStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return PufStatus::Ok,
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (PufStatus::Panic, "internal panic".to_owned()),
    };
    LAST_ERROR.with(|l| *l.borrow_mut() = msg);
    status
}

fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees p is either null or valid for writes
    unsafe { p.as_mut() }.ok_or_else(|| fail(PufStatus::NullPointer, "null output pointer"))
}

fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PufStatus::NullPointer, "null input buffer"));
    }
    // SAFETY: caller guarantees p points to len readable bytes
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn response(p: *const u8, n_bits: usize) -> Result<Response, Failure> {
    Ok(Response::from_packed(bytes(p, n_bits.div_ceil(8))?, n_bits)?)
}

fn helper<'a>(h: *const PufHelper) -> Result<&'a HelperData, Failure> {
    // SAFETY: handles come from this library and are live until freed
    unsafe { h.as_ref() }
        .map(|h| &h.inner)
        .ok_or_else(|| fail(PufStatus::NullPointer, "null helper handle"))
}

/// Static description of a status code. Never null.
#[no_mangle]
pub extern "C" fn puf_status_str(status: PufStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PufStatus::Ok => c"ok",
        PufStatus::NullPointer => c"null pointer",
        PufStatus::InvalidArgument => c"invalid argument",
        PufStatus::LengthMismatch => c"length mismatch",
        PufStatus::Malformed => c"malformed data",
        PufStatus::BufferTooSmall => c"buffer too small",
        PufStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap`. Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn puf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|l| {
        let msg = l.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a variant name such as `H(8,4)` into its tag.
///
/// # Safety
/// `name` must be a NUL-terminated string; `tag_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_variant_tag(name: *const c_char, tag_out: *mut u8) -> PufStatus {
    run(|| {
        if name.is_null() {
            return Err(fail(PufStatus::NullPointer, "null variant name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| fail(PufStatus::InvalidArgument, "variant name is not UTF-8"))?;
        let v: HammingVariant = name
            .parse()
            .map_err(|e: Error| fail(PufStatus::InvalidArgument, e.to_string()))?;
        *out(tag_out)? = v.tag();
        Ok(())
    })
}

/// Hamming distance between two packed responses of `n_bits` each.
///
/// # Safety
/// `a` and `b` must each point to `ceil(n_bits / 8)` bytes.
#[no_mangle]
pub unsafe extern "C" fn puf_hamming_distance(
    a: *const u8,
    b: *const u8,
    n_bits: usize,
    distance_out: *mut usize,
) -> PufStatus {
    run(|| {
        let d = response(a, n_bits)?.hamming_distance(&response(b, n_bits)?)?;
        *out(distance_out)? = d;
        Ok(())
    })
}

/// Impostor acceptance probability `P[Bin(n, mismatch_p) <= floor(tau * n)]`.
///
/// # Safety
/// `far_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_far(n: usize, mismatch_p: f64, tau: f64, far_out: *mut f64) -> PufStatus {
    run(|| {
        let model = ImpostorModel::new(n, mismatch_p)?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(fail(PufStatus::InvalidArgument, format!("tau {tau} outside [0,1]")));
        }
        *out(far_out)? = calibration::far(&model, tau);
        Ok(())
    })
}

/// Largest grid threshold whose FAR stays within `alpha_far`.
/// `floored_out` is set to 1 when even zero mismatches exceed the budget.
///
/// # Safety
/// Both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_tau_max(
    n: usize,
    mismatch_p: f64,
    alpha_far: f64,
    tau_out: *mut f64,
    floored_out: *mut u8,
) -> PufStatus {
    run(|| {
        let t = calibration::tau_max(&ImpostorModel::new(n, mismatch_p)?, alpha_far)?;
        let tau = out(tau_out)?;
        let floored = out(floored_out)?;
        *tau = t.tau;
        *floored = u8::from(t.floored);
        Ok(())
    })
}

/// Smallest grid threshold whose empirical FRR over the genuine error
/// counts is at most `alpha_frr`.
///
/// # Safety
/// `error_counts` must point to `count` values; `tau_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_tau_min(
    error_counts: *const u32,
    count: usize,
    n: usize,
    alpha_frr: f64,
    tau_out: *mut f64,
) -> PufStatus {
    run(|| {
        if count > 0 && error_counts.is_null() {
            return Err(fail(PufStatus::NullPointer, "null error counts"));
        }
        let counts: &[u32] = if count == 0 { &[] } else { slice::from_raw_parts(error_counts, count) };
        if let Some(c) = counts.iter().find(|&&c| c as usize > n) {
            return Err(fail(PufStatus::InvalidArgument, format!("error count {c} exceeds n={n}")));
        }
        let sample = GenuineSample::from_error_counts(n, counts.iter().map(|&c| c as usize))?;
        *out(tau_out)? = calibration::tau_min(&sample, alpha_frr)?;
        Ok(())
    })
}

/// Builds helper data for an enrolled response.
///
/// # Safety
/// `data` must point to `ceil(n_bits / 8)` bytes; `helper_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_enroll(
    data: *const u8,
    n_bits: usize,
    variant_tag: u8,
    helper_out: *mut *mut PufHelper,
) -> PufStatus {
    run(|| {
        let slot = out(helper_out)?;
        let variant = HammingVariant::from_tag(variant_tag)?;
        let inner = hamming::enroll_helper(&response(data, n_bits)?, variant)?;
        *slot = Box::into_raw(Box::new(PufHelper { inner }));
        Ok(())
    })
}

/// Parses a serialized `PUFH` blob.
///
/// # Safety
/// `buf` must point to `len` bytes; `helper_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_parse(buf: *const u8, len: usize, helper_out: *mut *mut PufHelper) -> PufStatus {
    run(|| {
        let slot = out(helper_out)?;
        let inner = HelperData::from_bytes(bytes(buf, len)?)?;
        *slot = Box::into_raw(Box::new(PufHelper { inner }));
        Ok(())
    })
}

/// Serializes a helper. With a null `buf` only the required size is
/// reported; a short buffer yields `PUF_STATUS_BUFFER_TOO_SMALL` and the
/// required size in `written_out`.
///
/// # Safety
/// `helper` must be a live handle; `buf` null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_serialize(
    helper: *const PufHelper,
    buf: *mut u8,
    cap: usize,
    written_out: *mut usize,
) -> PufStatus {
    run(|| {
        let blob = self::helper(helper)?.to_bytes();
        let written = out(written_out)?;
        *written = blob.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < blob.len() {
            return Err(fail(
                PufStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", blob.len()),
            ));
        }
        ptr::copy_nonoverlapping(blob.as_ptr(), buf, blob.len());
        Ok(())
    })
}

/// Variant tag and protected response length of a helper.
///
/// # Safety
/// `helper` must be a live handle; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_info(
    helper: *const PufHelper,
    variant_tag_out: *mut u8,
    n_bits_out: *mut usize,
) -> PufStatus {
    run(|| {
        let h = self::helper(helper)?;
        let tag = out(variant_tag_out)?;
        let bits = out(n_bits_out)?;
        *tag = h.variant().tag();
        *bits = h.data_len();
        Ok(())
    })
}

/// Corrects a raw response with a helper, writing `ceil(n_bits / 8)` packed
/// bytes to `corrected`. `stats_out` may be null.
///
/// # Safety
/// `raw` must point to `ceil(n_bits / 8)` bytes, `corrected` to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_decode(
    helper: *const PufHelper,
    raw: *const u8,
    n_bits: usize,
    corrected: *mut u8,
    cap: usize,
    stats_out: *mut PufDecodeStats,
) -> PufStatus {
    run(|| {
        let report = hamming::decode(&response(raw, n_bits)?, self::helper(helper)?)?;
        let packed = report.corrected.to_packed();
        if corrected.is_null() {
            return Err(fail(PufStatus::NullPointer, "null output buffer"));
        }
        if cap < packed.len() {
            return Err(fail(
                PufStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", packed.len()),
            ));
        }
        ptr::copy_nonoverlapping(packed.as_ptr(), corrected, packed.len());
        if let Some(s) = stats_out.as_mut() {
            *s = PufDecodeStats {
                clean: report.outcomes.clean,
                single_corrected: report.outcomes.single_corrected,
                double_detected: report.outcomes.double_detected,
                miscorrection_possible: report.outcomes.miscorrection_possible,
                bit_flips_applied: report.bit_flips_applied,
            };
        }
        Ok(())
    })
}

/// Releases a helper handle. Null is a no-op.
///
/// # Safety
/// `helper` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn puf_helper_free(helper: *mut PufHelper) {
    if !helper.is_null() {
        drop(Box::from_raw(helper));
    }
}
