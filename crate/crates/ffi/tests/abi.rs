use std::ffi::{c_char, CStr};
use std::path::Path;
use std::process::Command;
use std::ptr;

use puf_auth::calibration::{far, tau_max, ImpostorModel};
use puf_auth::hamming::{enroll_helper, HammingVariant};
use puf_auth::Response;
use puf_auth_ffi::*;

fn pattern(n: usize, seed: u64) -> Response {
    let mut x = seed | 1;
    Response::from_bits((0..n).map(|_| {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x & 1 == 1
    }))
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        puf_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn tag(name: &str) -> u8 {
    let c = std::ffi::CString::new(name).unwrap();
    let mut t = 0xFF;
    assert_eq!(unsafe { puf_variant_tag(c.as_ptr(), &mut t) }, PufStatus::Ok);
    t
}

#[test]
fn variant_tags_match_file_format() {
    for v in HammingVariant::ALL {
        assert_eq!(tag(&v.to_string()), v.tag());
    }
    let bad = c"H(9,4)";
    let mut t = 0;
    assert_eq!(unsafe { puf_variant_tag(bad.as_ptr(), &mut t) }, PufStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn hamming_distance_over_packed_bytes() {
    let a = pattern(100, 3);
    let mut b = a.clone();
    for i in [0, 7, 8, 99] {
        b.flip(i);
    }
    let mut d = 0;
    let st = unsafe { puf_hamming_distance(a.to_packed().as_ptr(), b.to_packed().as_ptr(), 100, &mut d) };
    assert_eq!(st, PufStatus::Ok);
    assert_eq!(d, 4);
}

#[test]
fn nonzero_padding_is_malformed() {
    let bytes = [0xFFu8; 2];
    let mut d = 0;
    let st = unsafe { puf_hamming_distance(bytes.as_ptr(), bytes.as_ptr(), 12, &mut d) };
    assert_eq!(st, PufStatus::Malformed);
}

#[test]
fn null_pointers_are_reported() {
    let a = [0u8; 1];
    assert_eq!(
        unsafe { puf_hamming_distance(a.as_ptr(), a.as_ptr(), 8, ptr::null_mut()) },
        PufStatus::NullPointer
    );
    assert_eq!(unsafe { puf_far(16, 0.5, 0.1, ptr::null_mut()) }, PufStatus::NullPointer);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { puf_helper_parse(ptr::null(), 10, &mut h) }, PufStatus::NullPointer);
    assert!(h.is_null());
    unsafe { puf_helper_free(ptr::null_mut()) };
}

#[test]
fn calibration_matches_library() {
    let mut f = 0.0;
    assert_eq!(unsafe { puf_far(256, 0.5, 0.3, &mut f) }, PufStatus::Ok);
    assert_eq!(f, far(&ImpostorModel::ideal(256).unwrap(), 0.3));

    let (mut tau, mut floored) = (1.0, 9);
    assert_eq!(unsafe { puf_tau_max(16, 0.5, 1e-6, &mut tau, &mut floored) }, PufStatus::Ok);
    assert_eq!((tau, floored), (0.0, 1));
    assert_eq!(unsafe { puf_tau_max(2048, 0.5, 1e-6, &mut tau, &mut floored) }, PufStatus::Ok);
    let expect = tau_max(&ImpostorModel::ideal(2048).unwrap(), 1e-6).unwrap();
    assert_eq!((tau, floored), (expect.tau, 0));

    assert_eq!(unsafe { puf_tau_max(16, 0.5, 0.0, &mut tau, &mut floored) }, PufStatus::InvalidArgument);
}

#[test]
fn tau_min_order_statistic() {
    // 100 samples, alpha 0.01: one rejection allowed, so the 99th smallest
    let mut counts: Vec<u32> = (0..100).map(|i| i % 7).collect();
    counts[42] = 30;
    let mut t = 0.0;
    assert_eq!(unsafe { puf_tau_min(counts.as_ptr(), counts.len(), 512, 0.01, &mut t) }, PufStatus::Ok);
    assert_eq!(t, 6.0 / 512.0);
    assert_eq!(unsafe { puf_tau_min(ptr::null(), 0, 512, 0.01, &mut t) }, PufStatus::InvalidArgument);
    counts[0] = 513;
    assert_eq!(
        unsafe { puf_tau_min(counts.as_ptr(), counts.len(), 512, 0.01, &mut t) },
        PufStatus::InvalidArgument
    );
}

#[test]
fn helper_round_trip_corrects_single_errors() {
    let enrolled = pattern(256, 9);
    let packed = enrolled.to_packed();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { puf_helper_enroll(packed.as_ptr(), 256, tag("H(8,4)"), &mut h) },
        PufStatus::Ok
    );

    let (mut t, mut n) = (0, 0);
    assert_eq!(unsafe { puf_helper_info(h, &mut t, &mut n) }, PufStatus::Ok);
    assert_eq!((t, n), (HammingVariant::H8_4.tag(), 256));

    // one flip in each of the first three codewords
    let mut noisy = enrolled.clone();
    for i in [1, 6, 10] {
        noisy.flip(i);
    }
    let mut fixed = vec![0u8; 32];
    let mut stats = PufDecodeStats::default();
    let st = unsafe { puf_helper_decode(h, noisy.to_packed().as_ptr(), 256, fixed.as_mut_ptr(), 32, &mut stats) };
    assert_eq!(st, PufStatus::Ok);
    assert_eq!(fixed, packed);
    assert_eq!(stats.single_corrected, 3);
    assert_eq!(stats.clean, 61);

    let mut short = [0u8; 31];
    let st = unsafe { puf_helper_decode(h, packed.as_ptr(), 256, short.as_mut_ptr(), 31, ptr::null_mut()) };
    assert_eq!(st, PufStatus::BufferTooSmall);
    let st = unsafe { puf_helper_decode(h, packed.as_ptr(), 128, fixed.as_mut_ptr(), 32, ptr::null_mut()) };
    assert_eq!(st, PufStatus::LengthMismatch);
    unsafe { puf_helper_free(h) };
}

#[test]
fn serialized_helper_is_the_library_blob() {
    let r = pattern(160, 5);
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { puf_helper_enroll(r.to_packed().as_ptr(), 160, tag("H(21,16)"), &mut h) },
        PufStatus::Ok
    );
    let mut need = 0;
    assert_eq!(unsafe { puf_helper_serialize(h, ptr::null_mut(), 0, &mut need) }, PufStatus::Ok);
    let mut small = vec![0u8; need - 1];
    let mut got = 0;
    assert_eq!(
        unsafe { puf_helper_serialize(h, small.as_mut_ptr(), small.len(), &mut got) },
        PufStatus::BufferTooSmall
    );
    assert_eq!(got, need);
    let mut blob = vec![0u8; need];
    assert_eq!(unsafe { puf_helper_serialize(h, blob.as_mut_ptr(), need, &mut got) }, PufStatus::Ok);
    assert_eq!(blob, enroll_helper(&r, HammingVariant::H21_16).unwrap().to_bytes());
    assert_eq!(&blob[..4], b"PUFH");

    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { puf_helper_parse(blob.as_ptr(), blob.len(), &mut h2) }, PufStatus::Ok);
    let mut again = vec![0u8; need];
    assert_eq!(unsafe { puf_helper_serialize(h2, again.as_mut_ptr(), need, &mut got) }, PufStatus::Ok);
    assert_eq!(again, blob);

    blob[0] = b'X';
    let mut h3 = ptr::null_mut();
    assert_eq!(unsafe { puf_helper_parse(blob.as_ptr(), blob.len(), &mut h3) }, PufStatus::Malformed);
    assert!(h3.is_null());
    unsafe {
        puf_helper_free(h);
        puf_helper_free(h2);
    }
}

#[test]
fn status_strings_are_static() {
    let s = unsafe { CStr::from_ptr(puf_status_str(PufStatus::BufferTooSmall)) };
    assert_eq!(s.to_str().unwrap(), "buffer too small");
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/puf_auth.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["puf_helper_enroll", "puf_helper_free", "puf_tau_max", "PUF_STATUS_PANIC", "typedef struct PufHelper PufHelper"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler, skipping syntax check");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_against_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // tests run from <target>/<profile>/deps
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libpuf_auth_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("puf_smoke");
    let Ok(status) = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror"])
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
