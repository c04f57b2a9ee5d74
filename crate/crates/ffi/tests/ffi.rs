use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ebm_anomaly::nn::{checkpoint, InitScheme, ModelParams, NetworkTopology};
use ebm_anomaly::scoring::{fit_pixel_stats, gradient_map, score_image, NormOrder};
use ebm_anomaly::Tensor;
use ebm_anomaly_ffi::*;

const N: usize = 8;

fn model() -> ModelParams {
    let t = NetworkTopology::for_input_size(N, 1, 2).unwrap();
    ModelParams::init(&t, 11, InitScheme::default())
}

fn image(seed: usize) -> Tensor {
    Tensor::from_fn(vec![N, N, 1], |i| {
        ((i * 37 + seed * 101) % 97) as f64 / 97.0
    })
}

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: PathBuf,
    stats: PathBuf,
    params: ModelParams,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let params = model();
    let ckpt = dir.path().join("model.ckpt");
    checkpoint::save(&params, &ckpt).unwrap();
    let maps: Vec<_> = (0..6)
        .map(|s| gradient_map(&params, &image(s)).unwrap())
        .collect();
    let stats = dir.path().join("stats.bin");
    fit_pixel_stats(maps.iter(), 1e-8)
        .unwrap()
        .save(&stats)
        .unwrap();
    Fixture {
        _dir: dir,
        ckpt,
        stats,
        params,
    }
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ebm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn load(f: &Fixture) -> (*mut EbmModel, *mut EbmStats) {
    let mut m = ptr::null_mut();
    let mut s = ptr::null_mut();
    assert_eq!(
        ebm_model_load(cpath(&f.ckpt).as_ptr(), &mut m),
        EbmStatus::Ok
    );
    assert_eq!(
        ebm_stats_load(cpath(&f.stats).as_ptr(), &mut s),
        EbmStatus::Ok
    );
    (m, s)
}

#[test]
fn energy_and_gradient_match_the_library() {
    let f = fixture();
    unsafe {
        let (m, s) = load(&f);
        let (mut h, mut w, mut c) = (0, 0, 0);
        assert_eq!(
            ebm_model_input_shape(m, &mut h, &mut w, &mut c),
            EbmStatus::Ok
        );
        assert_eq!((h, w, c), (N, N, 1));

        let x = image(42);
        let mut e = 0.0;
        assert_eq!(
            ebm_energy(m, x.data().as_ptr(), N, N, 1, &mut e),
            EbmStatus::Ok
        );
        assert_eq!(e, f.params.forward_energy(&x).unwrap());

        let mut g = vec![0.0; N * N];
        assert_eq!(
            ebm_gradient_map(m, x.data().as_ptr(), N, N, 1, g.as_mut_ptr(), g.len()),
            EbmStatus::Ok
        );
        assert_eq!(g, gradient_map(&f.params, &x).unwrap().values.data());
        ebm_stats_free(s);
        ebm_model_free(m);
    }
}

#[test]
fn score_image_matches_the_library() {
    let f = fixture();
    let stats = ebm_anomaly::scoring::PixelStats::load(&f.stats).unwrap();
    unsafe {
        let (m, s) = load(&f);
        let x = image(5);
        let want = score_image(&f.params, Some(&stats), &x, NormOrder::L1).unwrap();
        let mut out = EbmImageScores::default();
        let mut raw = vec![0.0; N * N];
        let mut std = vec![0.0; N * N];
        let status = ebm_score_image(
            m,
            s,
            x.data().as_ptr(),
            N,
            N,
            1,
            1,
            raw.as_mut_ptr(),
            std.as_mut_ptr(),
            N * N,
            &mut out,
        );
        assert_eq!(status, EbmStatus::Ok);
        assert_eq!(out.energy, want.energy.value);
        assert_eq!(out.raw, want.raw.value);
        assert_eq!(out.standardized, want.standardized.unwrap().value);
        assert_eq!(out.has_standardized, 1);
        assert_eq!(raw, want.raw_map.values.data());
        assert_eq!(std, want.standardized_map.unwrap().values.data());

        let status = ebm_score_image(
            m,
            ptr::null(),
            x.data().as_ptr(),
            N,
            N,
            1,
            2,
            ptr::null_mut(),
            ptr::null_mut(),
            0,
            &mut out,
        );
        assert_eq!(status, EbmStatus::Ok);
        assert_eq!(out.has_standardized, 0);

        let status = ebm_score_image(
            m,
            ptr::null(),
            x.data().as_ptr(),
            N,
            N,
            1,
            2,
            ptr::null_mut(),
            std.as_mut_ptr(),
            N * N,
            &mut out,
        );
        assert_eq!(status, EbmStatus::InvalidArgument);
        ebm_stats_free(s);
        ebm_model_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let f = fixture();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(ebm_model_load(ptr::null(), &mut m), EbmStatus::NullPointer);
        assert!(last_error().contains("null"));

        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(ebm_model_load(missing.as_ptr(), &mut m), EbmStatus::Io);
        assert!(last_error().contains("/nonexistent/model.ckpt"));

        let mut s = ptr::null_mut();
        assert_eq!(
            ebm_stats_load(cpath(&f.ckpt).as_ptr(), &mut s),
            EbmStatus::Format
        );

        let (m, s) = load(&f);
        assert!(ebm_last_error().is_null());
        let x = image(1);
        let mut out = EbmImageScores::default();
        let bad_r = ebm_score_image(
            m,
            s,
            x.data().as_ptr(),
            N,
            N,
            1,
            3,
            ptr::null_mut(),
            ptr::null_mut(),
            0,
            &mut out,
        );
        assert_eq!(bad_r, EbmStatus::InvalidArgument);

        let mut small = vec![0.0; 3];
        assert_eq!(
            ebm_gradient_map(
                m,
                x.data().as_ptr(),
                N,
                N,
                1,
                small.as_mut_ptr(),
                small.len()
            ),
            EbmStatus::BufferTooSmall
        );

        let mut e = 0.0;
        let wrong = [0.5; 4 * 4];
        assert_eq!(
            ebm_energy(m, wrong.as_ptr(), 4, 4, 1, &mut e),
            EbmStatus::ShapeMismatch
        );
        assert!(last_error().contains("layer 2"), "{}", last_error());

        let nan = vec![f64::NAN; N * N];
        assert_eq!(
            ebm_energy(m, nan.as_ptr(), N, N, 1, &mut e),
            EbmStatus::NonFinite
        );

        let probe = Tensor::filled(vec![N, N, 1], 0.5);
        let mut out = EbmImageScores::default();
        let s2 = {
            let t = NetworkTopology::for_input_size(N, 1, 2).unwrap();
            let other = ModelParams::init(&t, 1, InitScheme::default());
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.bin");
            let maps: Vec<_> = (0..3)
                .map(|k| gradient_map(&other, &image(k)).unwrap())
                .collect();
            let mut st = fit_pixel_stats(maps.iter(), 1e-8).unwrap();
            st.mu = Tensor::zeros(vec![N, N, 3]);
            st.sigma = Tensor::filled(vec![N, N, 3], 1.0);
            st.save(&p).unwrap();
            let mut h = ptr::null_mut();
            assert_eq!(ebm_stats_load(cpath(&p).as_ptr(), &mut h), EbmStatus::Ok);
            h
        };
        let status = ebm_score_image(
            m,
            s2,
            probe.data().as_ptr(),
            N,
            N,
            1,
            2,
            ptr::null_mut(),
            ptr::null_mut(),
            0,
            &mut out,
        );
        assert_eq!(status, EbmStatus::ShapeMismatch);
        ebm_stats_free(s2);
        ebm_stats_free(s);
        ebm_model_free(m);
        ebm_model_free(ptr::null_mut());
    }
}

#[test]
fn auroc_through_the_abi() {
    let scores = [0.1, 0.3, 0.2, 0.4];
    let labels = [0u8, 0, 1, 1];
    let mut a = 0.0;
    unsafe {
        assert_eq!(
            ebm_auroc(scores.as_ptr(), labels.as_ptr(), 4, &mut a),
            EbmStatus::Ok
        );
        assert_eq!(a, 0.75);
        let one_class = [1u8; 4];
        assert_eq!(
            ebm_auroc(scores.as_ptr(), one_class.as_ptr(), 4, &mut a),
            EbmStatus::SingleClass
        );
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ebm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ebm_anomaly.h");
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn header_declares_the_abi() {
    let h = header();
    for name in [
        "ebm_last_error",
        "ebm_version",
        "ebm_model_load",
        "ebm_model_free",
        "ebm_model_input_shape",
        "ebm_energy",
        "ebm_gradient_map",
        "ebm_stats_load",
        "ebm_stats_free",
        "ebm_score_image",
        "ebm_auroc",
        "typedef struct EbmModel EbmModel",
        "typedef struct EbmStats EbmStats",
        "EBM_STATUS_OK = 0",
        "EBM_STATUS_PANIC = 12",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles a small C consumer against the header and the static library.
#[test]
fn c_program_links_and_agrees() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = exe_dir.join("libebm_anomaly_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.is_file() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!(
            "skipping: no C compiler or static library at {}",
            lib.display()
        );
        return;
    }
    let f = fixture();
    let bin = f._dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin)
        .arg(&f.ckpt)
        .arg(&f.stats)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..3], &["8", "8", "1"]);

    let x = Tensor::from_fn(vec![N, N, 1], |i| (i % 7) as f64 / 7.0);
    let stats = ebm_anomaly::scoring::PixelStats::load(&f.stats).unwrap();
    let want = score_image(&f.params, Some(&stats), &x, NormOrder::L2).unwrap();
    assert_eq!(fields[3].parse::<f64>().unwrap(), want.energy.value);
    assert_eq!(fields[4].parse::<f64>().unwrap(), want.raw.value);
    assert_eq!(
        fields[5].parse::<f64>().unwrap(),
        want.standardized.unwrap().value
    );
    assert_eq!(fields[6], "1");
}
