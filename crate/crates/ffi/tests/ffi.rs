use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use kplift_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = kplift_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn seq(frames: usize, joints: usize, f: impl Fn(usize) -> f64) -> *mut KpliftSeq3D {
    let xyz: Vec<f64> = (0..frames * joints * 3).map(f).collect();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { kplift_seq3d_new(frames, joints, xyz.as_ptr(), &mut out) }, KpliftStatus::Ok);
    out
}

#[test]
fn sequences_and_metrics_round_trip() {
    let a = seq(2, 4, |i| (i as f64 * 0.37).sin());
    let b = seq(2, 4, |i| (i as f64 * 0.37).sin() + if i % 3 == 1 { 0.01 } else { 0.0 });
    unsafe {
        assert_eq!(kplift_seq3d_frames(a), 2);
        assert_eq!(kplift_seq3d_joints(a), 4);
        let mut buf = vec![0.0; 24];
        assert_eq!(kplift_seq3d_coords(a, buf.as_mut_ptr(), 24), KpliftStatus::Ok);
        assert_eq!(buf[5], (5.0f64 * 0.37).sin());
        assert_eq!(kplift_seq3d_coords(a, buf.as_mut_ptr(), 23), KpliftStatus::InvalidArgument);

        let mut mm = 0.0;
        assert_eq!(kplift_mpjpe(b, a, &mut mm), KpliftStatus::Ok);
        assert!((mm - 10.0).abs() < 1e-9, "{mm}");
        let mut pa = 0.0;
        assert_eq!(kplift_pa_mpjpe(b, a, &mut pa), KpliftStatus::Ok);
        assert!(pa <= mm);

        let short = seq(1, 4, |i| i as f64);
        assert_eq!(kplift_mpjpe(short, a, &mut mm), KpliftStatus::Schema);
        assert!(last_error().contains("shape"));
        kplift_seq3d_free(short);
        kplift_seq3d_free(a);
        kplift_seq3d_free(b);
        kplift_seq3d_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported_per_thread() {
    kplift_clear_error();
    assert!(kplift_last_error_message().is_null());
    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/kplift.toml").unwrap();
    assert_eq!(unsafe { kplift_config_load(missing.as_ptr(), &mut out) }, KpliftStatus::Io);
    assert!(out.is_null());
    assert!(last_error().contains("/nonexistent/kplift.toml"));
    // another thread has its own slot
    std::thread::spawn(|| assert!(kplift_last_error_message().is_null())).join().unwrap();
    assert_eq!(unsafe { kplift_mpjpe(ptr::null(), ptr::null(), ptr::null_mut()) }, KpliftStatus::NullPointer);
    assert!(last_error().contains("null"));
    let v = unsafe { CStr::from_ptr(kplift_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_and_pipeline_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("tiny.toml");
    std::fs::write(
        &toml,
        "seed = 9\n[simulate]\ntrain_sequences = 4\ntest_sequences = 1\nframes = 8\n[training]\nsv_steps = 6\nvalidation_every = 3\n[sds]\niterations = 5\n",
    )
    .unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[nope]\n").unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(kplift_config_load(c(&bad).as_ptr(), &mut cfg), KpliftStatus::Schema);
        assert_eq!(kplift_config_load(c(&toml).as_ptr(), &mut cfg), KpliftStatus::Ok);
        let mut s = 0;
        assert_eq!(kplift_config_seed(cfg, &mut s), KpliftStatus::Ok);
        assert_eq!(s, 9);
        assert_eq!(kplift_config_set_seed(cfg, 10), KpliftStatus::Ok);

        let data = dir.path().join("data");
        assert_eq!(kplift_simulate(cfg, c(&data).as_ptr()), KpliftStatus::Ok);
        let mut loss = f64::NAN;
        assert_eq!(
            kplift_train_sv(cfg, c(&data.join("dataset.json")).as_ptr(), ptr::null(), c(&dir.path().join("sv")).as_ptr(), &mut loss),
            KpliftStatus::Ok
        );
        assert!(loss.is_finite());
        let seq = data.join("sequences/test_000");
        assert_eq!(
            kplift_lift(
                cfg,
                c(&seq.join("motion2d.json")).as_ptr(),
                c(&seq.join("camera.json")).as_ptr(),
                c(&dir.path().join("sv/best.json")).as_ptr(),
                KpliftStage::Auto,
                c(&dir.path().join("lift")).as_ptr(),
            ),
            KpliftStatus::Ok
        );
        assert_eq!(
            kplift_reconstruct(cfg, c(&dir.path().join("lift/bundle.json")).as_ptr(), c(&dir.path().join("rec")).as_ptr()),
            KpliftStatus::Ok
        );

        let pred = c(&dir.path().join("rec/motion3d.json"));
        let gt = c(&seq.join("motion3d.json"));
        let preds = [pred.as_ptr()];
        let gts = [gt.as_ptr()];
        let mut m = ptr::null_mut();
        assert_eq!(
            kplift_evaluate(cfg, preds.as_ptr(), gts.as_ptr(), 1, c(&dir.path().join("eval")).as_ptr(), &mut m),
            KpliftStatus::Ok
        );
        assert_eq!(kplift_metrics_rows(m), 1);
        let (mut row, mut agg) = ([0.0; 8], [0.0; 8]);
        assert_eq!(kplift_metrics_values(m, 0, row.as_mut_ptr()), KpliftStatus::Ok);
        assert_eq!(kplift_metrics_values(m, 1, agg.as_mut_ptr()), KpliftStatus::Ok);
        assert_eq!(kplift_metrics_values(m, 2, agg.as_mut_ptr()), KpliftStatus::InvalidArgument);
        assert!(row[3] > 0.0 && row[3].is_finite());
        assert!(row[6].is_nan());
        assert_eq!(row[3].to_bits(), agg[3].to_bits());

        let mut p = ptr::null_mut();
        assert_eq!(kplift_seq3d_load(pred.as_ptr(), &mut p), KpliftStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(kplift_seq3d_load(gt.as_ptr(), &mut g), KpliftStatus::Ok);
        let mut mm = 0.0;
        assert_eq!(kplift_mpjpe(p, g, &mut mm), KpliftStatus::Ok);
        assert_eq!(mm, row[3]);

        kplift_seq3d_free(p);
        kplift_seq3d_free(g);
        kplift_metrics_free(m);
        kplift_config_free(cfg);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kplift.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["kplift_last_error_message", "kplift_lift", "kplift_metrics_values", "KPLIFT_STATUS_UNDER_CONSTRAINED = 4"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"kplift.h\"\nint main(void) { KpliftConfig *c = 0; return kplift_config_default(&c) == KPLIFT_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
