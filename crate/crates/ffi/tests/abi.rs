use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use prevalens_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(prv_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn estimators_and_errors() {
    let post = [0.9, 0.8, 0.2, 0.6];
    let mut est = PrvEstimate::default();
    let st = unsafe { prv_estimate(c("cc").as_ptr(), post.as_ptr(), post.len(), ptr::null(), &mut est) };
    assert_eq!(st, PrvStatus::Ok);
    assert_eq!(est.p_positive, 0.75);
    assert_eq!(last_error(), "");

    let rates = PrvRates {
        tpr_hard: 0.8,
        fpr_hard: 0.2,
        tpr_soft: 0.8,
        fpr_soft: 0.2,
    };
    let st = unsafe { prv_estimate(c("acc").as_ptr(), post.as_ptr(), post.len(), &rates, &mut est) };
    assert_eq!(st, PrvStatus::Ok);
    assert!((est.p_positive - (0.75 - 0.2) / 0.6).abs() < 1e-12);

    let st = unsafe { prv_estimate(c("acc").as_ptr(), post.as_ptr(), post.len(), ptr::null(), &mut est) };
    assert_eq!(st, PrvStatus::NullPointer);
    assert!(last_error().contains("rates"));

    let st = unsafe { prv_estimate(c("svm").as_ptr(), post.as_ptr(), post.len(), ptr::null(), &mut est) };
    assert_eq!(st, PrvStatus::InvalidArgument);
    assert!(last_error().contains("svm"));

    let st = unsafe { prv_estimate(c("cc").as_ptr(), post.as_ptr(), 0, ptr::null(), &mut est) };
    assert_eq!(st, PrvStatus::InvalidArgument);
}

#[test]
fn rates_emq_metrics_ttest() {
    let post = [0.9, 0.7, 0.4, 0.1];
    let labels = [1, 1, 0, 0];
    let mut r = PrvRates::default();
    assert_eq!(
        unsafe { prv_estimate_rates(post.as_ptr(), labels.as_ptr(), 4, &mut r) },
        PrvStatus::Ok
    );
    assert_eq!((r.tpr_hard, r.fpr_hard), (1.0, 0.0));
    assert!((r.tpr_soft - 0.8).abs() < 1e-12);

    let flat = [0.3; 10];
    let mut est = PrvEstimate::default();
    let mut it = 0usize;
    assert_eq!(
        unsafe { prv_emq(flat.as_ptr(), 10, 0.3, 1000, 1e-6, &mut est, &mut it) },
        PrvStatus::Ok
    );
    assert_eq!(est.p_positive, 0.3);
    assert_eq!(it, 1);

    let mut v = 0.0;
    assert_eq!(unsafe { prv_metric(0, 0.5, 0.7, 500, &mut v) }, PrvStatus::Ok);
    assert!((v - 0.2).abs() < 1e-12);
    assert_eq!(
        unsafe { prv_metric(2, 0.5, 0.25, 1_000_000_000, &mut v) },
        PrvStatus::Ok
    );
    assert!((v - 0.14384).abs() < 1e-5);
    assert_eq!(
        unsafe { prv_metric(7, 0.5, 0.5, 10, &mut v) },
        PrvStatus::InvalidArgument
    );

    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let (mut t, mut p, mut d) = (0.0, 0.0, -1);
    assert_eq!(
        unsafe { prv_paired_ttest(a.as_ptr(), b.as_ptr(), 5, &mut t, &mut p, &mut d) },
        PrvStatus::Ok
    );
    assert!((t - 4.2426).abs() < 1e-3 && (p - 0.0132).abs() < 1e-3 && d == 0);
    assert_eq!(
        unsafe { prv_paired_ttest(a.as_ptr(), b.as_ptr(), 1, &mut t, &mut p, ptr::null_mut()) },
        PrvStatus::InsufficientData
    );
}

#[test]
fn experiment_and_quanet_handles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let h = prv_experiment_new();
    assert!(!h.is_null());
    let set = |k: &str, v: &str| unsafe { prv_experiment_set(h, c(k).as_ptr(), c(v).as_ptr()) };
    for (k, v) in [
        ("classifier", "oracle"),
        ("n_docs", "1500"),
        ("n_test", "1000"),
        ("quantifiers", "cc,acc,quanet"),
        ("grid", "0.2,0.8"),
        ("trials", "3"),
        ("sample_size", "50"),
        ("seeds", "5"),
        ("quanet_max_iter", "20"),
        ("out", out.to_str().unwrap()),
    ] {
        assert_eq!(set(k, v), PrvStatus::Ok, "{k}");
    }
    assert_eq!(set("bogus", "1"), PrvStatus::InvalidArgument);
    let mut ae = 0.0;
    assert_eq!(
        unsafe { prv_experiment_mean_error(h, c("cc").as_ptr(), 0, &mut ae) },
        PrvStatus::InvalidArgument
    );
    assert_eq!(unsafe { prv_experiment_run(h, 1) }, PrvStatus::Ok, "{}", last_error());
    assert_eq!(
        unsafe { prv_experiment_mean_error(h, c("acc").as_ptr(), 0, &mut ae) },
        PrvStatus::Ok
    );
    assert!((0.0..=1.0).contains(&ae));

    let mut q: *mut PrvQuaNet = ptr::null_mut();
    let model = out.join("seed-5/quanet.qnt");
    let st = unsafe { prv_quanet_load(c(model.to_str().unwrap()).as_ptr(), &mut q) };
    assert_eq!(st, PrvStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { prv_quanet_embedding_dim(q) }, 2);
    let post = [0.9, 0.2, 0.7];
    let emb: Vec<f64> = post.iter().flat_map(|&p| [p, 1.0 - p]).collect();
    let rates = PrvRates {
        tpr_hard: 0.9,
        fpr_hard: 0.1,
        tpr_soft: 0.8,
        fpr_soft: 0.2,
    };
    let mut est = PrvEstimate::default();
    let st = unsafe { prv_quanet_estimate(q, post.as_ptr(), emb.as_ptr(), 3, 2, &rates, &mut est) };
    assert_eq!(st, PrvStatus::Ok, "{}", last_error());
    assert!((0.0..=1.0).contains(&est.p_positive));
    let st = unsafe { prv_quanet_estimate(q, post.as_ptr(), emb.as_ptr(), 3, 1, &rates, &mut est) };
    assert_eq!(st, PrvStatus::Shape);
    unsafe {
        prv_quanet_free(q);
        prv_experiment_free(h);
    }

    let mut missing: *mut PrvQuaNet = ptr::null_mut();
    let st = unsafe { prv_quanet_load(c("/nonexistent/q.qnt").as_ptr(), &mut missing) };
    assert_eq!(st, PrvStatus::Io);
    assert!(missing.is_null());
}

#[test]
fn no_quantifiers_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let h = prv_experiment_new();
    unsafe {
        prv_experiment_set(h, c("quantifiers").as_ptr(), c("").as_ptr());
        prv_experiment_set(h, c("out").as_ptr(), c(dir.path().to_str().unwrap()).as_ptr());
        assert_eq!(prv_experiment_run(h, 1), PrvStatus::InvalidArgument);
        prv_experiment_free(h);
    }
    assert!(last_error().contains("no quantifiers selected"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/prevalens.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["prv_estimate", "prv_quanet_load", "prv_experiment_run", "PRV_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"prevalens.h\"\nint main(void) { PrvEstimate e; double p[2] = {0.9, 0.1};\n\
         return prv_estimate(\"cc\", p, 2, 0, &e) == PRV_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(status.success());
}
