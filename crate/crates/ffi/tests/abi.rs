use std::ffi::{CStr, CString};
use std::ptr;

use collin_ffi::*;

fn toy(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(n * 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let b = ((i * 53) % 97) as f64 / 48.0 - 1.0;
        x.extend([a * 10.0 + 50.0, b]);
        y.push(((a + 0.3 * b + 0.2 * (((i * 7) % 11) as f64 / 5.0 - 1.0)) > 0.0) as u8 as f64);
    }
    (x, y)
}

fn last_error() -> String {
    let p = collin_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_predict_roundtrip() {
    let (x, y) = toy(200);
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(collin_dataset_new(x.as_ptr(), y.as_ptr(), 200, 2, &mut ds), CollinStatus::Ok);
        let (mut n, mut d) = (0, 0);
        assert_eq!(collin_dataset_shape(ds, &mut n, &mut d), CollinStatus::Ok);
        assert_eq!((n, d), (200, 2));

        let method = CString::new("ridge").unwrap();
        let mut k = 0;
        assert_eq!(collin_method_n_hyper(method.as_ptr(), 2, &mut k), CollinStatus::Ok);
        assert_eq!(k, 1);
        let c = [10.0];
        let mut model = ptr::null_mut();
        assert_eq!(collin_fit(ds, method.as_ptr(), c.as_ptr(), 1, 0, &mut model), CollinStatus::Ok);
        assert!(collin_last_error_message().is_null());

        let mut p = vec![0.0; 200];
        assert_eq!(collin_model_predict(model, x.as_ptr(), 200, 2, p.as_mut_ptr()), CollinStatus::Ok);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut auc = 0.0;
        assert_eq!(collin_auroc(p.as_ptr(), y.as_ptr(), 200, &mut auc), CollinStatus::Ok);
        assert!(auc > 0.8, "{auc}");

        let mut beta = [0.0; 2];
        let mut b0 = 0.0;
        assert_eq!(collin_model_coefficients(model, 1, beta.as_mut_ptr(), 2, &mut b0), CollinStatus::Ok);
        let lp = b0 + beta[0] * x[0] + beta[1] * x[1];
        assert!((1.0 / (1.0 + (-lp).exp()) - p[0]).abs() < 1e-10);
        assert_eq!(
            collin_model_coefficients(model, 0, beta.as_mut_ptr(), 3, &mut b0),
            CollinStatus::DimensionMismatch
        );
        collin_model_free(model);
        collin_dataset_free(ds);
    }
}

#[test]
fn lr_nn_respects_dose_mask_and_tuning_runs() {
    let (mut x, y) = toy(150);
    for row in x.chunks_mut(2) {
        row[1] = -row[1];
    }
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(collin_dataset_new(x.as_ptr(), y.as_ptr(), 150, 2, &mut ds), CollinStatus::Ok);
        assert_eq!(collin_dataset_set_dose_mask(ds, [0u8, 1].as_ptr(), 2), CollinStatus::Ok);
        let mut model = ptr::null_mut();
        let method = CString::new("LR_NN").unwrap();
        assert_eq!(collin_fit(ds, method.as_ptr(), ptr::null(), 0, 1, &mut model), CollinStatus::Ok);
        let (mut beta, mut b0) = ([0.0; 2], 0.0);
        collin_model_coefficients(model, 0, beta.as_mut_ptr(), 2, &mut b0);
        assert!(beta[1] >= 0.0);
        collin_model_free(model);

        let lasso = CString::new("lasso").unwrap();
        let mut tuned = ptr::null_mut();
        assert_eq!(collin_tune_fit(ds, lasso.as_ptr(), 3, &mut tuned), CollinStatus::Ok);
        collin_model_free(tuned);
        collin_dataset_free(ds);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(collin_dataset_new(ptr::null(), ptr::null(), 5, 2, &mut ds), CollinStatus::NullPointer);
        assert!(last_error().contains("null"));

        let y = [0.0, 0.0, 0.0];
        let x = [1.0, 2.0, 3.0];
        assert_eq!(collin_dataset_new(x.as_ptr(), y.as_ptr(), 3, 1, &mut ds), CollinStatus::Ok);
        let m = CString::new("nope").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(collin_fit(ds, m.as_ptr(), ptr::null(), 0, 0, &mut model), CollinStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
        let mut auc = 0.0;
        assert_eq!(collin_auroc(x.as_ptr(), y.as_ptr(), 3, &mut auc), CollinStatus::SingleClass);
        collin_dataset_free(ds);
        collin_dataset_free(ptr::null_mut());

        let corr = [1.0, 0.5, 0.5, 1.0];
        let mut vif = 0.0;
        assert_eq!(collin_median_vif(corr.as_ptr(), 2, &mut vif), CollinStatus::Ok);
        assert!((vif - 4.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/collin.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("COLLIN_STATUS_PANIC = 7"));
}
