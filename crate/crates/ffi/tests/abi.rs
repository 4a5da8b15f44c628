use std::ffi::{CStr, CString};
use std::ptr;

use contrastive_ace::attribution::{ace_vector, compute_bounds, AceEstimatorConfig};
use contrastive_ace::models::{ClassifierSpec, EncoderSpec, ModelBundle};
use contrastive_ace::numcore::Tensor;
use contrastive_ace_ffi::*;

fn bundle() -> ModelBundle {
    ModelBundle::init(EncoderSpec::new(5, vec![6], 3), ClassifierSpec::linear(3, 4), 17).unwrap()
}

fn handle(m: &ModelBundle) -> *mut CaceModel {
    let json = CString::new(m.to_checkpoint_string().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cace_model_from_json(json.as_ptr(), &mut h) }, CaceStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let n = unsafe { cace_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n];
    unsafe { cace_last_error_message(buf.as_mut_ptr(), n) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn inputs(rows: usize) -> Vec<f64> {
    (0..rows * 5).map(|i| ((i * 37 % 11) as f64) / 11.0).collect()
}

#[test]
fn dims_encode_and_logits_match_the_library() {
    let m = bundle();
    let h = handle(&m);
    let (mut d, mut n, mut c) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { cace_model_dims(h, &mut d, &mut n, &mut c) }, CaceStatus::Ok);
    assert_eq!((d, n, c), (5, 3, 4));

    let x = inputs(4);
    let xt = Tensor::matrix(4, 5, x.clone()).unwrap();
    let mut z = vec![0.0; 12];
    assert_eq!(unsafe { cace_model_encode(h, x.as_ptr(), 4, z.as_mut_ptr(), z.len()) }, CaceStatus::Ok);
    assert_eq!(z, m.encode_values(&xt).unwrap().data());
    let mut logits = vec![0.0; 16];
    assert_eq!(
        unsafe { cace_model_logits(h, x.as_ptr(), 4, logits.as_mut_ptr(), logits.len()) },
        CaceStatus::Ok
    );
    assert_eq!(logits, m.logits_values(&xt).unwrap().data());
    unsafe { cace_model_free(h) };
}

#[test]
fn ace_vectors_match_the_library() {
    let m = bundle();
    let h = handle(&m);
    let x = inputs(3);
    let z = m.encode_values(&Tensor::matrix(3, 5, x).unwrap()).unwrap();
    let (mut low, mut high) = (vec![0.0; 3], vec![0.0; 3]);
    assert_eq!(
        unsafe { cace_latent_bounds(z.data().as_ptr(), 3, 3, 0.01, low.as_mut_ptr(), high.as_mut_ptr()) },
        CaceStatus::Ok
    );
    let bounds = compute_bounds(&z, 0.01).unwrap();
    assert_eq!(low, bounds.low());
    assert_eq!(high, bounds.high());

    let targets = [0usize, 3, 1];
    for (mode, cfg) in [
        (CaceEstimator::Analytic, AceEstimatorConfig::analytic()),
        (CaceEstimator::MonteCarlo, AceEstimatorConfig::monte_carlo(40, 5)),
    ] {
        let mut out = vec![0.0; 9];
        let status = unsafe {
            cace_ace_vectors(
                h,
                z.data().as_ptr(),
                3,
                targets.as_ptr(),
                low.as_ptr(),
                high.as_ptr(),
                mode,
                40,
                5,
                out.as_mut_ptr(),
                out.len(),
            )
        };
        assert_eq!(status, CaceStatus::Ok, "{}", last_error());
        for i in 0..3 {
            let v = ace_vector(&m, z.row(i), targets[i], &bounds, &cfg, i).unwrap();
            for (a, b) in out[i * 3..(i + 1) * 3].iter().zip(&v.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
    unsafe { cace_model_free(h) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cace_model_from_json(ptr::null(), &mut h) }, CaceStatus::NullPointer);
    assert!(last_error().contains("json"));

    let bad = CString::new("{\"version\": \"contrastive-ace-checkpoint/0\"}").unwrap();
    assert_eq!(unsafe { cace_model_from_json(bad.as_ptr(), &mut h) }, CaceStatus::Version);
    let cut = CString::new("{\"version\": ").unwrap();
    assert_eq!(unsafe { cace_model_from_json(cut.as_ptr(), &mut h) }, CaceStatus::Malformed);
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { cace_model_load(missing.as_ptr(), &mut h) }, CaceStatus::Io);
    assert!(h.is_null());

    let m = bundle();
    let h = handle(&m);
    let x = inputs(2);
    let mut small = vec![0.0; 5];
    assert_eq!(
        unsafe { cace_model_encode(h, x.as_ptr(), 2, small.as_mut_ptr(), small.len()) },
        CaceStatus::InvalidArgument
    );
    assert!(last_error().contains("6 needed"));
    assert_eq!(unsafe { cace_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, CaceStatus::NullPointer);

    // a target class past the head is an index error
    let z = [0.1, 0.2, 0.3];
    let (low, high) = ([0.0; 3], [1.0; 3]);
    let mut out = [0.0; 3];
    let status = unsafe {
        cace_ace_vectors(h, z.as_ptr(), 1, [9usize].as_ptr(), low.as_ptr(), high.as_ptr(), CaceEstimator::Analytic, 1, 0, out.as_mut_ptr(), 3)
    };
    assert_eq!(status, CaceStatus::Index);
    let inverted = [2.0; 3];
    let status = unsafe {
        cace_ace_vectors(h, z.as_ptr(), 1, [0usize].as_ptr(), inverted.as_ptr(), high.as_ptr(), CaceEstimator::Analytic, 1, 0, out.as_mut_ptr(), 3)
    };
    assert_ne!(status, CaceStatus::Ok);

    // success clears the message
    let mut d = 0usize;
    assert_eq!(unsafe { cace_model_dims(h, &mut d, ptr::null_mut(), ptr::null_mut()) }, CaceStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { cace_model_free(h) };
    unsafe { cace_model_free(ptr::null_mut()) };
}

#[test]
fn save_and_reload_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let m = bundle();
    let h = handle(&m);
    assert_eq!(unsafe { cace_model_save(h, path.as_ptr()) }, CaceStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { cace_model_load(path.as_ptr(), &mut back) }, CaceStatus::Ok);
    assert_eq!(ModelBundle::load(dir.path().join("m.json").as_path()).unwrap(), m);
    unsafe {
        cace_model_free(h);
        cace_model_free(back);
    }
}

#[test]
fn status_names_and_version() {
    let name = |s| unsafe { CStr::from_ptr(cace_status_name(s)) }.to_str().unwrap().to_string();
    assert_eq!(name(CaceStatus::Ok), "ok");
    assert_eq!(name(CaceStatus::Malformed), "malformed");
    let v = unsafe { CStr::from_ptr(cace_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_abi_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/contrastive_ace.h")).unwrap();
    for symbol in [
        "typedef struct CaceModel CaceModel;",
        "cace_model_load",
        "cace_model_from_json",
        "cace_model_save",
        "cace_model_free",
        "cace_model_dims",
        "cace_model_encode",
        "cace_model_logits",
        "cace_latent_bounds",
        "cace_ace_vectors",
        "cace_last_error_message",
        "cace_status_name",
        "CACE_STATUS_OK = 0",
        "CACE_ESTIMATOR_MONTE_CARLO = 1",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
    // syntax-check as C when a compiler is around
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .stdin(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            let src = format!("{header}\nint main(void) {{ CaceModel *m = 0; cace_model_free(m); return 0; }}\n");
            child.stdin.take().unwrap().write_all(src.as_bytes())?;
            child.wait_with_output()
        })
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
