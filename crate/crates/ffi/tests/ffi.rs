use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cogvox::ensemble::{fit_ensemble, ModelSpec, VoteKind};
use cogvox::features::{transcript_features, CountingRules};
use cogvox::learners::{fit_model, save_model, Dataset, ForestParams, GbmParams, Hyperparams, Prediction, Targets};
use cogvox::transcript::{parse_transcript, Task};
use cogvox_ffi::*;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/transcripts/ctd_basic.conllu");

fn last_error() -> Option<String> {
    let p = cvx_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn rows() -> Vec<Vec<f64>> {
    (0..24).map(|i| vec![(i % 3) as f64 * 2.0 + (i as f64) * 0.01, (i % 5) as f64]).collect()
}

fn classifier_bytes(vote: VoteKind) -> Vec<u8> {
    let d = Dataset::from_rows(&rows(), Targets::Classes((0..24).map(|i| i % 3).collect())).unwrap();
    let spec = ModelSpec {
        vote,
        members: vec![Hyperparams::RandomForest(ForestParams { n_trees: 7, ..ForestParams::default() })],
        weights: None,
    };
    fit_ensemble(&spec, &d, 3).unwrap().to_bytes()
}

unsafe fn load(bytes: &[u8]) -> *mut CvxModel {
    let mut m = ptr::null_mut();
    assert_eq!(cvx_model_load(bytes.as_ptr(), bytes.len(), &mut m), CvxStatus::Ok, "{:?}", last_error());
    m
}

#[test]
fn ensemble_predictions_match_the_library() {
    let bytes = classifier_bytes(VoteKind::Soft);
    let ens = cogvox::ensemble::VotingEnsemble::from_bytes(&bytes).unwrap();
    let d = Dataset::from_rows(&rows(), Targets::Classes((0..24).map(|i| i % 3).collect())).unwrap();
    let Prediction::Probabilities(want) = ens.predict(&d.features).unwrap() else { panic!("probabilities") };

    unsafe {
        let m = load(&bytes);
        let mut task = CvxModelTask::Regression;
        assert_eq!(cvx_model_task(m, &mut task), CvxStatus::Ok);
        assert_eq!(task, CvxModelTask::Classification);
        let mut n = 0usize;
        assert_eq!(cvx_model_n_features(m, &mut n), CvxStatus::Ok);
        assert_eq!(n, 2);

        let flat: Vec<f64> = rows().concat();
        let mut out = vec![f64::NAN; 24 * CVX_N_CLASSES];
        assert_eq!(cvx_model_predict(m, flat.as_ptr(), 24, 2, out.as_mut_ptr(), out.len()), CvxStatus::Ok);
        let got: Vec<f64> = want.iter().flatten().copied().collect();
        assert_eq!(out, got);
        assert!(last_error().is_none());
        cvx_model_free(m);
    }
}

#[test]
fn hard_vote_writes_one_hot_rows() {
    unsafe {
        let m = load(&classifier_bytes(VoteKind::Hard));
        let flat: Vec<f64> = rows().concat();
        let mut out = vec![f64::NAN; 24 * CVX_N_CLASSES];
        assert_eq!(cvx_model_predict(m, flat.as_ptr(), 24, 2, out.as_mut_ptr(), out.len()), CvxStatus::Ok);
        for r in out.chunks(CVX_N_CLASSES) {
            assert_eq!(r.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(r.iter().filter(|&&v| v == 0.0).count(), CVX_N_CLASSES - 1);
        }
        cvx_model_free(m);
    }
}

#[test]
fn single_regressor_file_loads_from_path() {
    let y: Vec<f64> = rows().iter().map(|r| 10.0 + 3.0 * r[0]).collect();
    let d = Dataset::from_rows(&rows(), Targets::Values(y)).unwrap();
    let hp = GbmParams { n_estimators: 30, learning_rate: 0.2, max_depth: 2, seed: 0 };
    let model = fit_model(&Hyperparams::GradientBoosting(hp), &d).unwrap();
    let Prediction::Values(want) = model.predict(&d.features).unwrap() else { panic!("values") };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gbm.cvxm");
    std::fs::write(&path, save_model(&model)).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cvx_model_load_file(c_path.as_ptr(), &mut m), CvxStatus::Ok);
        let mut task = CvxModelTask::Classification;
        cvx_model_task(m, &mut task);
        assert_eq!(task, CvxModelTask::Regression);
        let flat: Vec<f64> = rows().concat();
        let mut out = vec![0.0; 24];
        assert_eq!(cvx_model_predict(m, flat.as_ptr(), 24, 2, out.as_mut_ptr(), out.len()), CvxStatus::Ok);
        assert_eq!(out, want);
        cvx_model_free(m);
    }
}

#[test]
fn bad_inputs_return_status_and_message() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cvx_model_load(ptr::null(), 4, &mut m), CvxStatus::NullPointer);
        assert!(last_error().unwrap().contains("bytes"));
        assert_eq!(cvx_model_load(b"nope".as_ptr(), 4, &mut m), CvxStatus::Model);
        assert!(m.is_null());

        let mut bytes = classifier_bytes(VoteKind::Soft);
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        assert_eq!(cvx_model_load(bytes.as_ptr(), bytes.len(), &mut m), CvxStatus::Model);

        let missing = CString::new("/nonexistent/model.cvxe").unwrap();
        assert_eq!(cvx_model_load_file(missing.as_ptr(), &mut m), CvxStatus::Io);

        let m = load(&classifier_bytes(VoteKind::Soft));
        let row = [0.0; 3];
        let mut out = [0.0; 3];
        assert_eq!(cvx_model_predict(m, row.as_ptr(), 1, 3, out.as_mut_ptr(), 3), CvxStatus::InvalidArgument);
        assert_eq!(cvx_model_predict(m, row.as_ptr(), 1, 2, out.as_mut_ptr(), 2), CvxStatus::InvalidArgument);
        assert!(last_error().unwrap().contains("3 needed"));
        assert_eq!(cvx_model_predict(m, row.as_ptr(), 0, 2, ptr::null_mut(), 0), CvxStatus::Ok);
        assert!(last_error().is_none());
        cvx_model_free(m);
        cvx_model_free(ptr::null_mut());
    }
}

#[test]
fn transcript_features_match_the_library() {
    let text = std::fs::read(FIXTURE).unwrap();
    let t = parse_transcript(&text[..], "x", Task::Ctd, 12.5).unwrap();
    let want = transcript_features(&t, &CountingRules::default()).unwrap();
    let mut out = [f64::NAN; CVX_TASK_FEATURES];
    unsafe {
        let s = cvx_transcript_features(text.as_ptr(), text.len(), CvxTask::Ctd as u32, 12.5, out.as_mut_ptr());
        assert_eq!(s, CvxStatus::Ok);
        assert_eq!(&out, want.values());
        assert_eq!(out[0], 12.5);

        let s = cvx_transcript_features(text.as_ptr(), text.len(), 9, 12.5, out.as_mut_ptr());
        assert_eq!(s, CvxStatus::InvalidArgument);
        let s = cvx_transcript_features(text.as_ptr(), text.len(), 0, 0.0, out.as_mut_ptr());
        assert_eq!(s, CvxStatus::Parse);
        let junk = b"1\tx\tx\tNOUN\t1\troot\n";
        let s = cvx_transcript_features(junk.as_ptr(), junk.len(), 0, 1.0, out.as_mut_ptr());
        assert_eq!(s, CvxStatus::Parse);
    }
}

#[test]
fn metrics_through_the_boundary() {
    // per class: HC p=1 r=1/2, MCI p=1/2 r=1, AD p=1 r=1
    let t = [0u32, 0, 1, 2];
    let p = [0u32, 1, 1, 2];
    let mut m = CvxMacroMetrics::default();
    unsafe {
        assert_eq!(cvx_macro_metrics(t.as_ptr(), p.as_ptr(), 4, &mut m), CvxStatus::Ok);
    }
    let (prec, rec) = (2.5 / 3.0, 2.5 / 3.0);
    assert!((m.precision - prec).abs() < 1e-15);
    assert!((m.recall - rec).abs() < 1e-15);
    assert!((m.f1 - 2.0 * prec * rec / (prec + rec)).abs() < 1e-15);
    assert_eq!(m.zero_division, 0);

    let bad = [5u32];
    unsafe {
        assert_eq!(cvx_macro_metrics(bad.as_ptr(), bad.as_ptr(), 1, &mut m), CvxStatus::InvalidArgument);
    }

    let a = [1.0, 2.0, 3.0];
    let b = [1.0, 4.0, 3.0];
    let mut e = 0.0;
    unsafe {
        assert_eq!(cvx_rmse(a.as_ptr(), b.as_ptr(), 3, &mut e), CvxStatus::Ok);
        assert_eq!(cvx_rmse(a.as_ptr(), b.as_ptr(), 3, ptr::null_mut()), CvxStatus::NullPointer);
    }
    assert!((e - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cvx_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cogvox.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["cvx_model_load", "cvx_model_predict", "cvx_model_free", "cvx_transcript_features", "cvx_last_error"] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    for (cc, ext) in [("cc", "c"), ("c++", "cpp")] {
        let src = dir.path().join(format!("use.{ext}"));
        std::fs::write(
            &src,
            format!(
                "#include \"{header}\"\nint main(void) {{ CvxModel *m = 0; CvxStatus s = cvx_model_load(0, 0, &m); cvx_model_free(m); return (int)s; }}\n"
            ),
        )
        .unwrap();
        match Command::new(cc).arg("-fsyntax-only").arg(&src).output() {
            Ok(o) => assert!(o.status.success(), "{cc}: {}", String::from_utf8_lossy(&o.stderr)),
            Err(_) => eprintln!("{cc} not available, skipping"),
        }
    }
}
