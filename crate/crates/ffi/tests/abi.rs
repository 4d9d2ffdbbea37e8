use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use unfoldsr::models::{save_checkpoint, write_checkpoint, Checkpoint, ModelConfig, ModelKind, Network};
use unfoldsr::proximal::{lesita_prox, soft_threshold};
use unfoldsr::solvers::{ista_solve, l1l1_solve, Dictionary, SideInfoProblem};
use unfoldsr::Error;
use unfoldsr_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { usr_last_error(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(s.len(), n.min(255));
    s
}

#[test]
fn scalar_operators_match_the_library() {
    for &(u, side, mu) in &[(-2.0, -1.0, 0.25), (0.3, 1.0, 0.1), (5.0, 0.0, 0.7)] {
        let mut out = f64::NAN;
        assert_eq!(unsafe { usr_lesita_prox(u, side, mu, &mut out) }, USR_OK);
        assert_eq!(out, lesita_prox(u, side, mu).unwrap());
        assert_eq!(unsafe { usr_soft_threshold(u, mu, &mut out) }, USR_OK);
        assert_eq!(out, soft_threshold(u, mu).unwrap());
    }
    let mut out = 7.0;
    assert_eq!(unsafe { usr_soft_threshold(1.0, -0.5, &mut out) }, USR_ERR_INVALID_PARAMETER);
    assert_eq!(out, 7.0);
    assert!(last_error().contains("gamma"));
    assert_eq!(unsafe { usr_lesita_prox(1.0, 0.0, 0.1, ptr::null_mut()) }, USR_ERR_NULL_POINTER);
}

#[test]
fn last_error_truncates() {
    unsafe { usr_soft_threshold(1.0, -0.5, &mut 0.0) };
    let full = unsafe { usr_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 4];
    assert_eq!(unsafe { usr_last_error(buf.as_mut_ptr(), 4) }, full);
    assert_eq!(buf[3], 0);
}

#[test]
fn solver_matches_the_library() {
    let (n_y, n_alpha) = (4, 6);
    let dict: Vec<f64> = (0..n_y * n_alpha).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let y = vec![0.5, -1.0, 0.25, 2.0];
    let side = vec![0.0, 1.0, 0.0, -0.5, 0.0, 0.0];
    let d = Dictionary::from_rows(n_y, n_alpha, dict.clone()).unwrap();
    let p = SideInfoProblem::new(d, y.clone(), 0.1, side.clone()).unwrap();

    let mut sol = vec![0.0; n_alpha];
    let mut iters = 0usize;
    let call = |mode: i32, sol: &mut Vec<f64>, iters: &mut usize| unsafe {
        usr_solve(mode, dict.as_ptr(), n_y, n_alpha, y.as_ptr(), side.as_ptr(), 0.1, 500, 1e-10, sol.as_mut_ptr(), iters)
    };
    assert_eq!(call(USR_MODE_L1L1, &mut sol, &mut iters), USR_OK);
    let want = l1l1_solve(&p, 500, 1e-10).unwrap();
    assert_eq!((sol.clone(), iters), (want.solution, want.iterations));

    assert_eq!(call(USR_MODE_L1, &mut sol, &mut iters), USR_OK);
    let want = ista_solve(&p.without_side(), 500, 1e-10).unwrap();
    assert_eq!((sol.clone(), iters), (want.solution, want.iterations));

    assert_eq!(call(9, &mut sol, &mut iters), USR_ERR_BAD_ARGUMENT);
    let status = unsafe {
        usr_solve(USR_MODE_L1L1, dict.as_ptr(), n_y, n_alpha, y.as_ptr(), ptr::null(), 0.1, 10, 0.0, sol.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(status, USR_ERR_NULL_POINTER);
}

#[test]
fn psnr_of_identical_images_is_infinite() {
    let a = [0.1, 0.2, 0.3];
    let b = [0.1, 0.2, 0.4];
    let mut out = 0.0;
    assert_eq!(unsafe { usr_psnr(a.as_ptr(), a.as_ptr(), 3, 1.0, &mut out) }, USR_OK);
    assert_eq!(out, f64::INFINITY);
    assert_eq!(unsafe { usr_psnr(a.as_ptr(), b.as_ptr(), 3, 1.0, &mut out) }, USR_OK);
    assert!((out - 10.0 * (3.0f64 / 0.01).log10()).abs() < 1e-9);
    assert_eq!(unsafe { usr_psnr(a.as_ptr(), b.as_ptr(), 3, 0.0, &mut out) }, USR_ERR_INVALID_PARAMETER);
}

fn small_config() -> ModelConfig {
    ModelConfig {
        feat_filters: 6,
        feat_kernel: 3,
        code_dim: 8,
        patch_dim: 3,
        agg_kernel: 3,
        stages: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn model_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.ckpt");
    save_checkpoint(&path, &Network::<f64>::zeros(ModelKind::DmscPlus, small_config()).unwrap()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { usr_model_load(cpath.as_ptr(), &mut model) }, USR_OK);
    assert!(!model.is_null());
    assert_eq!(unsafe { usr_model_scale(model) }, 2);

    let (w, h) = (5, 4);
    let lr = vec![0.5; w * h];
    let guide = vec![0.25; w * h * 4 * 3];
    let mut out = vec![1.0; w * h * 4];
    let status = unsafe { usr_model_superresolve(model, lr.as_ptr(), w, h, guide.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(status, USR_OK);
    assert!(out.iter().all(|&v| v == 0.0));
    let status = unsafe { usr_model_superresolve(model, lr.as_ptr(), w, h, guide.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(status, USR_ERR_CONFIG_MISMATCH);
    let status = unsafe { usr_model_superresolve(model, lr.as_ptr(), w, h, guide.as_ptr(), 3, out.as_mut_ptr()) };
    assert_eq!(status, USR_ERR_INVALID_PARAMETER);
    unsafe { usr_model_free(model) };
    unsafe { usr_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { usr_model_scale(ptr::null()) }, 0);

    let missing = CString::new(dir.path().join("absent.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { usr_model_load(missing.as_ptr(), &mut model) }, USR_ERR_IO);
    assert_eq!(unsafe { usr_model_load(ptr::null(), &mut model) }, USR_ERR_NULL_POINTER);
}

#[test]
fn model_from_bytes_matches_library_forward() {
    let net = Network::<f32>::random(ModelKind::Dmsc, small_config(), 3).unwrap();
    let bytes = write_checkpoint(&Checkpoint::from_network(&net)).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { usr_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut model) }, USR_OK);

    let (w, h) = (6, 5);
    let lr: Vec<f64> = (0..w * h).map(|i| (i % 7) as f64 / 7.0).collect();
    let guide: Vec<f64> = (0..w * h * 4 * 3).map(|i| (i % 5) as f64 / 5.0).collect();
    let mut out = vec![0.0; w * h * 4];
    let status = unsafe { usr_model_superresolve(model, lr.as_ptr(), w, h, guide.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(status, USR_OK);
    unsafe { usr_model_free(model) };

    let lr_img = unfoldsr::imageops::ImagePlane::new(w, h, lr).unwrap();
    let y_up = unfoldsr::imageops::bicubic_resize(&lr_img, 2 * w, 2 * h).unwrap();
    let rgb = unfoldsr::imageops::RgbImage::new(2 * w, 2 * h, guide).unwrap();
    let want = net.forward(&y_up, &unfoldsr::imageops::rgb_to_luma(&rgb)).unwrap();
    assert_eq!(out, want.pixels());

    let junk = b"NOTACKPT and more";
    assert_eq!(unsafe { usr_model_load_bytes(junk.as_ptr(), junk.len(), &mut model) }, USR_ERR_BAD_MAGIC);
    assert_eq!(unsafe { usr_model_load_bytes(bytes.as_ptr(), 20, &mut model) }, USR_ERR_TRUNCATED);
}

#[test]
fn error_constants_mirror_library_codes() {
    let pairs = [
        (Error::InvalidParameter(String::new()), USR_ERR_INVALID_PARAMETER),
        (Error::Shape(String::new()), USR_ERR_SHAPE),
        (Error::DegenerateInput(String::new()), USR_ERR_DEGENERATE_INPUT),
        (Error::NumericFailure { tensor: String::new() }, USR_ERR_NUMERIC_FAILURE),
        (Error::UninitializedGradients, USR_ERR_UNINITIALIZED_GRADIENTS),
        (Error::Unsupported(String::new()), USR_ERR_UNSUPPORTED),
        (Error::BadMagic(String::new()), USR_ERR_BAD_MAGIC),
        (Error::Truncated(String::new()), USR_ERR_TRUNCATED),
        (Error::MalformedHeader(String::new()), USR_ERR_MALFORMED_HEADER),
        (Error::UnsupportedVersion(0), USR_ERR_UNSUPPORTED_VERSION),
        (Error::UnsupportedMaxval(0), USR_ERR_UNSUPPORTED_MAXVAL),
        (Error::ConfigMismatch(String::new()), USR_ERR_CONFIG_MISMATCH),
        (Error::MissingData(String::new()), USR_ERR_MISSING_DATA),
        (Error::EmptyDataset, USR_ERR_EMPTY_DATASET),
        (Error::NanLoss { epoch: 0, batch: 0 }, USR_ERR_NAN_LOSS),
        (Error::Config(String::new()), USR_ERR_CONFIG),
        (Error::Io(std::io::Error::other("x")), USR_ERR_IO),
    ];
    for (e, code) in pairs {
        assert_eq!(e.code(), code, "{e:?}");
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("unfoldsr.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "usr_last_error",
        "usr_soft_threshold",
        "usr_lesita_prox",
        "usr_solve",
        "usr_psnr",
        "usr_model_load",
        "usr_model_load_bytes",
        "usr_model_free",
        "usr_model_scale",
        "usr_model_superresolve",
        "usr_version",
        "typedef struct UsrModel UsrModel",
        "#define USR_ERR_IO 17",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"unfoldsr.h\"\nint probe(void) { double o; UsrModel *m = 0; usr_model_free(m); return usr_lesita_prox(1.0, 0.0, 0.1, &o); }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(usr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
