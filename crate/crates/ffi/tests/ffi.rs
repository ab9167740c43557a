use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tmsbi::density::Gaussian;
use tmsbi::models::{generate_joint_samples, LinearGaussianModel};
use tmsbi::polybasis::BasisFamily;
use tmsbi::sbi::{build_surrogate, push_samples, SurrogateLikelihood};
use tmsbi::training::AtmConfig;
use tmsbi::transport::{ComposedMap, TriangularMap};
use tmsbi_ffi::*;

fn affine_map() -> ComposedMap {
    let layer = TriangularMap::diagonal_affine(&[1.0, -2.0], &[0.5, 3.0], BasisFamily::default(), 16).unwrap();
    ComposedMap::from_layers(2, vec![layer]).unwrap()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tmsbi_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn map_handle_matches_rust() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("posterior.json");
    let map = affine_map();
    map.save(&path).unwrap();

    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tmsbi_map_load(cstr(&path).as_ptr(), &mut h), TMSBI_OK);
        assert_eq!(tmsbi_map_dim(h), 2);
        assert_eq!(tmsbi_map_length(h), 1);

        let x = [0.3, -1.1];
        let mut t = [0.0; 2];
        assert_eq!(tmsbi_map_evaluate(h, x.as_ptr(), 2, t.as_mut_ptr()), TMSBI_OK);
        assert_eq!(t.to_vec(), map.evaluate(&x).unwrap());
        let mut back = [0.0; 2];
        assert_eq!(tmsbi_map_inverse(h, t.as_ptr(), 2, back.as_mut_ptr()), TMSBI_OK);
        assert!((back[0] - x[0]).abs() < 1e-9 && (back[1] - x[1]).abs() < 1e-9);

        let mut s = vec![0.0; 10];
        assert_eq!(tmsbi_map_sample(h, 5, 9, s.as_mut_ptr(), s.len()), TMSBI_OK);
        let want: Vec<f64> = push_samples(&map, 5, 9).unwrap().concat();
        assert_eq!(s, want);
        tmsbi_map_free(h);
    }

    let json = CString::new(map.to_json().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tmsbi_map_from_json(json.as_ptr(), &mut h), TMSBI_OK);
        assert_eq!(tmsbi_map_dim(h), 2);
        tmsbi_map_free(h);
    }
}

#[test]
fn surrogate_handle_matches_rust() {
    let model = LinearGaussianModel {
        dim: 1,
        noise_std: 1.0,
    };
    let prior = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
    let joint = generate_joint_samples(&model, &prior, 3, 2000, 1).unwrap();
    let sur: SurrogateLikelihood = build_surrogate(&joint, &AtmConfig::default(), 2).unwrap().surrogate;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("surrogate-0003.json");
    std::fs::write(&path, sur.to_json().unwrap()).unwrap();

    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tmsbi_surrogate_load(cstr(&path).as_ptr(), &mut h), TMSBI_OK);
        assert_eq!(tmsbi_surrogate_step(h), 3);
        assert_eq!((tmsbi_surrogate_n_theta(h), tmsbi_surrogate_n_y(h)), (1, 1));

        let (theta, y) = ([0.4], [1.2]);
        let (want, want_g) = sur.loglik_grad(&theta, &y).unwrap();
        let (mut v, mut g) = (0.0, [0.0]);
        let rc = tmsbi_surrogate_loglik(h, theta.as_ptr(), 1, y.as_ptr(), 1, &mut v, g.as_mut_ptr());
        assert_eq!(rc, TMSBI_OK);
        assert_eq!((v, g[0]), (want, want_g[0]));
        let rc = tmsbi_surrogate_loglik(h, theta.as_ptr(), 1, y.as_ptr(), 1, &mut v, ptr::null_mut());
        assert_eq!(rc, TMSBI_OK);
        assert_eq!(v, want);

        // wrong data length
        let rc = tmsbi_surrogate_loglik(h, theta.as_ptr(), 1, y.as_ptr(), 2, &mut v, ptr::null_mut());
        assert_eq!(rc, TMSBI_ERR_INVALID_ARGUMENT);
        assert!(last_error().contains("y"));
        tmsbi_surrogate_free(h);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tmsbi_map_load(ptr::null(), &mut h), TMSBI_ERR_NULL_POINTER);
        assert!(!last_error().is_empty());

        let absent = cstr(&dir.path().join("absent.json"));
        assert_eq!(tmsbi_map_load(absent.as_ptr(), &mut h), TMSBI_ERR_IO);
        assert!(last_error().contains("absent.json"));
        assert!(h.is_null());

        let bad = CString::new("{\"format\": 3}").unwrap();
        assert_eq!(tmsbi_map_from_json(bad.as_ptr(), &mut h), TMSBI_ERR_FORMAT);

        let garbage = dir.path().join("garbage.json");
        std::fs::write(&garbage, "not json").unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(tmsbi_surrogate_load(cstr(&garbage).as_ptr(), &mut s), TMSBI_ERR_FORMAT);

        let json = CString::new(affine_map().to_json().unwrap()).unwrap();
        assert_eq!(tmsbi_map_from_json(json.as_ptr(), &mut h), TMSBI_OK);
        let mut out = [0.0; 3];
        assert_eq!(tmsbi_map_sample(h, 2, 0, out.as_mut_ptr(), 3), TMSBI_ERR_INVALID_ARGUMENT);
        assert_eq!(tmsbi_map_evaluate(h, [f64::NAN, 0.0].as_ptr(), 2, out.as_mut_ptr()), TMSBI_ERR_NUMERICAL);
        tmsbi_map_free(h);

        // null handles are tolerated by the free and size functions
        tmsbi_map_free(ptr::null_mut());
        assert_eq!(tmsbi_map_dim(ptr::null()), 0);
    }
}

/// Compiles a small C program against the generated header and the static
/// library.
#[test]
fn c_program_links_against_header() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let lib_dir = exe.parent().unwrap().join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = lib_dir.join("libtmsbi_ffi.a");
    if !lib.is_file() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let map_path = dir.path().join("map.json");
    affine_map().save(&map_path).unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tmsbi.h"
int main(int argc, char **argv) {
    TmsbiMap *m = NULL;
    if (tmsbi_map_load(argv[1], &m) != TMSBI_OK) return 1;
    double x[2] = {0.0, 0.0}, t[2];
    if (tmsbi_map_evaluate(m, x, 2, t) != TMSBI_OK) return 2;
    printf("%.3f %.3f\n", t[0], t[1]);
    tmsbi_map_free(m);
    return tmsbi_map_load("/nonexistent", &m) == TMSBI_ERR_IO ? 0 : 3;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(status.success());
    let out = Command::new(&bin).arg(&map_path).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1.000 -2.000");
}
