//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

/// Directory holding the library artifacts of this build (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libtensor_factor_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let status = match status {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping: no C compiler ({cc}: {e})");
            return;
        }
    };
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "exit {:?}: {stdout} {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.starts_with(&format!("tensor-factor {} ok", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tensor_factor.h"),
    )
    .unwrap();
    for name in [
        "tf_version",
        "tf_last_error",
        "tf_series_new",
        "tf_series_load",
        "tf_series_free",
        "tf_series_shape",
        "tf_estimate",
        "tf_estimate_free",
        "tf_estimate_basis",
        "tf_estimate_ladder",
        "tf_estimate_iterations",
        "tf_projection_distance",
        "typedef struct TfSeries TfSeries",
        "typedef struct TfEstimate TfEstimate",
        "TF_STATUS_PANIC = 5",
        "TF_METHOD_ITIPUP = 3",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
