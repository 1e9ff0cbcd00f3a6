//! The checked-in header against the Rust exports: every exported function is
//! declared, and a C program built from the header links and runs against the
//! compiled library.

use std::mem::{offset_of, size_of};
use std::path::PathBuf;
use std::process::Command;

use msrl::MsrlTrainConfig;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut names = Vec::new();
    let mut exported = false;
    for line in src.lines() {
        let line = line.trim();
        if line == "#[no_mangle]" {
            exported = true;
        } else if exported && line.starts_with("pub") {
            let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
            names.push(name.to_string());
            exported = false;
        }
    }
    names
}

/// Names of the `msrl_*` functions declared in the header.
fn declared_functions() -> Vec<String> {
    let header = std::fs::read_to_string(crate_dir().join("include/msrl.h")).unwrap();
    let mut names = Vec::new();
    for (i, _) in header.match_indices("msrl_") {
        let rest = &header[i..];
        let end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        if rest[end..].starts_with('(') {
            names.push(rest[..end].to_string());
        }
    }
    names
}

#[test]
fn header_matches_exports() {
    let mut exported = exported_functions();
    let mut declared = declared_functions();
    exported.sort();
    declared.sort();
    assert!(exported.len() >= 14, "found {exported:?}");
    assert_eq!(declared, exported);
}

/// The directory holding the compiled `libmsrl` artifacts for this profile.
fn lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?.to_path_buf();
    let profile = deps.parent()?.to_path_buf();
    [deps, profile]
        .into_iter()
        .find(|d| d.join("libmsrl.so").exists() || d.join("libmsrl.a").exists())
}

#[test]
fn c_program_builds_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let Some(lib) = lib_dir() else {
        eprintln!("compiled C library not found next to the test binary; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-pedantic"])
        .arg(format!("-DEXPECTED_CONFIG_SIZE={}", size_of::<MsrlTrainConfig>()))
        .arg(format!("-DEXPECTED_ROWNORM_OFFSET={}", offset_of!(MsrlTrainConfig, row_normalize)))
        .arg(format!("-DEXPECTED_FLOOR_OFFSET={}", offset_of!(MsrlTrainConfig, delta_floor)))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&lib)
        .arg("-lmsrl")
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed:\n{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(dir.path().join("m.mvck")).output().unwrap();
    assert!(
        run.status.success(),
        "C smoke test failed:\n{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
}

#[test]
fn header_is_valid_cplusplus() {
    if Command::new("c++").arg("--version").output().is_err() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("h.cpp");
    std::fs::write(&src, "#include \"msrl.h\"\nint main() { return msrl_last_error() == nullptr ? 0 : 1; }\n").unwrap();
    let out = Command::new("c++")
        .args(["-fsyntax-only", "-Wall", "-Werror"])
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
