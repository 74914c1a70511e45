//! The header is maintained by hand, so these tests pin it to the ABI: the
//! declared name set must match the exported functions exactly, and (when a C
//! compiler is available) a real C program must build against the header,
//! link the static library, and drive the full lifecycle.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

const HEADER: &str = include_str!("../include/angular_at.h");

/// Every exported function, pinned against the Rust items so a rename or a
/// signature change here fails to compile.
const EXPORTS: &[&str] = &[
    "aat_version",
    "aat_last_error",
    "aat_dataset_generate_blobs",
    "aat_dataset_load",
    "aat_dataset_save",
    "aat_dataset_free",
    "aat_dataset_len",
    "aat_dataset_input_dim",
    "aat_dataset_classes",
    "aat_model_train",
    "aat_model_load",
    "aat_model_save",
    "aat_model_free",
    "aat_model_input_dim",
    "aat_model_classes",
    "aat_model_param_checksum",
    "aat_model_predict",
    "aat_eval_natural_accuracy",
    "aat_eval_robust_accuracy",
];

#[allow(clippy::no_effect_underscore_binding)]
fn pin_signatures() {
    use angular_at_ffi::*;
    use std::ffi::c_char;

    let _: extern "C" fn() -> *const c_char = aat_version;
    let _: extern "C" fn() -> *const c_char = aat_last_error;
    let _: unsafe extern "C" fn(usize, usize, usize, f64, u64, *mut *mut AatDataset) -> i32 =
        aat_dataset_generate_blobs;
    let _: unsafe extern "C" fn(*const c_char, *mut *mut AatDataset) -> i32 = aat_dataset_load;
    let _: unsafe extern "C" fn(*const AatDataset, *const c_char) -> i32 = aat_dataset_save;
    let _: unsafe extern "C" fn(*mut AatDataset) = aat_dataset_free;
    let _: unsafe extern "C" fn(*const AatDataset) -> usize = aat_dataset_len;
    let _: unsafe extern "C" fn(*const AatDataset) -> usize = aat_dataset_input_dim;
    let _: unsafe extern "C" fn(*const AatDataset) -> usize = aat_dataset_classes;
    let _: unsafe extern "C" fn(
        *const AatDataset,
        *const c_char,
        u64,
        u32,
        *const usize,
        usize,
        usize,
        *mut *mut AatModel,
    ) -> i32 = aat_model_train;
    let _: unsafe extern "C" fn(*const c_char, *mut *mut AatModel) -> i32 = aat_model_load;
    let _: unsafe extern "C" fn(*const AatModel, *const c_char) -> i32 = aat_model_save;
    let _: unsafe extern "C" fn(*mut AatModel) = aat_model_free;
    let _: unsafe extern "C" fn(*const AatModel) -> usize = aat_model_input_dim;
    let _: unsafe extern "C" fn(*const AatModel) -> usize = aat_model_classes;
    let _: unsafe extern "C" fn(*const AatModel, *mut u64) -> i32 = aat_model_param_checksum;
    let _: unsafe extern "C" fn(*const AatModel, *const f64, usize, usize, *mut i64) -> i32 =
        aat_model_predict;
    let _: unsafe extern "C" fn(*const AatModel, *const AatDataset, *mut f64) -> i32 =
        aat_eval_natural_accuracy;
    let _: unsafe extern "C" fn(
        *const AatModel,
        *const AatDataset,
        *const c_char,
        f64,
        u64,
        usize,
        *mut f64,
    ) -> i32 = aat_eval_robust_accuracy;
}

/// Pull every `aat_*` identifier out of the header text.
fn header_names() -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let bytes = HEADER.as_bytes();
    let mut i = 0;
    while let Some(pos) = HEADER[i..].find("aat_") {
        let start = i + pos;
        let end = start
            + HEADER[start..]
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(HEADER.len() - start);
        // Skip matches inside longer identifiers (e.g. `struct AatModel`)
        // and the `aat_*` wildcards in the conventions comment.
        let name = &HEADER[start..end];
        if (start == 0 || !bytes[start - 1].is_ascii_alphanumeric()) && !name.ends_with('_') {
            names.insert(name.to_string());
        }
        i = end;
    }
    names
}

#[test]
fn header_declares_exactly_the_exported_functions() {
    pin_signatures();
    let declared = header_names();
    let expected: BTreeSet<String> = EXPORTS.iter().map(|s| s.to_string()).collect();
    assert_eq!(
        declared, expected,
        "include/angular_at.h must declare each exported function exactly once"
    );
    for macro_name in [
        "AAT_OK",
        "AAT_ERR_NULL_ARGUMENT",
        "AAT_ERR_INVALID",
        "AAT_ERR_IO",
        "AAT_ERR_NUMERIC",
        "AAT_ERR_FORMAT",
        "AAT_ERR_INTERNAL",
    ] {
        assert!(
            HEADER.contains(macro_name),
            "header is missing {macro_name}"
        );
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "angular_at.h"

#define CHECK(cond)                                                        \
    do {                                                                   \
        if (!(cond)) {                                                     \
            fprintf(stderr, "FAILED %s:%d: %s (last error: %s)\n",         \
                    __FILE__, __LINE__, #cond, aat_last_error());          \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(int argc, char **argv) {
    CHECK(argc == 2);
    CHECK(strlen(aat_version()) > 0);

    AatDataset *data = NULL;
    CHECK(aat_dataset_generate_blobs(2, 4, 10, 0.05, 1, &data) == AAT_OK);
    CHECK(aat_dataset_len(data) == 20);
    CHECK(aat_dataset_input_dim(data) == 4);
    CHECK(aat_dataset_classes(data) == 2);

    size_t dims[3] = {4, 8, 4};
    AatModel *model = NULL;
    CHECK(aat_model_train(data, "natural", 3, 2, dims, 3, 1, &model) == AAT_OK);
    CHECK(aat_model_input_dim(model) == 4);
    CHECK(aat_model_classes(model) == 2);

    char path[4096];
    snprintf(path, sizeof path, "%s/model.aatc", argv[1]);
    CHECK(aat_model_save(model, path) == AAT_OK);
    AatModel *reloaded = NULL;
    CHECK(aat_model_load(path, &reloaded) == AAT_OK);

    uint64_t sum_a = 0, sum_b = 1;
    CHECK(aat_model_param_checksum(model, &sum_a) == AAT_OK);
    CHECK(aat_model_param_checksum(reloaded, &sum_b) == AAT_OK);
    CHECK(sum_a == sum_b);

    double features[8] = {0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75};
    int64_t labels[2] = {-1, -1};
    CHECK(aat_model_predict(reloaded, features, 2, 4, labels) == AAT_OK);
    CHECK(labels[0] >= 0 && labels[0] < 2);
    CHECK(labels[1] >= 0 && labels[1] < 2);

    double natural = -1.0, clean = -2.0, robust = -3.0;
    CHECK(aat_eval_natural_accuracy(model, data, &natural) == AAT_OK);
    CHECK(aat_eval_robust_accuracy(model, data, "none", 0.0, 7, 1, &clean) == AAT_OK);
    CHECK(natural == clean);
    CHECK(aat_eval_robust_accuracy(model, data, "pgd20", 0.05, 7, 2, &robust) == AAT_OK);
    CHECK(robust >= 0.0 && robust <= 1.0);

    AatModel *missing = NULL;
    CHECK(aat_model_load("/no/such/model.aatc", &missing) == AAT_ERR_IO);
    CHECK(missing == NULL);
    CHECK(strlen(aat_last_error()) > 0);

    aat_model_free(model);
    aat_model_free(reloaded);
    aat_dataset_free(data);
    printf("c round trip ok: natural=%f robust=%f\n", natural, robust);
    return 0;
}
"#;

/// Directory holding the compiled static library (`target/<profile>/`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().expect("test binary path");
    exe.parent()
        .and_then(|deps| deps.parent())
        .expect("target profile dir")
        .to_path_buf()
}

/// `cargo test` only builds the rlib; produce the staticlib artifact if it
/// is not there yet (the build lock is free once tests are running).
fn ensure_staticlib() -> PathBuf {
    let dir = artifact_dir();
    let lib = dir.join("libangular_at_ffi.a");
    if !lib.is_file() {
        let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "angular-at-ffi"])
            .current_dir(env!("CARGO_MANIFEST_DIR"));
        if dir.file_name().is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        let out = cmd.output().expect("cargo is runnable");
        assert!(
            out.status.success(),
            "building the static library failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(lib.is_file(), "static library missing at {}", lib.display());
    lib
}

#[test]
fn c_program_builds_against_the_header_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no `cc` on this machine");
        return;
    }
    let staticlib = ensure_staticlib();

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("round_trip.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let prog = dir.path().join("round_trip");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");

    let compile = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Wextra")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&staticlib)
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&prog)
        .output()
        .expect("cc runs");
    assert!(
        compile.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&prog)
        .arg(dir.path())
        .output()
        .expect("program runs");
    assert!(
        run.status.success(),
        "round trip failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(
        String::from_utf8_lossy(&run.stdout).contains("c round trip ok"),
        "unexpected output: {}",
        String::from_utf8_lossy(&run.stdout)
    );
}
