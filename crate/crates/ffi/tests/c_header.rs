//! Compiles a C program against the generated header and links it to the
//! static library built alongside this test.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "lma.h"

int main(void) {
    LmaGrid *g = NULL;
    LmaPotential *p = NULL;
    if (lma_grid_new_square(33, -1.0, 1.0, &g) != LMA_STATUS_OK) return 1;
    if (lma_potential_from_family("diagonal:2,0.5", g, &p) != LMA_STATUS_OK) return 2;
    size_t n = lma_grid_len(g);
    double b[33 * 33], u[33 * 33];
    for (size_t k = 0; k < n; k++) b[k] = 1.0;
    if (lma_solve(p, NULL, NULL, NULL, b, n, u) != LMA_STATUS_OK) return 3;
    for (size_t k = 0; k < n; k++) if (fabs(u[k] - 1.0) > 1e-9) return 4;
    if (lma_grid_new_square(0, 0.0, 1.0, NULL) != LMA_STATUS_NULL_POINTER) return 5;
    char msg[64];
    size_t len = lma_last_error_message(msg, sizeof msg);
    printf("%s (%zu)\n", msg, len);
    lma_potential_free(p);
    lma_grid_free(g);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("liblma_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).contains("null pointer: grid_out"));
}
