use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/attractor_rl.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 10);
    for name in exports {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in [
        "ArState",
        "ArDuffingParams",
        "ArIntegrator",
        "ArStatus",
        "ArLabel",
    ] {
        assert!(
            text.contains(&format!("typedef struct {ty}"))
                || text.contains(&format!("typedef enum {ty}"))
        );
    }
    for opaque in ["ArCatalog", "ArBoaModel", "ArPolicy"] {
        assert!(
            text.contains(&format!("typedef struct {opaque} {opaque};")),
            "{opaque} not opaque"
        );
    }
    assert!(text.contains("#ifndef ATTRACTOR_RL_H"));
}

// Compiles and runs a small C program against the static library when a C
// compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libattractor_rl_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "attractor_rl.h"
int main(void) {
    ArDuffingParams p = ar_default_params();
    ArIntegrator c = ar_default_integrator();
    ArState s = {1.0, 0.0, 0.0};
    if (ar_step_control(&p, &c, &s, 0.5, &s) != AR_STATUS_OK) return 1;
    if (ar_step_control(NULL, &c, &s, 0.5, &s) != AR_STATUS_NULL_POINTER) return 2;
    if (strlen(ar_last_error()) == 0) return 3;
    ArCatalog *cat = NULL;
    if (ar_catalog_load("/nonexistent/catalog", &cat) != AR_STATUS_IO) return 4;
    printf("%s %.12f %.12f\n", ar_version(), s.x, s.v);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
