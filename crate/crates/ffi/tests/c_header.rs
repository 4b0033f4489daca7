//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped when no C compiler is installed.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "effacts.h"

int main(void) {
    const char *text = "epsilon = 0.1\n";
    EffactsConfig *cfg = NULL;
    if (effacts_config_from_str(text, &cfg) != EFFACTS_STATUS_OK) return 1;
    effacts_config_free(cfg);
    if (effacts_config_from_str("epsilon = 3", &cfg) != EFFACTS_STATUS_INVALID_CONFIG) return 2;
    if (effacts_last_error() == NULL) return 3;
    double r[4] = {4.0, 1.0, 3.0, 2.0};
    size_t idx[4], n = 0;
    if (effacts_select_bottom(r, 4, 0.5, idx, &n) != EFFACTS_STATUS_OK) return 4;
    if (n != 2 || idx[0] != 1 || idx[1] != 3) return 5;
    printf("ok\n");
    return 0;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .map(String::from)
}

#[test]
fn header_compiles_and_links() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("effacts.h").exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();

    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(syntax.status.success(), "{}", String::from_utf8_lossy(&syntax.stderr));

    // target/<profile>/deps/<test exe> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libeffacts_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let bin = dir.path().join("main");
    let link = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
