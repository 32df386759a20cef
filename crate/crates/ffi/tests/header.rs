use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/localglobal.h");

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(HEADER).expect("header generated by build.rs");
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() > 15);
    for name in exported {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for item in ["typedef struct LgVolume LgVolume", "LG_ERR_PANIC", "LG_SUPERLEVEL", "LgPiParams"] {
        assert!(text.contains(item), "{item} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let status = Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", HEADER])
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
