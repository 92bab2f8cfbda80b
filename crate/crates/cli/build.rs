// Embeds every file in the workspace presets/ directory so the binary works from any directory.

use std::fmt::Write as _;
use std::path::Path;
use std::{env, fs};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    println!("cargo:rerun-if-changed={}", dir.display());
    let mut names: Vec<String> = fs::read_dir(&dir)
        .expect("presets directory")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut src = String::from("pub static PRESETS: &[(&str, &str)] = &[\n");
    for n in &names {
        let path = dir.join(format!("{n}.cfg"));
        println!("cargo:rerun-if-changed={}", path.display());
        writeln!(src, "    ({n:?}, include_str!({:?})),", path.display().to_string()).unwrap();
    }
    src.push_str("];\n");
    fs::write(Path::new(&env::var("OUT_DIR").unwrap()).join("presets.rs"), src).unwrap();
}
