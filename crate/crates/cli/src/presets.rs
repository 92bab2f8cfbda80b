//! Experiment presets compiled into the binary from the workspace `presets/`
//! directory.

include!(concat!(env!("OUT_DIR"), "/presets.rs"));

pub fn get(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
