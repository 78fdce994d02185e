#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::collections::BTreeMap;

use bbr_fluid::scenario::{parse_scenario, KeyPolicy, Scenario};
use bbr_fluid::sim::{run_scenario, SimTrace};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn catalog_dir() -> PathBuf {
    workspace_root().join("scenarios")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Shipped scenario files, sorted by file name.
pub fn catalog_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(catalog_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

pub fn load(name: &str) -> Scenario {
    parse_scenario(&catalog_dir().join(format!("{name}.json")), KeyPolicy::Strict)
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Runs each named catalog scenario at most once per test binary.
pub fn trace(name: &str) -> SimTrace {
    static CACHE: OnceLock<Mutex<BTreeMap<String, SimTrace>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(name) {
        return t.clone();
    }
    let t = run_scenario(&load(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    cache.lock().unwrap().insert(name.to_string(), t.clone());
    t
}
