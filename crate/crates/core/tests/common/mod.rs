#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use vidsum_core::config::PipelineConfig;
use vidsum_core::manifest::LOGS_DIR;
use vidsum_core::synthetic::{generate, SyntheticSpec, SyntheticVideo};

pub fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        frames: 120,
        phases: 8,
        side: 32,
        ..SyntheticSpec::default()
    }
}

pub fn synth(spec: &SyntheticSpec, dir: &Path) -> (SyntheticVideo, PipelineConfig) {
    let video = generate(spec, dir).unwrap();
    let config = PipelineConfig::load(&video.config, None, vec![]).unwrap();
    (video, config)
}

/// Every file under `dir` except the wall-clock logs, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            (rel, std::fs::read(e.path()).unwrap())
        })
        .filter(|(rel, _)| !rel.starts_with(LOGS_DIR))
        .collect()
}

/// Names of files that differ between two snapshots.
pub fn diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut out: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    out.extend(b.keys().filter(|k| !a.contains_key(*k)).cloned());
    out
}
