#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use tidal_control::io::{parse_config, CostConfig, Scenario, ScenarioConfig, TargetSource};

/// Writes a report line past the test harness output capture.
pub fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(id: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    report(&format!("[acceptance {id:02}] {tag} {title}: {detail}"));
}

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn shipped(name: &str) -> ScenarioConfig {
    parse_config(&configs().join(name)).expect("shipped config parses")
}

pub fn default_with(edit: impl FnOnce(&mut ScenarioConfig)) -> Scenario {
    let mut c = ScenarioConfig::default_scenario();
    edit(&mut c);
    Scenario::build(c, Path::new(".")).expect("scenario builds")
}

pub fn default_scenario() -> Scenario {
    default_with(|_| {})
}

pub fn twin_tracking() -> CostConfig {
    CostConfig::Tracking {
        target: TargetSource::Twin { amplitude: 2.0 },
    }
}
