//! Access to the fixture corpus shipped at the workspace root.

use std::path::{Path, PathBuf};

use evmsem::checkers::{check, replay, IntegrityMode, Property, Verdict};
use evmsem::fixtures::{load_dir, Fixture, LoadedFixture};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn fixture(name: &str) -> LoadedFixture {
    let path = corpus_dir().join(format!("{name}.json"));
    Fixture::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

pub fn all_fixtures() -> Vec<LoadedFixture> {
    load_dir(&corpus_dir()).unwrap_or_else(|e| panic!("{e}"))
}

/// Checks `property` with the fixture's own parameters.
pub fn verdict(f: &LoadedFixture, property: Property, mode: IntegrityMode) -> Verdict {
    let mut params = f.params();
    params.mode = mode;
    let c = f.contract().expect("fixture names a contract");
    check(&f.space(), property, c, &params).unwrap_or_else(|e| panic!("{}: {property}: {e}", f.fixture.name))
}

/// Whether the witness of a violated verdict reproduces the violation.
pub fn replays(f: &LoadedFixture, v: &Verdict) -> bool {
    let mut params = f.params();
    params.mode = v.mode.unwrap_or_default();
    let w = v.witness().expect("violated verdict");
    replay(&f.space(), v.property, v.contract, &params, w).expect("replay runs")
}
