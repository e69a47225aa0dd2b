#![allow(dead_code)]

use std::sync::Arc;

use ircopilot_bench::{load_suite, sample_suite_dir, BenchTask, Suite};
use ircopilot_core::provider::MockScript;
use ircopilot_service::providers::ProviderSpec;
use ircopilot_service::{Services, Store};

pub const CASE_ONE: &str = "zgsf-linux-1";
pub const CASE_FOUR: &str = "zgsf-linux-2";

pub fn suite() -> Suite {
    load_suite(&sample_suite_dir()).expect("sample suite")
}

pub fn task(id: &str) -> BenchTask {
    suite().task(id).expect("task").clone()
}

pub fn script(id: &str) -> MockScript {
    MockScript::load(&suite().mock_fixture(id, 0).expect("fixture")).expect("script")
}

pub fn mock(id: &str) -> ProviderSpec {
    ProviderSpec::Mock { script: script(id) }
}

pub fn services() -> Arc<Services> {
    Arc::new(Services::default())
}

pub fn store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = Store::open(dir.path().join("data")).expect("store");
    (dir, store)
}
