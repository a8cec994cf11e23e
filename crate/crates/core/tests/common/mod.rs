#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use tempfile::TempDir;

pub const FIXTURE_DBS: [&str; 5] = ["e_commerce", "tv_channels", "buildings", "agencies", "concert_singer"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tables_json() -> PathBuf {
    fixtures().join("spider_mini/tables.json")
}

pub fn dev_json() -> PathBuf {
    fixtures().join("spider_mini/dev.json")
}

/// Builds `<tmp>/database/<db>/<db>.sqlite` for every fixture script.
pub fn materialize() -> TempDir {
    let dir = tempfile::tempdir().expect("tempdir");
    for db in FIXTURE_DBS {
        let script = std::fs::read_to_string(fixtures().join(format!("databases/{db}.sql"))).expect("fixture script");
        let target = dir.path().join("database").join(db);
        std::fs::create_dir_all(&target).unwrap();
        let conn = Connection::open(target.join(format!("{db}.sqlite"))).unwrap();
        conn.execute_batch(&script).expect("fixture script runs");
    }
    dir
}

pub fn db_path(root: &Path, db: &str) -> PathBuf {
    root.join("database").join(db).join(format!("{db}.sqlite"))
}
pub mod executor_cases;
pub mod scenarios;
pub mod scripted;

use divmerge::harness::{DatasetConfig, EndpointConfig, ModelsConfig, PromptsConfig, RunConfig};
use divmerge::llm::{scripted_provider, ScriptEntry};
use divmerge::pipeline::{MergeStrategy, PipelineConfig};

/// Run configuration over the materialized fixture databases. The model
/// section is a placeholder; tests supply models through a factory.
pub fn run_config(
    db_root: &Path,
    examples: &Path,
    run_dir: &Path,
    merge: MergeStrategy,
    cs: bool,
    workers: usize,
) -> RunConfig {
    let endpoint = |id: &str| EndpointConfig {
        model_id: id.into(),
        provider: scripted_provider(vec![ScriptEntry::new("", "unused")]).unwrap(),
        temperature: 0.0,
        max_tokens: 1024,
        stage_temperatures: Default::default(),
    };
    RunConfig {
        run_dir: run_dir.to_path_buf(),
        worker_count: workers,
        cache_dir: None,
        run_seed: 0,
        dataset: DatasetConfig {
            root: db_root.to_path_buf(),
            tables: Some(tables_json()),
            examples: Some(examples.to_path_buf()),
            limit: None,
        },
        models: ModelsConfig {
            reasoning: endpoint("reasoning"),
            coding: endpoint("coding"),
        },
        prompts: PromptsConfig::default(),
        pipeline: PipelineConfig {
            merge_strategy: merge,
            column_selection_enabled: cs,
            ..PipelineConfig::default()
        },
        executor: Default::default(),
        router: Default::default(),
    }
}
