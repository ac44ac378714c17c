//! Resumable parallel execution of a task graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::dag::{TaskDag, TaskKind};
use super::grid::{ParameterGrid, Params};
use super::tasks::{self, read_json, SyncReport, LABELS_FILE, PAYLOAD_STEM, SCHEDULE_FILE, SPEC_STEM, SYNC_FILE};
use crate::annotate::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::waveforms::TransmissionSchedule;

/// Environment variable naming the default run directory.
pub const RUN_DIR_ENV: &str = "RATSCOPE_RUN_DIR";
pub const TASKS_DIR: &str = "tasks";
const TMP_SUFFIX: &str = ".tmp";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides `run.workers`.
    pub workers: Option<usize>,
    /// Stop after executing this many tasks, as if the process were killed.
    pub max_tasks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Done,
    Failed,
    /// An ancestor failed.
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub params: Params,
    pub inputs: Vec<String>,
    pub status: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub point: Params,
    pub leaf: String,
    pub status: TaskStatus,
}

/// Everything a finished run produced. Contains nothing that depends on
/// scheduling (worker count, timing, execution order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_sha256: String,
    pub chains: Vec<ChainRecord>,
    pub tasks: Vec<TaskRecord>,
}

impl RunManifest {
    pub fn path(run_dir: &Path, name: &str) -> PathBuf {
        run_dir.join(format!("{name}.manifest.json"))
    }

    pub fn read(run_dir: &Path, name: &str) -> Result<Self> {
        read_json(&Self::path(run_dir, name))
    }

    pub fn failed_chains(&self) -> usize {
        self.chains.iter().filter(|c| c.status != TaskStatus::Done).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// `max_tasks` stopped the run before every task was attempted.
    pub interrupted: bool,
    /// Written only for runs that were not interrupted.
    pub manifest: Option<RunManifest>,
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(TMP_SUFFIX);
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn artifacts(run_dir: &Path, id: &str) -> Result<Vec<Artifact>> {
    let dir = run_dir.join(TASKS_DIR).join(id);
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&dir, e))?;
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let (sha256, bytes) = sha256_file(&dir.join(&name))?;
            Ok(Artifact {
                path: format!("{TASKS_DIR}/{id}/{name}"),
                sha256,
                bytes,
            })
        })
        .collect()
}

/// Removes partial task directories left by an interrupted process.
fn clear_partials(tasks_dir: &Path) -> Result<()> {
    for entry in fs::read_dir(tasks_dir).map_err(|e| Error::io(tasks_dir, e))? {
        let path = entry.map_err(|e| Error::io(tasks_dir, e))?.path();
        if path.to_string_lossy().ends_with(TMP_SUFFIX) {
            fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn run_one(cfg: &PipelineConfig, dag: &TaskDag, tasks_dir: &Path, id: &str) -> Result<()> {
    let node = &dag.nodes[id];
    let tmp = tasks_dir.join(format!("{id}{TMP_SUFFIX}"));
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    match tasks::execute(cfg, dag, tasks_dir, node, &tmp) {
        Ok(()) => {
            let done = tasks_dir.join(id);
            fs::rename(&tmp, &done).map_err(|e| Error::io(&done, e))
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

/// Expands the configured grid and runs it.
pub fn run(cfg: &PipelineConfig, run_dir: &Path, opts: RunOptions) -> Result<RunSummary> {
    let grid = ParameterGrid::new(&cfg.grid)?;
    let dag = TaskDag::expand(&grid, cfg)?;
    run_dag(&dag, cfg, run_dir, opts)
}

/// Executes `dag` level by level. Tasks whose output directory already
/// exists are skipped; a failed task blocks its descendants only.
pub fn run_dag(dag: &TaskDag, cfg: &PipelineConfig, run_dir: &Path, opts: RunOptions) -> Result<RunSummary> {
    let tasks_dir = run_dir.join(TASKS_DIR);
    fs::create_dir_all(&tasks_dir).map_err(|e| Error::io(&tasks_dir, e))?;
    clear_partials(&tasks_dir)?;

    let workers = opts.workers.unwrap_or(cfg.run.workers).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut status: BTreeMap<String, TaskStatus> = BTreeMap::new();
    let mut errors: BTreeMap<String, String> = BTreeMap::new();
    let mut budget = opts.max_tasks;
    let (mut executed, mut skipped) = (0, 0);
    let mut interrupted = false;

    for level in dag.levels()? {
        let mut pending = Vec::new();
        for id in level {
            let node = &dag.nodes[&id];
            let parent_ok = node.inputs.iter().all(|p| status.get(p) == Some(&TaskStatus::Done));
            if !parent_ok {
                if node.inputs.iter().any(|p| status.contains_key(p)) {
                    status.insert(id, TaskStatus::Blocked);
                }
                continue;
            }
            if tasks_dir.join(&id).is_dir() {
                status.insert(id, TaskStatus::Done);
                skipped += 1;
            } else {
                pending.push(id);
            }
        }
        if let Some(left) = budget {
            if pending.len() > left {
                pending.truncate(left);
                interrupted = true;
            }
            budget = Some(left - pending.len());
        }
        let results: Vec<(String, Result<()>)> = pool.install(|| {
            pending
                .par_iter()
                .map(|id| (id.clone(), run_one(cfg, dag, &tasks_dir, id)))
                .collect()
        });
        for (id, result) in results {
            executed += 1;
            match result {
                Ok(()) => {
                    status.insert(id, TaskStatus::Done);
                }
                Err(e) => {
                    log::warn!("task {id} ({}) failed: {e}", dag.nodes[&id].kind);
                    errors.insert(id.clone(), e.to_string());
                    status.insert(id, TaskStatus::Failed);
                }
            }
        }
        if interrupted {
            break;
        }
    }

    let failed = errors.len();
    if interrupted {
        log::info!("stopped after {executed} tasks");
        return Ok(RunSummary {
            executed,
            skipped,
            failed,
            interrupted,
            manifest: None,
        });
    }

    let manifest = build_manifest(dag, cfg, run_dir, &status, &errors)?;
    write_atomic(
        &RunManifest::path(run_dir, &cfg.run.name),
        format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes(),
    )?;
    if cfg.run.persist_iq {
        let dataset = dataset_manifest(dag, run_dir, &status)?;
        let path = run_dir.join(format!("{}.dataset.json", cfg.run.name));
        write_atomic(&path, format!("{}\n", serde_json::to_string_pretty(&dataset)?).as_bytes())?;
    }
    log::info!("{executed} tasks executed, {skipped} reused, {failed} failed");
    Ok(RunSummary {
        executed,
        skipped,
        failed,
        interrupted,
        manifest: Some(manifest),
    })
}

fn build_manifest(
    dag: &TaskDag,
    cfg: &PipelineConfig,
    run_dir: &Path,
    status: &BTreeMap<String, TaskStatus>,
    errors: &BTreeMap<String, String>,
) -> Result<RunManifest> {
    let mut config = cfg.clone();
    // Scheduling knobs do not change outputs.
    config.run.workers = 1;
    let config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&config)?));

    let mut records = Vec::with_capacity(dag.len());
    for (id, node) in &dag.nodes {
        let st = status.get(id).copied().unwrap_or(TaskStatus::Blocked);
        records.push(TaskRecord {
            id: id.clone(),
            kind: node.kind,
            params: node.params.clone(),
            inputs: node.inputs.clone(),
            status: st,
            error: errors.get(id).cloned(),
            artifacts: if st == TaskStatus::Done { artifacts(run_dir, id)? } else { Vec::new() },
        });
    }
    let chains = dag
        .chains
        .iter()
        .map(|c| ChainRecord {
            point: c.point.clone(),
            leaf: c.leaf().to_string(),
            status: c
                .tasks
                .iter()
                .map(|t| status.get(t).copied().unwrap_or(TaskStatus::Blocked))
                .find(|s| *s != TaskStatus::Done)
                .unwrap_or(TaskStatus::Done),
        })
        .collect();
    Ok(RunManifest {
        name: cfg.run.name.clone(),
        config_sha256,
        chains,
        tasks: records,
    })
}

fn dataset_manifest(dag: &TaskDag, run_dir: &Path, status: &BTreeMap<String, TaskStatus>) -> Result<DatasetManifest> {
    let tasks_dir = run_dir.join(TASKS_DIR);
    let rel = |id: &str, file: &str| PathBuf::from(TASKS_DIR).join(id).join(file);
    let mut seen = BTreeSet::new();
    let mut out = DatasetManifest::default();
    for chain in &dag.chains {
        let label = chain.task(TaskKind::Label);
        if status.get(label) != Some(&TaskStatus::Done) || !seen.insert(label) {
            continue;
        }
        let synth = chain.task(TaskKind::Synth);
        let impair = chain.task(TaskKind::Impair);
        let record = chain.task(TaskKind::Record);
        let schedule: TransmissionSchedule = read_json(&tasks_dir.join(synth).join(SCHEDULE_FILE))?;
        let sync: SyncReport = read_json(&tasks_dir.join(record).join(SYNC_FILE))?;
        out.entries.push(ManifestEntry {
            id: label.to_string(),
            iq: rel(record, PAYLOAD_STEM),
            spectrogram: rel(chain.task(TaskKind::Spectrogram), SPEC_STEM),
            labels: rel(label, LABELS_FILE),
            schedule_hash: schedule.hash(),
            impairment_chain: read_json(&tasks_dir.join(impair).join(tasks::CHAIN_FILE))?,
            sync: Some(sync.result),
        });
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(extra: &str) -> PipelineConfig {
        PipelineConfig::from_toml(&format!(
            "[run]\nname = \"t\"\nworkers = 2\n[scene]\nspan_s = 0.012\n[stft]\nfft_size = 64\nhop = 640\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn run_then_resume_executes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config("[grid]\nsnr_db = [5, 20]\n");
        let first = run(&cfg, dir.path(), RunOptions::default()).unwrap();
        assert_eq!(first.executed, 1 + 2 * 7);
        assert_eq!(first.failed, 0);
        let m = first.manifest.unwrap();
        assert_eq!(m.failed_chains(), 0);
        assert!(m.tasks.iter().all(|t| !t.artifacts.is_empty()));

        let again = run(&cfg, dir.path(), RunOptions::default()).unwrap();
        assert_eq!(again.executed, 0);
        assert_eq!(again.skipped, first.executed);
        assert_eq!(again.manifest.unwrap(), m);

        let dataset = DatasetManifest::read_json(&dir.path().join("t.dataset.json")).unwrap();
        assert_eq!(dataset.entries.len(), 2);
        dataset.validate(dir.path()).unwrap();
    }

    #[test]
    fn interrupted_run_leaves_no_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config("[grid]\nsnr_db = [5, 20]\n");
        let partial = run(&cfg, dir.path(), RunOptions { workers: None, max_tasks: Some(4) }).unwrap();
        assert!(partial.interrupted);
        assert_eq!(partial.executed, 4);
        assert!(partial.manifest.is_none());
        fs::create_dir_all(dir.path().join(TASKS_DIR).join("junk.tmp")).unwrap();

        let resumed = run(&cfg, dir.path(), RunOptions::default()).unwrap();
        assert_eq!(resumed.skipped, 4);
        assert_eq!(resumed.executed, 15 - 4);
        assert!(!dir.path().join(TASKS_DIR).join("junk.tmp").exists());
    }

    #[test]
    fn in_memory_iq_matches_structure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config("");
        cfg.run.persist_iq = false;
        let summary = run(&cfg, dir.path(), RunOptions::default()).unwrap();
        let m = summary.manifest.unwrap();
        assert_eq!(m.failed_chains(), 0);
        let files: Vec<&str> = m.tasks.iter().flat_map(|t| t.artifacts.iter().map(|a| a.path.as_str())).collect();
        assert!(files.iter().all(|f| !f.ends_with(".iq")));
        assert!(!dir.path().join("t.dataset.json").exists());
    }
}
