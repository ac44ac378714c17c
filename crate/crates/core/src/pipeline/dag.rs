//! Content-addressed task graphs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::grid::{stage_params, ParameterGrid, Params, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Synth,
    Impair,
    Record,
    Spectrogram,
    Label,
    Detect,
    Extract,
    Eval,
}

impl TaskKind {
    /// Chain order.
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Synth,
        TaskKind::Impair,
        TaskKind::Record,
        TaskKind::Spectrogram,
        TaskKind::Label,
        TaskKind::Detect,
        TaskKind::Extract,
        TaskKind::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Synth => "synth",
            TaskKind::Impair => "impair",
            TaskKind::Record => "record",
            TaskKind::Spectrogram => "spectrogram",
            TaskKind::Label => "label",
            TaskKind::Detect => "detect",
            TaskKind::Extract => "extract",
            TaskKind::Eval => "eval",
        }
    }

    fn stage(self) -> Option<Stage> {
        match self {
            TaskKind::Synth => Some(Stage::Synth),
            TaskKind::Impair => Some(Stage::Impair),
            TaskKind::Detect => Some(Stage::Detect),
            TaskKind::Eval => Some(Stage::Eval),
            _ => None,
        }
    }

    /// Configuration sections that influence this task's output.
    fn config_section(self, cfg: &PipelineConfig) -> Value {
        match self {
            TaskKind::Synth => json!({
                "scene": cfg.scene,
                "preamble": cfg.preamble,
                "seed": cfg.run.seed,
                "persist_iq": cfg.run.persist_iq,
            }),
            TaskKind::Impair => json!({ "channel": cfg.channel, "persist_iq": cfg.run.persist_iq }),
            TaskKind::Record => json!({
                "sync": cfg.sync,
                "max_retries": cfg.run.max_retries,
                "persist_iq": cfg.run.persist_iq,
            }),
            TaskKind::Spectrogram => json!({ "stft": cfg.stft, "image": cfg.image }),
            TaskKind::Detect => json!({ "detector": cfg.detector }),
            TaskKind::Eval => json!({ "eval": cfg.eval }),
            TaskKind::Label | TaskKind::Extract => json!({}),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: String,
    pub kind: TaskKind,
    pub params: Params,
    pub config: Value,
    pub inputs: Vec<String>,
}

impl TaskNode {
    fn new(kind: TaskKind, params: Params, config: Value, inputs: Vec<String>) -> Self {
        let body = json!({
            "kind": kind,
            "params": params,
            "config": config,
            "inputs": inputs,
        });
        let digest = Sha256::digest(body.to_string().as_bytes());
        Self {
            id: hex::encode(&digest[..8]),
            kind,
            params,
            config,
            inputs,
        }
    }

    /// Deterministic 64-bit seed derived from the id and a stream label.
    pub fn seed(&self, stream: u64) -> u64 {
        seed_from(&self.id, stream)
    }
}

pub fn seed_from(id: &str, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    h.update(stream.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// One grid point's path from synthesis to evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub point: Params,
    /// Task ids in [`TaskKind::ALL`] order.
    pub tasks: Vec<String>,
}

impl Chain {
    pub fn task(&self, kind: TaskKind) -> &str {
        let i = TaskKind::ALL.iter().position(|k| *k == kind).expect("known kind");
        &self.tasks[i]
    }

    pub fn leaf(&self) -> &str {
        self.tasks.last().expect("non-empty chain")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskDag {
    pub nodes: BTreeMap<String, TaskNode>,
    pub chains: Vec<Chain>,
}

impl TaskDag {
    /// One chain per grid point; chains whose upstream parameters coincide
    /// share those tasks.
    pub fn expand(grid: &ParameterGrid, cfg: &PipelineConfig) -> Result<Self> {
        let mut dag = TaskDag::default();
        for point in grid.points() {
            let mut parent: Option<String> = None;
            let mut tasks = Vec::with_capacity(TaskKind::ALL.len());
            for kind in TaskKind::ALL {
                let params = kind.stage().map(|s| stage_params(&point, s)).unwrap_or_default();
                let node = TaskNode::new(kind, params, kind.config_section(cfg), parent.iter().cloned().collect());
                parent = Some(node.id.clone());
                tasks.push(node.id.clone());
                dag.nodes.entry(node.id.clone()).or_insert(node);
            }
            dag.chains.push(Chain { point, tasks });
        }
        if dag.chains.len() != grid.len() {
            return Err(Error::Dag(format!(
                "expanded {} chains for a grid of {} points",
                dag.chains.len(),
                grid.len()
            )));
        }
        dag.levels()?;
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TaskNode> {
        self.nodes.get(id)
    }

    /// Tasks grouped by depth; each group's inputs all lie in earlier groups.
    /// Ids within a group are sorted.
    pub fn levels(&self) -> Result<Vec<Vec<String>>> {
        let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
        let mut remaining: Vec<&TaskNode> = self.nodes.values().collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            remaining.retain(|n| {
                let mut d = 0;
                for input in &n.inputs {
                    match depth.get(input.as_str()) {
                        Some(p) => d = d.max(p + 1),
                        None => return true,
                    }
                }
                depth.insert(&n.id, d);
                false
            });
            if remaining.len() == before {
                return Err(Error::Dag(format!(
                    "{} tasks have missing or cyclic inputs",
                    remaining.len()
                )));
            }
        }
        let mut levels: Vec<Vec<String>> = Vec::new();
        for (id, d) in depth {
            if levels.len() <= d {
                levels.resize(d + 1, Vec::new());
            }
            levels[d].push(id.to_string());
        }
        Ok(levels)
    }

    /// Every ancestor of `id` (inclusive), keyed by kind.
    pub fn lineage(&self, id: &str) -> BTreeMap<TaskKind, &TaskNode> {
        let mut out = BTreeMap::new();
        let mut cur = self.nodes.get(id);
        while let Some(node) = cur {
            out.insert(node.kind, node);
            cur = node.inputs.first().and_then(|p| self.nodes.get(p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag_for(toml_grid: &str, extra: &str) -> TaskDag {
        let cfg = PipelineConfig::from_toml(&format!("[grid]\n{toml_grid}\n{extra}")).unwrap();
        TaskDag::expand(&ParameterGrid::new(&cfg.grid).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn leaves_match_grid_and_synth_is_shared() {
        let dag = dag_for("snr_db = [0, 10]\nbandwidth_hz = [10e6, 20e6]", "");
        assert_eq!(dag.chains.len(), 4);
        let synths: std::collections::BTreeSet<_> =
            dag.chains.iter().map(|c| c.task(TaskKind::Synth)).collect();
        assert_eq!(synths.len(), 2);
        let leaves: std::collections::BTreeSet<_> = dag.chains.iter().map(|c| c.leaf()).collect();
        assert_eq!(leaves.len(), 4);
        // 2 synth + 4 of every later kind.
        assert_eq!(dag.len(), 2 + 4 * 7);
    }

    #[test]
    fn downstream_only_grid_axes_share_upstream_tasks() {
        let dag = dag_for("threshold_db = [1, 2, 3]", "");
        let record: std::collections::BTreeSet<_> =
            dag.chains.iter().map(|c| c.task(TaskKind::Record)).collect();
        assert_eq!(record.len(), 1);
        assert_eq!(dag.len(), 5 + 3 * 3);
    }

    #[test]
    fn ids_are_stable() {
        let a = dag_for("snr_db = [0, 10]", "");
        let b = dag_for("snr_db = [0.0, 10.0]", "");
        assert_eq!(a, b);
    }

    #[test]
    fn upstream_change_propagates_downstream_only() {
        let a = dag_for("snr_db = [0]", "");
        let b = dag_for("snr_db = [1]", "");
        let (ca, cb) = (&a.chains[0], &b.chains[0]);
        assert_eq!(ca.task(TaskKind::Synth), cb.task(TaskKind::Synth));
        for kind in &TaskKind::ALL[1..] {
            assert_ne!(ca.task(*kind), cb.task(*kind), "{kind}");
        }

        let c = dag_for("snr_db = [0]", "[stft]\nfft_size = 64\nhop = 640");
        let cc = &c.chains[0];
        for kind in &TaskKind::ALL[..3] {
            assert_eq!(ca.task(*kind), cc.task(*kind));
        }
        for kind in &TaskKind::ALL[3..] {
            assert_ne!(ca.task(*kind), cc.task(*kind));
        }
    }

    #[test]
    fn levels_follow_chain_order() {
        let dag = dag_for("snr_db = [0, 10]", "");
        let levels = dag.levels().unwrap();
        assert_eq!(levels.len(), 8);
        assert_eq!(levels[0].len(), 1);
        for (i, level) in levels.iter().enumerate() {
            for id in level {
                assert_eq!(dag.nodes[id].kind, TaskKind::ALL[i]);
            }
        }
        let lineage = dag.lineage(dag.chains[1].leaf());
        assert_eq!(lineage.len(), 8);
        assert_eq!(lineage[&TaskKind::Synth].id, dag.chains[1].task(TaskKind::Synth));
    }

    #[test]
    fn seeds_differ_by_stream() {
        assert_ne!(seed_from("abc", 0), seed_from("abc", 1));
        assert_eq!(seed_from("abc", 0), seed_from("abc", 0));
    }
}
