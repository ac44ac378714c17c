//! Parameter grids and their expansion into grid points.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};

/// Pipeline stage a grid parameter feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Impair,
    Detect,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Number,
    Integer,
    Text,
}

/// Recognised grid keys, the stage that consumes each, and its value type.
pub const GRID_KEYS: &[(&str, Stage)] = &[
    ("scene", Stage::Synth),
    ("replicate", Stage::Synth),
    ("bandwidth_hz", Stage::Synth),
    ("frame_duration_s", Stage::Synth),
    ("frame_interval_s", Stage::Synth),
    ("f_center_hz", Stage::Synth),
    ("interferer_snr_db", Stage::Synth),
    ("snr_db", Stage::Impair),
    ("cfo_hz", Stage::Impair),
    ("gain_db", Stage::Impair),
    ("threshold_db", Stage::Detect),
    ("iou_threshold", Stage::Eval),
];

fn kind_of(key: &str) -> ValueKind {
    match key {
        "scene" => ValueKind::Text,
        "replicate" => ValueKind::Integer,
        _ => ValueKind::Number,
    }
}

pub fn stage_of(key: &str) -> Option<Stage> {
    GRID_KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

/// Values of one grid point, keyed by parameter name.
pub type Params = BTreeMap<String, Value>;

/// Brings a value into canonical form so equal parameters hash equally:
/// numbers become `f64` (`0` and `0.0` are the same point), replicates
/// become unsigned integers.
fn normalise(key: &str, v: &Value) -> Result<Value> {
    let bad = || Error::Config(format!("grid `{key}`: unsupported value {v}"));
    match kind_of(key) {
        ValueKind::Text => v.as_str().map(|s| Value::from(s.to_ascii_lowercase())).ok_or_else(bad),
        ValueKind::Integer => v.as_u64().map(Value::from).ok_or_else(bad),
        ValueKind::Number => {
            let x = v.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?;
            Ok(Value::from(x))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterGrid {
    axes: BTreeMap<String, Vec<Value>>,
}

impl ParameterGrid {
    pub fn new(raw: &BTreeMap<String, Vec<Value>>) -> Result<Self> {
        let mut axes = BTreeMap::new();
        for (key, values) in raw {
            if stage_of(key).is_none() {
                return Err(Error::UnknownParameter(key.clone()));
            }
            if values.is_empty() {
                return Err(Error::EmptyAxis(key.clone()));
            }
            let values = values.iter().map(|v| normalise(key, v)).collect::<Result<Vec<_>>>()?;
            axes.insert(key.clone(), values);
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &BTreeMap<String, Vec<Value>> {
        &self.axes
    }

    /// Number of grid points: the product of the axis lengths.
    pub fn len(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination of axis values, last axis varying fastest.
    pub fn points(&self) -> Vec<Params> {
        let mut out = vec![Params::new()];
        for (key, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(key.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// The subset of `params` consumed by `stage`.
pub fn stage_params(params: &Params, stage: Stage) -> Params {
    params
        .iter()
        .filter(|(k, _)| stage_of(k) == Some(stage))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

pub fn get_f64(params: &Params, key: &str) -> Option<f64> {
    params.get(key).and_then(Value::as_f64)
}
