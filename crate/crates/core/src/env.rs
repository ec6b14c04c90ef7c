//! Built-in RiverSwim instance and the JSON MDP file format
//! `{ "S", "A", "kernel": [[[..]]], "rewards": [[..]], "gamma" }`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmc::{RewardTable, StateActionSpace, TransitionKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    pub name: String,
    pub kernel: TransitionKernel,
    pub rewards: RewardTable,
}

impl MdpInstance {
    pub fn space(&self) -> StateActionSpace {
        self.kernel.space()
    }

    pub fn to_file(&self) -> MdpFile {
        let space = self.space();
        MdpFile {
            states: space.states,
            actions: space.actions,
            kernel: self.kernel.to_nested(),
            rewards: self.rewards.to_rows(),
            gamma: self.rewards.gamma(),
            name: Some(self.name.clone()),
        }
    }
}

/// On-disk MDP description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation { location: location.into(), message: message.into() }
}

impl MdpFile {
    pub fn validate(&self, default_name: &str) -> Result<MdpInstance> {
        let (s, a) = (self.states, self.actions);
        if s == 0 || a == 0 {
            return Err(invalid("S/A", "S and A must be positive"));
        }
        if self.kernel.len() != s {
            return Err(invalid("kernel", format!("expected {s} states, found {}", self.kernel.len())));
        }
        for (i, per_action) in self.kernel.iter().enumerate() {
            if per_action.len() != a {
                return Err(invalid(format!("kernel[{i}]"), format!("expected {a} actions")));
            }
            if let Some(j) = per_action.iter().position(|row| row.len() != s) {
                return Err(invalid(format!("kernel[{i}][{j}]"), format!("expected {s} entries")));
            }
        }
        if self.rewards.len() != s || self.rewards.iter().any(|r| r.len() != a) {
            return Err(invalid("rewards", format!("expected an {s}x{a} table")));
        }
        let kernel = TransitionKernel::from_nested(&self.kernel).map_err(|e| match e {
            Error::NegativeEntry { location, value } => {
                invalid(location, format!("probability {value} outside [0, 1]"))
            }
            Error::RowSum { s, a, residual } => {
                invalid(format!("kernel[{s}][{a}]"), format!("row sums to 1 {residual:+e}"))
            }
            other => other,
        })?;
        let rewards = RewardTable::from_rows(&self.rewards, self.gamma)?;
        Ok(MdpInstance { name: self.name.clone().unwrap_or_else(|| default_name.to_string()), kernel, rewards })
    }
}

/// RiverSwim with six states (0 = leftmost) and two actions (0 = left,
/// 1 = right), discount 0.95.
pub fn riverswim() -> MdpInstance {
    const S: usize = 6;
    let mut kernel = vec![vec![vec![0.0; S]; 2]; S];
    for s in 0..S {
        kernel[s][0][s.saturating_sub(1)] = 1.0;
    }
    kernel[0][1][0] = 0.7;
    kernel[0][1][1] = 0.3;
    for s in 1..S - 1 {
        kernel[s][1][s - 1] = 0.1;
        kernel[s][1][s] = 0.6;
        kernel[s][1][s + 1] = 0.3;
    }
    kernel[S - 1][1][S - 2] = 0.7;
    kernel[S - 1][1][S - 1] = 0.3;

    let mut rewards = vec![vec![0.0; 2]; S];
    rewards[0][0] = 1.0;
    rewards[S - 1][1] = 10.0;

    MdpInstance {
        name: "riverswim".into(),
        kernel: TransitionKernel::from_nested(&kernel).expect("riverswim kernel is stochastic"),
        rewards: RewardTable::from_rows(&rewards, 0.95).expect("riverswim rewards are valid"),
    }
}

/// Looks up a built-in environment by name.
pub fn builtin(name: &str) -> Option<MdpInstance> {
    match name {
        "riverswim" => Some(riverswim()),
        _ => None,
    }
}

pub fn parse_mdp(text: &str, origin: &Path) -> Result<MdpInstance> {
    let file: MdpFile =
        serde_json::from_str(text).map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
    let stem = origin.file_stem().and_then(|s| s.to_str()).unwrap_or("mdp");
    file.validate(stem)
}

pub fn load_mdp(path: &Path) -> Result<MdpInstance> {
    parse_mdp(&std::fs::read_to_string(path)?, path)
}

pub fn save_mdp(mdp: &MdpInstance, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(mdp)?)?;
    Ok(())
}

pub fn to_json(mdp: &MdpInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&mdp.to_file())?)
}

/// A built-in name or a path to a JSON file.
pub fn resolve_mdp(spec: &str) -> Result<MdpInstance> {
    match builtin(spec) {
        Some(mdp) => Ok(mdp),
        None => load_mdp(Path::new(spec)),
    }
}
