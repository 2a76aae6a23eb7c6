//! Scripted operator actions.
//!
//! A scenario file is JSON:
//!
//! ```json
//! {"name": "demo", "steps": [
//!   {"op": "create", "kind": "Deployment", "name": "web", "replicas": 2},
//!   {"op": "wait_ready"},
//!   {"op": "create", "kind": "Service", "name": "web", "selector": "web"},
//!   {"op": "scale", "name": "web", "replicas": 4, "traced": false},
//!   {"op": "wait_ready"}
//! ]}
//! ```
//!
//! `traced` defaults to true. A Deployment's Pod label is its name; a
//! Service's selector defaults to its name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::{SimObject, Spec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CreateKind {
    Deployment,
    Service,
}

fn traced_by_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Create {
        kind: CreateKind,
        name: String,
        #[serde(default)]
        replicas: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selector: Option<String>,
        #[serde(default = "traced_by_default")]
        traced: bool,
    },
    Scale {
        name: String,
        replicas: u32,
        #[serde(default = "traced_by_default")]
        traced: bool,
    },
    WaitReady,
}

impl Step {
    pub fn create_deployment(name: &str, replicas: u32) -> Self {
        Step::Create {
            kind: CreateKind::Deployment,
            name: name.into(),
            replicas,
            selector: None,
            traced: true,
        }
    }

    pub fn create_service(name: &str) -> Self {
        Step::Create {
            kind: CreateKind::Service,
            name: name.into(),
            replicas: 0,
            selector: None,
            traced: true,
        }
    }

    pub fn scale(name: &str, replicas: u32) -> Self {
        Step::Scale {
            name: name.into(),
            replicas,
            traced: true,
        }
    }

    /// The object a `Create` step submits.
    pub fn object(&self) -> Option<SimObject> {
        match self {
            Step::Create {
                kind: CreateKind::Deployment,
                name,
                replicas,
                ..
            } => Some(SimObject::new(
                name.clone(),
                Spec::Deployment {
                    replicas: *replicas,
                    label: name.clone(),
                },
            )),
            Step::Create {
                kind: CreateKind::Service,
                name,
                selector,
                ..
            } => Some(SimObject::new(
                name.clone(),
                Spec::Service {
                    selector: selector.clone().unwrap_or_else(|| name.clone()),
                },
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?} (built-in: {list})", list = BUILTIN.join(", "))]
    Unknown(String),
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario file: {0}")]
    Parse(#[from] serde_json::Error),
}

pub const BUILTIN: &[&str] = &[
    "fig5-service",
    "scale-up",
    "n-sweep-step",
    "repeated-update",
];

/// Deployments in the sweep scenario.
pub const SWEEP_DEPLOYMENTS: usize = 5;
/// Replica counts the sweep scenario cycles through after creation at 1.
pub const SWEEP_UPDATES: [u32; 7] = [3, 1, 3, 1, 3, 1, 3];

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let steps = match name {
            // A traced Deployment, then a traced Service selecting its Pods.
            "fig5-service" => vec![
                Step::create_deployment("web", 2),
                Step::WaitReady,
                Step::create_service("web"),
                Step::WaitReady,
            ],
            "scale-up" => {
                let mut steps = vec![Step::create_deployment("web", 10), Step::WaitReady];
                for r in [20, 30, 40, 50] {
                    steps.push(Step::scale("web", r));
                    steps.push(Step::WaitReady);
                }
                steps
            }
            "n-sweep-step" => {
                let names: Vec<String> =
                    (0..SWEEP_DEPLOYMENTS).map(|i| format!("app-{i}")).collect();
                let mut steps: Vec<Step> = names
                    .iter()
                    .map(|n| Step::create_deployment(n, 1))
                    .collect();
                steps.push(Step::WaitReady);
                for r in SWEEP_UPDATES {
                    steps.extend(names.iter().map(|n| Step::scale(n, r)));
                    steps.push(Step::WaitReady);
                }
                steps
            }
            // Two updates land before the controllers catch up.
            "repeated-update" => vec![
                Step::create_deployment("web", 3),
                Step::WaitReady,
                Step::scale("web", 2),
                Step::scale("web", 1),
                Step::WaitReady,
            ],
            other => return Err(ScenarioError::Unknown(other.to_string())),
        };
        Ok(Scenario {
            name: name.to_string(),
            steps,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// A built-in name, or else a path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        if BUILTIN.contains(&name_or_path) {
            return Self::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::from_json(&std::fs::read_to_string(path)?);
        }
        Err(ScenarioError::Unknown(name_or_path.to_string()))
    }

    /// Operator actions that mint a root CPID.
    pub fn traced_actions(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| {
                matches!(
                    s,
                    Step::Create { traced: true, .. } | Step::Scale { traced: true, .. }
                )
            })
            .count()
    }
}
