//! Supervisor configuration.
//!
//! One `[[process]]` table per process:
//!
//! ```toml
//! [[process]]
//! name = "hal"
//! command = ["/usr/bin/hal", "--cycle-ms", "10"]
//! depends_on = ["power"]
//! ready_pattern = "link configured"
//! error_pattern = "^ERROR"          # optional
//! start_timeout_ms = 5000           # optional, default 10000
//! [process.env]                     # optional; nothing is inherited
//! PATH = "/usr/bin:/bin"
//! ```

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::time::Duration;

use regex::Regex;
use serde::Deserialize;

use super::ProcmanError;

#[derive(Debug, Clone)]
pub struct ProcessSpec {
    pub name: String,
    pub command: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub depends_on: Vec<String>,
    pub ready_pattern: Regex,
    pub error_pattern: Option<Regex>,
    pub start_timeout: Duration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcess {
    name: String,
    command: Vec<String>,
    #[serde(default)]
    env: BTreeMap<String, String>,
    #[serde(default)]
    depends_on: Vec<String>,
    ready_pattern: String,
    error_pattern: Option<String>,
    start_timeout_ms: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    process: Vec<RawProcess>,
}

/// Validated process set with a dependency-respecting start order.
#[derive(Debug, Clone)]
pub struct ProcessGraph {
    specs: Vec<ProcessSpec>,
    index: HashMap<String, usize>,
    order: Vec<String>,
}

impl ProcessGraph {
    pub fn new(specs: Vec<ProcessSpec>) -> Result<Self, ProcmanError> {
        let mut index = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.name.is_empty() {
                return Err(ProcmanError::Parse("empty process name".into()));
            }
            if s.command.is_empty() {
                return Err(ProcmanError::Parse(format!("`{}` has an empty command", s.name)));
            }
            if index.insert(s.name.clone(), i).is_some() {
                return Err(ProcmanError::Parse(format!("duplicate process `{}`", s.name)));
            }
        }
        for s in &specs {
            for d in &s.depends_on {
                if !index.contains_key(d) {
                    return Err(ProcmanError::UnknownDependency {
                        process: s.name.clone(),
                        dependency: d.clone(),
                    });
                }
            }
        }
        // Kahn's algorithm; ties resolved by declaration order.
        let mut indegree: Vec<usize> = specs.iter().map(|s| s.depends_on.len()).collect();
        let mut ready: VecDeque<usize> = (0..specs.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(specs.len());
        while let Some(i) = ready.pop_front() {
            order.push(specs[i].name.clone());
            for (j, s) in specs.iter().enumerate() {
                let hits = s.depends_on.iter().filter(|d| **d == specs[i].name).count();
                if hits > 0 {
                    indegree[j] -= hits;
                    if indegree[j] == 0 {
                        ready.push_back(j);
                    }
                }
            }
        }
        if order.len() != specs.len() {
            let stuck = specs
                .iter()
                .find(|s| !order.contains(&s.name))
                .map(|s| s.name.clone())
                .unwrap_or_default();
            return Err(ProcmanError::Cycle(stuck));
        }
        Ok(Self { specs, index, order })
    }

    pub fn specs(&self) -> &[ProcessSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ProcessSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// `name` plus every process that transitively depends on it.
    pub fn dependents_closure(&self, name: &str) -> HashSet<String> {
        let mut out = HashSet::from([name.to_string()]);
        // order is topological, so one forward pass suffices
        for n in &self.order {
            let spec = self.spec(n).unwrap();
            if spec.depends_on.iter().any(|d| out.contains(d)) {
                out.insert(n.clone());
            }
        }
        out
    }
}

fn compile(name: &str, pattern: &str) -> Result<Regex, ProcmanError> {
    Regex::new(pattern).map_err(|e| ProcmanError::Parse(format!("`{name}`: bad pattern: {e}")))
}

pub fn load_config(text: &str) -> Result<ProcessGraph, ProcmanError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ProcmanError::Parse(e.to_string()))?;
    let specs = raw
        .process
        .into_iter()
        .map(|p| {
            Ok(ProcessSpec {
                ready_pattern: compile(&p.name, &p.ready_pattern)?,
                error_pattern: p
                    .error_pattern
                    .as_deref()
                    .map(|e| compile(&p.name, e))
                    .transpose()?,
                start_timeout: Duration::from_millis(p.start_timeout_ms.unwrap_or(10_000)),
                name: p.name,
                command: p.command,
                env: p.env,
                depends_on: p.depends_on,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ProcessGraph::new(specs)
}
