//! Goal model of the safety rule: softgoals, goals and tasks linked by
//! AND/XOR decompositions and weighted contributions. XOR groups over
//! parameter-binding tasks define the design alternatives.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::SafetyRuleParams;

pub const DEFAULT_GOAL_MODEL: &str = include_str!("../data/goal_model.toml");
const GOAL_MODEL_VERSION: u32 = 1;
const RULE_PARAMS: [&str; 3] = ["stop_radius_x", "slow_radius_y", "slow_factor"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GoalError {
    #[error("goal model parse error: {0}")]
    Parse(String),
    #[error("invalid goal model: {0}")]
    Validation(String),
    #[error("no value for metric `{0}`")]
    MissingMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Softgoal,
    Goal,
    Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub label: String,
    /// Rule parameters this task fixes when it is part of the chosen design.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Name of the metric whose value this leaf takes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionKind {
    And,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub parent: String,
    pub kind: DecompositionKind,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GoalDoc {
    version: u32,
    #[serde(default)]
    defaults: BTreeMap<String, f64>,
    #[serde(rename = "node", default)]
    nodes: Vec<GoalNode>,
    #[serde(rename = "decomposition", default)]
    decompositions: Vec<Decomposition>,
    #[serde(rename = "contribution", default)]
    contributions: Vec<Contribution>,
}

/// A validated goal model. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoalDoc", into = "GoalDoc")]
pub struct GoalModel {
    pub defaults: BTreeMap<String, f64>,
    pub nodes: Vec<GoalNode>,
    pub decompositions: Vec<Decomposition>,
    pub contributions: Vec<Contribution>,
    index: HashMap<String, usize>,
    /// Node indices, sources and children before the nodes they feed.
    order: Vec<usize>,
}

impl From<GoalModel> for GoalDoc {
    fn from(m: GoalModel) -> Self {
        GoalDoc {
            version: GOAL_MODEL_VERSION,
            defaults: m.defaults,
            nodes: m.nodes,
            decompositions: m.decompositions,
            contributions: m.contributions,
        }
    }
}

impl TryFrom<GoalDoc> for GoalModel {
    type Error = GoalError;

    fn try_from(doc: GoalDoc) -> Result<Self, GoalError> {
        if doc.version != GOAL_MODEL_VERSION {
            return Err(GoalError::Validation(format!("unsupported version {}", doc.version)));
        }
        GoalModel::new(doc.defaults, doc.nodes, doc.decompositions, doc.contributions)
    }
}

/// One XOR choice per group, resolved to concrete rule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAlternative {
    pub id: usize,
    pub label: String,
    /// `(xor parent, chosen child)` in group order.
    pub selections: Vec<(String, String)>,
    pub resolved_params: SafetyRuleParams,
}

impl DesignAlternative {
    /// An alternative outside any goal model, e.g. an ad-hoc sweep candidate.
    pub fn from_rule(id: usize, label: impl Into<String>, rule: SafetyRuleParams) -> Self {
        Self { id, label: label.into(), selections: Vec::new(), resolved_params: rule }
    }

    pub fn y(&self) -> f64 {
        self.resolved_params.slow_radius_y
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, GoalError> {
    Err(GoalError::Validation(msg.into()))
}

impl GoalModel {
    pub fn new(
        defaults: BTreeMap<String, f64>,
        nodes: Vec<GoalNode>,
        decompositions: Vec<Decomposition>,
        contributions: Vec<Contribution>,
    ) -> Result<Self, GoalError> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return invalid(format!("duplicate node `{}`", n.id));
            }
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| GoalError::Validation(format!("unknown node `{id}`")));

        for name in defaults.keys() {
            if !RULE_PARAMS.contains(&name.as_str()) {
                return invalid(format!("unknown rule parameter `{name}` in defaults"));
            }
        }

        let mut decomposed = vec![false; nodes.len()];
        let mut has_parent = vec![false; nodes.len()];
        // Edges point from a node to the nodes whose value depends on it.
        let mut feeds: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for d in &decompositions {
            let p = lookup(&d.parent)?;
            if std::mem::replace(&mut decomposed[p], true) {
                return invalid(format!("`{}` is decomposed more than once", d.parent));
            }
            if d.children.is_empty() {
                return invalid(format!("`{}` has an empty decomposition", d.parent));
            }
            if d.kind == DecompositionKind::Xor && d.children.len() < 2 {
                return invalid(format!("XOR group under `{}` needs at least two children", d.parent));
            }
            for c in &d.children {
                let ci = lookup(c)?;
                if std::mem::replace(&mut has_parent[ci], true) {
                    return invalid(format!("`{c}` appears in more than one decomposition"));
                }
                feeds[ci].push(p);
            }
        }
        for c in &contributions {
            let (f, t) = (lookup(&c.from)?, lookup(&c.to)?);
            if !(-1.0..=1.0).contains(&c.weight) {
                return invalid(format!("contribution {} -> {} has weight {} outside [-1, 1]", c.from, c.to, c.weight));
            }
            feeds[f].push(t);
        }

        for (i, n) in nodes.iter().enumerate() {
            let leaf = !decomposed[i];
            if !n.params.is_empty() && !(leaf && n.kind == NodeKind::Task) {
                return invalid(format!("`{}` binds parameters but is not a task leaf", n.id));
            }
            if n.metric.is_some() && !leaf {
                return invalid(format!("`{}` binds a metric but is decomposed", n.id));
            }
            if leaf && n.params.is_empty() && n.metric.is_none() {
                return invalid(format!("leaf `{}` has neither a metric nor a parameter binding", n.id));
            }
            for name in n.params.keys() {
                if !RULE_PARAMS.contains(&name.as_str()) {
                    return invalid(format!("unknown rule parameter `{name}` on `{}`", n.id));
                }
            }
        }

        let order = topological_order(&feeds).ok_or_else(|| GoalError::Validation("goal model has a cycle".into()))?;
        let model = Self { defaults, nodes, decompositions, contributions, index, order };
        for alt in model.enumerate_raw() {
            alt?;
        }
        Ok(model)
    }

    pub fn builtin_default() -> Self {
        Self::parse(DEFAULT_GOAL_MODEL).expect("bundled goal model is valid")
    }

    pub fn parse(text: &str) -> Result<Self, GoalError> {
        let doc: GoalDoc = toml::from_str(text).map_err(|e| {
            // Validation failures surface through `try_from` as custom serde errors.
            let msg = e.message().to_owned();
            if msg.starts_with("invalid goal model") {
                GoalError::Validation(msg.trim_start_matches("invalid goal model: ").to_owned())
            } else {
                GoalError::Parse(e.to_string())
            }
        })?;
        GoalModel::try_from(doc)
    }

    pub fn load(path: &Path) -> Result<Self, GoalError> {
        let text = std::fs::read_to_string(path).map_err(|e| GoalError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&GoalDoc::from(self.clone())).expect("goal model serializes")
    }

    pub fn node(&self, id: &str) -> Option<&GoalNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn xor_groups(&self) -> impl Iterator<Item = &Decomposition> {
        self.decompositions.iter().filter(|d| d.kind == DecompositionKind::Xor)
    }

    pub fn and_groups(&self) -> impl Iterator<Item = &Decomposition> {
        self.decompositions.iter().filter(|d| d.kind == DecompositionKind::And && d.children.len() >= 2)
    }

    /// Every combination of XOR choices, first group varying slowest.
    pub fn enumerate_alternatives(&self) -> Vec<DesignAlternative> {
        self.enumerate_raw().map(|a| a.expect("validated at load")).collect()
    }

    fn enumerate_raw(&self) -> impl Iterator<Item = Result<DesignAlternative, GoalError>> + '_ {
        let groups: Vec<&Decomposition> = self.xor_groups().collect();
        let total: usize = groups.iter().map(|g| g.children.len()).product();
        (0..total).map(move |id| {
            let mut rem = id;
            let mut picks = vec![0; groups.len()];
            for (k, g) in groups.iter().enumerate().rev() {
                picks[k] = rem % g.children.len();
                rem /= g.children.len();
            }
            let selections: Vec<(String, String)> =
                groups.iter().zip(&picks).map(|(g, &p)| (g.parent.clone(), g.children[p].clone())).collect();
            self.resolve(id, selections)
        })
    }

    fn resolve(&self, id: usize, selections: Vec<(String, String)>) -> Result<DesignAlternative, GoalError> {
        let active = self.active_nodes(&selections);
        let mut params = self.defaults.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            if active[i] {
                params.extend(n.params.iter().map(|(k, v)| (k.clone(), *v)));
            }
        }
        let get = |k: &str| {
            params.get(k).copied().ok_or_else(|| GoalError::Validation(format!("no value for rule parameter `{k}`")))
        };
        let rule = SafetyRuleParams::new(get("stop_radius_x")?, get("slow_radius_y")?, get("slow_factor")?)
            .map_err(|e| GoalError::Validation(format!("alternative {id}: {e}")))?;
        let label = if selections.is_empty() {
            "baseline".to_owned()
        } else {
            selections
                .iter()
                .map(|(_, c)| self.node(c).map_or(c.as_str(), |n| if n.label.is_empty() { &n.id } else { &n.label }))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Ok(DesignAlternative { id, label, selections, resolved_params: rule })
    }

    /// Nodes not hidden below an unchosen XOR branch.
    fn active_nodes(&self, selections: &[(String, String)]) -> Vec<bool> {
        let mut active = vec![true; self.nodes.len()];
        let mut stack: Vec<usize> = Vec::new();
        for g in self.xor_groups() {
            let chosen = selections.iter().find(|(p, _)| *p == g.parent).map(|(_, c)| c.as_str());
            stack.extend(g.children.iter().filter(|c| Some(c.as_str()) != chosen).map(|c| self.index[c]));
        }
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut active[i], false) {
                if let Some(d) = self.decompositions.iter().find(|d| d.parent == self.nodes[i].id) {
                    stack.extend(d.children.iter().map(|c| self.index[c]));
                }
            }
        }
        active
    }

    /// Satisfaction of every node in `[0, 1]`.
    ///
    /// Metric leaves take their metric value and parameter leaves count as
    /// satisfied. AND takes the minimum of its children and XOR the chosen
    /// child (the first one when `alternative` is `None`). Contributions then
    /// add `weight x source` and the result is clamped.
    pub fn evaluate(
        &self,
        metric_values: &BTreeMap<String, f64>,
        alternative: Option<&DesignAlternative>,
    ) -> Result<BTreeMap<String, f64>, GoalError> {
        let mut value = vec![0.0; self.nodes.len()];
        for &i in &self.order {
            let n = &self.nodes[i];
            let base = match self.decompositions.iter().find(|d| d.parent == n.id) {
                Some(d) => match d.kind {
                    DecompositionKind::And => {
                        d.children.iter().map(|c| value[self.index[c]]).fold(f64::INFINITY, f64::min)
                    }
                    DecompositionKind::Xor => {
                        let chosen = alternative
                            .and_then(|a| a.selections.iter().find(|(p, _)| *p == n.id))
                            .map_or(&d.children[0], |(_, c)| c);
                        value[self.index[chosen]]
                    }
                },
                None => match &n.metric {
                    Some(m) => *metric_values.get(m).ok_or_else(|| GoalError::MissingMetric(m.clone()))?,
                    None => 1.0,
                },
            };
            let boost: f64 = self
                .contributions
                .iter()
                .filter(|c| c.to == n.id)
                .map(|c| c.weight * value[self.index[&c.from]])
                .sum();
            value[i] = (base + boost).clamp(0.0, 1.0);
        }
        Ok(self.nodes.iter().map(|n| n.id.clone()).zip(value).collect())
    }
}

pub fn load_goal_model(text: &str) -> Result<GoalModel, GoalError> {
    GoalModel::parse(text)
}

pub fn enumerate_alternatives(model: &GoalModel) -> Vec<DesignAlternative> {
    model.enumerate_alternatives()
}

pub fn evaluate_satisfaction(
    model: &GoalModel,
    metric_values: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, GoalError> {
    model.evaluate(metric_values, None)
}

/// Kahn's algorithm; `None` if the graph has a cycle.
fn topological_order(feeds: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = feeds.len();
    let mut indeg = vec![0usize; n];
    for outs in feeds {
        for &t in outs {
            indeg[t] += 1;
        }
    }
    let mut ready: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_front() {
        order.push(i);
        for &t in &feeds[i] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push_back(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(s: f64, p: f64) -> BTreeMap<String, f64> {
        BTreeMap::from([("safety".to_owned(), s), ("productivity".to_owned(), p)])
    }

    #[test]
    fn bundled_model_shape() {
        let m = GoalModel::builtin_default();
        assert_eq!(m.and_groups().count(), 1);
        assert_eq!(m.xor_groups().count(), 1);
        let alts = m.enumerate_alternatives();
        let ys: Vec<f64> = alts.iter().map(DesignAlternative::y).collect();
        assert_eq!(ys, [1.0, 2.0, 3.0, 4.5, 5.0]);
        assert!(alts.iter().all(|a| a.resolved_params.stop_radius_x == 0.5 && a.resolved_params.slow_factor == 0.5));
        assert_eq!(alts[3].label, "y = 4.5 m");
    }

    #[test]
    fn passthrough_evaluation() {
        let m = GoalModel::builtin_default();
        let v = evaluate_satisfaction(&m, &metrics(0.8, 0.6)).unwrap();
        assert_eq!(v["safety_of_persons"], 0.8);
        assert_eq!(v["increase_productivity"], 0.6);
        assert_eq!(
            evaluate_satisfaction(&m, &BTreeMap::new()),
            Err(GoalError::MissingMetric("safety".into()))
        );
    }

    const SMALL: &str = r#"
version = 1
[defaults]
stop_radius_x = 0.5
slow_radius_y = 5.0
slow_factor = 0.5
[[node]]
id = "top"
kind = "softgoal"
[[node]]
id = "a"
kind = "task"
metric = "a"
[[node]]
id = "b"
kind = "task"
metric = "b"
[[decomposition]]
parent = "top"
kind = "and"
children = ["a", "b"]
"#;

    #[test]
    fn and_is_min_and_contributions_clamp() {
        let m = GoalModel::parse(SMALL).unwrap();
        let vals = BTreeMap::from([("a".to_owned(), 0.9), ("b".to_owned(), 0.4)]);
        assert_eq!(m.evaluate(&vals, None).unwrap()["top"], 0.4);
        assert_eq!(m.enumerate_alternatives().len(), 1);

        let with_link = format!("{SMALL}[[contribution]]\nfrom = \"a\"\nto = \"b\"\nweight = 0.5\n");
        let m = GoalModel::parse(&with_link).unwrap();
        let vals = BTreeMap::from([("a".to_owned(), 1.0), ("b".to_owned(), 0.8)]);
        assert_eq!(m.evaluate(&vals, None).unwrap()["b"], 1.0);
    }

    #[test]
    fn validation_errors() {
        let one_child_xor = SMALL.replace("kind = \"and\"\nchildren = [\"a\", \"b\"]", "kind = \"xor\"\nchildren = [\"a\"]");
        assert!(matches!(GoalModel::parse(&one_child_xor), Err(GoalError::Validation(_))));

        let cycle = format!("{SMALL}[[contribution]]\nfrom = \"top\"\nto = \"a\"\nweight = 0.1\n");
        assert!(matches!(GoalModel::parse(&cycle), Err(GoalError::Validation(m)) if m.contains("cycle")));

        let unbound = SMALL.replace("metric = \"b\"\n", "");
        assert!(matches!(GoalModel::parse(&unbound), Err(GoalError::Validation(_))));

        assert!(matches!(GoalModel::parse("version = "), Err(GoalError::Parse(_))));
    }

    #[test]
    fn product_of_xor_groups() {
        let doc = r#"
version = 1
[defaults]
stop_radius_x = 0.5
slow_radius_y = 5.0
slow_factor = 0.5
[[node]]
id = "g"
kind = "goal"
[[node]]
id = "f"
kind = "task"
[[node]]
id = "r"
kind = "task"
[[node]]
id = "f1"
kind = "task"
params = { slow_factor = 0.3 }
[[node]]
id = "f2"
kind = "task"
params = { slow_factor = 0.6 }
[[node]]
id = "r1"
kind = "task"
params = { slow_radius_y = 1.0 }
[[node]]
id = "r2"
kind = "task"
params = { slow_radius_y = 2.0 }
[[node]]
id = "r3"
kind = "task"
params = { slow_radius_y = 3.0 }
[[decomposition]]
parent = "g"
kind = "and"
children = ["f", "r"]
[[decomposition]]
parent = "f"
kind = "xor"
children = ["f1", "f2"]
[[decomposition]]
parent = "r"
kind = "xor"
children = ["r1", "r2", "r3"]
"#;
        let m = GoalModel::parse(doc).unwrap();
        let alts = m.enumerate_alternatives();
        assert_eq!(alts.len(), 6);
        let pairs: Vec<(f64, f64)> =
            alts.iter().map(|a| (a.resolved_params.slow_factor, a.resolved_params.slow_radius_y)).collect();
        assert_eq!(pairs, [(0.3, 1.0), (0.3, 2.0), (0.3, 3.0), (0.6, 1.0), (0.6, 2.0), (0.6, 3.0)]);
    }

    #[test]
    fn serde_round_trip() {
        let m = GoalModel::builtin_default();
        assert_eq!(GoalModel::parse(&m.to_toml()).unwrap(), m);
    }
}
