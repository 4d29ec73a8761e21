//! Method dependency graphs and generation schedules.
//!
//! Edges are stored as `(dependent, prerequisite)`: `Edge("a", "b")` means
//! method `a` depends on `b`, so `b` must be generated before `a`. This
//! matches the "method -> prerequisite methods" layout of the corpus.

use crate::pysrc::{self, SyntaxError};
use crate::taskmodel::{ClassTask, CONSTRUCTOR};
use rustpython_ast::Visitor;
use rustpython_parser::ast;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

/// `Edge(dependent, prerequisite)`; serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge(pub String, pub String);

impl Edge {
    pub fn new(dependent: impl Into<String>, prerequisite: impl Into<String>) -> Self {
        Edge(dependent.into(), prerequisite.into())
    }

    pub fn dependent(&self) -> &str {
        &self.0
    }

    pub fn prerequisite(&self) -> &str {
        &self.1
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    /// Method names in corpus order; this order breaks scheduling ties.
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("edge {0} references a method outside the graph")]
    UnknownEndpoint(Edge),
    #[error("self-loop on {0}")]
    SelfLoop(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dependency cycle: {}", .cycle.join(" -> "))]
pub struct CycleError {
    /// Methods on the cycle; each depends on the next, the last on the first.
    pub cycle: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schedule is not a permutation of the graph nodes (missing: {missing:?}, extra: {extra:?}, repeated: {repeated:?})")]
pub struct ScheduleContractError {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub repeated: Vec<String>,
}

impl DependencyGraph {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(GraphError::DuplicateNode(n.clone()));
            }
        }
        for e in &edges {
            if e.0 == e.1 {
                return Err(GraphError::SelfLoop(e.0.clone()));
            }
            if !seen.contains(e.0.as_str()) || !seen.contains(e.1.as_str()) {
                return Err(GraphError::UnknownEndpoint(e.clone()));
            }
        }
        let mut edges = edges;
        edges.sort();
        edges.dedup();
        Ok(Self { nodes, edges })
    }

    /// Builds a graph from a `method -> prerequisites` map over `nodes`.
    pub fn from_dep_map<'a, I, S>(nodes: &[String], deps: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (&'a String, S)>,
        S: IntoIterator<Item = &'a String>,
    {
        let edges = deps
            .into_iter()
            .flat_map(|(m, prereqs)| {
                prereqs
                    .into_iter()
                    .map(move |p| Edge::new(m.clone(), p.clone()))
            })
            .collect();
        Self::new(nodes.to_vec(), edges)
    }

    /// Ground-truth graph of a task. Unknown targets and self references
    /// are dropped here; task validation reports them.
    pub fn ground_truth(task: &ClassTask) -> Self {
        let nodes: Vec<String> = task.methods.iter().map(|m| m.name.clone()).collect();
        let known: BTreeSet<&str> = nodes.iter().map(String::as_str).collect();
        let mut edges: Vec<Edge> = task
            .methods
            .iter()
            .flat_map(|m| {
                m.gt_deps
                    .iter()
                    .filter(|d| *d != &m.name && known.contains(d.as_str()))
                    .map(|d| Edge::new(m.name.clone(), d.clone()))
            })
            .collect();
        edges.sort();
        edges.dedup();
        Self { nodes, edges }
    }

    pub fn prerequisites_of(&self, method: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.0 == method)
            .map(|e| e.1.as_str())
            .collect()
    }

    /// Edges `(a, b)` the schedule violates, i.e. `b` placed after `a`.
    /// Empty iff the schedule is a valid topological order.
    pub fn check_schedule(&self, schedule: &Schedule) -> Result<Vec<Edge>, ScheduleContractError> {
        let position = schedule.positions_over(&self.nodes)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| position[e.1.as_str()] > position[e.0.as_str()])
            .cloned()
            .collect())
    }

    /// Prerequisites first; ties broken by node order.
    pub fn topological_order(&self) -> Result<Schedule, CycleError> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let n = self.nodes.len();
        let mut pending = vec![0usize; n];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            let (a, b) = (index[e.0.as_str()], index[e.1.as_str()]);
            pending[a] += 1;
            dependents[b].push(a);
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| pending[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(self.nodes[i].clone());
            for &d in &dependents[i] {
                pending[d] -= 1;
                if pending[d] == 0 {
                    ready.push(Reverse(d));
                }
            }
        }
        if order.len() == n {
            return Ok(Schedule { order });
        }
        Err(CycleError {
            cycle: self.find_cycle(&pending, &index),
        })
    }

    fn find_cycle(&self, pending: &[usize], index: &HashMap<&str, usize>) -> Vec<String> {
        // Every node left with pending > 0 has a prerequisite that is also
        // left, so following prerequisites must revisit a node.
        let mut prereqs: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            prereqs[index[e.0.as_str()]].push(index[e.1.as_str()]);
        }
        let start = pending.iter().position(|&p| p > 0).unwrap_or(0);
        let mut path = vec![start];
        let mut on_path = HashMap::from([(start, 0usize)]);
        let mut cur = start;
        loop {
            let next = prereqs[cur]
                .iter()
                .copied()
                .find(|&p| pending[p] > 0)
                .expect("stuck node has a stuck prerequisite");
            if let Some(&at) = on_path.get(&next) {
                return path[at..].iter().map(|&i| self.nodes[i].clone()).collect();
            }
            on_path.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<String>,
}

impl Schedule {
    pub fn new(order: Vec<String>) -> Self {
        Self { order }
    }

    /// Position of every node, or the permutation contract violation.
    fn positions_over(
        &self,
        nodes: &[String],
    ) -> Result<HashMap<&str, usize>, ScheduleContractError> {
        let mut position = HashMap::new();
        let mut repeated = Vec::new();
        for (i, name) in self.order.iter().enumerate() {
            if position.insert(name.as_str(), i).is_some() {
                repeated.push(name.clone());
            }
        }
        let node_set: BTreeSet<&str> = nodes.iter().map(String::as_str).collect();
        let missing: Vec<String> = nodes
            .iter()
            .filter(|n| !position.contains_key(n.as_str()))
            .cloned()
            .collect();
        let extra: Vec<String> = self
            .order
            .iter()
            .filter(|n| !node_set.contains(n.as_str()))
            .cloned()
            .collect();
        if missing.is_empty() && extra.is_empty() && repeated.is_empty() {
            Ok(position)
        } else {
            Err(ScheduleContractError {
                missing,
                extra,
                repeated,
            })
        }
    }

    pub fn is_permutation_of(&self, nodes: &[String]) -> bool {
        self.positions_over(nodes).is_ok()
    }
}

/// Free-function form of [`DependencyGraph::check_schedule`].
pub fn check_schedule(
    schedule: &Schedule,
    graph: &DependencyGraph,
) -> Result<Vec<Edge>, ScheduleContractError> {
    graph.check_schedule(schedule)
}

pub fn topological_order(graph: &DependencyGraph) -> Result<Schedule, CycleError> {
    graph.topological_order()
}

struct CallCollector<'a> {
    receivers: BTreeSet<String>,
    peers: &'a BTreeSet<String>,
    caller: &'a str,
    found: BTreeSet<String>,
}

impl Visitor for CallCollector<'_> {
    fn visit_expr_call(&mut self, node: ast::ExprCall) {
        if let ast::Expr::Attribute(attr) = node.func.as_ref() {
            if let ast::Expr::Name(recv) = attr.value.as_ref() {
                let callee = attr.attr.as_str();
                if self.receivers.contains(recv.id.as_str())
                    && callee != CONSTRUCTOR
                    && callee != self.caller
                    && self.peers.contains(callee)
                {
                    self.found.insert(callee.to_string());
                }
            }
        }
        self.generic_visit_expr_call(node);
    }
}

fn first_param(args: &ast::Arguments) -> Option<String> {
    args.posonlyargs
        .iter()
        .chain(args.args.iter())
        .next()
        .map(|a| a.def.arg.to_string())
}

/// Peer methods each method of `class_name` calls through its receiver
/// (first parameter, `self`, `cls` or the class name). Aliased receivers
/// are not followed. The constructor is neither a key nor a value.
pub fn extract_static_calls(
    class_source: &str,
    class_name: &str,
    method_names: &BTreeSet<String>,
) -> Result<BTreeMap<String, BTreeSet<String>>, SyntaxError> {
    let suite = pysrc::parse_module(class_source)?;
    let mut out = BTreeMap::new();
    let Some(class) = pysrc::find_class(&suite, class_name) else {
        return Ok(out);
    };
    for stmt in &class.body {
        let (name, args, body) = match stmt {
            ast::Stmt::FunctionDef(f) => (f.name.as_str(), &f.args, &f.body),
            ast::Stmt::AsyncFunctionDef(f) => (f.name.as_str(), &f.args, &f.body),
            _ => continue,
        };
        if name == CONSTRUCTOR || !method_names.contains(name) {
            continue;
        }
        let mut receivers: BTreeSet<String> = ["self", "cls", class_name]
            .iter()
            .map(|s| s.to_string())
            .collect();
        receivers.extend(first_param(args));
        let mut collector = CallCollector {
            receivers,
            peers: method_names,
            caller: name,
            found: BTreeSet::new(),
        };
        for s in body.iter().cloned() {
            collector.visit_stmt(s);
        }
        out.insert(name.to_string(), collector.found);
    }
    Ok(out)
}
