//! Hierarchies as DAGs over a dense vocabulary: ingestion, transitive
//! closure/reduction, train/validation/test splits, synthetic trees and F1.
//!
//! Edge direction is `head -> tail` with the head the more general concept;
//! training pushes `box(tail) ⊆ box(head)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::train::{sample_negatives_avoiding, LabeledPair};

pub type Edge = (usize, usize);

/// Named nodes with dense ids (in first-appearance order) and a set of
/// directed edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hierarchy {
    names: Vec<String>,
    ids: BTreeMap<String, usize>,
    edges: BTreeSet<Edge>,
}

impl Hierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `name`, registering it if new.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn add_edge(&mut self, head: &str, tail: &str) -> bool {
        let h = self.intern(head);
        let t = self.intern(tail);
        self.edges.insert((h, t))
    }

    /// Hierarchy over nodes named by their ids.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut h = Self::new();
        for i in 0..num_nodes {
            h.intern(&format!("n{i}"));
        }
        for (u, v) in edges {
            for x in [u, v] {
                if x >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        index: x,
                        len: num_nodes,
                    });
                }
            }
            h.edges.insert((u, v));
        }
        Ok(h)
    }

    /// Parses `head<TAB>tail` lines; blank lines and `#` comments are skipped.
    pub fn parse<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut h = Self::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    msg: format!("expected `head<TAB>tail`, got {line:?}"),
                });
            }
            h.add_edge(fields[0], fields[1]);
        }
        Ok(h)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    /// Writes the edge list as `head_name<TAB>tail_name` lines in edge order.
    pub fn write_edges<W: Write>(&self, mut out: W) -> Result<()> {
        for &(u, v) in &self.edges {
            writeln!(out, "{}\t{}", self.names[u], self.names[v]).map_err(|e| Error::io("<edges>", e))?;
        }
        Ok(())
    }

    /// Writes `id<TAB>name` lines.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            writeln!(out, "{i}\t{name}").map_err(|e| Error::io("<vocab>", e))?;
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    /// Rejects graphs with a directed cycle (self-loops included), naming a
    /// node on it.
    pub fn check_acyclic(&self) -> Result<()> {
        let adj = self.children();
        let mut indegree = vec![0usize; self.num_nodes()];
        for &(_, v) in &self.edges {
            indegree[v] += 1;
        }
        let mut queue: VecDeque<usize> = (0..self.num_nodes()).filter(|&u| indegree[u] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in &adj[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if seen == self.num_nodes() {
            return Ok(());
        }
        let on_cycle = (0..self.num_nodes()).find(|&u| indegree[u] > 0).unwrap_or(0);
        Err(Error::Cycle(self.names[on_cycle].clone()))
    }

    /// Descendant sets (paths of length >= 1), one per node.
    fn descendants(&self) -> Result<Vec<BTreeSet<usize>>> {
        self.check_acyclic()?;
        let adj = self.children();
        let mut out = Vec::with_capacity(self.num_nodes());
        for root in 0..self.num_nodes() {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<usize> = adj[root].clone();
            while let Some(u) = stack.pop() {
                if seen.insert(u) {
                    stack.extend(&adj[u]);
                }
            }
            out.push(seen);
        }
        Ok(out)
    }

    /// All `(u, w)` joined by a directed path of length at least one.
    pub fn transitive_closure(&self) -> Result<BTreeSet<Edge>> {
        Ok(self
            .descendants()?
            .into_iter()
            .enumerate()
            .flat_map(|(u, desc)| desc.into_iter().map(move |w| (u, w)))
            .collect())
    }

    /// Edges `(u, v)` not implied by a longer path: `v` is not a descendant
    /// of any other child of `u`.
    pub fn transitive_reduction(&self) -> Result<BTreeSet<Edge>> {
        let desc = self.descendants()?;
        let adj = self.children();
        Ok(self
            .edges
            .iter()
            .copied()
            .filter(|&(u, v)| !adj[u].iter().any(|&w| w != v && desc[w].contains(&v)))
            .collect())
    }
}

/// Balanced tree with branching `b` and depth `d`, nodes numbered
/// breadth-first and named `n{id}`, edges parent -> child.
pub fn gen_tree(branching: usize, depth: usize) -> Result<Hierarchy> {
    if branching == 0 {
        return Err(Error::invalid("gen_tree needs branching >= 1"));
    }
    let mut edges = Vec::new();
    let mut level = vec![0usize];
    let mut next_id = 1;
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * branching);
        for &parent in &level {
            for _ in 0..branching {
                edges.push((parent, next_id));
                next.push(next_id);
                next_id += 1;
            }
        }
        level = next;
    }
    Hierarchy::from_edges(next_id, edges)
}

/// Which part of a dataset a labeled pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split `{s}` (expected train, validation or test)")))
    }
}

/// Labeled pairs for training, threshold tuning and final scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchyDataset {
    pub num_entities: usize,
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl HierarchyDataset {
    pub fn split(&self, which: SplitName) -> &[LabeledPair] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    fn split_mut(&mut self, which: SplitName) -> &mut Vec<LabeledPair> {
        match which {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }

    /// Writes `head_id<TAB>tail_id<TAB>label<TAB>split` lines, train first.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for which in SplitName::ALL {
            for p in self.split(which) {
                writeln!(out, "{}\t{}\t{}\t{}", p.head, p.tail, u8::from(p.label), which.name())
                    .map_err(|e| Error::io("<split>", e))?;
            }
        }
        Ok(())
    }

    /// Reads the format written by [`HierarchyDataset::write_tsv`].
    pub fn read_tsv<R: BufRead>(input: R, num_entities: usize, source: &str) -> Result<Self> {
        let mut ds = HierarchyDataset {
            num_entities,
            ..Default::default()
        };
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, got {}", f.len())));
            }
            let id = |s: &str| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| err(format!("bad entity id `{s}`")))?;
                if v >= num_entities {
                    return Err(err(format!("entity id {v} out of range for {num_entities} entities")));
                }
                Ok(v)
            };
            let label = match f[2] {
                "1" => true,
                "0" => false,
                other => return Err(err(format!("label must be 0 or 1, got `{other}`"))),
            };
            let which: SplitName = f[3].parse().map_err(|e: Error| err(e.to_string()))?;
            let pair = LabeledPair {
                head: id(f[0])?,
                tail: id(f[1])?,
                label,
            };
            ds.split_mut(which).push(pair);
        }
        Ok(ds)
    }
}

/// Builds splits from a DAG: train positives are the transitive reduction
/// plus `closure_pct`% of the remaining closure edges; the rest of the
/// closure is halved into validation and test positives. Each split gets
/// `neg_ratio` negatives per positive, none of which is a closure edge.
pub fn make_split(h: &Hierarchy, closure_pct: u32, neg_ratio: usize, seed: u64) -> Result<HierarchyDataset> {
    if closure_pct > 100 {
        return Err(Error::invalid(format!(
            "closure percentage must be in 0..=100, got {closure_pct}"
        )));
    }
    let closure = h.transitive_closure()?;
    let reduction = h.transitive_reduction()?;
    let mut rest: Vec<Edge> = closure.difference(&reduction).copied().collect();
    if closure_pct > 0 && rest.is_empty() {
        return Err(Error::invalid(
            "closure equals reduction, so there are no closure edges to add to training",
        ));
    }
    SeededRng::stream(seed, Stream::Split, 0).shuffle(&mut rest);
    let take = (rest.len() * closure_pct as usize + 50) / 100;
    let held_out = rest.split_off(take.min(rest.len()));
    let (validation, test) = held_out.split_at(held_out.len() / 2);
    if test.is_empty() {
        return Err(Error::invalid(format!(
            "no closure edges left for validation/test at {closure_pct}% ({} closure, {} reduction edges)",
            closure.len(),
            reduction.len()
        )));
    }

    let mut train: Vec<Edge> = reduction.iter().copied().chain(rest).collect();
    train.sort_unstable();
    let mut validation = validation.to_vec();
    validation.sort_unstable();
    let mut test = test.to_vec();
    test.sort_unstable();

    let n = h.num_nodes();
    let label = |edges: &[Edge], idx: u64| sample_negatives_avoiding(edges, &closure, n, neg_ratio, seed, idx);
    Ok(HierarchyDataset {
        num_entities: n,
        train: label(&train, 0)?,
        validation: label(&validation, 1)?,
        test: label(&test, 2)?,
    })
}

/// Precision, recall and F1 of thresholded predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Predicts an edge iff `exp(logp) >= threshold`. Undefined ratios (no
/// predictions, no positives) count as 0.
pub fn f1_score(scored: &[(f64, bool)], threshold: f64) -> Result<F1Report> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(logp, label) in scored {
        let predicted = logp.exp() >= threshold;
        match (predicted, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Report {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}
