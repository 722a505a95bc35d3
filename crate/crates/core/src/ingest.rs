//! Canonical thread records → validated adhoc event trees.
//!
//! One JSON object per line:
//!
//! ```json
//! {"event_id": "...", "label": 0,
//!  "nodes": [{"node_id": "...", "parent_id": null, "text": "...", "timestamp": 1400000000,
//!             "author": {"followers": 1, "friends": 2, "favorites": 3, "reposts": 4,
//!                        "statuses": 5, "verified": false, "geo_enabled": true,
//!                        "time_zone_enabled": false, "account_created": 1300000000}}]}
//! ```
//!
//! `author` may be `null`; an author object with missing or invalid fields is
//! read as absent, and such trees are dropped by [`prune_events`]. Unknown
//! fields are ignored with a warning. The author object may carry an optional
//! `id`, used only to count distinct authors in [`dataset_stats`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("event {event}: expected exactly one root, found {roots}")]
    MissingRoot { event: String, roots: usize },
    #[error("event {event}: node {node} has unknown parent {parent}")]
    DanglingParent { event: String, node: String, parent: String },
    #[error("event {event}: parent links form a cycle through {node}")]
    CycleDetected { event: String, node: String },
    #[error("event {event}: node {node} is earlier than its parent or the root")]
    NonChronological { event: String, node: String },
    #[error("event {event}: duplicate node id {node}")]
    DuplicateNode { event: String, node: String },
    #[error("event {event}: label must be 0 or 1, got {label}")]
    InvalidLabel { event: String, label: i64 },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<IngestError> },
    #[error("read failed: {0}")]
    Io(String),
}

/// Claim label: 0 = rumor, 1 = non-rumor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Rumor = 0,
    NonRumor = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Rumor),
            1 => Some(Label::NonRumor),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawAuthorProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub followers: u64,
    pub friends: u64,
    pub favorites: u64,
    pub reposts: u64,
    pub statuses: u64,
    pub verified: bool,
    pub geo_enabled: bool,
    pub time_zone_enabled: bool,
    pub account_created: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventNode {
    pub node_id: String,
    pub parent_id: Option<String>,
    pub text: String,
    pub timestamp: i64,
    pub author: Option<RawAuthorProfile>,
}

/// Parent/child structure over node indices. Index 0 is the root and every
/// parent index is smaller than its child's.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds from a parent array. Requires `parents[0] == None` and `parents[i] < i` otherwise.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Option<Topology> {
        if parents.first() != Some(&None) {
            return None;
        }
        let mut children = vec![Vec::new(); parents.len()];
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => children[*p].push(i),
                _ => return None,
            }
        }
        Some(Topology { parents, children })
    }

    /// Path 0 → 1 → … → len-1.
    pub fn chain(len: usize) -> Topology {
        Self::from_parents((0..len).map(|i| i.checked_sub(1)).collect()).expect("chain is valid")
    }

    pub fn star(len: usize) -> Topology {
        Self::from_parents((0..len).map(|i| if i == 0 { None } else { Some(0) }).collect()).expect("star is valid")
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Children of `i`, ascending.
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Nodes without children; a lone root is its own leaf.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().filter(|p| p.is_some()).count()
    }

    /// Edge count from the root to each node.
    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        for i in 1..self.len() {
            d[i] = d[self.parents[i].expect("non-root")] + 1;
        }
        d
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }
}

/// A labeled claim with its responsive posts, in chronological order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdhocEventTree {
    pub event_id: String,
    pub label: Label,
    nodes: Vec<EventNode>,
    topology: Topology,
}

impl AdhocEventTree {
    /// Validates the parent links and orders nodes by `(timestamp, depth, node_id)`.
    ///
    /// Depth sits between the two documented keys so that a reply sharing its
    /// parent's timestamp still sorts after the parent.
    pub fn new(event_id: impl Into<String>, label: Label, nodes: Vec<EventNode>) -> Result<Self, IngestError> {
        let event = event_id.into();
        let roots: Vec<usize> = nodes.iter().enumerate().filter(|(_, n)| n.parent_id.is_none()).map(|(i, _)| i).collect();
        if roots.len() != 1 {
            return Err(IngestError::MissingRoot { event, roots: roots.len() });
        }
        let root = roots[0];

        let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if by_id.insert(n.node_id.as_str(), i).is_some() {
                return Err(IngestError::DuplicateNode { event, node: n.node_id.clone() });
            }
        }
        let mut parent_of = vec![None; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Some(pid) = &n.parent_id {
                let p = *by_id.get(pid.as_str()).ok_or_else(|| IngestError::DanglingParent {
                    event: event.clone(),
                    node: n.node_id.clone(),
                    parent: pid.clone(),
                })?;
                parent_of[i] = Some(p);
            }
        }

        // Reachability from the root; anything left over sits on a cycle.
        let mut kids = vec![Vec::new(); nodes.len()];
        for (i, p) in parent_of.iter().enumerate() {
            if let Some(p) = p {
                kids[*p].push(i);
            }
        }
        let mut depth = vec![usize::MAX; nodes.len()];
        depth[root] = 0;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &c in &kids[u] {
                depth[c] = depth[u] + 1;
                stack.push(c);
            }
        }
        if let Some(bad) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(IngestError::CycleDetected { event, node: nodes[bad].node_id.clone() });
        }

        let root_ts = nodes[root].timestamp;
        for (i, n) in nodes.iter().enumerate() {
            let parent_ts = parent_of[i].map(|p| nodes[p].timestamp);
            if n.timestamp < root_ts || parent_ts.is_some_and(|pt| n.timestamp < pt) {
                return Err(IngestError::NonChronological { event, node: n.node_id.clone() });
            }
        }

        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| {
            (nodes[a].timestamp, depth[a], &nodes[a].node_id).cmp(&(nodes[b].timestamp, depth[b], &nodes[b].node_id))
        });
        let mut new_index = vec![0; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let parents: Vec<Option<usize>> = order.iter().map(|&old| parent_of[old].map(|p| new_index[p])).collect();
        let topology = Topology::from_parents(parents).expect("chronological order puts parents first");
        let mut slots: Vec<Option<EventNode>> = nodes.into_iter().map(Some).collect();
        let nodes = order.iter().map(|&old| slots[old].take().expect("each node moved once")).collect();
        Ok(AdhocEventTree { event_id: event, label, nodes, topology })
    }

    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &EventNode {
        &self.nodes[i]
    }

    pub fn root(&self) -> &EventNode {
        &self.nodes[0]
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Number of responsive posts (every node but the root).
    pub fn responsive_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_complete_authors(&self) -> bool {
        self.nodes.iter().all(|n| n.author.is_some())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub parent_id: Option<String>,
    pub text: String,
    pub timestamp: i64,
    #[serde(default)]
    pub author: Option<Value>,
    #[serde(flatten, skip_serializing)]
    pub extra: BTreeMap<String, Value>,
}

/// One line of the canonical event file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EventRecord {
    pub event_id: String,
    pub label: i64,
    pub nodes: Vec<NodeRecord>,
    #[serde(flatten, skip_serializing)]
    pub extra: BTreeMap<String, Value>,
}

const AUTHOR_FIELDS: [&str; 10] = [
    "id",
    "followers",
    "friends",
    "favorites",
    "reposts",
    "statuses",
    "verified",
    "geo_enabled",
    "time_zone_enabled",
    "account_created",
];

fn parse_author(event: &str, node: &str, value: Option<Value>) -> Option<RawAuthorProfile> {
    let value = value.filter(|v| !v.is_null())?;
    if let Value::Object(map) = &value {
        for k in map.keys().filter(|k| !AUTHOR_FIELDS.contains(&k.as_str())) {
            warn!("event {event} node {node}: ignoring unknown author field {k:?}");
        }
    }
    match serde_json::from_value(value) {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("event {event} node {node}: incomplete author profile ({e})");
            None
        }
    }
}

/// Validates one record into a tree.
pub fn parse_event(record: EventRecord) -> Result<AdhocEventTree, IngestError> {
    let event = record.event_id;
    for k in record.extra.keys() {
        warn!("event {event}: ignoring unknown field {k:?}");
    }
    let label = match record.label {
        0 => Label::Rumor,
        1 => Label::NonRumor,
        other => return Err(IngestError::InvalidLabel { event, label: other }),
    };
    let nodes = record
        .nodes
        .into_iter()
        .map(|n| {
            for k in n.extra.keys() {
                warn!("event {event} node {}: ignoring unknown field {k:?}", n.node_id);
            }
            let author = parse_author(&event, &n.node_id, n.author);
            EventNode { node_id: n.node_id, parent_id: n.parent_id, text: n.text, timestamp: n.timestamp, author }
        })
        .collect();
    AdhocEventTree::new(event, label, nodes)
}

pub fn to_record(tree: &AdhocEventTree) -> EventRecord {
    EventRecord {
        event_id: tree.event_id.clone(),
        label: tree.label.index() as i64,
        nodes: tree
            .nodes
            .iter()
            .map(|n| NodeRecord {
                node_id: n.node_id.clone(),
                parent_id: n.parent_id.clone(),
                text: n.text.clone(),
                timestamp: n.timestamp,
                author: n.author.as_ref().map(|a| serde_json::to_value(a).expect("profile serializes")),
                extra: BTreeMap::new(),
            })
            .collect(),
        extra: BTreeMap::new(),
    }
}

pub fn to_json_line(tree: &AdhocEventTree) -> String {
    serde_json::to_string(&to_record(tree)).expect("record serializes")
}

pub fn parse_line(line: &str) -> Result<AdhocEventTree, IngestError> {
    let record: EventRecord =
        serde_json::from_str(line).map_err(|e| IngestError::Malformed { line: 0, message: e.to_string() })?;
    parse_event(record)
}

/// Reads a line-delimited event file. Blank lines are skipped; errors carry
/// the 1-based line number. Lines are parsed in parallel, output keeps input order.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<AdhocEventTree>, IngestError> {
    let lines: Vec<(usize, String)> = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(|e| IngestError::Io(e.to_string())))
        .collect::<Result<_, _>>()?;
    lines
        .into_par_iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            parse_line(&l).map_err(|e| match e {
                IngestError::Malformed { message, .. } => IngestError::Malformed { line: n, message },
                other => IngestError::AtLine { line: n, source: Box::new(other) },
            })
        })
        .collect()
}

pub fn write_events<W: std::io::Write>(trees: &[AdhocEventTree], mut w: W) -> std::io::Result<()> {
    for t in trees {
        writeln!(w, "{}", to_json_line(t))?;
    }
    Ok(())
}

/// Keeps trees with at least `min_responsive` replies and a profile on every node.
pub fn prune_events_with(events: Vec<AdhocEventTree>, min_responsive: usize) -> Vec<AdhocEventTree> {
    events.into_iter().filter(|t| t.responsive_count() >= min_responsive && t.has_complete_authors()).collect()
}

/// Drops trees with fewer than 3 responsive posts or any missing author profile.
pub fn prune_events(events: Vec<AdhocEventTree>) -> Vec<AdhocEventTree> {
    prune_events_with(events, 3)
}

/// Node in the post projection.
#[derive(Clone, Debug, PartialEq)]
pub struct PostNode {
    pub node_id: String,
    pub text: String,
}

/// Node in the author projection. Writing-habit features come from the
/// author's post, so the text travels with the profile.
#[derive(Clone, Debug, PartialEq)]
pub struct AuthorNode {
    pub profile: Option<RawAuthorProfile>,
    pub post_timestamp: i64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteTrees {
    pub event_id: String,
    pub label: Label,
    pub topology: Topology,
    pub posts: Vec<PostNode>,
    pub authors: Vec<AuthorNode>,
}

impl BipartiteTrees {
    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn root_timestamp(&self) -> i64 {
        self.authors[0].post_timestamp
    }
}

/// Projects a tree onto its post tree and author tree. Both share one topology.
pub fn split_bipartite(tree: &AdhocEventTree) -> BipartiteTrees {
    BipartiteTrees {
        event_id: tree.event_id.clone(),
        label: tree.label,
        topology: tree.topology.clone(),
        posts: tree.nodes.iter().map(|n| PostNode { node_id: n.node_id.clone(), text: n.text.clone() }).collect(),
        authors: tree
            .nodes
            .iter()
            .map(|n| AuthorNode { profile: n.author.clone(), post_timestamp: n.timestamp, text: n.text.clone() })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub claims: usize,
    pub authors: usize,
    pub posts: usize,
    pub rumors: usize,
    pub non_rumors: usize,
    pub mean_reposts: f64,
    pub mean_depth: f64,
}

/// Summary counts. Authors are distinct by `id` when present, otherwise by profile contents.
pub fn dataset_stats(events: &[AdhocEventTree]) -> DatasetStats {
    let mut authors: HashSet<String> = HashSet::new();
    for n in events.iter().flat_map(|t| t.nodes.iter()) {
        if let Some(a) = &n.author {
            let key = match &a.id {
                Some(id) => format!("id:{id}"),
                None => format!("profile:{}", serde_json::to_string(a).expect("profile serializes")),
            };
            authors.insert(key);
        }
    }
    let claims = events.len();
    let rumors = events.iter().filter(|t| t.label == Label::Rumor).count();
    let mean = |total: usize| if claims == 0 { 0.0 } else { total as f64 / claims as f64 };
    DatasetStats {
        claims,
        authors: authors.len(),
        posts: events.iter().map(AdhocEventTree::len).sum(),
        rumors,
        non_rumors: claims - rumors,
        mean_reposts: mean(events.iter().map(AdhocEventTree::responsive_count).sum()),
        mean_depth: mean(events.iter().map(|t| t.topology.depth()).sum()),
    }
}
