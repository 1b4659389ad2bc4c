//! Per-patient evidence graph.
//!
//! Nodes are laid out as: candidate drug nodes (candidate order), then one
//! evidence node per candidate (same order), then the remaining entity nodes
//! in first-mention order. Edges always join an evidence node to an entity
//! node, so the graph is bipartite between the two groups.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EvidenceText, KgStore, MentionRole};
use crate::retrieval::CandidateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Drug,
    Disease,
    Ingredient,
    Contraindication,
    Evidence,
}

impl From<MentionRole> for NodeKind {
    fn from(role: MentionRole) -> Self {
        match role {
            MentionRole::Treatment => NodeKind::Disease,
            MentionRole::Contraindication => NodeKind::Contraindication,
            MentionRole::Ingredient => NodeKind::Ingredient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub index: usize,
    pub kind: NodeKind,
    /// KG id of the entity; for evidence nodes, the source drug id.
    pub entity_id: String,
    /// Entity label, or the verbalized text for evidence nodes.
    pub surface_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphData {
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
    drug_node_indices: Vec<usize>,
    evidence_node_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct EvidenceGraph {
    nodes: Vec<GraphNode>,
    /// `(evidence node, entity node)` pairs; undirected.
    edges: Vec<(usize, usize)>,
    drug_node_indices: Vec<usize>,
    evidence_node_indices: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl From<EvidenceGraph> for GraphData {
    fn from(g: EvidenceGraph) -> Self {
        GraphData {
            nodes: g.nodes,
            edges: g.edges,
            drug_node_indices: g.drug_node_indices,
            evidence_node_indices: g.evidence_node_indices,
        }
    }
}

impl TryFrom<GraphData> for EvidenceGraph {
    type Error = Error;

    fn try_from(d: GraphData) -> Result<Self> {
        EvidenceGraph::from_parts(d.nodes, d.edges, d.drug_node_indices, d.evidence_node_indices)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub drug: usize,
    pub disease: usize,
    pub ingredient: usize,
    pub contraindication: usize,
    pub evidence: usize,
    pub edges: usize,
    pub max_degree: usize,
}

/// Nodes and edges touching a subset of drug nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExcerpt {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
}

impl EvidenceGraph {
    /// Assembles a graph and checks the structural invariants.
    pub fn from_parts(
        nodes: Vec<GraphNode>,
        edges: Vec<(usize, usize)>,
        drug_node_indices: Vec<usize>,
        evidence_node_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.index != i {
                return Err(Error::Invalid(format!("node {i} carries index {}", node.index)));
            }
        }
        for &(ev, ent) in &edges {
            if ev >= n || ent >= n {
                return Err(Error::Invalid(format!("edge ({ev}, {ent}) out of range")));
            }
            if nodes[ev].kind != NodeKind::Evidence || nodes[ent].kind == NodeKind::Evidence {
                return Err(Error::Invalid(format!(
                    "edge ({ev}, {ent}) does not join an evidence node to an entity node"
                )));
            }
        }
        let check_kind = |idx: &[usize], want: NodeKind| {
            idx.iter().all(|&i| i < n && (nodes[i].kind == want))
        };
        if !check_kind(&drug_node_indices, NodeKind::Drug)
            || !check_kind(&evidence_node_indices, NodeKind::Evidence)
        {
            return Err(Error::Invalid("node index lists do not match node kinds".into()));
        }

        let mut degree = vec![0usize; n];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(a, b) in &edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        Ok(EvidenceGraph {
            nodes,
            edges,
            drug_node_indices,
            evidence_node_indices,
            offsets,
            neighbors,
        })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &GraphNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Candidate drug nodes, in candidate order.
    pub fn drug_node_indices(&self) -> &[usize] {
        &self.drug_node_indices
    }

    /// Evidence nodes, aligned with `drug_node_indices`.
    pub fn evidence_node_indices(&self) -> &[usize] {
        &self.evidence_node_indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// CSR view: `offsets` has `len() + 1` entries.
    pub fn csr(&self) -> (&[usize], &[usize]) {
        (&self.offsets, &self.neighbors)
    }

    pub fn stats(&self) -> GraphStats {
        let mut s = GraphStats {
            edges: self.edges.len(),
            ..Default::default()
        };
        for node in &self.nodes {
            match node.kind {
                NodeKind::Drug => s.drug += 1,
                NodeKind::Disease => s.disease += 1,
                NodeKind::Ingredient => s.ingredient += 1,
                NodeKind::Contraindication => s.contraindication += 1,
                NodeKind::Evidence => s.evidence += 1,
            }
        }
        s.max_degree = (0..self.len()).map(|i| self.degree(i)).max().unwrap_or(0);
        s
    }

    /// The given drug nodes, their adjacent evidence nodes, and the entities
    /// those evidence nodes mention. Node indices are those of the full graph.
    pub fn excerpt(&self, drug_nodes: &[usize]) -> GraphExcerpt {
        let mut keep: BTreeSet<usize> = BTreeSet::new();
        let mut edges = Vec::new();
        for &d in drug_nodes {
            keep.insert(d);
            for &ev in self.neighbors(d) {
                if self.nodes[ev].kind != NodeKind::Evidence {
                    continue;
                }
                keep.insert(ev);
                for &ent in self.neighbors(ev) {
                    keep.insert(ent);
                    edges.push((ev, ent));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        GraphExcerpt {
            nodes: keep.iter().map(|&i| self.nodes[i].clone()).collect(),
            edges,
        }
    }
}

pub fn graph_stats(g: &EvidenceGraph) -> GraphStats {
    g.stats()
}

/// Builds the evidence graph for one candidate set.
///
/// `evidence` must be index-aligned with `candidates.all`.
pub fn build_graph(
    store: &KgStore,
    candidates: &CandidateSet,
    evidence: &[EvidenceText],
) -> Result<EvidenceGraph> {
    if evidence.len() != candidates.all.len() {
        return Err(Error::Invalid(format!(
            "{} evidence texts for {} candidates",
            evidence.len(),
            candidates.all.len()
        )));
    }
    for (ev, id) in evidence.iter().zip(&candidates.all) {
        if &ev.drug_id != id {
            return Err(Error::Invalid(format!(
                "evidence for `{}` is aligned with candidate `{id}`",
                ev.drug_id
            )));
        }
        if ev.mentioned_entities.len() != ev.mention_roles.len() {
            return Err(Error::Invalid(format!(
                "evidence for `{id}` has misaligned mention roles"
            )));
        }
    }

    let c = candidates.all.len();
    let mut nodes: Vec<GraphNode> = Vec::with_capacity(3 * c);
    let mut entity_node: HashMap<String, usize> = HashMap::new();

    for id in &candidates.all {
        let label = store.label(id).ok_or_else(|| Error::not_found("drug", id.clone()))?;
        let index = nodes.len();
        nodes.push(GraphNode {
            index,
            kind: NodeKind::Drug,
            entity_id: id.clone(),
            surface_text: label.to_string(),
        });
        entity_node.insert(id.clone(), index);
    }
    for ev in evidence {
        let index = nodes.len();
        nodes.push(GraphNode {
            index,
            kind: NodeKind::Evidence,
            entity_id: ev.drug_id.clone(),
            surface_text: ev.text.clone(),
        });
    }

    let mut edges = Vec::new();
    for (k, ev) in evidence.iter().enumerate() {
        let ev_node = c + k;
        edges.push((ev_node, k));
        for (id, role) in ev.mentioned_entities.iter().zip(&ev.mention_roles) {
            let ent = match entity_node.get(id) {
                Some(&i) => i,
                None => {
                    let label = store
                        .label(id)
                        .ok_or_else(|| Error::not_found("entity", id.clone()))?;
                    let index = nodes.len();
                    nodes.push(GraphNode {
                        index,
                        kind: NodeKind::from(*role),
                        entity_id: id.clone(),
                        surface_text: label.to_string(),
                    });
                    entity_node.insert(id.clone(), index);
                    index
                }
            };
            if ent != k {
                edges.push((ev_node, ent));
            }
        }
    }

    EvidenceGraph::from_parts(nodes, edges, (0..c).collect(), (c..2 * c).collect())
}
