//! The cross-chain transaction graph: participants as vertices, asset
//! transfers as directed edges, each edge naming the blockchain it settles
//! on. Also the graph multisignature that participants produce to commit to
//! a specific graph at a specific timestamp, plus the structural
//! classification that decides whether the hashlock/timelock baseline is
//! applicable at all.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, Encoder};
use crate::crypto::{digest_of, verify, Digest, KeyPair, PublicKey, Signature};

/// Opaque participant identifier ("alice", "bob", ...).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticipantId(pub String);

impl std::fmt::Debug for ParticipantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId(s.to_string())
    }
}

impl Canonical for ParticipantId {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
}

/// Opaque blockchain identifier ("btc", "eth", "wtn", ...).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChainId(pub String);

impl std::fmt::Debug for ChainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for ChainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for ChainId {
    fn from(s: &str) -> Self {
        ChainId(s.to_string())
    }
}

impl Canonical for ChainId {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
}

/// What a participant does when the protocol expects an action from them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Miss the scheduled action of this kind once; retried at later windows.
    CrashAt(StepKind),
    /// Never publish the participant's own contracts.
    DeclinePublish,
    /// Coalition membership marker; carried through for scenario bookkeeping.
    Coalition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Deploy,
    Authorize,
    Redeem,
    Refund,
}

/// A protocol actor: identity, signing keys, and scripted behavior.
#[derive(Clone, Debug)]
pub struct Participant {
    pub id: ParticipantId,
    pub keys: KeyPair,
    pub behavior: Behavior,
}

impl Participant {
    pub fn new(id: impl Into<ParticipantId>, keys: KeyPair) -> Self {
        Self {
            id: id.into(),
            keys,
            behavior: Behavior::Honest,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }
}

/// One sub-transaction: `source` pays `recipient` `amount` of `unit` on
/// chain `chain_id`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwapEdge {
    pub source: ParticipantId,
    pub recipient: ParticipantId,
    pub amount: u64,
    pub unit: String,
    pub chain_id: ChainId,
}

impl Canonical for SwapEdge {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.source)
            .value(&self.recipient)
            .u64(self.amount)
            .str(&self.unit)
            .value(&self.chain_id);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph has no vertices")]
    EmptyGraph,
    #[error("edge endpoint {0} is not a vertex")]
    UnknownVertex(ParticipantId),
    #[error("edge from {0} to itself")]
    SelfEdge(ParticipantId),
    #[error("edge amount must be positive")]
    ZeroAmount,
    #[error("participant {0} missing from signer set")]
    MissingParticipant(ParticipantId),
}

/// The transaction graph at an agreed timestamp. Edges are kept in canonical
/// order so the serialization (and therefore the graph digest) is unique for
/// a given vertex/edge/timestamp content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapGraph {
    vertices: BTreeSet<ParticipantId>,
    edges: Vec<SwapEdge>,
    pub timestamp: u64,
}

impl SwapGraph {
    pub fn new(
        vertices: impl IntoIterator<Item = ParticipantId>,
        edges: impl IntoIterator<Item = SwapEdge>,
        timestamp: u64,
    ) -> Result<Self, GraphError> {
        let vertices: BTreeSet<ParticipantId> = vertices.into_iter().collect();
        if vertices.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let mut edges: Vec<SwapEdge> = edges.into_iter().collect();
        for e in &edges {
            if e.source == e.recipient {
                return Err(GraphError::SelfEdge(e.source.clone()));
            }
            if e.amount == 0 {
                return Err(GraphError::ZeroAmount);
            }
            for end in [&e.source, &e.recipient] {
                if !vertices.contains(end) {
                    return Err(GraphError::UnknownVertex(end.clone()));
                }
            }
        }
        edges.sort_by(|a, b| {
            (&a.source, &a.recipient, &a.chain_id, a.amount, &a.unit).cmp(&(
                &b.source,
                &b.recipient,
                &b.chain_id,
                b.amount,
                &b.unit,
            ))
        });
        Ok(Self {
            vertices,
            edges,
            timestamp,
        })
    }

    pub fn vertices(&self) -> &BTreeSet<ParticipantId> {
        &self.vertices
    }

    /// Edges in canonical order; indexes into this slice identify edges
    /// throughout the workspace (evidence bundles, outcomes).
    pub fn edges(&self) -> &[SwapEdge] {
        &self.edges
    }

    pub fn digest(&self) -> Digest {
        digest_of(self)
    }

    fn vertex_list(&self) -> Vec<&ParticipantId> {
        self.vertices.iter().collect()
    }

    fn index_of(&self, v: &ParticipantId) -> usize {
        self.vertex_list().iter().position(|x| *x == v).unwrap()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let verts = self.vertex_list();
        let mut adj = vec![Vec::new(); verts.len()];
        for e in &self.edges {
            let s = self.index_of(&e.source);
            let r = self.index_of(&e.recipient);
            if !adj[s].contains(&r) {
                adj[s].push(r);
            }
        }
        adj
    }

    /// Max over ordered vertex pairs, a vertex paired with itself included,
    /// of the shortest directed path length. The self-pair distance is the
    /// shortest nontrivial cycle through the vertex, which is what makes the
    /// two-party swap come out as 2. `Unbounded` when some pair cannot reach.
    pub fn diameter(&self) -> Result<Diameter, GraphError> {
        if self.vertices.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let n = self.vertices.len();
        if n == 1 && self.edges.is_empty() {
            return Ok(Diameter::Finite(0));
        }
        let adj = self.adjacency();
        let mut best = 0u64;
        for u in 0..n {
            let dist = bfs(&adj, u);
            for v in 0..n {
                if v == u {
                    continue;
                }
                match dist[v] {
                    Some(d) => best = best.max(d),
                    None => return Ok(Diameter::Unbounded),
                }
            }
            // Shortest cycle through u: one hop out of u, then back.
            let mut cycle: Option<u64> = None;
            for (w, outs) in adj.iter().enumerate() {
                if outs.contains(&u) {
                    if let Some(d) = dist[w] {
                        let len = d + 1;
                        cycle = Some(cycle.map_or(len, |c: u64| c.min(len)));
                    }
                }
            }
            match cycle {
                Some(c) => best = best.max(c),
                None => return Ok(Diameter::Unbounded),
            }
        }
        Ok(Diameter::Finite(best))
    }

    /// Structural class for baseline applicability.
    pub fn classify(&self) -> Result<Classification, GraphError> {
        if self.vertices.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let n = self.vertices.len();
        let adj = self.adjacency();

        // Undirected connectivity.
        let mut undirected = vec![BTreeSet::new(); n];
        for (u, outs) in adj.iter().enumerate() {
            for &v in outs {
                undirected[u].insert(v);
                undirected[v].insert(u);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &undirected[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Ok(Classification::Disconnected);
        }

        let verts = self.vertex_list();
        let mut leaders = BTreeSet::new();
        for skip in 0..n {
            if !has_cycle(&adj, Some(skip)) {
                leaders.insert(verts[skip].clone());
            }
        }
        if leaders.is_empty() {
            Ok(Classification::CyclicAllLeaders)
        } else {
            Ok(Classification::LeaderAcyclic { leaders })
        }
    }
}

impl Canonical for SwapGraph {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.vertices.len() as u64);
        for v in &self.vertices {
            enc.value(v);
        }
        enc.seq(&self.edges);
        enc.u64(self.timestamp);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diameter {
    Finite(u64),
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    /// Vertices whose removal leaves the graph acyclic; any of them can lead
    /// a hashlock/timelock execution.
    LeaderAcyclic { leaders: BTreeSet<ParticipantId> },
    /// Every vertex-deleted subgraph still contains a directed cycle.
    CyclicAllLeaders,
    Disconnected,
}

fn bfs(adj: &[Vec<usize>], from: usize) -> Vec<Option<u64>> {
    let mut dist = vec![None; adj.len()];
    dist[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn has_cycle(adj: &[Vec<usize>], skip: Option<usize>) -> bool {
    let n = adj.len();
    // 0 = unvisited, 1 = on stack, 2 = done.
    let mut mark = vec![0u8; n];
    fn visit(u: usize, adj: &[Vec<usize>], skip: Option<usize>, mark: &mut [u8]) -> bool {
        mark[u] = 1;
        for &v in &adj[u] {
            if Some(v) == skip {
                continue;
            }
            if mark[v] == 1 {
                return true;
            }
            if mark[v] == 0 && visit(v, adj, skip, mark) {
                return true;
            }
        }
        mark[u] = 2;
        false
    }
    for u in 0..n {
        if Some(u) == skip || mark[u] != 0 {
            continue;
        }
        if visit(u, adj, skip, &mut mark) {
            return true;
        }
    }
    false
}

/// Nested graph signature: the first signer signs the canonical bytes of the
/// graph (timestamp included), each subsequent signer signs the previous
/// signature bytes. Signer order is recorded but carries no meaning; any
/// order over the same graph digests to the same key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multisignature {
    pub graph_digest: Digest,
    pub sigs: Vec<(PublicKey, Signature)>,
}

impl Canonical for Multisignature {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.graph_digest);
        enc.u64(self.sigs.len() as u64);
        for (pk, sig) in &self.sigs {
            enc.value(pk).value(sig);
        }
    }
}

/// Sign the graph with every participant, nesting in the order given.
pub fn multisign(
    graph: &SwapGraph,
    participants: &[&Participant],
) -> Result<Multisignature, GraphError> {
    let signer_ids: BTreeSet<&ParticipantId> = participants.iter().map(|p| &p.id).collect();
    for v in graph.vertices() {
        if !signer_ids.contains(v) {
            return Err(GraphError::MissingParticipant(v.clone()));
        }
    }
    let mut msg = graph.canonical_bytes();
    let mut sigs = Vec::with_capacity(participants.len());
    for p in participants {
        if !graph.vertices().contains(&p.id) {
            continue; // non-vertex signers contribute nothing
        }
        let sig = p.keys.sign(&msg);
        msg = sig.0.to_vec();
        sigs.push((p.public(), sig));
    }
    Ok(Multisignature {
        graph_digest: graph.digest(),
        sigs,
    })
}

/// Check the nested chain over the canonical graph bytes and that the signer
/// set covers exactly `pks`.
pub fn verify_multisig(ms: &Multisignature, graph: &SwapGraph, pks: &BTreeSet<PublicKey>) -> bool {
    if ms.graph_digest != graph.digest() {
        return false;
    }
    let signer_set: BTreeSet<PublicKey> = ms.sigs.iter().map(|(pk, _)| *pk).collect();
    if signer_set != *pks || ms.sigs.len() != pks.len() {
        return false;
    }
    let mut msg = graph.canonical_bytes();
    for (pk, sig) in &ms.sigs {
        if !verify(pk, &msg, sig) {
            return false;
        }
        msg = sig.0.to_vec();
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn edge(from: &str, to: &str, amount: u64, unit: &str, chain: &str) -> SwapEdge {
        SwapEdge {
            source: from.into(),
            recipient: to.into(),
            amount,
            unit: unit.to_string(),
            chain_id: chain.into(),
        }
    }

    fn two_party() -> SwapGraph {
        SwapGraph::new(
            ["alice".into(), "bob".into()],
            [
                edge("alice", "bob", 5, "btc", "btc"),
                edge("bob", "alice", 100, "eth", "eth"),
            ],
            1,
        )
        .unwrap()
    }

    fn participants(n: usize) -> Vec<Participant> {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let names = ["alice", "bob", "carol", "dave", "erin"];
        names[..n]
            .iter()
            .map(|name| Participant::new(*name, KeyPair::generate(&mut rng)))
            .collect()
    }

    #[test]
    fn two_party_diameter_is_two() {
        assert_eq!(two_party().diameter().unwrap(), Diameter::Finite(2));
    }

    #[test]
    fn single_vertex_diameter_is_zero() {
        let g = SwapGraph::new(["alice".into()], [], 0).unwrap();
        assert_eq!(g.diameter().unwrap(), Diameter::Finite(0));
    }

    #[test]
    fn three_cycle_diameter_is_three() {
        let g = SwapGraph::new(
            ["a".into(), "b".into(), "c".into()],
            [
                edge("a", "b", 1, "x", "c1"),
                edge("b", "c", 1, "x", "c2"),
                edge("c", "a", 1, "x", "c3"),
            ],
            0,
        )
        .unwrap();
        assert_eq!(g.diameter().unwrap(), Diameter::Finite(3));
    }

    #[test]
    fn one_way_edge_is_unbounded() {
        let g = SwapGraph::new(
            ["a".into(), "b".into()],
            [edge("a", "b", 1, "x", "c1")],
            0,
        )
        .unwrap();
        assert_eq!(g.diameter().unwrap(), Diameter::Unbounded);
    }

    #[test]
    fn classify_two_party_both_leaders() {
        match two_party().classify().unwrap() {
            Classification::LeaderAcyclic { leaders } => {
                assert_eq!(
                    leaders,
                    BTreeSet::from(["alice".into(), "bob".into()])
                );
            }
            other => panic!("unexpected classification {other:?}"),
        }
    }

    #[test]
    fn classify_triangle_of_two_cycles_all_leaders() {
        // Every vertex-deleted subgraph keeps a 2-cycle.
        let g = SwapGraph::new(
            ["a".into(), "b".into(), "c".into()],
            [
                edge("a", "b", 1, "x", "c1"),
                edge("b", "a", 1, "x", "c2"),
                edge("b", "c", 1, "x", "c3"),
                edge("c", "b", 1, "x", "c4"),
                edge("a", "c", 1, "x", "c5"),
                edge("c", "a", 1, "x", "c6"),
            ],
            0,
        )
        .unwrap();
        assert_eq!(g.classify().unwrap(), Classification::CyclicAllLeaders);
    }

    #[test]
    fn classify_disjoint_two_cycles_disconnected() {
        let g = SwapGraph::new(
            ["a".into(), "b".into(), "c".into(), "d".into()],
            [
                edge("a", "b", 1, "x", "c1"),
                edge("b", "a", 1, "x", "c2"),
                edge("c", "d", 1, "x", "c3"),
                edge("d", "c", 1, "x", "c4"),
            ],
            0,
        )
        .unwrap();
        assert_eq!(g.classify().unwrap(), Classification::Disconnected);
    }

    #[test]
    fn canonical_serialization_ignores_construction_order() {
        let e1 = edge("alice", "bob", 5, "btc", "btc");
        let e2 = edge("bob", "alice", 100, "eth", "eth");
        let g1 = SwapGraph::new(
            ["alice".into(), "bob".into()],
            [e1.clone(), e2.clone()],
            1,
        )
        .unwrap();
        let g2 = SwapGraph::new(["bob".into(), "alice".into()], [e2, e1], 1).unwrap();
        assert_eq!(g1.canonical_bytes(), g2.canonical_bytes());
        assert_eq!(g1.digest(), g2.digest());
    }

    #[test]
    fn multisign_any_order_verifies_with_same_key() {
        let g = two_party();
        let ps = participants(2);
        let pks: BTreeSet<PublicKey> = ps.iter().map(|p| p.public()).collect();
        let ab = multisign(&g, &[&ps[0], &ps[1]]).unwrap();
        let ba = multisign(&g, &[&ps[1], &ps[0]]).unwrap();
        assert!(verify_multisig(&ab, &g, &pks));
        assert!(verify_multisig(&ba, &g, &pks));
        assert_eq!(ab.graph_digest, ba.graph_digest);
    }

    #[test]
    fn multisign_missing_signer_rejected() {
        let g = two_party();
        let ps = participants(2);
        assert_eq!(
            multisign(&g, &[&ps[0]]).unwrap_err(),
            GraphError::MissingParticipant("bob".into())
        );
    }

    #[test]
    fn multisig_timestamp_shift_fails_verification() {
        let g = two_party();
        let ps = participants(2);
        let pks: BTreeSet<PublicKey> = ps.iter().map(|p| p.public()).collect();
        let ms = multisign(&g, &[&ps[0], &ps[1]]).unwrap();
        let shifted = SwapGraph::new(
            g.vertices().iter().cloned().collect::<Vec<_>>(),
            g.edges().to_vec(),
            g.timestamp + 1,
        )
        .unwrap();
        assert!(!verify_multisig(&ms, &shifted, &pks));
    }

    #[test]
    fn multisig_forged_entry_rejected() {
        let g = two_party();
        let ps = participants(2);
        let pks: BTreeSet<PublicKey> = ps.iter().map(|p| p.public()).collect();
        let mut ms = multisign(&g, &[&ps[0], &ps[1]]).unwrap();
        // A fresh key signs in bob's slot.
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let outsider = KeyPair::generate(&mut rng);
        let msg = ms.sigs[0].1 .0.to_vec();
        ms.sigs[1] = (ps[1].public(), outsider.sign(&msg));
        assert!(!verify_multisig(&ms, &g, &pks));
    }
}
