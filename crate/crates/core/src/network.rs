//! Directed multigraph flow networks.
//!
//! Node kinds are derived from adjacency: a node without outgoing links is a
//! destination, a node without incoming links is an origin, everything else is
//! intermediate. Every node must reach some destination.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// User-facing node label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of a link in [`FlowNetwork::links`]. Parallel links get distinct ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Origin,
    Intermediate,
    Destination,
}

/// Link declaration used when building a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub tail: NodeId,
    pub head: NodeId,
    /// Cross-section scale factor (number of lanes).
    pub lanes: f64,
    /// Maximum admissible speed limit on the link.
    pub max_speed: f64,
}

impl LinkSpec {
    pub fn new(tail: u32, head: u32, lanes: f64, max_speed: f64) -> Self {
        Self {
            tail: NodeId(tail),
            head: NodeId(head),
            lanes,
            max_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub tail: NodeId,
    pub head: NodeId,
    pub lanes: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network has no destination node")]
    NoDestination,
    #[error("node {0} has no directed path to a destination")]
    UnreachableDestination(NodeId),
    #[error("link {0} references an undeclared node")]
    DanglingEndpoint(LinkId),
    #[error("link {0} has a non-positive lane count or speed limit")]
    NonPositiveParameter(LinkId),
    #[error("link {0} is a self-loop")]
    SelfLoop(LinkId),
    #[error("node {0} is isolated")]
    IsolatedNode(NodeId),
    #[error("node {0} is declared more than once")]
    DuplicateNode(NodeId),
    #[error("node set contains destination {0}")]
    DestinationInSet(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// A validated, immutable flow network.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    kinds: Vec<NodeKind>,
    links: Vec<Link>,
    outgoing: Vec<Vec<LinkId>>,
    incoming: Vec<Vec<LinkId>>,
}

impl FlowNetwork {
    pub fn build(nodes: &[NodeId], links: &[LinkSpec]) -> Result<Self, NetworkError> {
        let mut index = BTreeMap::new();
        for (i, &n) in nodes.iter().enumerate() {
            if index.insert(n, i).is_some() {
                return Err(NetworkError::DuplicateNode(n));
            }
        }

        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        let mut built = Vec::with_capacity(links.len());
        for (i, spec) in links.iter().enumerate() {
            let id = LinkId(i);
            let (Some(&t), Some(&h)) = (index.get(&spec.tail), index.get(&spec.head)) else {
                return Err(NetworkError::DanglingEndpoint(id));
            };
            if t == h {
                return Err(NetworkError::SelfLoop(id));
            }
            if !(spec.lanes > 0.0 && spec.lanes.is_finite())
                || !(spec.max_speed > 0.0 && spec.max_speed.is_finite())
            {
                return Err(NetworkError::NonPositiveParameter(id));
            }
            outgoing[t].push(id);
            incoming[h].push(id);
            built.push(Link {
                id,
                tail: spec.tail,
                head: spec.head,
                lanes: spec.lanes,
                max_speed: spec.max_speed,
            });
        }

        let mut kinds = Vec::with_capacity(nodes.len());
        for (i, &n) in nodes.iter().enumerate() {
            let kind = match (incoming[i].is_empty(), outgoing[i].is_empty()) {
                (true, true) => return Err(NetworkError::IsolatedNode(n)),
                (_, true) => NodeKind::Destination,
                (true, false) => NodeKind::Origin,
                (false, false) => NodeKind::Intermediate,
            };
            kinds.push(kind);
        }
        if !kinds.contains(&NodeKind::Destination) {
            return Err(NetworkError::NoDestination);
        }

        // Reverse reachability from the destination set.
        let mut reaches = vec![false; nodes.len()];
        let mut queue = VecDeque::new();
        for (i, k) in kinds.iter().enumerate() {
            if *k == NodeKind::Destination {
                reaches[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(w) = queue.pop_front() {
            for l in &incoming[w] {
                let v = index[&built[l.0].tail];
                if !reaches[v] {
                    reaches[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(i) = reaches.iter().position(|r| !r) {
            return Err(NetworkError::UnreachableDestination(nodes[i]));
        }

        Ok(Self {
            nodes: nodes.to_vec(),
            index,
            kinds,
            links: built,
            outgoing,
            incoming,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    /// Dense index of a node label.
    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    pub fn kind(&self, node: NodeId) -> Option<NodeKind> {
        self.node_index(node).map(|i| self.kinds[i])
    }

    pub fn kind_at(&self, index: usize) -> NodeKind {
        self.kinds[index]
    }

    pub fn tail_index(&self, link: LinkId) -> usize {
        self.index[&self.links[link.0].tail]
    }

    pub fn head_index(&self, link: LinkId) -> usize {
        self.index[&self.links[link.0].head]
    }

    /// Outgoing links of the node at `index` (E_v^+).
    pub fn outgoing_at(&self, index: usize) -> &[LinkId] {
        &self.outgoing[index]
    }

    /// Incoming links of the node at `index` (E_v^-).
    pub fn incoming_at(&self, index: usize) -> &[LinkId] {
        &self.incoming[index]
    }

    pub fn outgoing(&self, node: NodeId) -> Option<&[LinkId]> {
        self.node_index(node).map(|i| self.outgoing_at(i))
    }

    pub fn incoming(&self, node: NodeId) -> Option<&[LinkId]> {
        self.node_index(node).map(|i| self.incoming_at(i))
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .zip(&self.kinds)
            .filter(move |(_, k)| **k == kind)
            .map(|(n, _)| *n)
    }

    pub fn origins(&self) -> Vec<NodeId> {
        self.nodes_of_kind(NodeKind::Origin).collect()
    }

    pub fn destinations(&self) -> Vec<NodeId> {
        self.nodes_of_kind(NodeKind::Destination).collect()
    }

    /// All nodes that are not destinations, in declaration order.
    pub fn non_destinations(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k != NodeKind::Destination)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Links leaving `set` (E_U^+).
    pub fn outgoing_cut(&self, set: &NodeSet) -> Vec<LinkId> {
        self.links
            .iter()
            .filter(|l| set.contains(l.tail) && !set.contains(l.head))
            .map(|l| l.id)
            .collect()
    }

    /// Links entering `set` (E_U^-).
    pub fn incoming_cut(&self, set: &NodeSet) -> Vec<LinkId> {
        self.links
            .iter()
            .filter(|l| !set.contains(l.tail) && set.contains(l.head))
            .map(|l| l.id)
            .collect()
    }

    /// Returns a copy with every link's lane count replaced by `lanes[e]`.
    pub fn with_lanes(&self, lanes: &[f64]) -> Result<Self, NetworkError> {
        let specs: Vec<LinkSpec> = self
            .links
            .iter()
            .zip(lanes)
            .map(|(l, &c)| LinkSpec {
                tail: l.tail,
                head: l.head,
                lanes: c,
                max_speed: l.max_speed,
            })
            .collect();
        Self::build(&self.nodes, &specs)
    }
}

/// A set of non-destination nodes, as used by cut conditions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NodeSet(BTreeSet<NodeId>);

impl NodeSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates that every member exists and none is a destination.
    pub fn new(
        network: &FlowNetwork,
        members: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, NetworkError> {
        let mut set = BTreeSet::new();
        for n in members {
            match network.kind(n) {
                None => return Err(NetworkError::UnknownNode(n)),
                Some(NodeKind::Destination) => return Err(NetworkError::DestinationInSet(n)),
                Some(_) => {
                    set.insert(n);
                }
            }
        }
        Ok(Self(set))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains(&node)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    pub(crate) fn from_trusted(members: impl IntoIterator<Item = NodeId>) -> Self {
        Self(members.into_iter().collect())
    }
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    fn example() -> FlowNetwork {
        FlowNetwork::build(
            &ids(&[1, 2, 3, 4]),
            &[
                LinkSpec::new(1, 2, 4.0, 1.0),
                LinkSpec::new(1, 3, 4.0, 1.0),
                LinkSpec::new(2, 4, 2.0, 1.0),
                LinkSpec::new(2, 3, 1.0, 1.0),
                LinkSpec::new(3, 4, 6.0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_link() {
        let net = FlowNetwork::build(&ids(&[7, 9]), &[LinkSpec::new(7, 9, 1.0, 1.0)]).unwrap();
        assert_eq!(net.origins(), ids(&[7]));
        assert_eq!(net.destinations(), ids(&[9]));
        assert_eq!(net.nodes_of_kind(NodeKind::Intermediate).count(), 0);
    }

    #[test]
    fn example_kinds() {
        let net = example();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.link_count(), 5);
        assert_eq!(net.origins(), ids(&[1]));
        assert_eq!(net.destinations(), ids(&[4]));
        assert_eq!(net.kind(NodeId(2)), Some(NodeKind::Intermediate));
        assert_eq!(net.kind(NodeId(3)), Some(NodeKind::Intermediate));
    }

    #[test]
    fn disconnected_origin_is_rejected() {
        // 3 -> 4 -> 5 -> 4 cycle never reaches a destination; 1 -> 2 is fine.
        let err = FlowNetwork::build(
            &ids(&[1, 2, 3, 4, 5]),
            &[
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(3, 4, 1.0, 1.0),
                LinkSpec::new(4, 5, 1.0, 1.0),
                LinkSpec::new(5, 4, 1.0, 1.0),
            ],
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::UnreachableDestination(NodeId(3)));
    }

    #[test]
    fn build_errors() {
        let n = ids(&[1, 2]);
        assert_eq!(
            FlowNetwork::build(&n, &[LinkSpec::new(1, 3, 1.0, 1.0)]).unwrap_err(),
            NetworkError::DanglingEndpoint(LinkId(0))
        );
        assert_eq!(
            FlowNetwork::build(&n, &[LinkSpec::new(1, 2, 0.0, 1.0)]).unwrap_err(),
            NetworkError::NonPositiveParameter(LinkId(0))
        );
        assert_eq!(
            FlowNetwork::build(&n, &[LinkSpec::new(1, 2, 1.0, -1.0)]).unwrap_err(),
            NetworkError::NonPositiveParameter(LinkId(0))
        );
        assert_eq!(
            FlowNetwork::build(
                &n,
                &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 2, 1.0, 1.0)]
            )
            .unwrap_err(),
            NetworkError::SelfLoop(LinkId(1))
        );
        assert_eq!(
            FlowNetwork::build(&ids(&[1, 2, 3]), &[LinkSpec::new(1, 2, 1.0, 1.0)]).unwrap_err(),
            NetworkError::IsolatedNode(NodeId(3))
        );
        // A pure cycle has no destination.
        assert_eq!(
            FlowNetwork::build(
                &n,
                &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 1, 1.0, 1.0)]
            )
            .unwrap_err(),
            NetworkError::NoDestination
        );
    }

    #[test]
    fn parallel_links_are_distinct() {
        let net = FlowNetwork::build(
            &ids(&[1, 2]),
            &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(1, 2, 2.0, 1.0)],
        )
        .unwrap();
        assert_eq!(net.outgoing(NodeId(1)).unwrap(), &[LinkId(0), LinkId(1)]);
        assert_eq!(net.incoming(NodeId(2)).unwrap(), &[LinkId(0), LinkId(1)]);
    }

    #[test]
    fn cuts() {
        let net = example();
        assert!(net.outgoing_cut(&NodeSet::empty()).is_empty());

        let u = NodeSet::new(&net, ids(&[1, 2])).unwrap();
        // (1,3), (2,4), (2,3)
        assert_eq!(net.outgoing_cut(&u), vec![LinkId(1), LinkId(2), LinkId(3)]);

        let all = NodeSet::new(&net, net.non_destinations()).unwrap();
        let into_dest: Vec<LinkId> = net
            .links()
            .iter()
            .filter(|l| net.kind(l.head) == Some(NodeKind::Destination))
            .map(|l| l.id)
            .collect();
        assert_eq!(net.outgoing_cut(&all), into_dest);

        assert_eq!(
            NodeSet::new(&net, ids(&[1, 4])).unwrap_err(),
            NetworkError::DestinationInSet(NodeId(4))
        );
    }

    #[test]
    fn cut_orientation_is_complementary() {
        let net = example();
        for mask in 0u32..8 {
            let members = (0..3)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| NodeId(b + 1));
            let u = NodeSet::new(&net, members).unwrap();
            let out = net.outgoing_cut(&u);
            for l in net.links() {
                let reversed_in = !u.contains(l.head) && u.contains(l.tail);
                assert_eq!(out.contains(&l.id), reversed_in);
            }
            // Every link is in at most one of E_U^+ and E_U^-.
            let inc = net.incoming_cut(&u);
            assert!(out.iter().all(|l| !inc.contains(l)));
        }
    }
}
