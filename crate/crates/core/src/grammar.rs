//! Neuron part grammar: symbols, productions and object-graph linting.
//!
//! Productions (closed symmetrically, with self-transitions):
//!
//! ```text
//! C ::= A | D | Y | E
//! A ::= B | E
//! D ::= S | Y | E
//! B ::= Y | E
//! S ::= Y | E
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("cannot validate an empty chain")]
    EmptyChain,
    #[error("unknown grammar symbol {0:?}")]
    UnknownSymbol(String),
    #[error("edge ({0}, {1}) references a node that is not in the graph")]
    DanglingEdge(u64, u64),
    #[error("invalid production table: {0}")]
    BadTable(String),
}

/// Part-of-neuron symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GrammarSymbol {
    #[serde(rename = "C")]
    CellBody,
    #[serde(rename = "A")]
    Axon,
    #[serde(rename = "D")]
    Shaft,
    #[serde(rename = "S")]
    Spine,
    #[serde(rename = "B")]
    Bouton,
    #[serde(rename = "Y")]
    Synapse,
    #[serde(rename = "E")]
    VolumeEdge,
    /// Glia, vessels and anything else outside the neuron vocabulary.
    #[serde(rename = "N")]
    NonNeuronal,
}

impl GrammarSymbol {
    /// The seven neuron symbols.
    pub const ALPHABET: [GrammarSymbol; 7] = [
        GrammarSymbol::CellBody,
        GrammarSymbol::Axon,
        GrammarSymbol::Shaft,
        GrammarSymbol::Spine,
        GrammarSymbol::Bouton,
        GrammarSymbol::Synapse,
        GrammarSymbol::VolumeEdge,
    ];

    pub fn letter(self) -> char {
        match self {
            GrammarSymbol::CellBody => 'C',
            GrammarSymbol::Axon => 'A',
            GrammarSymbol::Shaft => 'D',
            GrammarSymbol::Spine => 'S',
            GrammarSymbol::Bouton => 'B',
            GrammarSymbol::Synapse => 'Y',
            GrammarSymbol::VolumeEdge => 'E',
            GrammarSymbol::NonNeuronal => 'N',
        }
    }
}

impl fmt::Display for GrammarSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for GrammarSymbol {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "C" => GrammarSymbol::CellBody,
            "A" => GrammarSymbol::Axon,
            "D" => GrammarSymbol::Shaft,
            "S" => GrammarSymbol::Spine,
            "B" => GrammarSymbol::Bouton,
            "Y" => GrammarSymbol::Synapse,
            "E" => GrammarSymbol::VolumeEdge,
            "N" => GrammarSymbol::NonNeuronal,
            other => return Err(GrammarError::UnknownSymbol(other.to_string())),
        })
    }
}

/// Permitted symbol adjacencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionTable {
    /// Rules as written, left-hand side first.
    pub productions: BTreeSet<(GrammarSymbol, GrammarSymbol)>,
    #[serde(default = "default_true")]
    pub self_transitions: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ProductionTable {
    fn default() -> Self {
        use GrammarSymbol::*;
        let rules: [(GrammarSymbol, &[GrammarSymbol]); 5] = [
            (CellBody, &[Axon, Shaft, Synapse, VolumeEdge]),
            (Axon, &[Bouton, VolumeEdge]),
            (Shaft, &[Spine, Synapse, VolumeEdge]),
            (Bouton, &[Synapse, VolumeEdge]),
            (Spine, &[Synapse, VolumeEdge]),
        ];
        let productions = rules
            .iter()
            .flat_map(|(lhs, rhs)| rhs.iter().map(move |r| (*lhs, *r)))
            .collect();
        Self { productions, self_transitions: true }
    }
}

impl ProductionTable {
    /// Parse a JSON table such as `{"productions": [["S", "D"]], "self_transitions": true}`.
    pub fn from_json(text: &str) -> Result<Self, GrammarError> {
        let table: Self = serde_json::from_str(text).map_err(|e| GrammarError::BadTable(e.to_string()))?;
        if table.productions.iter().any(|(a, b)| {
            *a == GrammarSymbol::NonNeuronal || *b == GrammarSymbol::NonNeuronal
        }) {
            return Err(GrammarError::BadTable("non-neuronal symbols cannot appear in productions".into()));
        }
        Ok(table)
    }

    /// Undirected adjacency test; reflexive for neuron symbols.
    pub fn allowed(&self, a: GrammarSymbol, b: GrammarSymbol) -> bool {
        if a == GrammarSymbol::NonNeuronal || b == GrammarSymbol::NonNeuronal {
            return false;
        }
        (a == b && self.self_transitions)
            || self.productions.contains(&(a, b))
            || self.productions.contains(&(b, a))
    }

    /// Every consecutive pair of `path` must be allowed.
    pub fn validate_chain(&self, path: &[GrammarSymbol]) -> Result<bool, GrammarError> {
        if path.is_empty() {
            return Err(GrammarError::EmptyChain);
        }
        Ok(path.windows(2).all(|w| self.allowed(w[0], w[1])))
    }
}

/// `allowed_transition` under the default table.
pub fn allowed_transition(a: GrammarSymbol, b: GrammarSymbol) -> bool {
    ProductionTable::default().allowed(a, b)
}

/// `validate_chain` under the default table.
pub fn validate_chain(path: &[GrammarSymbol]) -> Result<bool, GrammarError> {
    ProductionTable::default().validate_chain(path)
}

/// Objects as nodes, spatial contacts or links as undirected edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectAdjacencyGraph {
    nodes: BTreeMap<u64, GrammarSymbol>,
    edges: BTreeSet<(u64, u64)>,
}

impl ObjectAdjacencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u64, symbol: GrammarSymbol) {
        self.nodes.insert(id, symbol);
    }

    pub fn add_edge(&mut self, a: u64, b: u64) -> Result<(), GrammarError> {
        if !self.nodes.contains_key(&a) || !self.nodes.contains_key(&b) {
            return Err(GrammarError::DanglingEdge(a, b));
        }
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeMap<u64, GrammarSymbol> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(u64, u64)> {
        &self.edges
    }

    pub fn neighbors(&self, id: u64) -> impl Iterator<Item = u64> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Nodes from manifest entries, edges from voxel contacts between them.
    pub fn from_volume<T: crate::scalar::Real>(
        volume: &crate::volume::LabelVolume<T>,
        entries: &[crate::volume::ObjectEntry],
        connectivity: crate::volume::Connectivity,
    ) -> Self {
        let mut graph = Self::new();
        for e in entries {
            graph.add_node(e.id, e.symbol);
        }
        for (a, b) in crate::volume::adjacent_pairs(volume, connectivity) {
            // contacts with unlisted ids carry no grammar information
            let _ = graph.add_edge(a, b);
        }
        graph
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ForbiddenEdge { a: u64, b: u64, symbol_a: GrammarSymbol, symbol_b: GrammarSymbol },
    OrphanSpine { id: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ForbiddenEdge { a, b, symbol_a, symbol_b } => {
                write!(f, "forbidden-edge\t{a}\t{b}\t{symbol_a}-{symbol_b}")
            }
            Violation::OrphanSpine { id } => write!(f, "orphan-spine\t{id}"),
        }
    }
}

/// Forbidden edges (in edge order) followed by orphan spines (by id).
pub fn lint_graph(graph: &ObjectAdjacencyGraph, table: &ProductionTable) -> Vec<Violation> {
    let mut out = Vec::new();
    for &(a, b) in &graph.edges {
        let (sa, sb) = (graph.nodes[&a], graph.nodes[&b]);
        if !table.allowed(sa, sb) {
            out.push(Violation::ForbiddenEdge { a, b, symbol_a: sa, symbol_b: sb });
        }
    }
    for (&id, &sym) in &graph.nodes {
        if sym == GrammarSymbol::Spine
            && !graph.neighbors(id).any(|n| graph.nodes[&n] == GrammarSymbol::Shaft)
        {
            out.push(Violation::OrphanSpine { id });
        }
    }
    out
}

/// Line-oriented text report, one violation per line.
pub fn violation_report(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("{v}\n")).collect()
}

/// Spine ids reported as orphans.
pub fn orphan_spines(violations: &[Violation]) -> Vec<u64> {
    violations
        .iter()
        .filter_map(|v| match v {
            Violation::OrphanSpine { id } => Some(*id),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::GrammarSymbol::*;
    use super::*;

    fn chain(s: &str) -> Vec<GrammarSymbol> {
        s.split('-').map(|c| c.parse().unwrap()).collect()
    }

    #[test]
    fn worked_transitions() {
        assert!(allowed_transition(Spine, Shaft));
        assert!(!allowed_transition(Spine, Axon));
        assert!(allowed_transition(Spine, Spine));
        assert!(!allowed_transition(NonNeuronal, NonNeuronal));
        assert!(!allowed_transition(NonNeuronal, Shaft));
    }

    #[test]
    fn worked_chains() {
        assert_eq!(validate_chain(&chain("Y-B-A-C-D-S-Y")), Ok(true));
        assert_eq!(validate_chain(&chain("S-A")), Ok(false));
        assert_eq!(validate_chain(&chain("D-D-S-Y")), Ok(true));
        assert_eq!(validate_chain(&[]), Err(GrammarError::EmptyChain));
    }

    #[test]
    fn lint_examples() {
        let table = ProductionTable::default();
        let mut g = ObjectAdjacencyGraph::new();
        g.add_node(1, Spine);
        g.add_node(2, Shaft);
        g.add_node(3, Synapse);
        g.add_edge(1, 2).unwrap();
        g.add_edge(2, 3).unwrap();
        assert!(lint_graph(&g, &table).is_empty());

        let mut g = ObjectAdjacencyGraph::new();
        g.add_node(1, Spine);
        g.add_node(2, Bouton);
        g.add_edge(1, 2).unwrap();
        let v = lint_graph(&g, &table);
        assert_eq!(v.len(), 2);
        assert!(matches!(v[0], Violation::ForbiddenEdge { a: 1, b: 2, .. }));
        assert_eq!(v[1], Violation::OrphanSpine { id: 1 });
        assert_eq!(violation_report(&v[1..]), "orphan-spine\t1\n");
        assert_eq!(g.add_edge(1, 9), Err(GrammarError::DanglingEdge(1, 9)));
    }

    #[test]
    fn table_overrides_from_json() {
        let t = ProductionTable::from_json(r#"{"productions": [["S", "D"], ["A", "D"]], "self_transitions": false}"#)
            .unwrap();
        assert!(t.allowed(Axon, Shaft));
        assert!(!t.allowed(Spine, Spine));
        assert!(ProductionTable::from_json(r#"{"productions": [], "extra": 1}"#).is_err());
        assert!(ProductionTable::from_json(r#"{"productions": [["N", "D"]]}"#).is_err());
    }

    #[test]
    fn violations_serialize_as_json() {
        let v = Violation::OrphanSpine { id: 4 };
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"kind":"orphan_spine","id":4}"#);
    }
}
