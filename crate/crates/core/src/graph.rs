//! Graph views of a market round.
//!
//! Contracts first form a directed information-flow graph over vehicles and
//! roadside units. Folding the RSUs into edge labels gives a digraph over
//! vehicles only. Finally each contract becomes a vertex of an undirected
//! employment graph whose edge feature depends on the role looking at it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ContractId, DemandProfile, EmploymentContract, ExecutionReport};
use crate::pool::{Cell, GridRef, TwinResourcePool};
use crate::process::SensingMode;
use crate::scenario::{CavId, RsuId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Distributor,
    Purchaser,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Distributor => "distributor",
            Role::Purchaser => "purchaser",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowNode {
    Cav(CavId),
    Rsu(RsuId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub from: FlowNode,
    pub to: FlowNode,
    pub contract: ContractId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowGraph {
    pub nodes: BTreeSet<FlowNode>,
    pub edges: Vec<FlowEdge>,
}

/// Information flows from the employee, through the relay RSU if any, to
/// the employer. Work kept at the employee is a self-loop.
pub fn build_flow_graph(contracts: &[EmploymentContract]) -> FlowGraph {
    let mut g = FlowGraph::default();
    for c in contracts {
        let (e, boss) = (FlowNode::Cav(c.employee), FlowNode::Cav(c.employer));
        g.nodes.insert(e);
        g.nodes.insert(boss);
        match c.rsu {
            None => g.edges.push(FlowEdge { from: e, to: boss, contract: c.id }),
            Some(r) => {
                let relay = FlowNode::Rsu(r);
                g.nodes.insert(relay);
                g.edges.push(FlowEdge { from: e, to: relay, contract: c.id });
                g.edges.push(FlowEdge { from: relay, to: boss, contract: c.id });
            }
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CavEdge {
    pub from: CavId,
    pub to: CavId,
    pub rsu: Option<RsuId>,
    pub contract: ContractId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CavDigraph {
    pub nodes: BTreeSet<CavId>,
    pub edges: Vec<CavEdge>,
}

/// Collapses every employee→RSU→employer path into one labelled edge.
pub fn fold_rsus(fg: &FlowGraph) -> Result<CavDigraph> {
    let mut by_contract: BTreeMap<ContractId, Vec<FlowEdge>> = BTreeMap::new();
    for e in &fg.edges {
        by_contract.entry(e.contract).or_default().push(*e);
    }
    let mut out = CavDigraph::default();
    for (id, path) in by_contract {
        let dangling = || Error::Structure(format!("contract {id} has no employee-to-employer path"));
        let edge = match path.as_slice() {
            [FlowEdge { from: FlowNode::Cav(a), to: FlowNode::Cav(b), .. }] => {
                CavEdge { from: *a, to: *b, rsu: None, contract: id }
            }
            [FlowEdge { from: FlowNode::Cav(a), to: FlowNode::Rsu(r1), .. }, FlowEdge { from: FlowNode::Rsu(r2), to: FlowNode::Cav(b), .. }]
                if r1 == r2 =>
            {
                CavEdge { from: *a, to: *b, rsu: Some(*r1), contract: id }
            }
            _ => return Err(dangling()),
        };
        out.nodes.insert(edge.from);
        out.nodes.insert(edge.to);
        out.edges.push(edge);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub feature: f64,
}

/// Undirected graph with a feature row per vertex and one scalar per edge.
/// This is also the input format of the graph network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmploymentGraph {
    pub role: Role,
    /// Vertex labels; candidate vertices that are not yet contracts carry
    /// ids past the formed ones.
    pub vertices: Vec<ContractId>,
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<GraphEdge>,
}

/// Number of base features produced by [`build_employment_graph`].
pub const BASE_FEATURES: usize = 6;

impl EmploymentGraph {
    pub fn new(role: Role, features: Vec<Vec<f64>>, edges: Vec<GraphEdge>) -> Self {
        let vertices = (0..features.len() as u32).map(ContractId).collect();
        EmploymentGraph { role, vertices, features, edges }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Neighbours of every vertex with the connecting edge feature.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.feature));
            if e.a != e.b {
                adj[e.b].push((e.a, e.feature));
            }
        }
        adj
    }

    /// Relabels vertices: vertex `i` moves to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> EmploymentGraph {
        let n = self.len();
        let mut vertices = vec![ContractId(0); n];
        let mut features = vec![Vec::new(); n];
        for i in 0..n {
            vertices[perm[i]] = self.vertices[i];
            features[perm[i]] = self.features[i].clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (perm[e.a], perm[e.b]);
                GraphEdge { a: a.min(b), b: a.max(b), feature: e.feature }
            })
            .collect();
        EmploymentGraph { role: self.role, vertices, features, edges }
    }

    /// Edge list `(v1, v2, feature)` followed by the vertex feature table.
    pub fn dump(&self) -> String {
        let mut out = format!("# {} graph, {} vertices, {} edges\n", self.role, self.len(), self.edges.len());
        for e in &self.edges {
            let _ = writeln!(out, "({}, {}, {})", self.vertices[e.a], self.vertices[e.b], e.feature);
        }
        out.push_str("# vertex features\n");
        for (v, f) in self.vertices.iter().zip(&self.features) {
            let row: Vec<String> = f.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{v}: {}", row.join(" "));
        }
        out
    }
}

/// Σ over targets of the smaller information both contracts produced.
pub fn repeated_information(report: &ExecutionReport, c1: ContractId, c2: ContractId) -> f64 {
    let info = |id| {
        report
            .outcomes
            .iter()
            .filter(|o| o.contract.id == id)
            .filter_map(|o| o.contract.produced.as_ref())
            .map(|r| (r.target, r.info))
            .collect::<BTreeMap<_, _>>()
    };
    let (a, b) = (info(c1), info(c2));
    a.iter().filter_map(|(t, x)| b.get(t).map(|y| x.min(*y))).sum()
}

fn contract_cells(pool: &TwinResourcePool, c: &EmploymentContract) -> BTreeSet<(GridRef, Cell)> {
    c.receipts.all().into_iter().filter_map(|r| pool.cells_of(r).ok()).flatten().collect()
}

/// Cells referenced by the receipts of both contracts.
pub fn reused_resources(pool: &TwinResourcePool, c1: &EmploymentContract, c2: &EmploymentContract) -> usize {
    let a = contract_cells(pool, c1);
    contract_cells(pool, c2).intersection(&a).count()
}

fn shares_cav(a: &EmploymentContract, b: &EmploymentContract) -> bool {
    a.touches(b.employee) || a.touches(b.employer)
}

/// Base vertex features of a contract: information produced, cost,
/// target information, ordered quality, mode flag (1 = passive) and
/// self-employment flag.
pub fn contract_features(c: &EmploymentContract, info: f64, cost: f64, target_info: f64) -> Vec<f64> {
    vec![
        info,
        cost,
        target_info,
        c.ordered_quality,
        if c.mode == SensingMode::Passive { 1.0 } else { 0.0 },
        if c.is_self_employment() { 1.0 } else { 0.0 },
    ]
}

/// One vertex per executed contract. Two contracts are joined when their
/// role feature is positive or when they share a vehicle; the latter
/// alone gives feature 0.
pub fn build_employment_graph(
    report: &ExecutionReport,
    pool: &TwinResourcePool,
    demand: &DemandProfile,
    role: Role,
) -> EmploymentGraph {
    let outcomes = &report.outcomes;
    let features = outcomes
        .iter()
        .map(|o| {
            let c = &o.contract;
            let info = c.produced.as_ref().map_or(0.0, |r| r.info);
            let it = demand.info_values.get(&c.target).copied().unwrap_or(0.0);
            contract_features(c, info, o.cost, it)
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            let (a, b) = (&outcomes[i].contract, &outcomes[j].contract);
            let feature = match role {
                Role::Distributor => repeated_information(report, a.id, b.id),
                Role::Purchaser => reused_resources(pool, a, b) as f64,
            };
            if feature > 0.0 || shares_cav(a, b) {
                edges.push(GraphEdge { a: i, b: j, feature });
            }
        }
    }
    EmploymentGraph { role, vertices: outcomes.iter().map(|o| o.contract.id).collect(), features, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{ContractOutcome, ContractReceipts};
    use crate::pool::Site;
    use crate::process::InformationRecord;
    use crate::scenario::NctId;

    fn contract(id: u32, employer: u32, employee: u32, rsu: Option<u32>) -> EmploymentContract {
        EmploymentContract {
            id: ContractId(id),
            employer: CavId(employer),
            employee: CavId(employee),
            rsu: rsu.map(RsuId),
            target: NctId(0),
            mode: SensingMode::Active,
            slots: 1,
            site: rsu.map_or(Site::Cav(CavId(employee)), |r| Site::Rsu(RsuId(r))),
            ordered_quality: 0.5,
            receipts: ContractReceipts::default(),
            produced: None,
        }
    }

    fn outcome(mut c: EmploymentContract, target: u32, info: f64) -> ContractOutcome {
        c.target = NctId(target);
        c.produced = Some(InformationRecord {
            target: NctId(target),
            info,
            quality: 0.75,
            site: c.site,
            source: Some(c.id),
        });
        ContractOutcome { contract: c, sensing: None, transfer: None, cost: 1.0, error: None }
    }

    #[test]
    fn flow_graph_shapes() {
        assert_eq!(build_flow_graph(&[]), FlowGraph::default());
        let g = build_flow_graph(&[contract(0, 1, 1, None)]);
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].from, g.edges[0].to);
        let g = build_flow_graph(&[contract(0, 2, 1, Some(0))]);
        assert_eq!(g.edges.len(), 2);
        assert!(g.nodes.contains(&FlowNode::Rsu(RsuId(0))));
    }

    #[test]
    fn folding_keeps_parallel_contracts() {
        let cs = [contract(0, 2, 1, Some(0)), contract(1, 2, 1, Some(0)), contract(2, 1, 1, None)];
        let d = fold_rsus(&build_flow_graph(&cs)).unwrap();
        assert_eq!(d.edges.len(), 3);
        assert_eq!(d.edges[0], CavEdge { from: CavId(1), to: CavId(2), rsu: Some(RsuId(0)), contract: ContractId(0) });
        assert_eq!(d.edges[2].rsu, None);
        assert_eq!(d.nodes, BTreeSet::from([CavId(1), CavId(2)]));
    }

    #[test]
    fn dangling_relay_is_rejected() {
        let mut g = build_flow_graph(&[contract(0, 2, 1, Some(0))]);
        g.edges.pop();
        assert!(matches!(fold_rsus(&g), Err(Error::Structure(_))));
    }

    #[test]
    fn repeated_information_is_pairwise_min() {
        let rep = ExecutionReport {
            outcomes: vec![
                outcome(contract(0, 0, 0, None), 3, 75.0),
                outcome(contract(1, 1, 1, None), 3, 40.0),
                outcome(contract(2, 2, 2, None), 4, 10.0),
            ],
        };
        assert_eq!(repeated_information(&rep, ContractId(0), ContractId(1)), 40.0);
        assert_eq!(repeated_information(&rep, ContractId(1), ContractId(0)), 40.0);
        assert_eq!(repeated_information(&rep, ContractId(0), ContractId(2)), 0.0);
        assert_eq!(repeated_information(&rep, ContractId(0), ContractId(0)), 75.0);
    }

    #[test]
    fn edges_follow_role_and_shared_vehicles() {
        let s = crate::fixtures::tiny3x4();
        let pool = TwinResourcePool::new(&s);
        let d = crate::market::publish_demand(&s);
        let rep = ExecutionReport {
            outcomes: vec![
                outcome(contract(0, 0, 0, None), 0, 20.0),
                outcome(contract(1, 1, 1, None), 0, 37.5),
                outcome(contract(2, 2, 2, None), 2, 15.0),
                outcome(contract(3, 0, 0, None), 1, 6.0),
            ],
        };
        let g = build_employment_graph(&rep, &pool, &d, Role::Distributor);
        assert_eq!(g.len(), 4);
        let pairs: Vec<(usize, usize, f64)> = g.edges.iter().map(|e| (e.a, e.b, e.feature)).collect();
        assert_eq!(pairs, vec![(0, 1, 20.0), (0, 3, 0.0)]);
        let g = build_employment_graph(&rep, &pool, &d, Role::Purchaser);
        let pairs: Vec<(usize, usize, f64)> = g.edges.iter().map(|e| (e.a, e.b, e.feature)).collect();
        assert_eq!(pairs, vec![(0, 3, 0.0)]);
        assert_eq!(g.features[0], vec![20.0, 1.0, 40.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn dump_format() {
        let g = EmploymentGraph::new(
            Role::Purchaser,
            vec![vec![1.0, 2.0], vec![3.0, 0.5]],
            vec![GraphEdge { a: 0, b: 1, feature: 3.0 }],
        );
        assert_eq!(g.dump(), "# purchaser graph, 2 vertices, 1 edges\n(c0, c1, 3)\n# vertex features\nc0: 1 2\nc1: 3 0.5\n");
    }
}
