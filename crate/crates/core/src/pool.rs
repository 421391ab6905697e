//! The twin resource pool: three families of time-indexed grids shared by
//! sensing, communication and computing.
//!
//! * time-space: one `T x A` grid per vehicle (antenna time/angle plane)
//! * time-frequency: one `T x F` grid for the whole twin domain
//! * time-computing: one `T x C` grid per compute site (vehicle LSCU or RSU ESCU)
//!
//! Every cell holds the set of live receipts that reference it. A block can
//! join an existing receipt's cells through `share_with`; shared cells cost
//! nothing extra and count once towards utilization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{CavId, RsuId, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReceiptId(pub u64);

impl fmt::Display for ReceiptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl From<ReceiptId> for u64 {
    fn from(r: ReceiptId) -> u64 {
        r.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Space,
    Freq,
    Compute,
}

/// Owner of resources: a vehicle (antennas, transmitter, LSCU) or an RSU (ESCU).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Cav(CavId),
    Rsu(RsuId),
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Cav(c) => c.fmt(f),
            Site::Rsu(r) => r.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub time: usize,
    pub ordinate: usize,
}

impl Cell {
    pub fn new(time: usize, ordinate: usize) -> Self {
        Cell { time, ordinate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRequest {
    pub kind: PoolKind,
    pub owner: Site,
    pub cells: BTreeSet<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_with: Option<ReceiptId>,
    /// Receiving RSU when a frequency block serves as an uplink.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<RsuId>,
}

impl BlockRequest {
    pub fn new(kind: PoolKind, owner: Site, cells: impl IntoIterator<Item = Cell>) -> Self {
        BlockRequest { kind, owner, cells: cells.into_iter().collect(), share_with: None, peer: None }
    }

    pub fn sharing(mut self, receipt: ReceiptId) -> Self {
        self.share_with = Some(receipt);
        self
    }

    pub fn toward(mut self, rsu: RsuId) -> Self {
        self.peer = Some(rsu);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReceipt {
    pub id: ReceiptId,
    pub request: BlockRequest,
    /// Cost of the cells this receipt added to the pool; zero for shared blocks.
    pub weighted_cost: f64,
}

impl AllocationReceipt {
    pub fn is_shared(&self) -> bool {
        self.request.share_with.is_some()
    }

    pub fn slots(&self) -> BTreeSet<usize> {
        self.request.cells.iter().map(|c| c.time).collect()
    }
}

/// Per-kind weights converting cell counts into cost units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub space: f64,
    pub freq: f64,
    pub compute: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { space: 1.0, freq: 1.0, compute: 1.0 }
    }
}

impl CostWeights {
    pub fn of(&self, kind: PoolKind) -> f64 {
        match kind {
            PoolKind::Space => self.space,
            PoolKind::Freq => self.freq,
            PoolKind::Compute => self.compute,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Grid {
    ordinates: usize,
    cells: Vec<BTreeSet<ReceiptId>>,
}

impl Grid {
    fn new(times: usize, ordinates: usize) -> Self {
        Grid { ordinates, cells: vec![BTreeSet::new(); times * ordinates] }
    }

    fn times(&self) -> usize {
        self.cells.len().checked_div(self.ordinates).unwrap_or(0)
    }

    fn index(&self, c: Cell) -> Option<usize> {
        (c.time < self.times() && c.ordinate < self.ordinates).then(|| c.time * self.ordinates + c.ordinate)
    }

    fn get(&self, c: Cell) -> Option<&BTreeSet<ReceiptId>> {
        self.index(c).map(|i| &self.cells[i])
    }

    fn allocated(&self) -> usize {
        self.cells.iter().filter(|s| !s.is_empty()).count()
    }

    fn entries(&self) -> Vec<CellEntry> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(i, s)| CellEntry {
                time: i / self.ordinates,
                ordinate: i % self.ordinates,
                receipts: s.iter().copied().collect(),
            })
            .collect()
    }
}

/// Identifies one grid inside the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridRef {
    Space(CavId),
    Freq,
    Compute(Site),
}

impl GridRef {
    pub fn of(kind: PoolKind, owner: Site) -> Option<GridRef> {
        match (kind, owner) {
            (PoolKind::Space, Site::Cav(c)) => Some(GridRef::Space(c)),
            (PoolKind::Freq, Site::Cav(_)) => Some(GridRef::Freq),
            (PoolKind::Compute, site) => Some(GridRef::Compute(site)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PoolEvent {
    Allocate { receipt: ReceiptId, request: BlockRequest },
    Release { receipt: ReceiptId },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub space: f64,
    pub freq: f64,
    pub compute: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub time: usize,
    pub ordinate: usize,
    pub receipts: Vec<ReceiptId>,
}

/// JSON-friendly view of every allocated cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDump {
    pub space: BTreeMap<String, Vec<CellEntry>>,
    pub freq: Vec<CellEntry>,
    pub compute: BTreeMap<String, Vec<CellEntry>>,
    pub receipts: Vec<AllocationReceipt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinResourcePool {
    time_horizon: usize,
    space: BTreeMap<CavId, Grid>,
    freq: Grid,
    compute: BTreeMap<Site, Grid>,
    receipts: BTreeMap<ReceiptId, AllocationReceipt>,
    next_receipt: u64,
    weights: CostWeights,
    log: Vec<PoolEvent>,
}

impl TwinResourcePool {
    /// Fresh pool sized from the scenario; compute heights come from each
    /// vehicle's LSCU and each RSU's ESCU.
    pub fn new(s: &Scenario) -> Self {
        let t = s.time_horizon;
        let mut compute = BTreeMap::new();
        for c in &s.cavs {
            compute.insert(Site::Cav(c.id), Grid::new(t, c.local_compute_units as usize));
        }
        for r in &s.rsus {
            compute.insert(Site::Rsu(r.id), Grid::new(t, r.edge_compute_units as usize));
        }
        TwinResourcePool {
            time_horizon: t,
            space: s.cavs.iter().map(|c| (c.id, Grid::new(t, s.angle_sectors))).collect(),
            freq: Grid::new(t, s.subcarriers),
            compute,
            receipts: BTreeMap::new(),
            next_receipt: 0,
            weights: s.pricing.weights,
            log: Vec::new(),
        }
    }

    /// Rebuilds a pool by applying a recorded event log to a fresh pool.
    pub fn replay(s: &Scenario, events: &[PoolEvent]) -> Result<Self> {
        let mut pool = TwinResourcePool::new(s);
        for ev in events {
            match ev {
                PoolEvent::Allocate { receipt, request } => {
                    let got = pool.allocate(request.clone())?;
                    if got.id != *receipt {
                        return Err(Error::Structure(format!(
                            "replayed receipt {} does not match logged {}",
                            got.id, receipt
                        )));
                    }
                }
                PoolEvent::Release { receipt } => pool.release(*receipt)?,
            }
        }
        Ok(pool)
    }

    pub fn time_horizon(&self) -> usize {
        self.time_horizon
    }

    pub fn weights(&self) -> CostWeights {
        self.weights
    }

    pub fn log(&self) -> &[PoolEvent] {
        &self.log
    }

    pub fn receipt(&self, id: ReceiptId) -> Result<&AllocationReceipt> {
        self.receipts.get(&id).ok_or_else(|| Error::lookup("receipt", id))
    }

    pub fn receipts(&self) -> impl Iterator<Item = &AllocationReceipt> {
        self.receipts.values()
    }

    pub fn is_live(&self, id: ReceiptId) -> bool {
        self.receipts.contains_key(&id)
    }

    /// Number of ordinates (sectors, subcarriers or compute units) of a grid.
    pub fn ordinates(&self, grid: GridRef) -> Option<usize> {
        self.grid(grid).map(|g| g.ordinates)
    }

    fn grid(&self, grid: GridRef) -> Option<&Grid> {
        match grid {
            GridRef::Space(c) => self.space.get(&c),
            GridRef::Freq => Some(&self.freq),
            GridRef::Compute(site) => self.compute.get(&site),
        }
    }

    fn grid_mut(&mut self, grid: GridRef) -> &mut Grid {
        match grid {
            GridRef::Space(c) => self.space.get_mut(&c).expect("validated grid"),
            GridRef::Freq => &mut self.freq,
            GridRef::Compute(site) => self.compute.get_mut(&site).expect("validated grid"),
        }
    }

    /// Receipts referencing a cell; `None` when the cell does not exist.
    pub fn references(&self, grid: GridRef, cell: Cell) -> Option<&BTreeSet<ReceiptId>> {
        self.grid(grid)?.get(cell)
    }

    pub fn is_free(&self, grid: GridRef, cell: Cell) -> bool {
        self.references(grid, cell).is_some_and(|s| s.is_empty())
    }

    /// Free cells of a grid in row-major `(time, ordinate)` order.
    pub fn free_cells(&self, grid: GridRef) -> Vec<Cell> {
        let Some(g) = self.grid(grid) else { return Vec::new() };
        g.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_empty())
            .map(|(i, _)| Cell::new(i / g.ordinates, i % g.ordinates))
            .collect()
    }

    /// Grid cells referenced by a receipt.
    pub fn cells_of(&self, id: ReceiptId) -> Result<BTreeSet<(GridRef, Cell)>> {
        let r = self.receipt(id)?;
        let grid = GridRef::of(r.request.kind, r.request.owner).expect("validated receipt");
        Ok(r.request.cells.iter().map(|c| (grid, *c)).collect())
    }

    /// Atomically allocates a block; on error the pool is left untouched.
    pub fn allocate(&mut self, req: BlockRequest) -> Result<AllocationReceipt> {
        if req.cells.is_empty() {
            return Err(Error::InvalidRequest("block request has no cells".into()));
        }
        let grid_ref = GridRef::of(req.kind, req.owner).ok_or_else(|| {
            Error::InvalidRequest(format!("{:?} blocks cannot be owned by {}", req.kind, req.owner))
        })?;
        if let Site::Cav(c) = req.owner {
            if !self.space.contains_key(&c) {
                return Err(Error::lookup("cav", c));
            }
        }
        if req.peer.is_some() && req.kind != PoolKind::Freq {
            return Err(Error::InvalidRequest("only frequency blocks carry a peer".into()));
        }
        let grid = self.grid(grid_ref).ok_or_else(|| Error::InvalidRequest(format!("no grid for {}", req.owner)))?;
        let out: Vec<Cell> = req.cells.iter().copied().filter(|c| grid.index(*c).is_none()).collect();
        if !out.is_empty() {
            return Err(Error::Bounds(format!(
                "{:?} grid of {} is {}x{}, got {out:?}",
                req.kind,
                req.owner,
                grid.times(),
                grid.ordinates
            )));
        }

        let mut req = req;
        if let Some(base) = req.share_with {
            let base = self.receipt(base)?;
            if base.request.kind != req.kind || base.request.owner != req.owner {
                return Err(Error::InvalidRequest(format!(
                    "sharing requires identical owner and kind ({} is {:?}/{})",
                    base.id, base.request.kind, base.request.owner
                )));
            }
            match (req.peer, base.request.peer) {
                (None, p) => req.peer = p,
                (Some(a), Some(b)) if a == b => {}
                (Some(a), _) => {
                    return Err(Error::InvalidRequest(format!("peer {a} differs from shared block")))
                }
            }
            let foreign: Vec<Cell> = req
                .cells
                .iter()
                .copied()
                .filter(|c| !grid.get(*c).is_some_and(|s| s.contains(&base.id)))
                .collect();
            if !foreign.is_empty() {
                return Err(Error::InvalidRequest(format!("cells {foreign:?} are not held by {}", base.id)));
            }
        } else {
            let taken: Vec<Cell> = req
                .cells
                .iter()
                .copied()
                .filter(|c| !grid.get(*c).is_some_and(|s| s.is_empty()))
                .collect();
            if !taken.is_empty() {
                return Err(Error::Conflict { kind: req.kind, cells: taken });
            }
        }

        let id = ReceiptId(self.next_receipt);
        self.next_receipt += 1;
        let weighted_cost = if req.share_with.is_some() {
            0.0
        } else {
            self.weights.of(req.kind) * req.cells.len() as f64
        };
        let g = self.grid_mut(grid_ref);
        for c in &req.cells {
            let i = g.index(*c).expect("bounds checked");
            g.cells[i].insert(id);
        }
        let receipt = AllocationReceipt { id, request: req.clone(), weighted_cost };
        self.receipts.insert(id, receipt.clone());
        self.log.push(PoolEvent::Allocate { receipt: id, request: req });
        Ok(receipt)
    }

    pub fn release(&mut self, id: ReceiptId) -> Result<()> {
        let r = self.receipts.remove(&id).ok_or_else(|| Error::lookup("receipt", id))?;
        let grid_ref = GridRef::of(r.request.kind, r.request.owner).expect("validated receipt");
        let g = self.grid_mut(grid_ref);
        for c in &r.request.cells {
            let i = g.index(*c).expect("validated receipt");
            g.cells[i].remove(&id);
        }
        self.log.push(PoolEvent::Release { receipt: id });
        Ok(())
    }

    pub fn utilization(&self) -> Utilization {
        fn frac<'a>(grids: impl Iterator<Item = &'a Grid>) -> f64 {
            let (used, total) = grids.fold((0, 0), |(u, t), g| (u + g.allocated(), t + g.cells.len()));
            if total == 0 {
                0.0
            } else {
                used as f64 / total as f64
            }
        }
        Utilization {
            space: frac(self.space.values()),
            freq: frac(std::iter::once(&self.freq)),
            compute: frac(self.compute.values()),
        }
    }

    /// Distinct allocated cells per kind.
    pub fn allocated_cells(&self) -> [usize; 3] {
        [
            self.space.values().map(Grid::allocated).sum(),
            self.freq.allocated(),
            self.compute.values().map(Grid::allocated).sum(),
        ]
    }

    /// Weighted count of distinct allocated cells.
    pub fn weighted_allocated(&self) -> f64 {
        let [s, f, c] = self.allocated_cells();
        self.weights.space * s as f64 + self.weights.freq * f as f64 + self.weights.compute * c as f64
    }

    /// Checks the structural invariants: every cell's reference set equals
    /// the live receipts naming it, and no frequency cell has two owners.
    pub fn check_invariants(&self) -> Result<()> {
        let mut expected: BTreeMap<(GridRef, Cell), BTreeSet<ReceiptId>> = BTreeMap::new();
        for r in self.receipts.values() {
            for key in self.cells_of(r.id)? {
                expected.entry(key).or_default().insert(r.id);
            }
        }
        let mut grids: Vec<(GridRef, &Grid)> = vec![(GridRef::Freq, &self.freq)];
        grids.extend(self.space.iter().map(|(c, g)| (GridRef::Space(*c), g)));
        grids.extend(self.compute.iter().map(|(s, g)| (GridRef::Compute(*s), g)));
        for (gr, g) in grids {
            for (i, refs) in g.cells.iter().enumerate() {
                let cell = Cell::new(i / g.ordinates, i % g.ordinates);
                let want = expected.remove(&(gr, cell)).unwrap_or_default();
                if *refs != want {
                    return Err(Error::Structure(format!("{gr:?} {cell:?} holds {refs:?}, expected {want:?}")));
                }
                if gr == GridRef::Freq {
                    let owners: BTreeSet<Site> = refs.iter().map(|r| self.receipts[r].request.owner).collect();
                    if owners.len() > 1 {
                        return Err(Error::Structure(format!("freq {cell:?} has owners {owners:?}")));
                    }
                }
            }
        }
        if let Some((k, _)) = expected.into_iter().next() {
            return Err(Error::Structure(format!("receipt names missing cell {k:?}")));
        }
        Ok(())
    }

    pub fn dump(&self) -> PoolDump {
        PoolDump {
            space: self.space.iter().map(|(c, g)| (c.to_string(), g.entries())).collect(),
            freq: self.freq.entries(),
            compute: self.compute.iter().map(|(s, g)| (s.to_string(), g.entries())).collect(),
            receipts: self.receipts.values().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn pool() -> TwinResourcePool {
        TwinResourcePool::new(&fixtures::tiny3x4())
    }

    fn space(cav: u32, cells: &[(usize, usize)]) -> BlockRequest {
        BlockRequest::new(PoolKind::Space, Site::Cav(CavId(cav)), cells.iter().map(|&(t, o)| Cell::new(t, o)))
    }

    #[test]
    fn fresh_pool_shapes() {
        let p = pool();
        assert_eq!(p.ordinates(GridRef::Space(CavId(0))), Some(4));
        assert_eq!(p.free_cells(GridRef::Space(CavId(0))).len(), 8 * 4);
        assert_eq!(p.free_cells(GridRef::Freq).len(), 8 * 4);
        assert_eq!(p.free_cells(GridRef::Compute(Site::Rsu(RsuId(0)))).len(), 8 * 4);
        assert_eq!(p.free_cells(GridRef::Compute(Site::Cav(CavId(2)))).len(), 8);
        assert_eq!(p.utilization(), Utilization::default());
    }

    #[test]
    fn allocate_conflict_is_atomic() {
        let mut p = pool();
        let r = p.allocate(space(0, &[(0, 0), (1, 0)])).unwrap();
        assert_eq!(r.weighted_cost, 2.0);
        assert!(!p.is_free(GridRef::Space(CavId(0)), Cell::new(0, 0)));
        let before = p.clone();
        match p.allocate(space(0, &[(2, 0), (1, 0)])) {
            Err(Error::Conflict { cells, .. }) => assert_eq!(cells, vec![Cell::new(1, 0)]),
            other => panic!("{other:?}"),
        }
        assert_eq!(p, before);
        assert!(matches!(p.allocate(space(0, &[(8, 0)])), Err(Error::Bounds(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn sharing_adds_reference_without_cost() {
        let mut p = pool();
        let r1 = p.allocate(space(1, &[(0, 2), (1, 2)])).unwrap();
        let r2 = p.allocate(space(1, &[(0, 2), (1, 2)]).sharing(r1.id)).unwrap();
        assert_eq!(r2.weighted_cost, 0.0);
        for t in 0..2 {
            assert_eq!(p.references(GridRef::Space(CavId(1)), Cell::new(t, 2)).unwrap().len(), 2);
        }
        // owner mismatch
        assert!(p.allocate(space(0, &[(0, 2)]).sharing(r1.id)).is_err());
        // cell not held by the shared receipt
        assert!(p.allocate(space(1, &[(3, 2)]).sharing(r1.id)).is_err());
        p.check_invariants().unwrap();
    }

    #[test]
    fn release_restores_fresh_state() {
        let mut p = pool();
        let fresh = pool();
        let r = p.allocate(space(0, &[(0, 0)])).unwrap();
        p.release(r.id).unwrap();
        assert_eq!(p.dump().space, fresh.dump().space);
        assert_eq!(p.utilization(), fresh.utilization());
        assert!(matches!(p.release(r.id), Err(Error::Lookup { .. })));
    }

    #[test]
    fn release_one_sharer_keeps_cells() {
        let mut p = pool();
        let r1 = p.allocate(space(0, &[(0, 1)])).unwrap();
        let r2 = p.allocate(space(0, &[(0, 1)]).sharing(r1.id)).unwrap();
        p.release(r1.id).unwrap();
        let refs = p.references(GridRef::Space(CavId(0)), Cell::new(0, 1)).unwrap();
        assert_eq!(refs, &BTreeSet::from([r2.id]));
        p.check_invariants().unwrap();
    }

    #[test]
    fn utilization_counts_cells_once() {
        let mut p = pool();
        let all: Vec<(usize, usize)> = (0..8).flat_map(|t| (0..4).map(move |a| (t, a))).collect();
        let r = p.allocate(space(2, &all)).unwrap();
        // one of three vehicles fully allocated
        assert!((p.utilization().space - 1.0 / 3.0).abs() < 1e-15);
        p.allocate(space(2, &all).sharing(r.id)).unwrap();
        assert!((p.utilization().space - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.utilization().freq, 0.0);
    }

    #[test]
    fn freq_sharing_across_transmitters_is_refused() {
        let mut p = pool();
        let f0 = BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(0)), [Cell::new(0, 0)]);
        let r = p.allocate(f0).unwrap();
        let f1 = BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(1)), [Cell::new(0, 0)]);
        assert!(matches!(p.allocate(f1.clone()), Err(Error::Conflict { .. })));
        assert!(p.allocate(f1.sharing(r.id)).is_err());
        p.check_invariants().unwrap();
    }

    #[test]
    fn shared_uplink_inherits_peer() {
        let mut p = pool();
        let up = BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(0)), [Cell::new(0, 0)]).toward(RsuId(0));
        let r = p.allocate(up).unwrap();
        let s = BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(0)), [Cell::new(0, 0)]).sharing(r.id);
        assert_eq!(p.allocate(s).unwrap().request.peer, Some(RsuId(0)));
    }

    #[test]
    fn replay_reconstructs() {
        let mut p = pool();
        let a = p.allocate(space(0, &[(0, 0)])).unwrap();
        p.allocate(space(1, &[(0, 0)])).unwrap();
        p.release(a.id).unwrap();
        let again = TwinResourcePool::replay(&fixtures::tiny3x4(), p.log()).unwrap();
        assert_eq!(again, p);
    }
}
