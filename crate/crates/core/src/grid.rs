//! Cell sets on product grids G x H = F_p^nG x F_p^nH.
//!
//! `GridSet` is an arbitrary bitset of cells; `TransverseSet` is the validated
//! refinement in which every horizontal slice is a nonempty subspace of G and
//! every vertical slice is a nonempty subspace of H. Transverse sets are stored
//! column-wise as canonical subspace bases, which keeps membership, slices, and
//! serialization exact.

use crate::linalg::{FieldSpec, LinalgError, MatP, Subspace, VecP};
use crate::lss::LinearSubspaceSystem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of cells in one grid.
pub const GRID_CAP: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("grid with {cells} cells exceeds the cap {cap}")]
    CellCapExceeded { cells: u128, cap: u64 },
    #[error("set is not transverse: {0}")]
    NotTransverse(SliceWitness),
    #[error("malformed grid data: {0}")]
    Format(String),
    #[error("exhaustive sweep of {candidates} candidates exceeds the work cap {cap}")]
    WorkCapExceeded { candidates: u128, cap: u64 },
}

/// First slice that violates transversality, for error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceWitness {
    /// Horizontal slice at this y is empty or not a subspace of G.
    Row { y: VecP, empty: bool },
    /// Vertical slice at this x is empty or not a subspace of H.
    Col { x: VecP, empty: bool },
}

impl std::fmt::Display for SliceWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SliceWitness::Row { y, empty } => write!(
                f,
                "horizontal slice at y={y} is {}",
                if *empty { "empty" } else { "not a subspace" }
            ),
            SliceWitness::Col { x, empty } => write!(
                f,
                "vertical slice at x={x} is {}",
                if *empty { "empty" } else { "not a subspace" }
            ),
        }
    }
}

/// The product ambient G x H with its cell indexing: cell(x, y) = x * |H| + y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ambient2 {
    g: FieldSpec,
    h: FieldSpec,
}

impl Ambient2 {
    pub fn new(p: u16, ng: u16, nh: u16) -> Result<Self, GridError> {
        let g = FieldSpec::new(p, ng)?;
        let h = FieldSpec::new(p, nh)?;
        let cells = u128::from(g.size()) * u128::from(h.size());
        if cells > u128::from(GRID_CAP) {
            return Err(GridError::CellCapExceeded { cells, cap: GRID_CAP });
        }
        Ok(Ambient2 { g, h })
    }

    pub fn p(&self) -> u16 {
        self.g.p()
    }

    pub fn g(&self) -> FieldSpec {
        self.g
    }

    pub fn h(&self) -> FieldSpec {
        self.h
    }

    pub fn cells(&self) -> u64 {
        self.g.size() * self.h.size()
    }

    pub fn cell_index(&self, x: VecP, y: VecP) -> u64 {
        debug_assert!(x < self.g.size() && y < self.h.size());
        x * self.h.size() + y
    }

    pub fn cell_coords(&self, idx: u64) -> (VecP, VecP) {
        (idx / self.h.size(), idx % self.h.size())
    }
}

/// Plain bitset of cells over an `Ambient2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSet {
    ambient: Ambient2,
    words: Vec<u64>,
}

impl GridSet {
    pub fn empty(ambient: Ambient2) -> Self {
        let words = vec![0u64; (ambient.cells() as usize + 63) / 64];
        GridSet { ambient, words }
    }

    pub fn full(ambient: Ambient2) -> Self {
        let mut s = GridSet::empty(ambient);
        for idx in 0..ambient.cells() {
            s.insert_index(idx);
        }
        s
    }

    pub fn ambient(&self) -> Ambient2 {
        self.ambient
    }

    pub fn contains(&self, x: VecP, y: VecP) -> bool {
        let idx = self.ambient.cell_index(x, y);
        self.words[(idx / 64) as usize] >> (idx % 64) & 1 == 1
    }

    pub fn insert(&mut self, x: VecP, y: VecP) {
        self.insert_index(self.ambient.cell_index(x, y));
    }

    pub fn remove(&mut self, x: VecP, y: VecP) {
        let idx = self.ambient.cell_index(x, y);
        self.words[(idx / 64) as usize] &= !(1u64 << (idx % 64));
    }

    fn insert_index(&mut self, idx: u64) {
        self.words[(idx / 64) as usize] |= 1u64 << (idx % 64);
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Exact density |A| / |G x H| as a (numerator, denominator) pair.
    pub fn density(&self) -> (u64, u64) {
        (self.count(), self.ambient.cells())
    }

    /// Horizontal slice {x : (x, y) in A}.
    pub fn row_slice(&self, y: VecP) -> Vec<VecP> {
        (0..self.ambient.g.size())
            .filter(|&x| self.contains(x, y))
            .collect()
    }

    /// Vertical slice {y : (x, y) in A}.
    pub fn col_slice(&self, x: VecP) -> Vec<VecP> {
        (0..self.ambient.h.size())
            .filter(|&y| self.contains(x, y))
            .collect()
    }

    /// Horizontal difference set: {(x1 - x2, y) : (x1, y), (x2, y) in A}.
    pub fn dhor(&self) -> GridSet {
        let g = self.ambient.g;
        let mut out = GridSet::empty(self.ambient);
        for y in 0..self.ambient.h.size() {
            let xs = self.row_slice(y);
            for &x1 in &xs {
                for &x2 in &xs {
                    out.insert(g.sub(x1, x2), y);
                }
            }
        }
        out
    }

    /// Vertical difference set: {(x, y1 - y2) : (x, y1), (x, y2) in A}.
    pub fn dver(&self) -> GridSet {
        let h = self.ambient.h;
        let mut out = GridSet::empty(self.ambient);
        for x in 0..self.ambient.g.size() {
            let ys = self.col_slice(x);
            for &y1 in &ys {
                for &y2 in &ys {
                    out.insert(x, h.sub(y1, y2));
                }
            }
        }
        out
    }

    /// Check that a slice element list forms a nonempty subspace.
    fn slice_ok(field: FieldSpec, elems: &[VecP]) -> Result<(), bool> {
        if elems.is_empty() {
            return Err(true);
        }
        let span = Subspace::canonicalize(field, elems).expect("slice encodings in range");
        if span.size() == elems.len() as u64 {
            Ok(())
        } else {
            Err(false)
        }
    }

    pub fn check_transverse(&self) -> Result<(), SliceWitness> {
        for x in 0..self.ambient.g.size() {
            if let Err(empty) = Self::slice_ok(self.ambient.h, &self.col_slice(x)) {
                return Err(SliceWitness::Col { x, empty });
            }
        }
        for y in 0..self.ambient.h.size() {
            if let Err(empty) = Self::slice_ok(self.ambient.g, &self.row_slice(y)) {
                return Err(SliceWitness::Row { y, empty });
            }
        }
        Ok(())
    }

    pub fn is_transverse(&self) -> bool {
        self.check_transverse().is_ok()
    }

    pub fn to_transverse(&self) -> Result<TransverseSet, GridError> {
        self.check_transverse().map_err(GridError::NotTransverse)?;
        let columns = (0..self.ambient.g.size())
            .map(|x| Subspace::canonicalize(self.ambient.h, &self.col_slice(x)))
            .collect::<Result<Vec<_>, _>>()?;
        TransverseSet::new(self.ambient, columns)
    }

    /// Serialize to the exchange format: header fields plus a lowercase hex
    /// encoding of the cell bitset. Byte j carries cells 8j..8j+8, LSB first.
    pub fn to_json(&self) -> String {
        let n_bytes = (self.ambient.cells() as usize + 7) / 8;
        let mut bytes = vec![0u8; n_bytes];
        for idx in 0..self.ambient.cells() {
            if self.words[(idx / 64) as usize] >> (idx % 64) & 1 == 1 {
                bytes[(idx / 8) as usize] |= 1 << (idx % 8);
            }
        }
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        let repr = GridSetRepr {
            p: self.ambient.p(),
            ng: self.ambient.g.n(),
            nh: self.ambient.h.n(),
            cells: hex,
        };
        serde_json::to_string(&repr).expect("grid repr serializes")
    }

    pub fn from_json(text: &str) -> Result<GridSet, GridError> {
        let repr: GridSetRepr =
            serde_json::from_str(text).map_err(|e| GridError::Format(e.to_string()))?;
        let ambient = Ambient2::new(repr.p, repr.ng, repr.nh)?;
        let n_bytes = (ambient.cells() as usize + 7) / 8;
        if repr.cells.len() != n_bytes * 2 {
            return Err(GridError::Format(format!(
                "cell hex has {} chars, expected {}",
                repr.cells.len(),
                n_bytes * 2
            )));
        }
        let mut set = GridSet::empty(ambient);
        for (j, chunk) in repr.cells.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|_| GridError::Format("bad hex".into()))?;
            let byte =
                u8::from_str_radix(s, 16).map_err(|_| GridError::Format("bad hex".into()))?;
            for k in 0..8u64 {
                let idx = j as u64 * 8 + k;
                if byte >> k & 1 == 1 {
                    if idx >= ambient.cells() {
                        return Err(GridError::Format("padding bits must be zero".into()));
                    }
                    set.insert_index(idx);
                }
            }
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct GridSetRepr {
    p: u16,
    #[serde(rename = "nG")]
    ng: u16,
    #[serde(rename = "nH")]
    nh: u16,
    cells: String,
}

/// A transverse set stored as one subspace of H per x in G. Construction
/// validates the horizontal slices, so a value of this type is always genuinely
/// transverse; column 0 is necessarily all of H.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransverseSet {
    ambient: Ambient2,
    columns: Vec<Subspace>,
}

impl TransverseSet {
    pub fn new(ambient: Ambient2, columns: Vec<Subspace>) -> Result<Self, GridError> {
        if columns.len() as u64 != ambient.g.size() {
            return Err(GridError::Format(format!(
                "need {} columns, got {}",
                ambient.g.size(),
                columns.len()
            )));
        }
        for c in &columns {
            if c.ambient() != ambient.h {
                return Err(GridError::Linalg(LinalgError::AmbientMismatch));
            }
        }
        if !columns[0].is_full() {
            // Every horizontal slice contains 0, so 0's column must be all of H;
            // a missing y gives a row without 0.
            let y = (0..ambient.h.size())
                .find(|&y| !columns[0].member(y).unwrap_or(false))
                .unwrap_or(0);
            return Err(GridError::NotTransverse(SliceWitness::Row { y, empty: false }));
        }
        let set = TransverseSet { ambient, columns };
        set.check_rows()?;
        Ok(set)
    }

    /// Verify every horizontal slice is a subspace (columns are subspaces by
    /// construction and nonempty, so only rows need checking).
    fn check_rows(&self) -> Result<(), GridError> {
        for y in 0..self.ambient.h.size() {
            let xs: Vec<VecP> = (0..self.ambient.g.size())
                .filter(|&x| self.contains(x, y))
                .collect();
            if xs.is_empty() {
                return Err(GridError::NotTransverse(SliceWitness::Row { y, empty: true }));
            }
            let span = Subspace::canonicalize(self.ambient.g, &xs)?;
            if span.size() != xs.len() as u64 {
                return Err(GridError::NotTransverse(SliceWitness::Row { y, empty: false }));
            }
        }
        Ok(())
    }

    pub fn ambient(&self) -> Ambient2 {
        self.ambient
    }

    pub fn column(&self, x: VecP) -> &Subspace {
        &self.columns[x as usize]
    }

    pub fn columns(&self) -> &[Subspace] {
        &self.columns
    }

    pub fn contains(&self, x: VecP, y: VecP) -> bool {
        self.columns[x as usize].member(y).unwrap_or(false)
    }

    /// Horizontal slice at y as a canonical subspace of G.
    pub fn row_subspace(&self, y: VecP) -> Subspace {
        let xs: Vec<VecP> = (0..self.ambient.g.size())
            .filter(|&x| self.contains(x, y))
            .collect();
        Subspace::canonicalize(self.ambient.g, &xs).expect("row encodings in range")
    }

    pub fn count(&self) -> u64 {
        self.columns.iter().map(|c| c.size()).sum()
    }

    /// Exact density as (cells, total).
    pub fn density(&self) -> (u64, u64) {
        (self.count(), self.ambient.cells())
    }

    pub fn to_gridset(&self) -> GridSet {
        let mut out = GridSet::empty(self.ambient);
        for x in 0..self.ambient.g.size() {
            for y in self.columns[x as usize].enumerate().expect("column under cap") {
                out.insert(x, y);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let repr = TransverseSetRepr {
            p: self.ambient.p(),
            ng: self.ambient.g.n(),
            nh: self.ambient.h.n(),
            columns: self.columns.iter().map(|c| c.basis().to_vec()).collect(),
        };
        serde_json::to_string(&repr).expect("transverse repr serializes")
    }

    pub fn from_json(text: &str) -> Result<TransverseSet, GridError> {
        let repr: TransverseSetRepr =
            serde_json::from_str(text).map_err(|e| GridError::Format(e.to_string()))?;
        let ambient = Ambient2::new(repr.p, repr.ng, repr.nh)?;
        let mut columns = Vec::with_capacity(repr.columns.len());
        for basis in &repr.columns {
            let sub = Subspace::canonicalize(ambient.h, basis)?;
            if sub.basis() != basis.as_slice() {
                return Err(GridError::Format(
                    "column basis is not in canonical form".into(),
                ));
            }
            columns.push(sub);
        }
        TransverseSet::new(ambient, columns)
    }
}

#[derive(Serialize, Deserialize)]
struct TransverseSetRepr {
    p: u16,
    #[serde(rename = "nG")]
    ng: u16,
    #[serde(rename = "nH")]
    nh: u16,
    columns: Vec<Vec<u64>>,
}

/// Transverse set attached to a linear system of subspaces: column x is the
/// orthogonal complement of V_x inside the system's coordinate space.
pub fn from_lss(system: &LinearSubspaceSystem) -> Result<TransverseSet, GridError> {
    system
        .validate()
        .map_err(|w| GridError::Format(format!("invalid system: {w}")))?;
    let g = system.group();
    let h = system.space();
    let ambient = Ambient2 { g, h };
    let cells = u128::from(g.size()) * u128::from(h.size());
    if cells > u128::from(GRID_CAP) {
        return Err(GridError::CellCapExceeded { cells, cap: GRID_CAP });
    }
    let columns = (0..g.size())
        .map(|x| system.subspace_at(x).orth_complement())
        .collect();
    TransverseSet::new(ambient, columns)
}

/// Parameters for planting the zero set of a random tuple of bilinear forms.
#[derive(Debug, Clone)]
pub struct BilinearMapSpec {
    pub ambient: Ambient2,
    /// Number of forms drawn (the span may reduce to fewer).
    pub r: usize,
    /// Dimension of the planted U <= G; defaults to all of G.
    pub dim_u: Option<u16>,
    /// Dimension of the planted V <= H; defaults to all of H.
    pub dim_v: Option<u16>,
}

/// A planted instance: the transverse completion of {(x,y) in U x V : beta = 0}
/// together with the data that generated it.
#[derive(Debug, Clone)]
pub struct PlantedBilinear {
    pub set: TransverseSet,
    pub u: Subspace,
    pub v: Subspace,
    pub forms: Vec<MatP>,
}

/// Build a transverse set from random bilinear forms on U x V. Cells outside U
/// get column {0}; x = 0 gets column H; inside U the column is the common kernel
/// of the forms intersected with V. The result is re-validated on construction.
pub fn gen_from_bilinear(spec: &BilinearMapSpec, seed: u64) -> Result<PlantedBilinear, GridError> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, "gen_from_bilinear");
    let g = spec.ambient.g;
    let h = spec.ambient.h;
    let p = spec.ambient.p();
    let u = crate::linalg::random_subspace_rng(g, spec.dim_u.unwrap_or(g.n()), &mut rng)?;
    let v = crate::linalg::random_subspace_rng(h, spec.dim_v.unwrap_or(h.n()), &mut rng)?;
    let forms: Vec<MatP> = (0..spec.r)
        .map(|_| {
            let mut m = MatP::zeros(p, g.n(), h.n());
            for r in 0..usize::from(g.n()) {
                for c in 0..usize::from(h.n()) {
                    m.set(r, c, rng.gen_range(0..p) as u8);
                }
            }
            m
        })
        .collect();
    let zero_h = Subspace::zero(h);
    let mut columns = Vec::with_capacity(g.size() as usize);
    for x in 0..g.size() {
        if x == 0 {
            columns.push(Subspace::full(h));
        } else if u.member(x)? {
            // {y in V : (B_i^T x) . y = 0 for all i} = V with span{B_i^T x}^perp
            let functionals: Vec<VecP> =
                forms.iter().map(|b| b.transpose().apply(x)).collect();
            let span = Subspace::canonicalize(h, &functionals)?;
            columns.push(v.intersect(&span.orth_complement())?);
        } else {
            columns.push(zero_h.clone());
        }
    }
    let set = TransverseSet::new(spec.ambient, columns)?;
    Ok(PlantedBilinear { set, u, v, forms })
}

/// All subspaces of `field`, found by breadth-first span growth from {0}.
/// Deterministic order: sorted by (dimension, basis).
pub fn all_subspaces(field: FieldSpec) -> Vec<Subspace> {
    use std::collections::BTreeSet;
    let mut seen: BTreeSet<Vec<VecP>> = BTreeSet::new();
    let zero = Subspace::zero(field);
    seen.insert(zero.basis().to_vec());
    let mut frontier = vec![zero];
    while let Some(s) = frontier.pop() {
        for v in field.all_vectors().skip(1) {
            if !s.member(v).expect("in range") {
                let mut gens = s.basis().to_vec();
                gens.push(v);
                let bigger = Subspace::canonicalize(field, &gens).expect("in range");
                if seen.insert(bigger.basis().to_vec()) {
                    frontier.push(bigger);
                }
            }
        }
    }
    let mut out: Vec<Subspace> = seen
        .into_iter()
        .map(|basis| Subspace::canonicalize(field, &basis).expect("canonical"))
        .collect();
    out.sort_by_key(|s| (s.dim(), s.basis().to_vec()));
    out
}

/// Cap for `enumerate_transverse_small`: both sides at most this many elements.
pub const ENUM_TRANSVERSE_CAP: u64 = 16;

/// Every transverse set on the ambient, exactly once, in a deterministic order.
///
/// Enumerates column assignments x -> C_x with C_0 = H by depth-first search.
/// The pruning condition is exact: a column assignment gives a transverse set
/// iff C_{x1} with C_{x2} is contained in C_{x1+x2} for every pair
/// (horizontal slices then contain 0, are closed under addition, and hence are
/// subspaces), so each triple is checked as soon as all three columns exist.
pub fn enumerate_transverse_small(ambient: Ambient2) -> Result<Vec<TransverseSet>, GridError> {
    let g = ambient.g;
    let gsz = g.size();
    if gsz > ENUM_TRANSVERSE_CAP || ambient.h.size() > ENUM_TRANSVERSE_CAP {
        return Err(GridError::WorkCapExceeded {
            candidates: u128::from(gsz) * u128::from(ambient.h.size()),
            cap: ENUM_TRANSVERSE_CAP,
        });
    }
    let choices = all_subspaces(ambient.h);
    // triples_at[x] = pairs (a, b) with a + b involving x as the maximum index.
    let mut triples_at: Vec<Vec<(u64, u64)>> = vec![Vec::new(); gsz as usize];
    for a in 0..gsz {
        for b in a..gsz {
            let c = g.add(a, b);
            let m = a.max(b).max(c);
            if m > 0 {
                triples_at[m as usize].push((a, b));
            }
        }
    }
    let mut columns: Vec<Subspace> = vec![Subspace::full(ambient.h)];
    let mut out = Vec::new();
    dfs_columns(ambient, &choices, &triples_at, &mut columns, &mut out)?;
    Ok(out)
}

fn dfs_columns(
    ambient: Ambient2,
    choices: &[Subspace],
    triples_at: &[Vec<(u64, u64)>],
    columns: &mut Vec<Subspace>,
    out: &mut Vec<TransverseSet>,
) -> Result<(), GridError> {
    let g = ambient.g;
    let x = columns.len() as u64;
    if x == g.size() {
        let set = TransverseSet::new(ambient, columns.clone())
            .expect("pairwise-closed assignment is transverse");
        out.push(set);
        return Ok(());
    }
    'next: for cand in choices {
        columns.push(cand.clone());
        for &(a, b) in &triples_at[x as usize] {
            // a, b, and a+b are all assigned once their maximum is; every pair
            // orientation of a triple appears as its own bucket entry.
            let c = g.add(a, b);
            let inter = columns[a as usize]
                .intersect(&columns[b as usize])
                .expect("same ambient");
            if !columns[c as usize].contains(&inter).expect("same ambient") {
                columns.pop();
                continue 'next;
            }
        }
        dfs_columns(ambient, choices, triples_at, columns, out)?;
        columns.pop();
    }
    Ok(())
}

/// Work cap for the density sweep below.
pub const DENSITY_SWEEP_CAP: u64 = 1 << 22;

/// Exhaustively verify that on this ambient every transverse set of density
/// greater than 15/16 is the full grid. Enumerates every proper subset missing
/// fewer than cells/16 cells and checks that none is transverse; returns a
/// counterexample if one exists.
pub fn high_density_counterexample(ambient: Ambient2) -> Result<Option<GridSet>, GridError> {
    let cells = ambient.cells();
    let max_missing = ((cells - 1) / 16) as usize;
    let mut total: u128 = 0;
    for m in 1..=max_missing {
        total += binomial(cells as u128, m as u128);
    }
    if total > u128::from(DENSITY_SWEEP_CAP) {
        return Err(GridError::WorkCapExceeded {
            candidates: total,
            cap: DENSITY_SWEEP_CAP,
        });
    }
    for m in 1..=max_missing {
        let mut missing: Vec<u64> = (0..m as u64).collect();
        loop {
            let mut set = GridSet::full(ambient);
            for &idx in &missing {
                let (x, y) = ambient.cell_coords(idx);
                set.remove(x, y);
            }
            if set.is_transverse() {
                return Ok(Some(set));
            }
            if !next_combination(&mut missing, cells) {
                break;
            }
        }
    }
    Ok(None)
}

/// Advance to the next k-combination of {0, ..., n-1} in lexicographic order.
fn next_combination(idx: &mut [u64], n: u64) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - (k as u64 - i as u64) {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
