//! Linear systems of subspaces: families (V_x) indexed by a group F_p^m with
//! V_0 = {0} and V_{x1+x2} contained in V_{x1} + V_{x2}.
//!
//! Such a system arises from a transverse set A and a choice of V <= H by
//! V_x = (A_x. with V)^perp, the complement taken inside V. The system may be
//! restricted to U <= G and V <= H; internally everything is expressed in the
//! pivot coordinates of the canonical bases of U and V, fixed once at
//! construction, so subspace arithmetic stays in small dense coordinates.

use crate::grid::TransverseSet;
use crate::linalg::{FieldSpec, LinalgError, Subspace, VecP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LssError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("table has {got} entries, group needs {want}")]
    TableSize { got: usize, want: u64 },
    #[error("system violates {0}")]
    Invalid(SystemWitness),
    #[error("malformed system data: {0}")]
    Format(String),
    #[error("exhaustive check over {count} tuples exceeds the cap {cap}")]
    WorkCapExceeded { count: u128, cap: u64 },
}

/// Witness for a failed system law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemWitness {
    /// V_0 != {0}.
    ZeroNotTrivial,
    /// V_{x1+x2} not contained in V_{x1} + V_{x2}.
    Subadditivity { x1: VecP, x2: VecP },
    /// V_{lambda x} != V_x.
    Scaling { lambda: u8, x: VecP },
    /// A zero-sum tuple whose last subspace adds new directions.
    ZeroSum { tuple: [VecP; 4], len: usize },
}

impl std::fmt::Display for SystemWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemWitness::ZeroNotTrivial => write!(f, "V_0 != 0"),
            SystemWitness::Subadditivity { x1, x2 } => {
                write!(f, "subadditivity at ({x1}, {x2})")
            }
            SystemWitness::Scaling { lambda, x } => write!(f, "scaling at ({lambda}, {x})"),
            SystemWitness::ZeroSum { tuple, len } => {
                write!(f, "zero-sum law at {:?}", &tuple[..*len])
            }
        }
    }
}

/// A linear system of subspaces in coordinates: `group` indexes the family,
/// `space` holds the subspaces. `u_basis`/`v_basis` remember how those
/// coordinate spaces embed into the original G and H.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSubspaceSystem {
    group: FieldSpec,
    space: FieldSpec,
    u_basis: Subspace,
    v_basis: Subspace,
    table: Vec<Subspace>,
}

impl LinearSubspaceSystem {
    /// Raw constructor; checks shapes, then the system laws.
    pub fn new(
        u_basis: Subspace,
        v_basis: Subspace,
        table: Vec<Subspace>,
    ) -> Result<Self, LssError> {
        let group = u_basis.coord_space();
        let space = v_basis.coord_space();
        if table.len() as u64 != group.size() {
            return Err(LssError::TableSize {
                got: table.len(),
                want: group.size(),
            });
        }
        for s in &table {
            if s.ambient() != space {
                return Err(LssError::Linalg(LinalgError::AmbientMismatch));
            }
        }
        let sys = LinearSubspaceSystem {
            group,
            space,
            u_basis,
            v_basis,
            table,
        };
        sys.validate().map_err(LssError::Invalid)?;
        Ok(sys)
    }

    /// System of a transverse set against V <= H, indexed by all of G:
    /// V_x = (A_x. with V)^perp inside V.
    pub fn from_transverse(t: &TransverseSet, v: &Subspace) -> Result<Self, LssError> {
        Self::from_transverse_restricted(t, &Subspace::full(t.ambient().g()), v)
    }

    /// Same, indexed by U <= G in U's coordinates.
    pub fn from_transverse_restricted(
        t: &TransverseSet,
        u: &Subspace,
        v: &Subspace,
    ) -> Result<Self, LssError> {
        if u.ambient() != t.ambient().g() || v.ambient() != t.ambient().h() {
            return Err(LssError::Linalg(LinalgError::AmbientMismatch));
        }
        let group = u.coord_space();
        let space = v.coord_space();
        let mut table = Vec::with_capacity(group.size() as usize);
        for cu in 0..group.size() {
            let x = u.from_coords(cu);
            let slice = t.column(x).intersect(v)?;
            // Express the slice in V's coordinates, then complement there.
            let coords: Vec<VecP> = slice
                .basis()
                .iter()
                .map(|&w| v.coords_of(w).expect("slice lies inside V"))
                .collect();
            let slice_coords = Subspace::canonicalize(space, &coords)?;
            table.push(slice_coords.orth_complement());
        }
        let sys = LinearSubspaceSystem {
            group,
            space,
            u_basis: u.clone(),
            v_basis: v.clone(),
            table,
        };
        debug_assert!(sys.validate().is_ok());
        Ok(sys)
    }

    /// The indexing coordinate space F_p^m.
    pub fn group(&self) -> FieldSpec {
        self.group
    }

    /// The coordinate space F_p^k the subspaces live in.
    pub fn space(&self) -> FieldSpec {
        self.space
    }

    /// U as a subspace of the original G.
    pub fn u_basis(&self) -> &Subspace {
        &self.u_basis
    }

    /// V as a subspace of the original H.
    pub fn v_basis(&self) -> &Subspace {
        &self.v_basis
    }

    pub fn subspace_at(&self, x: VecP) -> &Subspace {
        &self.table[x as usize]
    }

    pub fn table(&self) -> &[Subspace] {
        &self.table
    }

    /// Check V_0 = {0} and subadditivity over every pair; first failure wins.
    pub fn validate(&self) -> Result<(), SystemWitness> {
        if !self.table[0].is_zero() {
            return Err(SystemWitness::ZeroNotTrivial);
        }
        let n = self.group.size();
        for x1 in 0..n {
            for x2 in x1..n {
                let target = self.group.add(x1, x2);
                let sum = self.table[x1 as usize]
                    .sum(&self.table[x2 as usize])
                    .expect("same ambient");
                if !sum
                    .contains(&self.table[target as usize])
                    .expect("same ambient")
                {
                    return Err(SystemWitness::Subadditivity { x1, x2 });
                }
            }
        }
        Ok(())
    }

    /// V_{lambda x} = V_x for every nonzero scalar; follows from subadditivity
    /// but is checked directly.
    pub fn check_scaling(&self) -> Result<(), SystemWitness> {
        for x in 0..self.group.size() {
            for lambda in 1..self.group.p() as u8 {
                let lx = self.group.scale(lambda, x);
                if self.table[lx as usize] != self.table[x as usize] {
                    return Err(SystemWitness::Scaling { lambda, x });
                }
            }
        }
        Ok(())
    }

    /// For every r-tuple summing to zero, the last subspace lies in the sum of
    /// the first r-1. Exhaustive over p^{(r-1)m} tuples; r <= 4.
    pub fn check_zero_sum(&self, r: usize) -> Result<(), LssError> {
        assert!((2..=4).contains(&r));
        let m = self.group.size();
        let free = r - 1;
        let count = u128::from(m).pow(free as u32);
        const CAP: u64 = 1 << 20;
        if count > u128::from(CAP) {
            return Err(LssError::WorkCapExceeded { count, cap: CAP });
        }
        let mut tuple = [0u64; 4];
        for idx in 0..count as u64 {
            let mut rest = idx;
            let mut total = 0u64;
            for slot in tuple.iter_mut().take(free) {
                *slot = rest % m;
                rest /= m;
                total = self.group.add(total, *slot);
            }
            tuple[free] = self.group.neg(total);
            let mut partial = Subspace::zero(self.space);
            for &x in tuple.iter().take(free) {
                partial = partial.sum(&self.table[x as usize]).expect("same ambient");
            }
            let with_last = partial
                .sum(&self.table[tuple[free] as usize])
                .expect("same ambient");
            if with_last != partial {
                return Err(LssError::Invalid(SystemWitness::ZeroSum { tuple, len: r }));
            }
        }
        Ok(())
    }

    /// Exact quasirandomness counts at dimension d: how many x have the wrong
    /// dimension, and how many ordered pairs (diagonal included) intersect
    /// nontrivially.
    pub fn quasirandomness_profile(&self, d: usize) -> QuasirandomnessProfile {
        let m = self.group.size();
        let wrong_dim = (0..m)
            .filter(|&x| self.table[x as usize].dim() != d)
            .count() as u64;
        let mut intersecting_pairs = 0u64;
        for x1 in 0..m {
            for x2 in x1..m {
                let inter = self.table[x1 as usize]
                    .intersect(&self.table[x2 as usize])
                    .expect("same ambient");
                if !inter.is_zero() {
                    // Ordered count: (x1,x2) and (x2,x1) when distinct.
                    intersecting_pairs += if x1 == x2 { 1 } else { 2 };
                }
            }
        }
        QuasirandomnessProfile {
            d,
            wrong_dim,
            group_size: m,
            intersecting_pairs,
            pair_count: m * m,
        }
    }

    /// Most frequent subspace dimension in the table (smallest on ties).
    pub fn modal_dim(&self) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for s in &self.table {
            *counts.entry(s.dim()).or_insert(0u64) += 1;
        }
        counts
            .into_iter()
            .max_by_key(|&(dim, c)| (c, std::cmp::Reverse(dim)))
            .map(|(dim, _)| dim)
            .unwrap_or(0)
    }

    /// Serialize: only systems indexed by all of G have a file form.
    pub fn to_json(&self) -> Result<String, LssError> {
        if !self.u_basis.is_full() {
            return Err(LssError::Format(
                "only full-group systems serialize".into(),
            ));
        }
        let repr = LssRepr {
            p: self.group.p(),
            ng: self.group.n(),
            nh: self.v_basis.ambient().n(),
            v_basis: self.v_basis.basis().to_vec(),
            table: self.table.iter().map(|s| s.basis().to_vec()).collect(),
        };
        Ok(serde_json::to_string(&repr).expect("lss repr serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, LssError> {
        let repr: LssRepr =
            serde_json::from_str(text).map_err(|e| LssError::Format(e.to_string()))?;
        let g = FieldSpec::new(repr.p, repr.ng)?;
        let h = FieldSpec::new(repr.p, repr.nh)?;
        let v_basis = Subspace::canonicalize(h, &repr.v_basis)?;
        if v_basis.basis() != repr.v_basis.as_slice() {
            return Err(LssError::Format("V basis not canonical".into()));
        }
        let space = v_basis.coord_space();
        let mut table = Vec::with_capacity(repr.table.len());
        for basis in &repr.table {
            let s = Subspace::canonicalize(space, basis)?;
            if s.basis() != basis.as_slice() {
                return Err(LssError::Format("table basis not canonical".into()));
            }
            table.push(s);
        }
        Self::new(Subspace::full(g), v_basis, table)
    }
}

#[derive(Serialize, Deserialize)]
struct LssRepr {
    p: u16,
    #[serde(rename = "nG")]
    ng: u16,
    #[serde(rename = "nH")]
    nh: u16,
    #[serde(rename = "V_basis")]
    v_basis: Vec<u64>,
    table: Vec<Vec<u64>>,
}

/// Exact quasirandomness counts; eps1/eps2 are the measured fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuasirandomnessProfile {
    pub d: usize,
    pub wrong_dim: u64,
    pub group_size: u64,
    pub intersecting_pairs: u64,
    pub pair_count: u64,
}

impl QuasirandomnessProfile {
    pub fn eps1(&self) -> f64 {
        self.wrong_dim as f64 / self.group_size as f64
    }

    pub fn eps2(&self) -> f64 {
        self.intersecting_pairs as f64 / self.pair_count as f64
    }
}

/// Random valid system on full G and H: V_x = span{T_1 x, ..., T_r x} plus a
/// fixed subspace W on every nonzero index. Both families are subadditive, so
/// their sum is a valid system for any draw.
pub fn random_system<R: rand::Rng>(
    g: FieldSpec,
    h: FieldSpec,
    r: usize,
    fixed_dim: u16,
    rng: &mut R,
) -> Result<LinearSubspaceSystem, LssError> {
    let maps: Vec<crate::linalg::MatP> = (0..r)
        .map(|_| {
            let mut m = crate::linalg::MatP::zeros(g.p(), h.n(), g.n());
            for row in 0..usize::from(h.n()) {
                for col in 0..usize::from(g.n()) {
                    m.set(row, col, rng.gen_range(0..g.p()) as u8);
                }
            }
            m
        })
        .collect();
    let w = crate::linalg::random_subspace_rng(h, fixed_dim, rng)?;
    let mut table = Vec::with_capacity(g.size() as usize);
    for x in 0..g.size() {
        if x == 0 {
            table.push(Subspace::zero(h));
            continue;
        }
        let mut gens: Vec<VecP> = maps.iter().map(|m| m.apply(x)).collect();
        gens.extend_from_slice(w.basis());
        table.push(Subspace::canonicalize(h, &gens)?);
    }
    LinearSubspaceSystem::new(Subspace::full(g), Subspace::full(h), table)
}
