//! End-to-end recovery of a certified bilinear variety inside a transverse
//! set: density-driven regularization of the grid, anchored reconstruction of
//! the bilinear map behind the subspace system, and exhaustive containment
//! certification of the assembled variety, with a codimension-(nG + nH)
//! product fallback that is always certifiable.

use crate::grid::{GridError, TransverseSet};
use crate::lemmas::{
    extend_near_homomorphism, flatten_hom, hom_space, quad_isomorphisms, unflatten_hom,
    LemmaError, PartialMap, QuadInput,
};
use crate::linalg::{LinalgError, MatP, RowReducer, Subspace, VecP};
use crate::lss::{LinearSubspaceSystem, LssError};
use crate::rng::stream;
use crate::variety::{
    BilinearMapTuple, BilinearVariety, CertMode, ContainmentCertificate, VarietyError,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("grid error: {0}")]
    Grid(#[from] GridError),
    #[error("subspace system error: {0}")]
    Lss(#[from] LssError),
    #[error("lemma engine error: {0}")]
    Lemma(#[from] LemmaError),
    #[error("variety error: {0}")]
    Variety(#[from] VarietyError),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("budget exhausted in {stage}: {detail}")]
    BudgetExceeded { stage: &'static str, detail: String },
    #[error("no anchor with a positive admissible-triple count")]
    AnchorTooWeak,
    #[error("consensus stage produced no candidate values")]
    ConsensusFailed,
    #[error("affine extension failed: {0}")]
    ExtensionFailed(LemmaError),
    #[error("extracted variety not contained: violating cell ({x}, {y})")]
    CertificationFailed { x: VecP, y: VecP },
}

/// How randomized selections behave: seeded draws with a retry budget that
/// fall back to a deterministic scan, or the deterministic scan directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SearchMode {
    Sampled { retries: u32 },
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub eps: f64,
    pub seed: u64,
    pub mode: SearchMode,
    /// Anchor candidates scanned, in encoding order.
    pub anchor_budget: u64,
    /// Cap on the measured additive-quadruple failure passed to the affine
    /// extension. Left permissive by default: the binding check is the
    /// downstream containment certificate, not this threshold.
    pub near_hom_cap: f64,
    /// On any main-path failure, certify the product fallback instead of
    /// returning the error.
    pub fallback: bool,
    /// Sample count for containment certification of grids too large to
    /// enumerate.
    pub cert_samples: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            eps: 0.05,
            seed: 0,
            mode: SearchMode::Sampled { retries: 64 },
            anchor_budget: 4096,
            near_hom_cap: 1.0,
            fallback: true,
            cert_samples: 100_000,
        }
    }
}

/// Largest |U| * |V| certified cell-by-cell; beyond it certification samples.
const EXHAUSTIVE_CELL_CAP: u64 = 1 << 22;
/// Distinct intersection outcomes tracked by the deterministic shift search.
const OUTCOME_STATE_CAP: usize = 1 << 16;

/// Smallest d with p^d |A|^4 >= 10^4 (|G||H|)^4, the codimension budget the
/// regularization starts from at density |A| / |G||H|.
pub fn regularity_dim_bound(p: u16, members: u64, cells: u64) -> u32 {
    assert!(members > 0 && cells > 0);
    let mut lhs = u128::from(members).pow(4);
    let rhs = 10_000u128.saturating_mul(u128::from(cells).pow(4));
    let mut d = 0;
    while lhs < rhs {
        lhs = lhs.saturating_mul(u128::from(p));
        d += 1;
    }
    d
}

/// Smallest r with p^r >= (4 / eps)^2: the number of shifts intersected per
/// refinement round.
pub fn dependent_choice_r(p: u16, eps: f64) -> u32 {
    let target = (4.0 / eps) * (4.0 / eps);
    let mut pw = 1.0f64;
    let mut r = 0u32;
    while pw < target * (1.0 - 1e-12) {
        pw *= f64::from(p);
        r += 1;
    }
    r
}

/// Exact counts behind the two regularity properties at level d: slices
/// A_x. meeting V in exactly p^-d |V| points, and ordered pairs (diagonal
/// included) whose slice intersection has exactly p^-2d |V| points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PropertyCounts {
    pub exact_slices: u64,
    pub exact_pairs: u64,
    pub u_size: u64,
}

pub fn regularity_counts(
    a: &TransverseSet,
    u: &Subspace,
    v: &Subspace,
    d: usize,
) -> Result<PropertyCounts, ExtractError> {
    let us = u.enumerate()?;
    let slices: Vec<Subspace> = us
        .iter()
        .map(|&x| a.column(x).intersect(v))
        .collect::<Result<_, _>>()?;
    let slice_dim = v.dim() as i64 - d as i64;
    let pair_dim = v.dim() as i64 - 2 * d as i64;
    let exact_slices = slices.iter().filter(|s| s.dim() as i64 == slice_dim).count() as u64;
    let mut exact_pairs = 0u64;
    for s1 in &slices {
        for s2 in &slices {
            if s1.intersect(s2)?.dim() as i64 == pair_dim {
                exact_pairs += 1;
            }
        }
    }
    Ok(PropertyCounts {
        exact_slices,
        exact_pairs,
        u_size: us.len() as u64,
    })
}

/// Subspaces (U, V) and level d whose exact counts passed both properties,
/// plus the provenance of the run that found them.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityOutput {
    pub u: Subspace,
    pub v: Subspace,
    pub d: usize,
    /// Density-only starting bound.
    pub d0_formula: u32,
    /// Actual worst slice codimension inside the initial (U0, V0); the
    /// iteration starts here, never above d0_formula.
    pub d0_tight: u32,
    pub y0: VecP,
    pub x0: VecP,
    pub eps: f64,
    pub iterations: u32,
    pub exact_slices: u64,
    pub exact_pairs: u64,
    pub u_size: u64,
}

/// Largest quality-passing candidate, ties to the smallest encoding. Any
/// passing candidate is valid; the largest slice keeps the most of the grid,
/// and the deterministic choice makes runs reproducible across modes.
fn pick_largest(candidates: &[VecP], ok: &[bool], size_of: impl Fn(VecP) -> u64) -> Option<VecP> {
    let mut best: Option<(u64, VecP)> = None;
    for (&c, &o) in candidates.iter().zip(ok) {
        if !o {
            continue;
        }
        let sz = size_of(c);
        if best.map_or(true, |(bs, _)| sz > bs) {
            best = Some((sz, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Deterministic replacement for the r-fold shift draw: breadth-first search
/// over the distinct subspaces U0 cut down by at most `depth` slices from the
/// pool. Drawing y = 0 leaves a state unchanged, so every shallow outcome is
/// also a full-depth outcome and U0 itself is a candidate. Among successful
/// states the largest wins, ties to the smallest basis.
fn dependent_choice_bfs<F>(
    u0: &Subspace,
    rows: &[Subspace],
    pool: &Subspace,
    depth: u32,
    success: &F,
) -> Result<Option<Subspace>, ExtractError>
where
    F: Fn(&Subspace) -> Result<bool, ExtractError>,
{
    let pool_members = pool.enumerate()?;
    let mut seen: BTreeSet<Vec<VecP>> = BTreeSet::new();
    seen.insert(u0.basis().to_vec());
    let mut best: Option<Subspace> = None;
    let consider = |s: &Subspace, best: &mut Option<Subspace>| {
        let better = match best {
            None => true,
            Some(b) => {
                s.size() > b.size() || (s.size() == b.size() && s.basis() < b.basis())
            }
        };
        if better {
            *best = Some(s.clone());
        }
    };
    if success(u0)? {
        consider(u0, &mut best);
    }
    let mut layer = vec![u0.clone()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for s in &layer {
            for &y in &pool_members {
                let cut = s.intersect(&rows[y as usize])?;
                if seen.insert(cut.basis().to_vec()) {
                    if seen.len() > OUTCOME_STATE_CAP {
                        return Err(ExtractError::BudgetExceeded {
                            stage: "regularize",
                            detail: format!(
                                "shift-outcome states exceeded {OUTCOME_STATE_CAP}"
                            ),
                        });
                    }
                    if success(&cut)? {
                        consider(&cut, &mut best);
                    }
                    next.push(cut);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    Ok(best)
}

/// Refine the grid to subspaces U <= G, V <= H and a level d where all but an
/// eps-fraction of slices, and all but a 3eps-fraction of slice pairs, meet V
/// in exactly the generic sizes p^-d |V| and p^-2d |V|. Both counts are
/// verified exactly before returning; each refinement round lowers the level
/// by one, so at most d0 rounds run.
pub fn regularize(
    a: &TransverseSet,
    eps: f64,
    seed: u64,
    mode: SearchMode,
) -> Result<RegularityOutput, ExtractError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ExtractError::BadParameter(format!(
            "eps must lie in (0, 1), got {eps}"
        )));
    }
    let g = a.ambient().g();
    let h = a.ambient().h();
    let members = a.count();
    let gsz = u128::from(g.size());
    let hsz = u128::from(h.size());
    let m2 = u128::from(members) * u128::from(members);
    let rows: Vec<Subspace> = (0..h.size()).map(|y| a.row_subspace(y)).collect();

    // A column at y (set of x) counts toward U0 when it holds at least half
    // the average density; its quality asks that at most a tenth of its
    // members have rows below a hundredth of the squared density.
    let y_candidates: Vec<VecP> = (0..h.size())
        .filter(|&y| 2 * u128::from(rows[y as usize].size()) * hsz >= u128::from(members))
        .collect();
    let y_ok: Vec<bool> = y_candidates
        .iter()
        .map(|&y| {
            let row = &rows[y as usize];
            let bad = row
                .enumerate()?
                .iter()
                .filter(|&&x| {
                    100 * u128::from(a.column(x).size()) * gsz * gsz * hsz <= m2
                })
                .count() as u64;
            Ok(10 * bad <= row.size())
        })
        .collect::<Result<_, ExtractError>>()?;
    let y0 = pick_largest(&y_candidates, &y_ok, |y| rows[y as usize].size()).ok_or(
        ExtractError::BudgetExceeded {
            stage: "regularize",
            detail: "no admissible starting row".into(),
        },
    )?;

    let x_candidates: Vec<VecP> = (0..g.size())
        .filter(|&x| 2 * u128::from(a.column(x).size()) * gsz >= u128::from(members))
        .collect();
    let x_ok: Vec<bool> = x_candidates
        .iter()
        .map(|&x| {
            let col = a.column(x);
            let bad = col
                .enumerate()?
                .iter()
                .filter(|&&y| {
                    100 * u128::from(rows[y as usize].size()) * gsz * hsz * hsz <= m2
                })
                .count() as u64;
            Ok(10 * bad <= col.size())
        })
        .collect::<Result<_, ExtractError>>()?;
    let x0 = pick_largest(&x_candidates, &x_ok, |x| a.column(x).size()).ok_or(
        ExtractError::BudgetExceeded {
            stage: "regularize",
            detail: "no admissible starting column".into(),
        },
    )?;

    let u0 = rows[y0 as usize].clone();
    let v0 = a.column(x0).clone();
    let d0_formula = regularity_dim_bound(g.p(), members, g.size() * h.size());
    let mut d0_tight = 0u32;
    for &x in &u0.enumerate()? {
        let codim = v0.dim() - a.column(x).intersect(&v0)?.dim();
        d0_tight = d0_tight.max(codim as u32);
    }

    let mut u_cur = u0;
    let mut v_cur = v0;
    let mut d_cur = d0_tight as usize;
    let mut iterations = 0u32;
    loop {
        let counts = regularity_counts(a, &u_cur, &v_cur, d_cur)?;
        let usz = counts.u_size as f64;
        let ok_i = counts.exact_slices as f64 >= (1.0 - eps) * usz;
        let ok_ii = counts.exact_pairs as f64 >= (1.0 - 3.0 * eps) * usz * usz;
        if ok_i && ok_ii {
            return Ok(RegularityOutput {
                u: u_cur,
                v: v_cur,
                d: d_cur,
                d0_formula,
                d0_tight,
                y0,
                x0,
                eps,
                iterations,
                exact_slices: counts.exact_slices,
                exact_pairs: counts.exact_pairs,
                u_size: counts.u_size,
            });
        }
        if d_cur == 0 {
            // Unreachable for valid inputs: at level 0 the maintained
            // worst-slice invariant already implies both properties.
            return Err(ExtractError::BudgetExceeded {
                stage: "regularize",
                detail: format!(
                    "level 0 reached with counts {}/{} and {}/{}",
                    counts.exact_slices,
                    counts.u_size,
                    counts.exact_pairs,
                    counts.u_size * counts.u_size
                ),
            });
        }

        let v_next = if !ok_i {
            v_cur.clone()
        } else {
            // Pair property failed alone: cut V by the slice of an exact
            // element with the most irregular partners (ties to the smallest
            // encoding), which strictly improves those partners at the next
            // level.
            let us = u_cur.enumerate()?;
            let slices: Vec<Subspace> = us
                .iter()
                .map(|&x| a.column(x).intersect(&v_cur))
                .collect::<Result<_, _>>()?;
            let slice_dim = v_cur.dim() as i64 - d_cur as i64;
            let pair_dim = v_cur.dim() as i64 - 2 * d_cur as i64;
            let mut best: Option<(usize, u64)> = None;
            for (i, s) in slices.iter().enumerate() {
                if s.dim() as i64 != slice_dim {
                    continue;
                }
                let mut irregular = 0u64;
                for s2 in &slices {
                    if s.intersect(s2)?.dim() as i64 != pair_dim {
                        irregular += 1;
                    }
                }
                if best.map_or(true, |(_, b)| irregular > b) {
                    best = Some((i, irregular));
                }
            }
            let (idx, _) = best.ok_or(ExtractError::BudgetExceeded {
                stage: "regularize",
                detail: "no exact slice to pivot the pair refinement on".into(),
            })?;
            v_cur.intersect(a.column(us[idx]))?
        };

        let r_draws = dependent_choice_r(g.p(), eps);
        let target = d_cur - 1;
        let success = |u_new: &Subspace| -> Result<bool, ExtractError> {
            let total = u_new.size();
            let mut good = 0u64;
            for &x in &u_new.enumerate()? {
                let codim = v_next.dim() - a.column(x).intersect(&v_next)?.dim();
                if codim <= target {
                    good += 1;
                }
            }
            Ok(good as f64 >= (1.0 - eps / 2.0) * total as f64)
        };

        let mut chosen: Option<Subspace> = None;
        if let SearchMode::Sampled { retries } = mode {
            'tries: for t in 0..retries {
                let label = format!("regularize-draw-{iterations}-{t}");
                let mut rng = stream(seed, &label);
                let mut u_new = u_cur.clone();
                for _ in 0..r_draws {
                    let y = v_next.random_member(&mut rng);
                    u_new = u_new.intersect(&rows[y as usize])?;
                }
                if success(&u_new)? {
                    chosen = Some(u_new);
                    break 'tries;
                }
            }
        }
        if chosen.is_none() {
            chosen = dependent_choice_bfs(&u_cur, &rows, &v_next, r_draws, &success)?;
        }
        let Some(u_new) = chosen else {
            return Err(ExtractError::BudgetExceeded {
                stage: "regularize",
                detail: format!(
                    "no admissible {r_draws}-shift refinement at round {iterations}"
                ),
            });
        };
        u_cur = u_new;
        v_cur = v_next;
        d_cur -= 1;
        iterations += 1;
    }
}

/// An anchor candidate with its exact admissible-triple count: triples
/// (x, y, z) where all five slots carry dimension-d subspaces, the anchored
/// triple sum is direct, and the completed slot meets the other three
/// trivially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AnchorScore {
    pub a: VecP,
    pub good_triples: u64,
    pub total_triples: u64,
}

impl AnchorScore {
    pub fn fraction(&self) -> f64 {
        self.good_triples as f64 / self.total_triples as f64
    }
}

/// GF(2) span tracker over u64 bitmask encodings; rows keep distinct lowest
/// set bits, inserts reduce in insertion order. Copy on purpose: the triple
/// scan clones one of these per innermost step.
#[derive(Clone, Copy)]
struct BitSpan {
    rows: [u64; 16],
    len: u8,
}

impl BitSpan {
    fn new() -> Self {
        BitSpan {
            rows: [0; 16],
            len: 0,
        }
    }

    fn insert(&mut self, mut v: u64) {
        for i in 0..usize::from(self.len) {
            let r = self.rows[i];
            if v & (r & r.wrapping_neg()) != 0 {
                v ^= r;
            }
        }
        if v != 0 {
            self.rows[usize::from(self.len)] = v;
            self.len += 1;
        }
    }

    fn dim(&self) -> usize {
        usize::from(self.len)
    }
}

fn anchor_good_p2(s: &LinearSubspaceSystem, d: usize, a: VecP, dim_ok: &[bool]) -> u64 {
    let m = s.group().size();
    let mut span_a = BitSpan::new();
    for &b in s.subspace_at(a).basis() {
        span_a.insert(b);
    }
    let mut good = 0u64;
    for x in 0..m {
        if !dim_ok[x as usize] {
            continue;
        }
        let mut span_ax = span_a;
        for &b in s.subspace_at(x).basis() {
            span_ax.insert(b);
        }
        for y in 0..m {
            if !dim_ok[y as usize] {
                continue;
            }
            let w = x ^ y ^ a;
            if !dim_ok[w as usize] {
                continue;
            }
            let mut span_axy = span_ax;
            for &b in s.subspace_at(y).basis() {
                span_axy.insert(b);
            }
            if span_axy.dim() != 3 * d {
                continue;
            }
            let mut span_xy = BitSpan::new();
            for &b in s.subspace_at(x).basis() {
                span_xy.insert(b);
            }
            for &b in s.subspace_at(y).basis() {
                span_xy.insert(b);
            }
            for z in 0..m {
                if !dim_ok[z as usize] {
                    continue;
                }
                let mut sp = span_xy;
                for &b in s.subspace_at(z).basis() {
                    sp.insert(b);
                }
                let before = sp.dim();
                for &b in s.subspace_at(w).basis() {
                    sp.insert(b);
                }
                if sp.dim() - before == d {
                    good += 1;
                }
            }
        }
    }
    good
}

fn anchor_good_generic(s: &LinearSubspaceSystem, d: usize, a: VecP, dim_ok: &[bool]) -> u64 {
    let g = s.group();
    let f = s.space();
    let m = g.size();
    let mut red_a = RowReducer::new(f);
    for &b in s.subspace_at(a).basis() {
        red_a.add_enc(f, b);
    }
    let mut good = 0u64;
    for x in 0..m {
        if !dim_ok[x as usize] {
            continue;
        }
        let mut red_ax = red_a.clone();
        for &b in s.subspace_at(x).basis() {
            red_ax.add_enc(f, b);
        }
        for y in 0..m {
            if !dim_ok[y as usize] {
                continue;
            }
            let w = g.sub(g.add(x, y), a);
            if !dim_ok[w as usize] {
                continue;
            }
            let mut red_axy = red_ax.clone();
            for &b in s.subspace_at(y).basis() {
                red_axy.add_enc(f, b);
            }
            if red_axy.rank() != 3 * d {
                continue;
            }
            let mut red_xy = RowReducer::new(f);
            for &b in s.subspace_at(x).basis() {
                red_xy.add_enc(f, b);
            }
            for &b in s.subspace_at(y).basis() {
                red_xy.add_enc(f, b);
            }
            for z in 0..m {
                if !dim_ok[z as usize] {
                    continue;
                }
                let mut red = red_xy.clone();
                for &b in s.subspace_at(z).basis() {
                    red.add_enc(f, b);
                }
                let before = red.rank();
                for &b in s.subspace_at(w).basis() {
                    red.add_enc(f, b);
                }
                if red.rank() - before == d {
                    good += 1;
                }
            }
        }
    }
    good
}

/// Scan anchors in encoding order up to the budget, scoring each by its exact
/// admissible-triple count over G^3; the highest count wins, ties to the
/// smallest encoding.
pub fn choose_anchor(s: &LinearSubspaceSystem, d: usize, budget: u64) -> AnchorScore {
    let g = s.group();
    let m = g.size();
    let total = m * m * m;
    let dim_ok: Vec<bool> = (0..m).map(|x| s.subspace_at(x).dim() == d).collect();
    let mut best = AnchorScore {
        a: 0,
        good_triples: 0,
        total_triples: total,
    };
    for a in 0..budget.min(m) {
        if !dim_ok[a as usize] {
            continue;
        }
        let good = if g.p() == 2 {
            anchor_good_p2(s, d, a, &dim_ok)
        } else {
            anchor_good_generic(s, d, a, &dim_ok)
        };
        if good > best.good_triples {
            best = AnchorScore {
                a,
                good_triples: good,
                total_triples: total,
            };
        }
    }
    best
}

/// The recovered bilinear skeleton of a subspace system: a bilinear map given
/// by its flattened matrix of hom-space values, the affine offset, and the
/// exactly-verified set of points whose subspace equals the map's column
/// space there.
#[derive(Debug, Clone, Serialize)]
pub struct BilinearStructure {
    pub d: usize,
    pub anchor: AnchorScore,
    /// Linear part: columns are flattened k x d value matrices at the group
    /// basis vectors.
    pub phi_bil: MatP,
    /// Offset k x d matrix added to every value.
    pub psi: MatP,
    /// Group points (in U-coordinates) where col_space(value) equals the
    /// system's subspace. Verified pointwise, not estimated.
    pub good_set: Vec<VecP>,
    pub group_size: u64,
    pub pairs_used: u64,
    pub skipped_quads: u64,
    /// Additive-quadruple failure of the consensus table.
    pub measured_eps: f64,
    /// Observed quasirandomness defect max(eps1, eps2) of the system at d.
    pub profile_eps: f64,
    /// 1 - 200 p^d profile_eps^{1/16}; reported for context, usually vacuous
    /// at desk scale, never asserted.
    pub reported_bound: f64,
    pub good_fraction: f64,
}

/// Reconstruct the bilinear map behind a subspace system with modal dimension
/// d. Pairs (x, y) whose quadruple at the anchor is admissible vote for the
/// induced isomorphism at x + y - a; per-point majority values (ties to the
/// smallest flattened encoding) feed the affine extension, and the returned
/// good set is verified pointwise against the table.
pub fn bilinear_system_structure(
    s: &LinearSubspaceSystem,
    d: usize,
    config: &ExtractConfig,
) -> Result<BilinearStructure, ExtractError> {
    let g = s.group();
    let f = s.space();
    let p = g.p();
    let k = f.n();
    let msz = g.size();
    let prof = s.quasirandomness_profile(d);
    let profile_eps = prof.eps1().max(prof.eps2());
    let reported_bound =
        1.0 - 200.0 * f64::from(p).powi(d as i32) * profile_eps.powf(1.0 / 16.0);
    let anchor = choose_anchor(s, d, config.anchor_budget);

    if d == 0 {
        let good_set: Vec<VecP> = (0..msz).filter(|&x| s.subspace_at(x).is_zero()).collect();
        let good_fraction = good_set.len() as f64 / msz as f64;
        return Ok(BilinearStructure {
            d,
            anchor,
            phi_bil: MatP::zeros(p, 0, g.n()),
            psi: MatP::zeros(p, k, 0),
            good_set,
            group_size: msz,
            pairs_used: 0,
            skipped_quads: 0,
            measured_eps: 0.0,
            profile_eps,
            reported_bound,
            good_fraction,
        });
    }

    if usize::from(k) * d > 16 {
        return Err(ExtractError::BudgetExceeded {
            stage: "structure",
            detail: format!("value matrices of shape {k}x{d} exceed the encodable width"),
        });
    }
    if anchor.good_triples == 0 {
        return Err(ExtractError::AnchorTooWeak);
    }
    let va = s.subspace_at(anchor.a).clone();
    debug_assert_eq!(va.dim(), d, "a scoring anchor has the modal dimension");
    let theta = MatP::from_cols(p, k, va.basis());

    let mut votes: BTreeMap<VecP, BTreeMap<VecP, u64>> = BTreeMap::new();
    let mut pairs_used = 0u64;
    let mut skipped_quads = 0u64;
    for x in 0..msz {
        if s.subspace_at(x).dim() != d {
            continue;
        }
        for y in 0..msz {
            if s.subspace_at(y).dim() != d {
                continue;
            }
            let w = g.sub(g.add(x, y), anchor.a);
            if s.subspace_at(w).dim() != d {
                continue;
            }
            let q = QuadInput {
                u1: s.subspace_at(x).clone(),
                u2: s.subspace_at(y).clone(),
                u3: s.subspace_at(w).clone(),
                u4: va.clone(),
                phi4: theta.clone(),
            };
            match quad_isomorphisms(&q) {
                Ok((_, _, phi3)) => {
                    *votes
                        .entry(w)
                        .or_default()
                        .entry(flatten_hom(&phi3))
                        .or_insert(0) += 1;
                    pairs_used += 1;
                }
                Err(LemmaError::HypothesisViolated(_)) => {
                    skipped_quads += 1;
                }
                Err(e) => return Err(ExtractError::Lemma(e)),
            }
        }
    }
    if votes.is_empty() {
        return Err(ExtractError::ConsensusFailed);
    }

    let hom = hom_space(p, k, d as u16)?;
    let mut consensus: BTreeMap<VecP, VecP> = BTreeMap::new();
    for (&w, tally) in &votes {
        let mut best_value = 0;
        let mut best_count = 0u64;
        for (&value, &count) in tally {
            if count > best_count {
                best_count = count;
                best_value = value;
            }
        }
        consensus.insert(w, best_value);
    }
    let partial = PartialMap::new(g, hom, consensus)?;
    let ext = extend_near_homomorphism(&partial, config.near_hom_cap)
        .map_err(ExtractError::ExtensionFailed)?;

    let psi = unflatten_hom(p, k, d as u16, ext.constant);
    let mut good_set = Vec::new();
    for x in 0..msz {
        let value = unflatten_hom(p, k, d as u16, ext.eval(x));
        if value.col_space() == *s.subspace_at(x) {
            good_set.push(x);
        }
    }
    let good_fraction = good_set.len() as f64 / msz as f64;
    Ok(BilinearStructure {
        d,
        anchor,
        phi_bil: ext.linear,
        psi,
        good_set,
        group_size: msz,
        pairs_used,
        skipped_quads,
        measured_eps: ext.measured_eps,
        profile_eps,
        reported_bound,
        good_fraction,
    })
}

/// Shift-witness coverage over the certified member cells: a cell (x, y) has
/// a witness when some u with u and u - x both in the verified point set has
/// beta(u, y) = beta(u - x, y) = 0. Recorded alongside the certificate, never
/// a pass/fail gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WitnessStats {
    pub cells: u64,
    pub with_witness: u64,
}

impl WitnessStats {
    pub fn complete(&self) -> bool {
        self.cells == self.with_witness
    }
}

fn cert_mode_for(w: &BilinearVariety, config: &ExtractConfig) -> CertMode {
    if w.u().size().saturating_mul(w.v().size()) <= EXHAUSTIVE_CELL_CAP {
        CertMode::Exhaustive
    } else {
        CertMode::Sampled {
            samples: config.cert_samples,
            seed: config.seed,
        }
    }
}

fn certify_with_witness(
    a: &TransverseSet,
    w: &BilinearVariety,
    x_set: &BTreeSet<VecP>,
    mode: CertMode,
) -> Result<(ContainmentCertificate, WitnessStats), ExtractError> {
    match mode {
        CertMode::Exhaustive => {
            let g = a.ambient().g();
            let us = w.u().enumerate()?;
            let vs = w.v().enumerate()?;
            let mut member_cells = 0u64;
            let mut with_witness = 0u64;
            for &x in &us {
                for &y in &vs {
                    if !w.beta().vanishes(x, y) {
                        continue;
                    }
                    member_cells += 1;
                    if !a.contains(x, y) {
                        return Err(ExtractError::CertificationFailed { x, y });
                    }
                    let witnessed = x_set.iter().any(|&u| {
                        x_set.contains(&g.sub(u, x))
                            && w.beta().vanishes(u, y)
                            && w.beta().vanishes(g.sub(u, x), y)
                    });
                    if witnessed {
                        with_witness += 1;
                    }
                }
            }
            Ok((
                ContainmentCertificate::Exhaustive { member_cells },
                WitnessStats {
                    cells: member_cells,
                    with_witness,
                },
            ))
        }
        CertMode::Sampled { .. } => {
            let cert = w.contained_in(a, mode).map_err(|e| match e {
                VarietyError::NotContained { x, y } => {
                    ExtractError::CertificationFailed { x, y }
                }
                other => ExtractError::Variety(other),
            })?;
            Ok((
                cert,
                WitnessStats {
                    cells: 0,
                    with_witness: 0,
                },
            ))
        }
    }
}

/// Turn a recovered structure into a variety on the original grid: forms pull
/// the map's coordinate rows back through the U and V coordinate selectors,
/// and the value side is cut down to the annihilator of the offset's image.
fn assemble_variety(
    a: &TransverseSet,
    reg: &RegularityOutput,
    sys: &LinearSubspaceSystem,
    st: &BilinearStructure,
) -> Result<BilinearVariety, ExtractError> {
    let p = a.ambient().p();
    let h = a.ambient().h();
    let k = sys.space().n();
    let m_dim = usize::from(sys.group().n());
    let keep = st.psi.col_space().orth_complement();
    let vp_basis: Vec<VecP> = keep
        .basis()
        .iter()
        .map(|&c| sys.v_basis().from_coords(c))
        .collect();
    let vprime = Subspace::canonicalize(h, &vp_basis)?;
    let pu = reg.u.coord_selector();
    let pv = sys.v_basis().coord_selector();
    let mut forms = Vec::with_capacity(st.d);
    for i in 0..st.d {
        let cols: Vec<VecP> = (0..m_dim)
            .map(|j| unflatten_hom(p, k, st.d as u16, st.phi_bil.col_enc(j)).col_enc(i))
            .collect();
        let ci = MatP::from_cols(p, k, &cols);
        forms.push(ci.mul(&pu).transpose().mul(&pv));
    }
    let beta = BilinearMapTuple::new(a.ambient(), &forms)?;
    Ok(BilinearVariety::new(reg.u.clone(), vprime, beta)?)
}

/// The always-certifiable product variety on the regularized grid: U times
/// the intersection of every member's slice, with no forms. Nonempty because
/// 0 lies in every slice.
fn fallback_variety(
    a: &TransverseSet,
    reg: &RegularityOutput,
) -> Result<BilinearVariety, ExtractError> {
    let mut v_core = reg.v.clone();
    for &x in &reg.u.enumerate()? {
        v_core = v_core.intersect(a.column(x))?;
    }
    let beta = BilinearMapTuple::new(a.ambient(), &[])?;
    Ok(BilinearVariety::new(reg.u.clone(), v_core, beta)?)
}

#[derive(Debug, Clone)]
pub struct ExtractionResult {
    pub regularity: RegularityOutput,
    /// Present when the main path recovered a structure, even if its variety
    /// then failed certification and the fallback shipped.
    pub structure: Option<BilinearStructure>,
    pub variety: BilinearVariety,
    pub certificate: ContainmentCertificate,
    pub witness: WitnessStats,
    pub fallback_used: bool,
    pub main_path_failure: Option<String>,
    pub stage_millis: Vec<(&'static str, f64)>,
}

/// Full pipeline: regularize, lift the slice system, recover the bilinear
/// structure, assemble and certify the variety. Any main-path failure falls
/// back (when enabled) to the certified product variety instead of erroring.
pub fn extract_variety(
    a: &TransverseSet,
    config: &ExtractConfig,
) -> Result<ExtractionResult, ExtractError> {
    let mut stage_millis: Vec<(&'static str, f64)> = Vec::new();
    let clock = Instant::now();
    let reg = regularize(a, config.eps, config.seed, config.mode)?;
    stage_millis.push(("regularize", clock.elapsed().as_secs_f64() * 1e3));

    let clock = Instant::now();
    let sys = LinearSubspaceSystem::from_transverse_restricted(a, &reg.u, &reg.v)?;
    stage_millis.push(("system", clock.elapsed().as_secs_f64() * 1e3));

    let clock = Instant::now();
    let structure_attempt = bilinear_system_structure(&sys, reg.d, config);
    stage_millis.push(("structure", clock.elapsed().as_secs_f64() * 1e3));

    let (main_path_failure, kept_structure) = match structure_attempt {
        Ok(st) => {
            let clock = Instant::now();
            match assemble_variety(a, &reg, &sys, &st) {
                Ok(w) => {
                    let x_set: BTreeSet<VecP> =
                        st.good_set.iter().map(|&c| reg.u.from_coords(c)).collect();
                    match certify_with_witness(a, &w, &x_set, cert_mode_for(&w, config)) {
                        Ok((certificate, witness)) => {
                            stage_millis
                                .push(("certify", clock.elapsed().as_secs_f64() * 1e3));
                            return Ok(ExtractionResult {
                                regularity: reg,
                                structure: Some(st),
                                variety: w,
                                certificate,
                                witness,
                                fallback_used: false,
                                main_path_failure: None,
                                stage_millis,
                            });
                        }
                        Err(ExtractError::CertificationFailed { x, y }) if config.fallback => {
                            stage_millis
                                .push(("certify", clock.elapsed().as_secs_f64() * 1e3));
                            (
                                Some(format!("containment violated at ({x}, {y})")),
                                Some(st),
                            )
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(e) if config.fallback => {
                    (Some(format!("variety assembly failed: {e}")), Some(st))
                }
                Err(e) => return Err(e),
            }
        }
        Err(e) if config.fallback => (Some(format!("structure recovery failed: {e}")), None),
        Err(e) => return Err(e),
    };

    let clock = Instant::now();
    let w = fallback_variety(a, &reg)?;
    let x_all: BTreeSet<VecP> = reg.u.enumerate()?.into_iter().collect();
    let (certificate, witness) = certify_with_witness(a, &w, &x_all, cert_mode_for(&w, config))?;
    stage_millis.push(("fallback", clock.elapsed().as_secs_f64() * 1e3));
    Ok(ExtractionResult {
        regularity: reg,
        structure: kept_structure,
        variety: w,
        certificate,
        witness,
        fallback_used: true,
        main_path_failure,
        stage_millis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gen_from_bilinear, Ambient2, BilinearMapSpec};
    use crate::linalg::FieldSpec;

    fn f(p: u16, n: u16) -> FieldSpec {
        FieldSpec::new(p, n).unwrap()
    }

    fn dot_set(n: u16) -> TransverseSet {
        let g = f(2, n);
        let ambient = Ambient2::new(2, n, n).unwrap();
        let columns = (0..g.size())
            .map(|x| {
                Subspace::canonicalize(g, &[x])
                    .unwrap()
                    .orth_complement()
            })
            .collect();
        TransverseSet::new(ambient, columns).unwrap()
    }

    fn full_set(p: u16, ng: u16, nh: u16) -> TransverseSet {
        let ambient = Ambient2::new(p, ng, nh).unwrap();
        let columns = (0..ambient.g().size())
            .map(|_| Subspace::full(ambient.h()))
            .collect();
        TransverseSet::new(ambient, columns).unwrap()
    }

    fn cross_set(n: u16) -> TransverseSet {
        let g = f(2, n);
        let ambient = Ambient2::new(2, n, n).unwrap();
        let columns = (0..g.size())
            .map(|x| {
                if x == 0 {
                    Subspace::full(g)
                } else {
                    Subspace::zero(g)
                }
            })
            .collect();
        TransverseSet::new(ambient, columns).unwrap()
    }

    #[test]
    fn dim_bound_pins() {
        // Density 1/2 at p = 2 needs 2^d >= 16 * 10^4.
        assert_eq!(regularity_dim_bound(2, 8, 16), 18);
        // Full density still pays the 10^4 factor.
        assert_eq!(regularity_dim_bound(2, 16, 16), 14);
        assert_eq!(regularity_dim_bound(3, 8, 16), 11);
    }

    #[test]
    fn shift_count_pins() {
        assert_eq!(dependent_choice_r(2, 0.1), 11);
        // Exact power boundary: (4 / 0.25)^2 = 2^8.
        assert_eq!(dependent_choice_r(2, 0.25), 8);
        assert_eq!(dependent_choice_r(3, 0.1), 7);
    }

    #[test]
    fn full_grid_regularizes_trivially() {
        let a = full_set(2, 3, 3);
        let reg = regularize(&a, 0.05, 0, SearchMode::Exhaustive).unwrap();
        assert!(reg.u.is_full());
        assert!(reg.v.is_full());
        assert_eq!(reg.d, 0);
        assert_eq!(reg.iterations, 0);
        assert_eq!(reg.exact_slices, 8);
        assert_eq!(reg.exact_pairs, 64);
    }

    #[test]
    fn dot_set_regularizes_to_level_one() {
        let a = dot_set(4);
        let reg = regularize(&a, 0.1, 0, SearchMode::Exhaustive).unwrap();
        assert!(reg.u.is_full());
        assert!(reg.v.is_full());
        assert_eq!(reg.d, 1);
        assert_eq!(reg.iterations, 0);
        assert_eq!(reg.d0_tight, 1);
        // 15 nonzero slices are exact; pairs fail only on a zero slot or a
        // repeated nonzero slot.
        assert_eq!(reg.exact_slices, 15);
        assert_eq!(reg.exact_pairs, 210);
    }

    #[test]
    fn counts_match_direct_measurement() {
        let a = dot_set(4);
        let g = a.ambient().g();
        let c = regularity_counts(&a, &Subspace::full(g), &Subspace::full(g), 1).unwrap();
        assert_eq!(c.u_size, 16);
        assert_eq!(c.exact_slices, 15);
        assert_eq!(c.exact_pairs, 210);
        // One level down, slices of a full grid are exact at level 0 only.
        let b = full_set(2, 2, 2);
        let gb = b.ambient().g();
        let c0 = regularity_counts(&b, &Subspace::full(gb), &Subspace::full(gb), 0).unwrap();
        assert_eq!(c0.exact_slices, 4);
        assert_eq!(c0.exact_pairs, 16);
        let c1 = regularity_counts(&b, &Subspace::full(gb), &Subspace::full(gb), 1).unwrap();
        assert_eq!(c1.exact_slices, 0);
    }

    fn line_system(n: u16) -> LinearSubspaceSystem {
        // V_x = span{x} over F_2^n: the slice system of the dot-product set.
        let g = f(2, n);
        let table = (0..g.size())
            .map(|x| Subspace::canonicalize(g, &[x]).unwrap())
            .collect();
        LinearSubspaceSystem::new(Subspace::full(g), Subspace::full(g), table).unwrap()
    }

    #[test]
    fn anchor_fast_path_matches_generic() {
        let s = line_system(3);
        let dim_ok: Vec<bool> = (0..s.group().size())
            .map(|x| s.subspace_at(x).dim() == 1)
            .collect();
        for a in 0..s.group().size() {
            assert_eq!(
                anchor_good_p2(&s, 1, a, &dim_ok),
                anchor_good_generic(&s, 1, a, &dim_ok),
                "anchor {a}"
            );
        }
        let mut rng = stream(7, "anchor-cross-check");
        let g = f(2, 4);
        let s2 = crate::lss::random_system(g, g, 2, 0, &mut rng).unwrap();
        let d = s2.modal_dim();
        let dim_ok2: Vec<bool> = (0..s2.group().size())
            .map(|x| s2.subspace_at(x).dim() == d)
            .collect();
        for a in 0..s2.group().size() {
            assert_eq!(
                anchor_good_p2(&s2, d, a, &dim_ok2),
                anchor_good_generic(&s2, d, a, &dim_ok2),
                "anchor {a}"
            );
        }
    }

    #[test]
    fn line_system_has_strong_anchors() {
        let s = line_system(4);
        let best = choose_anchor(&s, 1, 1 << 12);
        assert_eq!(best.a, 1, "anchors tie by symmetry, smallest wins");
        // Per anchor a != 0: (x, y) needs {a, x, y} independent (168 pairs
        // at n = 4), then z must stay nonzero and keep a outside
        // span{x, y, z} (11 choices each). 168 * 11 = 1848 of 16^3.
        assert_eq!(best.good_triples, 1848);
        assert_eq!(best.total_triples, 4096);
        // A budget of 1 scans only a = 0, which has the wrong dimension.
        let starved = choose_anchor(&s, 1, 1);
        assert_eq!(starved.good_triples, 0);
        assert_eq!(starved.fraction(), 0.0);
    }

    #[test]
    fn structure_of_line_system_is_identity() {
        let s = line_system(4);
        let config = ExtractConfig::default();
        let st = bilinear_system_structure(&s, 1, &config).unwrap();
        assert_eq!(st.d, 1);
        assert!(st.psi.is_zero());
        assert_eq!(st.good_set.len(), 16, "every point verified, zero included");
        assert_eq!(st.good_fraction, 1.0);
        // Pairs whose quadruple fails the independence hypothesis are
        // excluded from the vote, not defects: 211 dimension-compatible
        // pairs at anchor 1, 168 of them with {a, x, y} independent.
        assert_eq!(st.pairs_used, 168);
        assert_eq!(st.pairs_used + st.skipped_quads, 211);
        // Consensus never covers w = 0 or w = 1 (a + x + y avoids
        // span{a, x, y} complements), and quadruples touching an undefined
        // point count as failures: 2744 all-defined triples, 168 summing to
        // each missing point, so 2408 of 4096 succeed.
        assert_eq!(st.measured_eps, 1.0 - 2408.0 / 4096.0);
        // d = 1 flattening is the identity, so the linear part stores V_x
        // generators directly: column j spans V_{e_j}.
        for j in 0..4 {
            let col = st.phi_bil.col_enc(j);
            assert_eq!(
                Subspace::canonicalize(s.space(), &[col]).unwrap(),
                *s.subspace_at(s.group().basis_vec(j))
            );
        }
    }

    #[test]
    fn degenerate_system_has_no_anchor() {
        // Every nonzero slot carries the same line: triple sums never reach
        // dimension 3, so no admissible triples exist at d = 1.
        let g = f(2, 4);
        let line = Subspace::canonicalize(g, &[1]).unwrap();
        let table = (0..g.size())
            .map(|x| if x == 0 { Subspace::zero(g) } else { line.clone() })
            .collect();
        let s = LinearSubspaceSystem::new(Subspace::full(g), Subspace::full(g), table).unwrap();
        let config = ExtractConfig::default();
        match bilinear_system_structure(&s, 1, &config) {
            Err(ExtractError::AnchorTooWeak) => {}
            other => panic!("expected AnchorTooWeak, got {other:?}"),
        }
    }

    #[test]
    fn extract_dot_set_end_to_end() {
        let a = dot_set(4);
        let config = ExtractConfig {
            eps: 0.1,
            ..ExtractConfig::default()
        };
        let out = extract_variety(&a, &config).unwrap();
        assert!(!out.fallback_used);
        assert!(out.main_path_failure.is_none());
        let st = out.structure.as_ref().unwrap();
        assert_eq!(st.d, 1);
        assert_eq!(st.good_fraction, 1.0);
        assert_eq!(out.variety.beta().r(), 1);
        assert_eq!(out.variety.codimension(), 1);
        assert!(out.variety.u().is_full());
        assert!(out.variety.v().is_full());
        // The recovered variety is not merely contained: it is the set.
        assert_eq!(out.variety.enumerate().unwrap(), a.to_gridset());
        assert!(out.witness.complete(), "witness {:?}", out.witness);
        match out.certificate {
            ContainmentCertificate::Exhaustive { member_cells } => {
                assert_eq!(member_cells, a.count())
            }
            other => panic!("expected exhaustive certification, got {other:?}"),
        }
    }

    #[test]
    fn extract_full_grid_is_codimension_zero() {
        let a = full_set(2, 3, 2);
        let out = extract_variety(&a, &ExtractConfig::default()).unwrap();
        assert!(!out.fallback_used);
        assert_eq!(out.variety.codimension(), 0);
        assert_eq!(out.variety.beta().r(), 0);
        assert_eq!(out.variety.enumerate().unwrap(), a.to_gridset());
        assert!(out.witness.complete());
    }

    #[test]
    fn extract_cross_lands_on_zero_column() {
        let a = cross_set(2);
        let out = extract_variety(&a, &ExtractConfig::default()).unwrap();
        assert!(!out.fallback_used);
        assert_eq!(out.regularity.d, 0);
        assert_eq!(out.variety.u().dim(), 0);
        assert!(out.variety.v().is_full());
        assert_eq!(out.variety.codimension(), 2);
        assert!(out.witness.complete());
    }

    #[test]
    fn extract_planted_instances_certify() {
        let ambient = Ambient2::new(2, 4, 4).unwrap();
        let spec = BilinearMapSpec {
            ambient,
            r: 2,
            dim_u: None,
            dim_v: None,
        };
        for seed in 0..5 {
            let planted = gen_from_bilinear(&spec, seed).unwrap();
            let out = extract_variety(&planted.set, &ExtractConfig::default()).unwrap();
            match out.certificate {
                ContainmentCertificate::Exhaustive { member_cells } => {
                    assert!(member_cells > 0)
                }
                other => panic!("expected exhaustive certification, got {other:?}"),
            }
            assert!(out.variety.beta().r() <= 3, "r {}", out.variety.beta().r());
        }
    }

    #[test]
    fn fallback_variety_always_contained() {
        for n in [1u16, 2] {
            let a = cross_set(n);
            let reg = regularize(&a, 0.05, 1, SearchMode::Sampled { retries: 64 }).unwrap();
            let w = fallback_variety(&a, &reg).unwrap();
            w.contained_in(&a, crate::variety::CertMode::Exhaustive)
                .unwrap();
            assert_eq!(w.beta().r(), 0);
        }
    }

    #[test]
    fn sampled_and_exhaustive_regularization_both_certify() {
        let a = dot_set(3);
        for mode in [SearchMode::Exhaustive, SearchMode::Sampled { retries: 64 }] {
            let reg = regularize(&a, 0.2, 5, mode).unwrap();
            let c = regularity_counts(&a, &reg.u, &reg.v, reg.d).unwrap();
            assert!(c.exact_slices as f64 >= 0.8 * c.u_size as f64);
            assert!(c.exact_pairs as f64 >= 0.4 * (c.u_size * c.u_size) as f64);
        }
    }

    #[test]
    fn bad_eps_is_rejected() {
        let a = full_set(2, 2, 2);
        assert!(matches!(
            regularize(&a, 0.0, 0, SearchMode::Exhaustive),
            Err(ExtractError::BadParameter(_))
        ));
        assert!(matches!(
            regularize(&a, 1.0, 0, SearchMode::Exhaustive),
            Err(ExtractError::BadParameter(_))
        ));
    }

    #[test]
    fn structure_rejects_overwide_values() {
        // k * d = 4 * 5 = 20 > 16 must be refused before any quad work.
        let line = line_system(4);
        let config = ExtractConfig::default();
        let err = bilinear_system_structure(&line, 5, &config).unwrap_err();
        assert!(matches!(
            err,
            ExtractError::BudgetExceeded {
                stage: "structure",
                ..
            }
        ));
    }
}
