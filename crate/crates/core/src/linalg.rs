//! Exact linear algebra over GF(p) for small p and small ambient dimension.
//!
//! Vectors in F_p^n are base-p integer encodings: the vector (c_0, ..., c_{n-1})
//! encodes as sum c_i * p^i. For p = 2 the encoding is the plain bit pattern, so
//! addition is XOR. Subspaces are kept in canonical reduced row echelon form with
//! strictly increasing pivot columns, so structural equality coincides with
//! subspace equality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest ambient dimension supported by the digit encoding.
pub const MAX_DIM: usize = 16;
/// Largest supported prime modulus.
pub const MAX_PRIME: u16 = 17;
/// Default enumeration cap: refuse to enumerate subspaces with more than 2^20 elements.
pub const ENUM_CAP: u64 = 1 << 20;

/// A vector in F_p^n as a base-p integer encoding. The ambient [`FieldSpec`]
/// supplies the arithmetic; encodings are plain integers in [0, p^n).
pub type VecP = u64;

/// Fixed-size digit buffer for one vector; only the first `n` entries are used.
pub type Digits = [u8; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("modulus {0} is not a supported prime (need a prime in 2..={MAX_PRIME})")]
    UnsupportedModulus(u16),
    #[error("ambient dimension {0} exceeds the supported maximum {MAX_DIM}")]
    DimensionTooLarge(u16),
    #[error("p^n overflows the 64-bit encoding range for p={p}, n={n}")]
    EncodingOverflow { p: u16, n: u16 },
    #[error("encoding {enc} is outside the ambient range {size}")]
    EncodingOutOfRange { enc: u64, size: u64 },
    #[error("operands live in different ambient spaces")]
    AmbientMismatch,
    #[error("requested dimension {dim} exceeds ambient dimension {n}")]
    InvalidDimension { dim: u16, n: u16 },
    #[error("enumeration of {size} elements exceeds the cap {cap}")]
    EnumerationCapExceeded { size: u64, cap: u64 },
    #[error("basis rows are not in canonical reduced echelon form")]
    NonCanonicalBasis,
}

fn is_prime(p: u16) -> bool {
    if p < 2 {
        return false;
    }
    (2..p).take_while(|d| d * d <= p).all(|d| p % d != 0)
}

/// Multiplicative inverse mod p; p is prime and a is nonzero mod p.
fn inv_mod(a: u8, p: u16) -> u8 {
    let a = u16::from(a) % p;
    debug_assert!(a != 0);
    (1..p).find(|&x| (a * x) % p == 1).expect("prime modulus") as u8
}

/// Ambient space F_p^n: the modulus and dimension every encoding is read against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    p: u16,
    n: u16,
}

impl FieldSpec {
    pub fn new(p: u16, n: u16) -> Result<Self, LinalgError> {
        if p < 2 || p > MAX_PRIME || !is_prime(p) {
            return Err(LinalgError::UnsupportedModulus(p));
        }
        if usize::from(n) > MAX_DIM {
            return Err(LinalgError::DimensionTooLarge(n));
        }
        let mut size: u64 = 1;
        for _ in 0..n {
            size = size
                .checked_mul(u64::from(p))
                .ok_or(LinalgError::EncodingOverflow { p, n })?;
        }
        Ok(FieldSpec { p, n })
    }

    pub fn p(&self) -> u16 {
        self.p
    }

    pub fn n(&self) -> u16 {
        self.n
    }

    /// Number of vectors, p^n.
    pub fn size(&self) -> u64 {
        u64::from(self.p).pow(u32::from(self.n))
    }

    pub fn check_enc(&self, enc: VecP) -> Result<(), LinalgError> {
        if enc < self.size() {
            Ok(())
        } else {
            Err(LinalgError::EncodingOutOfRange {
                enc,
                size: self.size(),
            })
        }
    }

    pub fn decode(&self, enc: VecP) -> Digits {
        let mut d = [0u8; MAX_DIM];
        let p = u64::from(self.p);
        let mut rest = enc;
        for slot in d.iter_mut().take(usize::from(self.n)) {
            *slot = (rest % p) as u8;
            rest /= p;
        }
        debug_assert_eq!(rest, 0, "encoding out of range");
        d
    }

    pub fn encode(&self, digits: &Digits) -> VecP {
        let p = u64::from(self.p);
        let mut enc = 0u64;
        for i in (0..usize::from(self.n)).rev() {
            debug_assert!(u16::from(digits[i]) < self.p);
            enc = enc * p + u64::from(digits[i]);
        }
        enc
    }

    /// Standard basis vector e_i, encoded as p^i.
    pub fn basis_vec(&self, i: usize) -> VecP {
        debug_assert!(i < usize::from(self.n));
        u64::from(self.p).pow(i as u32)
    }

    pub fn component(&self, enc: VecP, i: usize) -> u8 {
        let p = u64::from(self.p);
        ((enc / p.pow(i as u32)) % p) as u8
    }

    pub fn add(&self, a: VecP, b: VecP) -> VecP {
        if self.p == 2 {
            return a ^ b;
        }
        let (da, db) = (self.decode(a), self.decode(b));
        let mut out = [0u8; MAX_DIM];
        for i in 0..usize::from(self.n) {
            out[i] = ((da[i] + db[i]) as u16 % self.p) as u8;
        }
        self.encode(&out)
    }

    pub fn neg(&self, a: VecP) -> VecP {
        if self.p == 2 {
            return a;
        }
        let da = self.decode(a);
        let mut out = [0u8; MAX_DIM];
        for i in 0..usize::from(self.n) {
            out[i] = ((self.p - u16::from(da[i])) % self.p) as u8;
        }
        self.encode(&out)
    }

    pub fn sub(&self, a: VecP, b: VecP) -> VecP {
        self.add(a, self.neg(b))
    }

    pub fn scale(&self, c: u8, a: VecP) -> VecP {
        let c = u16::from(c) % self.p;
        let da = self.decode(a);
        let mut out = [0u8; MAX_DIM];
        for i in 0..usize::from(self.n) {
            out[i] = ((u16::from(da[i]) * c) % self.p) as u8;
        }
        self.encode(&out)
    }

    /// Standard dot product sum a_i b_i mod p.
    pub fn dot(&self, a: VecP, b: VecP) -> u8 {
        let (da, db) = (self.decode(a), self.decode(b));
        let mut acc = 0u32;
        for i in 0..usize::from(self.n) {
            acc += u32::from(da[i]) * u32::from(db[i]);
        }
        (acc % u32::from(self.p)) as u8
    }

    /// All p^n encodings in increasing order.
    pub fn all_vectors(&self) -> impl Iterator<Item = VecP> {
        0..self.size()
    }
}

/// Incremental row reducer: maintains a set of rows in echelon form (pivot digit 1,
/// pivots strictly increasing by insertion bookkeeping). The workhorse behind
/// canonicalization, rank checks, and the hot certification loops.
#[derive(Debug, Clone)]
pub struct RowReducer {
    p: u16,
    n: usize,
    /// Rows paired with their pivot index; kept fully reduced against each other
    /// only at canonicalization time. Each stored row has leading coefficient 1.
    rows: Vec<(usize, Digits)>,
}

impl RowReducer {
    pub fn new(field: FieldSpec) -> Self {
        RowReducer {
            p: field.p,
            n: usize::from(field.n),
            rows: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Reduce `row` against the stored rows; if a nonzero remainder survives,
    /// normalize and store it and report that the rank grew.
    pub fn add_row(&mut self, row: &Digits) -> bool {
        let mut r = *row;
        for &(piv, ref base) in &self.rows {
            let c = r[piv];
            if c != 0 {
                // r -= c * base; base has leading coefficient 1 at piv.
                for i in piv..self.n {
                    let sub = (u16::from(c) * u16::from(base[i])) % self.p;
                    r[i] = ((u16::from(r[i]) + self.p - sub) % self.p) as u8;
                }
            }
        }
        let piv = match (0..self.n).find(|&i| r[i] != 0) {
            Some(p) => p,
            None => return false,
        };
        let inv = inv_mod(r[piv], self.p);
        for i in piv..self.n {
            r[i] = ((u16::from(r[i]) * u16::from(inv)) % self.p) as u8;
        }
        let pos = self.rows.partition_point(|&(q, _)| q < piv);
        self.rows.insert(pos, (piv, r));
        true
    }

    pub fn add_enc(&mut self, field: FieldSpec, enc: VecP) -> bool {
        self.add_row(&field.decode(enc))
    }

    /// Back-eliminate so each pivot column is zero outside its own row, then
    /// return rows sorted by pivot. This is the canonical RREF basis.
    fn into_canonical(mut self, field: FieldSpec) -> Vec<VecP> {
        let k = self.rows.len();
        for i in (0..k).rev() {
            let (piv, row) = self.rows[i].clone();
            for j in 0..i {
                let c = self.rows[j].1[piv];
                if c != 0 {
                    for t in piv..self.n {
                        let sub = (u16::from(c) * u16::from(row[t])) % self.p;
                        self.rows[j].1[t] =
                            ((u16::from(self.rows[j].1[t]) + self.p - sub) % self.p) as u8;
                    }
                }
            }
        }
        self.rows.iter().map(|(_, r)| field.encode(r)).collect()
    }
}

/// A subspace of F_p^n held as its canonical RREF basis with strictly increasing
/// pivot columns. Two `Subspace` values are equal as structs exactly when they
/// are equal as subspaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Subspace {
    ambient: FieldSpec,
    basis: Vec<VecP>,
}

impl Subspace {
    /// Canonical basis from an arbitrary spanning list (Gaussian elimination).
    pub fn canonicalize(ambient: FieldSpec, vectors: &[VecP]) -> Result<Self, LinalgError> {
        let mut red = RowReducer::new(ambient);
        for &v in vectors {
            ambient.check_enc(v)?;
            red.add_enc(ambient, v);
        }
        Ok(Subspace {
            ambient,
            basis: red.into_canonical(ambient),
        })
    }

    pub fn zero(ambient: FieldSpec) -> Self {
        Subspace {
            ambient,
            basis: Vec::new(),
        }
    }

    pub fn full(ambient: FieldSpec) -> Self {
        let basis = (0..usize::from(ambient.n()))
            .map(|i| ambient.basis_vec(i))
            .collect();
        Subspace { ambient, basis }
    }

    pub fn ambient(&self) -> FieldSpec {
        self.ambient
    }

    pub fn basis(&self) -> &[VecP] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn codim(&self) -> usize {
        usize::from(self.ambient.n()) - self.dim()
    }

    /// Number of elements, p^dim.
    pub fn size(&self) -> u64 {
        u64::from(self.ambient.p()).pow(self.dim() as u32)
    }

    pub fn is_zero(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.dim() == usize::from(self.ambient.n())
    }

    fn check_same_ambient(&self, other: &Subspace) -> Result<(), LinalgError> {
        if self.ambient == other.ambient {
            Ok(())
        } else {
            Err(LinalgError::AmbientMismatch)
        }
    }

    /// U + W, the span of the union.
    pub fn sum(&self, other: &Subspace) -> Result<Subspace, LinalgError> {
        self.check_same_ambient(other)?;
        let mut all = self.basis.clone();
        all.extend_from_slice(&other.basis);
        Subspace::canonicalize(self.ambient, &all)
    }

    /// U with W, computed via duality: (U^perp + W^perp)^perp. A direct
    /// kernel-based method must agree; tests enforce that.
    pub fn intersect(&self, other: &Subspace) -> Result<Subspace, LinalgError> {
        self.check_same_ambient(other)?;
        let du = self.orth_complement();
        let dw = other.orth_complement();
        Ok(du.sum(&dw)?.orth_complement())
    }

    /// Orthogonal complement w.r.t. the standard dot product:
    /// {v : b . v = 0 for every basis row b}. Satisfies (U^perp)^perp = U and
    /// dim U + dim U^perp = n even though U may meet U^perp.
    pub fn orth_complement(&self) -> Subspace {
        let n = usize::from(self.ambient.n());
        let k = self.dim();
        // Basis rows are already RREF; read pivots directly.
        let rows: Vec<Digits> = self.basis.iter().map(|&r| self.ambient.decode(r)).collect();
        let mut pivots = Vec::with_capacity(k);
        for r in &rows {
            let piv = (0..n).find(|&i| r[i] != 0).expect("nonzero basis row");
            pivots.push(piv);
        }
        let mut kernel: Vec<VecP> = Vec::with_capacity(n - k);
        let p = self.ambient.p();
        for free in 0..n {
            if pivots.contains(&free) {
                continue;
            }
            // v[free] = 1, v[pivots[i]] = -rows[i][free]
            let mut v = [0u8; MAX_DIM];
            v[free] = 1;
            for (i, &piv) in pivots.iter().enumerate() {
                v[piv] = ((p - u16::from(rows[i][free])) % p) as u8;
            }
            kernel.push(self.ambient.encode(&v));
        }
        Subspace::canonicalize(self.ambient, &kernel).expect("kernel encodings in range")
    }

    /// Membership by reduction against the canonical basis.
    pub fn member(&self, v: VecP) -> Result<bool, LinalgError> {
        self.ambient.check_enc(v)?;
        Ok(self.reduce(v) == 0)
    }

    /// Reduce v modulo this subspace (eliminate every pivot coordinate).
    pub fn reduce(&self, v: VecP) -> VecP {
        let n = usize::from(self.ambient.n());
        let p = self.ambient.p();
        let mut d = self.ambient.decode(v);
        for &row in &self.basis {
            let rd = self.ambient.decode(row);
            let piv = (0..n).find(|&i| rd[i] != 0).expect("nonzero basis row");
            let c = d[piv];
            if c != 0 {
                for i in piv..n {
                    let sub = (u16::from(c) * u16::from(rd[i])) % p;
                    d[i] = ((u16::from(d[i]) + p - sub) % p) as u8;
                }
            }
        }
        self.ambient.encode(&d)
    }

    pub fn contains(&self, other: &Subspace) -> Result<bool, LinalgError> {
        self.check_same_ambient(other)?;
        for &row in &other.basis {
            if !self.member(row)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// All p^dim elements, by iterating coefficient vectors against the basis.
    pub fn enumerate(&self) -> Result<Vec<VecP>, LinalgError> {
        self.enumerate_capped(ENUM_CAP)
    }

    pub fn enumerate_capped(&self, cap: u64) -> Result<Vec<VecP>, LinalgError> {
        let size = self.size();
        if size > cap {
            return Err(LinalgError::EnumerationCapExceeded { size, cap });
        }
        let coeff_space = FieldSpec::new(self.ambient.p(), self.dim() as u16)?;
        let mut out = Vec::with_capacity(size as usize);
        for c in coeff_space.all_vectors() {
            out.push(self.from_coords(c));
        }
        Ok(out)
    }

    /// The coordinate space F_p^dim attached to the canonical basis.
    pub fn coord_space(&self) -> FieldSpec {
        FieldSpec::new(self.ambient.p(), self.dim() as u16).expect("dim <= n")
    }

    /// Map basis coordinates to an ambient vector: c -> sum c_t b_t.
    pub fn from_coords(&self, coords: VecP) -> VecP {
        let cs = self.coord_space();
        let mut acc = 0u64;
        for (t, &row) in self.basis.iter().enumerate() {
            let c = cs.component(coords, t);
            acc = self.ambient.add(acc, self.ambient.scale(c, row));
        }
        acc
    }

    /// Coordinates of v w.r.t. the canonical basis, or None if v is not a member.
    /// With an RREF basis the candidate coordinates are just the pivot digits.
    pub fn coords_of(&self, v: VecP) -> Option<VecP> {
        if self.ambient.check_enc(v).is_err() {
            return None;
        }
        let n = usize::from(self.ambient.n());
        let d = self.ambient.decode(v);
        let cs = self.coord_space();
        let mut coords = [0u8; MAX_DIM];
        for (t, &row) in self.basis.iter().enumerate() {
            let rd = self.ambient.decode(row);
            let piv = (0..n).find(|&i| rd[i] != 0).expect("nonzero basis row");
            coords[t] = d[piv];
        }
        let enc = cs.encode(&coords);
        if self.from_coords(enc) == v {
            Some(enc)
        } else {
            None
        }
    }

    /// Selector matrix recovering canonical coordinates: rows pick the pivot
    /// digits, so selector * v = coords_of(v) for every member v. Off the
    /// subspace it is still a well-defined linear projection.
    pub fn coord_selector(&self) -> MatP {
        let n = usize::from(self.ambient.n());
        let mut m = MatP::zeros(self.ambient.p(), self.dim() as u16, self.ambient.n());
        for (t, &row) in self.basis.iter().enumerate() {
            let rd = self.ambient.decode(row);
            let piv = (0..n).find(|&i| rd[i] != 0).expect("nonzero basis row");
            m.set(t, piv, 1);
        }
        m
    }

    /// Uniform random member.
    pub fn random_member<R: rand::Rng>(&self, rng: &mut R) -> VecP {
        let cs = self.coord_space();
        let c = rng.gen_range(0..cs.size());
        self.from_coords(c)
    }
}

/// Deterministic random subspace of exactly the requested dimension.
pub fn random_subspace(ambient: FieldSpec, dim: u16, seed: u64) -> Result<Subspace, LinalgError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    random_subspace_rng(ambient, dim, &mut rng)
}

pub fn random_subspace_rng<R: rand::Rng>(
    ambient: FieldSpec,
    dim: u16,
    rng: &mut R,
) -> Result<Subspace, LinalgError> {
    if dim > ambient.n() {
        return Err(LinalgError::InvalidDimension {
            dim,
            n: ambient.n(),
        });
    }
    let mut red = RowReducer::new(ambient);
    let mut kept: Vec<VecP> = Vec::with_capacity(usize::from(dim));
    while red.rank() < usize::from(dim) {
        let v = rng.gen_range(0..ambient.size());
        if red.add_enc(ambient, v) {
            kept.push(v);
        }
    }
    Subspace::canonicalize(ambient, &kept)
}

/// Serialized form of a subspace: modulus, ambient dimension, canonical basis rows.
#[derive(Debug, Serialize, Deserialize)]
pub struct SubspaceRepr {
    pub p: u16,
    pub n: u16,
    pub basis: Vec<u64>,
}

impl Serialize for Subspace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SubspaceRepr {
            p: self.ambient.p(),
            n: self.ambient.n(),
            basis: self.basis.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subspace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = SubspaceRepr::deserialize(d)?;
        let ambient = FieldSpec::new(repr.p, repr.n).map_err(D::Error::custom)?;
        let sub = Subspace::canonicalize(ambient, &repr.basis).map_err(D::Error::custom)?;
        if sub.basis != repr.basis {
            return Err(D::Error::custom(LinalgError::NonCanonicalBasis));
        }
        Ok(sub)
    }
}

/// Dense matrix over F_p, row-major, entries reduced mod p. Represents a linear
/// map F_p^cols -> F_p^rows acting on column vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatP {
    p: u16,
    rows: u16,
    cols: u16,
    data: Vec<u8>,
}

impl MatP {
    pub fn zeros(p: u16, rows: u16, cols: u16) -> Self {
        MatP {
            p,
            rows,
            cols,
            data: vec![0; usize::from(rows) * usize::from(cols)],
        }
    }

    pub fn identity(p: u16, n: u16) -> Self {
        let mut m = MatP::zeros(p, n, n);
        for i in 0..usize::from(n) {
            m.set(i, i, 1);
        }
        m
    }

    /// Build from columns given as encodings in F_p^rows.
    pub fn from_cols(p: u16, rows: u16, cols_enc: &[VecP]) -> Self {
        let out_space = FieldSpec::new(p, rows).expect("valid field");
        let mut m = MatP::zeros(p, rows, cols_enc.len() as u16);
        for (c, &enc) in cols_enc.iter().enumerate() {
            let d = out_space.decode(enc);
            for r in 0..usize::from(rows) {
                m.set(r, c, d[r]);
            }
        }
        m
    }

    pub fn p(&self) -> u16 {
        self.p
    }

    pub fn nrows(&self) -> u16 {
        self.rows
    }

    pub fn ncols(&self) -> u16 {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * usize::from(self.cols) + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.data[r * usize::from(self.cols) + c] = (u16::from(v) % self.p) as u8;
    }

    pub fn add(&self, other: &MatP) -> MatP {
        assert_eq!((self.rows, self.cols, self.p), (other.rows, other.cols, other.p));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| ((u16::from(a) + u16::from(b)) % self.p) as u8)
            .collect();
        MatP { data, ..*self }
    }

    pub fn neg(&self) -> MatP {
        let data = self
            .data
            .iter()
            .map(|&a| ((self.p - u16::from(a)) % self.p) as u8)
            .collect();
        MatP { data, ..*self }
    }

    pub fn sub(&self, other: &MatP) -> MatP {
        self.add(&other.neg())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn transpose(&self) -> MatP {
        let mut t = MatP::zeros(self.p, self.cols, self.rows);
        for r in 0..usize::from(self.rows) {
            for c in 0..usize::from(self.cols) {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn mul(&self, other: &MatP) -> MatP {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.p, other.p);
        let mut out = MatP::zeros(self.p, self.rows, other.cols);
        for r in 0..usize::from(self.rows) {
            for c in 0..usize::from(other.cols) {
                let mut acc = 0u32;
                for k in 0..usize::from(self.cols) {
                    acc += u32::from(self.get(r, k)) * u32::from(other.get(k, c));
                }
                out.set(r, c, (acc % u32::from(self.p)) as u8);
            }
        }
        out
    }

    /// Apply to an encoded vector of F_p^cols, producing an encoding in F_p^rows.
    pub fn apply(&self, x: VecP) -> VecP {
        let in_space = FieldSpec::new(self.p, self.cols).expect("valid field");
        let out_space = FieldSpec::new(self.p, self.rows).expect("valid field");
        let xd = in_space.decode(x);
        let mut out = [0u8; MAX_DIM];
        for r in 0..usize::from(self.rows) {
            let mut acc = 0u32;
            for c in 0..usize::from(self.cols) {
                acc += u32::from(self.get(r, c)) * u32::from(xd[c]);
            }
            out[r] = (acc % u32::from(self.p)) as u8;
        }
        out_space.encode(&out)
    }

    /// Column c as an encoding in F_p^rows.
    pub fn col_enc(&self, c: usize) -> VecP {
        let out_space = FieldSpec::new(self.p, self.rows).expect("valid field");
        let mut d = [0u8; MAX_DIM];
        for r in 0..usize::from(self.rows) {
            d[r] = self.get(r, c);
        }
        out_space.encode(&d)
    }

    /// Span of the columns inside F_p^rows.
    pub fn col_space(&self) -> Subspace {
        let out_space = FieldSpec::new(self.p, self.rows).expect("valid field");
        let cols: Vec<VecP> = (0..usize::from(self.cols)).map(|c| self.col_enc(c)).collect();
        Subspace::canonicalize(out_space, &cols).expect("columns in range")
    }

    pub fn rank(&self) -> usize {
        let out_space = FieldSpec::new(self.p, self.rows).expect("valid field");
        let mut red = RowReducer::new(out_space);
        for c in 0..usize::from(self.cols) {
            red.add_enc(out_space, self.col_enc(c));
        }
        red.rank()
    }

    pub fn is_injective(&self) -> bool {
        self.rank() == usize::from(self.cols)
    }

    /// One solution x of self * x = rhs, or None. rhs has `rows` digits.
    pub fn solve(&self, rhs: &Digits) -> Option<Vec<u8>> {
        let m = usize::from(self.rows);
        let n = usize::from(self.cols);
        let p = self.p;
        // Augmented matrix [A | rhs], eliminated in place.
        let mut a: Vec<Vec<u16>> = (0..m)
            .map(|r| {
                let mut row: Vec<u16> = (0..n).map(|c| u16::from(self.get(r, c))).collect();
                row.push(u16::from(rhs[r]));
                row
            })
            .collect();
        let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
        let mut rank = 0usize;
        for col in 0..n {
            let Some(pr) = (rank..m).find(|&r| a[r][col] != 0) else {
                continue;
            };
            a.swap(rank, pr);
            let inv = u16::from(inv_mod(a[rank][col] as u8, p));
            for v in a[rank].iter_mut() {
                *v = (*v * inv) % p;
            }
            for r in 0..m {
                if r != rank && a[r][col] != 0 {
                    let f = a[r][col];
                    for c in 0..=n {
                        a[r][c] = (a[r][c] + p - (f * a[rank][c]) % p) % p;
                    }
                }
            }
            pivot_of_col[col] = Some(rank);
            rank += 1;
        }
        // Inconsistent if a zero row has nonzero rhs.
        for r in rank..m {
            if a[r][n] != 0 {
                return None;
            }
        }
        let mut x = vec![0u8; n];
        for col in 0..n {
            if let Some(r) = pivot_of_col[col] {
                x[col] = a[r][n] as u8;
            }
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(p: u16, n: u16) -> FieldSpec {
        FieldSpec::new(p, n).unwrap()
    }

    /// Independent oracle: the full element set of span(vectors), by closing
    /// under addition and scaling. No echelon forms involved.
    fn span_set(ambient: FieldSpec, vectors: &[VecP]) -> std::collections::BTreeSet<VecP> {
        let mut set = std::collections::BTreeSet::new();
        set.insert(0u64);
        loop {
            let mut grew = false;
            let snapshot: Vec<VecP> = set.iter().copied().collect();
            for &s in &snapshot {
                for &v in vectors {
                    for c in 0..ambient.p() as u8 {
                        let w = ambient.add(s, ambient.scale(c, v));
                        if set.insert(w) {
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                return set;
            }
        }
    }

    #[test]
    fn field_spec_rejects_bad_parameters() {
        assert!(FieldSpec::new(4, 2).is_err());
        assert!(FieldSpec::new(1, 2).is_err());
        assert!(FieldSpec::new(19, 2).is_err());
        assert!(FieldSpec::new(2, 17).is_err());
        assert!(FieldSpec::new(17, 16).is_err()); // 17^16 overflows u64
        assert!(FieldSpec::new(17, 15).is_ok());
        assert!(FieldSpec::new(2, 0).is_ok());
    }

    #[test]
    fn encode_decode_round_trip() {
        let fs = f(3, 4);
        for enc in fs.all_vectors() {
            assert_eq!(fs.encode(&fs.decode(enc)), enc);
        }
    }

    #[test]
    fn canonical_basis_of_pair_in_f2_2() {
        // {(1,1),(0,1)} spans F_2^2; canonical basis is {(1,0),(0,1)} = encodings {1,2}.
        let fs = f(2, 2);
        let s = Subspace::canonicalize(fs, &[0b11, 0b10]).unwrap();
        assert_eq!(s.basis(), &[1, 2]);
        assert!(s.is_full());
    }

    #[test]
    fn canonicalize_rejects_out_of_range() {
        let fs = f(2, 2);
        assert_eq!(
            Subspace::canonicalize(fs, &[4]),
            Err(LinalgError::EncodingOutOfRange { enc: 4, size: 4 })
        );
    }

    #[test]
    fn empty_input_gives_zero_subspace() {
        let fs = f(5, 3);
        let s = Subspace::canonicalize(fs, &[]).unwrap();
        assert!(s.is_zero());
        assert_eq!(s.size(), 1);
        assert_eq!(s.enumerate().unwrap(), vec![0]);
    }

    #[test]
    fn zero_dimensional_ambient() {
        let fs = f(2, 0);
        let s = Subspace::full(fs);
        assert!(s.is_zero() && s.is_full());
        assert_eq!(fs.size(), 1);
    }

    #[test]
    fn enumerate_is_scalar_multiples_for_a_line() {
        let fs = f(5, 2);
        let s = Subspace::canonicalize(fs, &[fs.encode(&{
            let mut d = [0u8; MAX_DIM];
            d[0] = 1;
            d[1] = 2;
            d
        })])
        .unwrap();
        let got: std::collections::BTreeSet<_> = s.enumerate().unwrap().into_iter().collect();
        let want: std::collections::BTreeSet<_> =
            (0..5u8).map(|c| fs.scale(c, s.basis()[0])).collect();
        assert_eq!(got, want);
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn orth_complement_of_diagonal_line_in_f2_2() {
        // span{(1,1)}^perp = span{(1,1)} under the standard dot product.
        let fs = f(2, 2);
        let s = Subspace::canonicalize(fs, &[0b11]).unwrap();
        let c = s.orth_complement();
        assert_eq!(c, s);
        // Oracle: all v with dot(v, u) = 0 for every u in the span.
        let members = span_set(fs, &[0b11]);
        for v in fs.all_vectors() {
            let orth = members.iter().all(|&u| fs.dot(u, v) == 0);
            assert_eq!(c.member(v).unwrap(), orth);
        }
    }

    #[test]
    fn member_matches_enumeration_oracle() {
        let fs = f(3, 3);
        let gens = [4u64, 10u64];
        let s = Subspace::canonicalize(fs, &gens).unwrap();
        let set = span_set(fs, &gens);
        for v in fs.all_vectors() {
            assert_eq!(s.member(v).unwrap(), set.contains(&v));
        }
        assert_eq!(s.size() as usize, set.len());
    }

    #[test]
    fn sum_and_intersect_agree_with_element_oracles() {
        let fs = f(2, 4);
        let u = Subspace::canonicalize(fs, &[0b0011, 0b0101]).unwrap();
        let w = Subspace::canonicalize(fs, &[0b0110, 0b1000]).unwrap();
        let su = span_set(fs, u.basis());
        let sw = span_set(fs, w.basis());
        let sum = u.sum(&w).unwrap();
        let inter = u.intersect(&w).unwrap();
        let union: Vec<VecP> = su.union(&sw).copied().collect();
        let sum_oracle = span_set(fs, &union);
        for v in fs.all_vectors() {
            assert_eq!(sum.member(v).unwrap(), sum_oracle.contains(&v));
            assert_eq!(inter.member(v).unwrap(), su.contains(&v) && sw.contains(&v));
        }
    }

    #[test]
    fn ambient_mismatch_is_an_error() {
        let a = Subspace::full(f(2, 3));
        let b = Subspace::full(f(2, 4));
        assert_eq!(a.sum(&b), Err(LinalgError::AmbientMismatch));
        assert_eq!(a.intersect(&b), Err(LinalgError::AmbientMismatch));
        assert_eq!(a.contains(&b), Err(LinalgError::AmbientMismatch));
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let fs = f(2, 8);
        let s = Subspace::full(fs);
        assert!(matches!(
            s.enumerate_capped(100),
            Err(LinalgError::EnumerationCapExceeded { size: 256, cap: 100 })
        ));
    }

    #[test]
    fn random_subspace_has_requested_dimension_and_is_deterministic() {
        let fs = f(2, 4);
        let a = random_subspace(fs, 2, 1).unwrap();
        let b = random_subspace(fs, 2, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 2);
        // Frozen draw: seed 1 must keep producing this basis across releases.
        assert_eq!(a.basis(), &[1, 6]);
        assert!(random_subspace(fs, 5, 1).is_err());
    }

    #[test]
    fn coords_round_trip() {
        let fs = f(3, 4);
        let s = Subspace::canonicalize(fs, &[7, 30, 42]).unwrap();
        for c in s.coord_space().all_vectors() {
            let v = s.from_coords(c);
            assert_eq!(s.coords_of(v), Some(c));
        }
        for v in fs.all_vectors() {
            if !s.member(v).unwrap() {
                assert_eq!(s.coords_of(v), None);
            }
        }
    }

    #[test]
    fn subspace_json_round_trip_and_canonical_rejection() {
        let fs = f(2, 4);
        let s = Subspace::canonicalize(fs, &[0b1010, 0b0110]).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        let back: Subspace = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        // Non-canonical basis rows must be rejected.
        let bad = r#"{"p":2,"n":2,"basis":[3,2]}"#;
        assert!(serde_json::from_str::<Subspace>(bad).is_err());
    }

    #[test]
    fn matrix_solve_and_rank() {
        let mut m = MatP::zeros(3, 3, 2);
        m.set(0, 0, 1);
        m.set(1, 1, 2);
        m.set(2, 0, 1);
        m.set(2, 1, 1);
        assert_eq!(m.rank(), 2);
        assert!(m.is_injective());
        let rhs = {
            let mut d = [0u8; MAX_DIM];
            d[0] = 2;
            d[1] = 1;
            d[2] = 0;
            d
        };
        // x = (2, 2): col0*2 + col1*2 = (2, 4 mod 3, 2+2 mod 3) = (2,1,1) != rhs -> check solver honestly
        match m.solve(&rhs) {
            Some(x) => {
                let mut out = [0u32; 3];
                for r in 0..3 {
                    out[r] = (u32::from(m.get(r, 0)) * u32::from(x[0])
                        + u32::from(m.get(r, 1)) * u32::from(x[1]))
                        % 3;
                }
                assert_eq!(out, [2, 1, 0], "solver returned a non-solution");
            }
            None => {
                // Verify insolubility by brute force.
                let mut found = false;
                for a in 0..3u32 {
                    for b in 0..3u32 {
                        let v = [
                            (u32::from(m.get(0, 0)) * a + u32::from(m.get(0, 1)) * b) % 3,
                            (u32::from(m.get(1, 0)) * a + u32::from(m.get(1, 1)) * b) % 3,
                            (u32::from(m.get(2, 0)) * a + u32::from(m.get(2, 1)) * b) % 3,
                        ];
                        if v == [2, 1, 0] {
                            found = true;
                        }
                    }
                }
                assert!(!found, "solver missed an existing solution");
            }
        }
    }

    #[test]
    fn matrix_apply_matches_column_combination() {
        let fs_in = f(2, 2);
        let m = MatP::from_cols(2, 3, &[0b011, 0b101]);
        for x in fs_in.all_vectors() {
            let fs_out = f(2, 3);
            let want = fs_out.add(
                fs_out.scale(fs_in.component(x, 0), 0b011),
                fs_out.scale(fs_in.component(x, 1), 0b101),
            );
            assert_eq!(m.apply(x), want);
        }
    }

    proptest! {
        #[test]
        fn prop_canonicalize_is_order_insensitive_and_idempotent(
            p in prop::sample::select(vec![2u16, 3, 5]),
            n in 1u16..=4,
            seed in 0u64..1_000,
            k in 0usize..4,
        ) {
            let fs = f(p, n);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut vecs: Vec<VecP> = (0..k).map(|_| rng.gen_range(0..fs.size())).collect();
            let a = Subspace::canonicalize(fs, &vecs).unwrap();
            vecs.reverse();
            let b = Subspace::canonicalize(fs, &vecs).unwrap();
            prop_assert_eq!(&a, &b);
            let again = Subspace::canonicalize(fs, a.basis()).unwrap();
            prop_assert_eq!(&a, &again);
            // Scaling any generator does not change the span.
            if !vecs.is_empty() {
                let c = rng.gen_range(1..p) as u8;
                let mut scaled = vecs.clone();
                scaled[0] = fs.scale(c, scaled[0]);
                let d = Subspace::canonicalize(fs, &scaled).unwrap();
                prop_assert_eq!(&a, &d);
            }
        }

        #[test]
        fn prop_dimension_formula_and_duality(
            p in prop::sample::select(vec![2u16, 3, 5]),
            n in 1u16..=5,
            seed in 0u64..2_000,
        ) {
            let fs = f(p, n);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let du = rng.gen_range(0..=n);
            let dw = rng.gen_range(0..=n);
            let u = random_subspace_rng(fs, du, &mut rng).unwrap();
            let w = random_subspace_rng(fs, dw, &mut rng).unwrap();
            let sum = u.sum(&w).unwrap();
            let inter = u.intersect(&w).unwrap();
            prop_assert_eq!(sum.dim() + inter.dim(), u.dim() + w.dim());
            // Duality identities.
            prop_assert_eq!(u.orth_complement().orth_complement(), u.clone());
            prop_assert_eq!(u.orth_complement().dim(), usize::from(n) - u.dim());
            let lhs = sum.orth_complement();
            let rhs = u.orth_complement().intersect(&w.orth_complement()).unwrap();
            prop_assert_eq!(lhs, rhs);
            // Sum/intersect are monotone w.r.t. containment.
            prop_assert!(sum.contains(&u).unwrap());
            prop_assert!(u.contains(&inter).unwrap());
        }

        #[test]
        fn prop_intersect_duality_agrees_with_direct_kernel_method(
            p in prop::sample::select(vec![2u16, 3]),
            n in 1u16..=4,
            seed in 0u64..500,
        ) {
            let fs = f(p, n);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let u = random_subspace_rng(fs, rng.gen_range(0..=n), &mut rng).unwrap();
            let w = random_subspace_rng(fs, rng.gen_range(0..=n), &mut rng).unwrap();
            let via_duality = u.intersect(&w).unwrap();
            // Direct method: collect every ambient vector lying in both spans.
            let mut common = Vec::new();
            for v in fs.all_vectors() {
                if u.member(v).unwrap() && w.member(v).unwrap() {
                    common.push(v);
                }
            }
            let direct = Subspace::canonicalize(fs, &common).unwrap();
            prop_assert_eq!(via_duality, direct);
        }
    }
}
