//! Two-spinor index algebra.
//!
//! Indices come in two alphabets: primed (`0'`, `1'`) and unprimed (`0`, `1`).
//! Primed indices are raised and lowered with the epsilon tensor, unprimed
//! ones with the same numeric matrix. Symmetric powers are stored in reduced
//! coordinates (a component per count of `1'` indices), and the inner products
//! carry the binomial multiplicities that make them equal to the sum over all
//! index tuples of the corresponding full tensor.
//!
//! [`FullTensor`] is a dense rank-<=12 tensor used as a brute-force oracle for
//! everything the reduced types do; it is deliberately slow and simple.

use crate::C64;
use thiserror::Error;

/// Largest rank a [`FullTensor`] may have (4096 entries). The dense type is
/// an oracle, not a workhorse; the cap keeps misuse from allocating wildly.
pub const MAX_FULL_RANK: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum SpinorError {
    #[error("slot {slot} out of range for rank-{rank} tensor")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("slot {slot} is {found:?}, expected {expected:?}")]
    SlotKindMismatch {
        slot: usize,
        found: SlotKind,
        expected: SlotKind,
    },
    #[error("slots must be distinct (got {0} twice)")]
    IdenticalSlots(usize),
    #[error("tensor not symmetric in the designated slots: defect {defect:e} exceeds tolerance {tol:e}")]
    NotSymmetric { defect: f64, tol: f64 },
    #[error("tensor not antisymmetric in the designated slots: defect {defect:e} exceeds tolerance {tol:e}")]
    NotAntisymmetric { defect: f64, tol: f64 },
}

/// Which alphabet an index slot ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Primed,
    Unprimed,
}

/// The epsilon tensor used to raise and lower indices, together with its
/// inverse. Lower-then-raise (and raise-then-lower) is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonTensor {
    /// `eps_lower[a][b]` = epsilon_{ab} = [[0, 1], [-1, 0]]
    pub eps_lower: [[i32; 2]; 2],
    /// `eps_upper[a][b]` = epsilon^{ab} = [[0, -1], [1, 0]], the inverse
    pub eps_upper: [[i32; 2]; 2],
}

impl EpsilonTensor {
    pub const fn standard() -> Self {
        EpsilonTensor {
            eps_lower: [[0, 1], [-1, 0]],
            eps_upper: [[0, -1], [1, 0]],
        }
    }

    /// sum_b eps_{ab} eps^{bc} = delta_a^c
    pub fn raise_then_lower_is_identity(&self) -> bool {
        for a in 0..2 {
            for c in 0..2 {
                let mut s = 0;
                for b in 0..2 {
                    s += self.eps_lower[a][b] * self.eps_upper[b][c];
                }
                if s != i32::from(a == c) {
                    return false;
                }
            }
        }
        true
    }
}

impl Default for EpsilonTensor {
    fn default() -> Self {
        Self::standard()
    }
}

/// n choose r as a float (the multiplicity weights of the reduced inner
/// products). Exact for every value that occurs here (n <= 12).
pub fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let mut acc: u128 = 1;
    for i in 0..r.min(n - r) {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}

/// Dense complex tensor of rank `p <= 12` with two-valued indices, stored
/// row-major (slot 0 most significant). Tracks only the alphabet of each
/// slot; whether an index is currently in upper or lower position is the
/// caller's bookkeeping, as in the usual index notation.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTensor {
    slots: Vec<SlotKind>,
    data: Vec<C64>,
}

impl FullTensor {
    pub fn zeros(slots: Vec<SlotKind>) -> Self {
        assert!(
            slots.len() <= MAX_FULL_RANK,
            "rank {} exceeds the oracle cap {}",
            slots.len(),
            MAX_FULL_RANK
        );
        let n = 1usize << slots.len();
        FullTensor {
            slots,
            data: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[SlotKind] {
        &self.slots
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Linear index of an index tuple (each entry 0 or 1).
    pub fn lin(&self, idx: &[u8]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    /// Index tuple of a linear position.
    pub fn tuple(&self, mut lin: usize) -> Vec<u8> {
        let p = self.rank();
        let mut idx = vec![0u8; p];
        for s in (0..p).rev() {
            idx[s] = (lin & 1) as u8;
            lin >>= 1;
        }
        idx
    }

    pub fn get(&self, idx: &[u8]) -> C64 {
        self.data[self.lin(idx)]
    }

    pub fn set(&mut self, idx: &[u8], v: C64) {
        let i = self.lin(idx);
        self.data[i] = v;
    }

    fn check_slot(&self, slot: usize, kind: SlotKind) -> Result<(), SpinorError> {
        if slot >= self.rank() {
            return Err(SpinorError::SlotOutOfRange {
                slot,
                rank: self.rank(),
            });
        }
        if self.slots[slot] != kind {
            return Err(SpinorError::SlotKindMismatch {
                slot,
                found: self.slots[slot],
                expected: kind,
            });
        }
        Ok(())
    }

    /// Average over all permutations of the named primed slots.
    pub fn symmetrize_primed(&self, slots: &[usize]) -> Result<Self, SpinorError> {
        for (i, &s) in slots.iter().enumerate() {
            self.check_slot(s, SlotKind::Primed)?;
            if slots[..i].contains(&s) {
                return Err(SpinorError::IdenticalSlots(s));
            }
        }
        let mut out = FullTensor::zeros(self.slots.clone());
        let perms = permutations(slots.len());
        let w = 1.0 / perms.len() as f64;
        let mut idx = vec![0u8; self.rank()];
        let mut src = vec![0u8; self.rank()];
        for lin in 0..self.data.len() {
            decode(lin, &mut idx);
            let mut acc = C64::new(0.0, 0.0);
            for perm in &perms {
                src.copy_from_slice(&idx);
                for (j, &pj) in perm.iter().enumerate() {
                    src[slots[j]] = idx[slots[pj]];
                }
                acc += self.data[encode(&src)];
            }
            out.data[lin] = acc * w;
        }
        Ok(out)
    }

    /// Antisymmetrize an unprimed slot pair: `H_[ab] = (H_ab - H_ba) / 2`.
    pub fn antisymmetrize_pair(&self, a: usize, b: usize) -> Result<Self, SpinorError> {
        self.check_slot(a, SlotKind::Unprimed)?;
        self.check_slot(b, SlotKind::Unprimed)?;
        if a == b {
            return Err(SpinorError::IdenticalSlots(a));
        }
        let mut out = FullTensor::zeros(self.slots.clone());
        let mut idx = vec![0u8; self.rank()];
        let mut src = vec![0u8; self.rank()];
        for lin in 0..self.data.len() {
            decode(lin, &mut idx);
            src.copy_from_slice(&idx);
            src.swap(a, b);
            out.data[lin] = (self.data[lin] - self.data[encode(&src)]) * 0.5;
        }
        Ok(out)
    }

    fn raise_slot(&self, slot: usize, kind: SlotKind) -> Result<Self, SpinorError> {
        self.check_slot(slot, kind)?;
        let eps = EpsilonTensor::standard();
        self.eps_apply(slot, |b, a| eps.eps_upper[b][a])
    }

    fn lower_slot(&self, slot: usize, kind: SlotKind) -> Result<Self, SpinorError> {
        self.check_slot(slot, kind)?;
        let eps = EpsilonTensor::standard();
        self.eps_apply(slot, |b, a| eps.eps_lower[b][a])
    }

    /// f^a = sum_b f_b eps[b][a] (and the same contraction for lowering,
    /// with the inverse matrix).
    fn eps_apply(&self, slot: usize, eps: impl Fn(usize, usize) -> i32) -> Result<Self, SpinorError> {
        let mut out = FullTensor::zeros(self.slots.clone());
        let mut idx = vec![0u8; self.rank()];
        let mut src = vec![0u8; self.rank()];
        for lin in 0..self.data.len() {
            decode(lin, &mut idx);
            let a = idx[slot] as usize;
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..2usize {
                let e = eps(b, a);
                if e != 0 {
                    src.copy_from_slice(&idx);
                    src[slot] = b as u8;
                    acc += self.data[encode(&src)] * e as f64;
                }
            }
            out.data[lin] = acc;
        }
        Ok(out)
    }

    pub fn raise_primed(&self, slot: usize) -> Result<Self, SpinorError> {
        self.raise_slot(slot, SlotKind::Primed)
    }

    pub fn lower_primed(&self, slot: usize) -> Result<Self, SpinorError> {
        self.lower_slot(slot, SlotKind::Primed)
    }

    pub fn raise_unprimed(&self, slot: usize) -> Result<Self, SpinorError> {
        self.raise_slot(slot, SlotKind::Unprimed)
    }

    pub fn lower_unprimed(&self, slot: usize) -> Result<Self, SpinorError> {
        self.lower_slot(slot, SlotKind::Unprimed)
    }

    /// Diagonal sum over two same-kind slots (both removed from the result).
    /// This is the plain trace `sum_a t[.. a .. a ..]`; combined with a raise
    /// it gives contractions like `f^A_A`.
    pub fn trace_pair(&self, a: usize, b: usize) -> Result<Self, SpinorError> {
        if a >= self.rank() {
            return Err(SpinorError::SlotOutOfRange {
                slot: a,
                rank: self.rank(),
            });
        }
        if b >= self.rank() {
            return Err(SpinorError::SlotOutOfRange {
                slot: b,
                rank: self.rank(),
            });
        }
        if a == b {
            return Err(SpinorError::IdenticalSlots(a));
        }
        let mut kept = self.slots.clone();
        let (hi, lo) = (a.max(b), a.min(b));
        kept.remove(hi);
        kept.remove(lo);
        let mut out = FullTensor::zeros(kept);
        let mut idx = vec![0u8; self.rank()];
        for lin in 0..out.data.len() {
            let mut rem = lin;
            for s in (0..self.rank()).rev() {
                if s == a || s == b {
                    continue;
                }
                idx[s] = (rem & 1) as u8;
                rem >>= 1;
            }
            let mut acc = C64::new(0.0, 0.0);
            for d in 0..2u8 {
                idx[a] = d;
                idx[b] = d;
                acc += self.data[encode(&idx)];
            }
            out.data[lin] = acc;
        }
        Ok(out)
    }

    /// Plain inner product: sum over all index tuples of `a * conj(b)`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.slots, other.slots, "tensor shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x * y.conj())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: C64) -> Self {
        FullTensor {
            slots: self.slots.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.slots, other.slots, "tensor shape mismatch");
        FullTensor {
            slots: self.slots.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }
}

fn decode(mut lin: usize, idx: &mut [u8]) {
    for s in (0..idx.len()).rev() {
        idx[s] = (lin & 1) as u8;
        lin >>= 1;
    }
}

fn encode(idx: &[u8]) -> usize {
    idx.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// All permutations of 0..n in a deterministic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..n).permutations(n).collect()
}

/// Value of `sum^k C^2` in reduced coordinates: `comp[l]` is the component
/// with exactly `l` primed indices equal to `1'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    k: usize,
    comp: Vec<C64>,
}

impl SymTensor {
    pub fn new(k: usize, comp: Vec<C64>) -> Self {
        assert!(k >= 1, "symmetric power must be at least 1");
        assert_eq!(comp.len(), k + 1, "SymTensor needs k+1 components");
        SymTensor { k, comp }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(k, vec![C64::new(0.0, 0.0); k + 1])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn comp(&self) -> &[C64] {
        &self.comp
    }

    pub fn comp_mut(&mut self) -> &mut [C64] {
        &mut self.comp
    }

    /// Multiplicity-weighted inner product: sum_l C(k,l) a_l conj(b_l).
    /// Equals [`FullTensor::inner`] of the embeddings.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.k, other.k, "symmetric powers differ");
        self.comp
            .iter()
            .zip(&other.comp)
            .enumerate()
            .map(|(l, (a, b))| a * b.conj() * binomial(self.k, l))
            .sum()
    }

    /// Dense symmetric tensor with `u[tuple] = comp[number of 1' entries]`.
    pub fn embed_full(&self) -> FullTensor {
        let mut t = FullTensor::zeros(vec![SlotKind::Primed; self.k]);
        for lin in 0..t.data.len() {
            t.data[lin] = self.comp[lin.count_ones() as usize];
        }
        t
    }

    /// Read reduced coordinates back off a symmetric full tensor. The
    /// symmetry defect (largest deviation between components that should be
    /// equal) is checked against `tol` scaled by the largest entry.
    pub fn project_reduced(t: &FullTensor, tol: f64) -> Result<Self, SpinorError> {
        let k = t.rank();
        assert!(
            t.slots().iter().all(|&s| s == SlotKind::Primed),
            "expected an all-primed tensor"
        );
        let mut comp = vec![C64::new(0.0, 0.0); k + 1];
        let mut defect: f64 = 0.0;
        for l in 0..=k {
            // canonical representative: 1' indices last
            let canon = (1usize << l) - 1;
            comp[l] = t.data[canon];
        }
        for lin in 0..t.data.len() {
            defect = defect.max((t.data[lin] - comp[lin.count_ones() as usize]).norm());
        }
        let scale = t.max_abs().max(1.0);
        if defect > tol * scale {
            return Err(SpinorError::NotSymmetric {
                defect,
                tol: tol * scale,
            });
        }
        Ok(SymTensor::new(k, comp))
    }
}

/// Value of `sym^{k-1} C^2 (x) C^2` in reduced coordinates: `at(l, a)` has
/// `l` primed indices equal to `1'` and unprimed index `a`. Stored flat as
/// `comp[2l + a]`, the component order used by the Hermitian forms and the
/// symbol matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTensor {
    k: usize,
    comp: Vec<C64>,
}

impl MixedTensor {
    pub fn new(k: usize, comp: Vec<C64>) -> Self {
        assert!(k >= 2, "mixed tensors need k >= 2");
        assert_eq!(comp.len(), 2 * k, "MixedTensor needs 2k components");
        MixedTensor { k, comp }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(k, vec![C64::new(0.0, 0.0); 2 * k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn comp(&self) -> &[C64] {
        &self.comp
    }

    pub fn comp_mut(&mut self) -> &mut [C64] {
        &mut self.comp
    }

    pub fn at(&self, l: usize, a: usize) -> C64 {
        self.comp[2 * l + a]
    }

    pub fn at_mut(&mut self, l: usize, a: usize) -> &mut C64 {
        &mut self.comp[2 * l + a]
    }

    /// sum_{l,A} C(k-1,l) a_{l,A} conj(b_{l,A})
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.k, other.k, "symmetric powers differ");
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..self.k {
            let w = binomial(self.k - 1, l);
            for a in 0..2 {
                acc += self.at(l, a) * other.at(l, a).conj() * w;
            }
        }
        acc
    }

    /// Slots: the k-1 symmetric primed indices first, the unprimed one last.
    pub fn embed_full(&self) -> FullTensor {
        let mut slots = vec![SlotKind::Primed; self.k - 1];
        slots.push(SlotKind::Unprimed);
        let mut t = FullTensor::zeros(slots);
        for lin in 0..t.data.len() {
            let a = lin & 1;
            let ones = (lin >> 1).count_ones() as usize;
            t.data[lin] = self.at(ones, a);
        }
        t
    }

    pub fn project_reduced(t: &FullTensor, tol: f64) -> Result<Self, SpinorError> {
        let k = t.rank(); // k-1 primed + 1 unprimed
        assert!(k >= 2, "mixed tensors need rank >= 2");
        assert!(
            t.slots()[..k - 1].iter().all(|&s| s == SlotKind::Primed)
                && t.slots()[k - 1] == SlotKind::Unprimed,
            "expected primed^(k-1) x unprimed slots"
        );
        let mut out = MixedTensor::zeros(k);
        let mut defect: f64 = 0.0;
        for a in 0..2usize {
            for l in 0..k {
                let canon = (((1usize << l) - 1) << 1) | a;
                *out.at_mut(l, a) = t.data[canon];
            }
        }
        for lin in 0..t.data.len() {
            let a = lin & 1;
            let ones = (lin >> 1).count_ones() as usize;
            defect = defect.max((t.data[lin] - out.at(ones, a)).norm());
        }
        let scale = t.max_abs().max(1.0);
        if defect > tol * scale {
            return Err(SpinorError::NotSymmetric {
                defect,
                tol: tol * scale,
            });
        }
        Ok(out)
    }
}

/// Value of `sym^{k-2} C^2 (x) wedge^2 C^2` in reduced coordinates:
/// `comp[l]` is the `F_{...01}` component with `l` primed indices equal to
/// `1'`; the `{...10}` component is its negative and the diagonal vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoFormTensor {
    k: usize,
    comp: Vec<C64>,
}

impl TwoFormTensor {
    pub fn new(k: usize, comp: Vec<C64>) -> Self {
        assert!(k >= 2, "two-forms need k >= 2");
        assert_eq!(comp.len(), k - 1, "TwoFormTensor needs k-1 components");
        TwoFormTensor { k, comp }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(k, vec![C64::new(0.0, 0.0); k - 1])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn comp(&self) -> &[C64] {
        &self.comp
    }

    pub fn comp_mut(&mut self) -> &mut [C64] {
        &mut self.comp
    }

    /// sum_l C(k-2,l) * 2 * a_l conj(b_l); the factor 2 is the (01)/(10)
    /// pair of the antisymmetric slots.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.k, other.k, "symmetric powers differ");
        self.comp
            .iter()
            .zip(&other.comp)
            .enumerate()
            .map(|(l, (a, b))| a * b.conj() * (2.0 * binomial(self.k - 2, l)))
            .sum()
    }

    /// Slots: k-2 symmetric primed indices, then the antisymmetric unprimed
    /// pair.
    pub fn embed_full(&self) -> FullTensor {
        let mut slots = vec![SlotKind::Primed; self.k - 2];
        slots.extend([SlotKind::Unprimed, SlotKind::Unprimed]);
        let mut t = FullTensor::zeros(slots);
        for lin in 0..t.data.len() {
            let ab = lin & 3;
            let ones = (lin >> 2).count_ones() as usize;
            t.data[lin] = match ab {
                0b01 => self.comp[ones],
                0b10 => -self.comp[ones],
                _ => C64::new(0.0, 0.0),
            };
        }
        t
    }

    pub fn project_reduced(t: &FullTensor, tol: f64) -> Result<Self, SpinorError> {
        let k = t.rank(); // k-2 primed + 2 unprimed
        assert!(
            t.slots()[..k - 2].iter().all(|&s| s == SlotKind::Primed)
                && t.slots()[k - 2..] == [SlotKind::Unprimed, SlotKind::Unprimed],
            "expected primed^(k-2) x unprimed^2 slots"
        );
        let mut out = TwoFormTensor::zeros(k);
        for l in 0..k - 1 {
            let canon = (((1usize << l) - 1) << 2) | 0b01;
            out.comp[l] = t.data[canon];
        }
        let mut defect: f64 = 0.0;
        for lin in 0..t.data.len() {
            let ab = lin & 3;
            let ones = (lin >> 2).count_ones() as usize;
            let expected = match ab {
                0b01 => out.comp[ones],
                0b10 => -out.comp[ones],
                _ => C64::new(0.0, 0.0),
            };
            defect = defect.max((t.data[lin] - expected).norm());
        }
        let scale = t.max_abs().max(1.0);
        if defect > tol * scale {
            return Err(SpinorError::NotAntisymmetric {
                defect,
                tol: tol * scale,
            });
        }
        Ok(out)
    }
}
