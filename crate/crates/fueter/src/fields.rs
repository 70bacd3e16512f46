//! Scalar-field backends and the domain/weight catalog.
//!
//! Two backends implement [`FieldScalar`]: exact complex-coefficient
//! polynomials over R^4 ([`PolyScalar`]) and complex samples on a masked
//! cell-centered 4-D grid ([`GridField`]). The first is used to verify
//! operator identities coefficient-by-coefficient, the second feeds the
//! discrete solver. [`DomainSpec`] is the small catalog of domains with
//! analytic defining functions, boundary samplers and (for the ball) a
//! product surface quadrature; [`Weight`] is the catalog of weight functions.

use crate::C64;
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Degree cap for the polynomial backend; keeps accidental blowup loud.
pub const MAX_POLY_DEG: usize = 12;

#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("node {node:?} has an in-mask run of {run} along axis {axis}; a second-order one-sided stencil needs 3 points")]
    NoStencil {
        node: [usize; 4],
        axis: usize,
        run: usize,
    },
    #[error("grid fields live on different grids/masks")]
    GridMismatch,
    #[error("empty mask: no grid node satisfies r < 0")]
    EmptyMask,
    #[error("operation unsupported for this domain kind: {0}")]
    UnsupportedDomain(&'static str),
    #[error("point is not on the boundary: |r(x)| = {r:e} exceeds {tol:e}")]
    NotOnBoundary { r: f64, tol: f64 },
    #[error("weight must be real-valued; found coefficient with imaginary part {0:e}")]
    NonRealWeight(f64),
}

/// What the spinor-field operators need from a scalar backend.
pub trait FieldScalar: Clone {
    fn zero_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, c: C64) -> Self;
    /// Pointwise (grid) / polynomial (poly) product.
    fn mul_field(&self, other: &Self) -> Self;
    /// Partial derivative along `axis` in 0..4.
    fn diff(&self, axis: usize) -> Self;
    /// Largest coefficient / node magnitude; the residual gauge.
    fn norm_max(&self) -> f64;
}

// ---------------------------------------------------------------------------
// polynomial backend

/// Multivariate polynomial in x1..x4 with complex coefficients, stored as a
/// sorted exponent -> coefficient map so iteration order is deterministic.
/// Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyScalar {
    terms: BTreeMap<[u8; 4], C64>,
}

impl PolyScalar {
    pub fn zero() -> Self {
        PolyScalar {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: C64) -> Self {
        let mut p = Self::zero();
        p.insert([0, 0, 0, 0], c);
        p
    }

    pub fn one() -> Self {
        Self::constant(C64::new(1.0, 0.0))
    }

    /// The coordinate function x_{axis+1}, axis in 0..4.
    pub fn coordinate(axis: usize) -> Self {
        assert!(axis < 4, "axis out of range");
        let mut e = [0u8; 4];
        e[axis] = 1;
        Self::monomial(e, C64::new(1.0, 0.0))
    }

    pub fn monomial(exp: [u8; 4], coeff: C64) -> Self {
        let mut p = Self::zero();
        p.insert(exp, coeff);
        p
    }

    /// x1^2 + x2^2 + x3^2 + x4^2
    pub fn squared_norm() -> Self {
        let mut p = Self::zero();
        for a in 0..4 {
            let mut e = [0u8; 4];
            e[a] = 2;
            p.insert(e, C64::new(1.0, 0.0));
        }
        p
    }

    fn insert(&mut self, exp: [u8; 4], coeff: C64) {
        let deg = exp.iter().map(|&e| e as usize).sum::<usize>();
        assert!(deg <= MAX_POLY_DEG, "degree {deg} exceeds cap {MAX_POLY_DEG}");
        if coeff != C64::new(0.0, 0.0) {
            let entry = self.terms.entry(exp).or_insert(C64::new(0.0, 0.0));
            *entry += coeff;
            if *entry == C64::new(0.0, 0.0) {
                self.terms.remove(&exp);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8; 4], &C64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&x| x as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Conjugate the coefficients (= complex conjugate of the function,
    /// since the variables are real).
    pub fn conj(&self) -> Self {
        PolyScalar {
            terms: self.terms.iter().map(|(e, c)| (*e, c.conj())).collect(),
        }
    }

    pub fn eval(&self, x: &[f64; 4]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (e, c) in &self.terms {
            let mut m = 1.0;
            for a in 0..4 {
                m *= x[a].powi(e[a] as i32);
            }
            acc += c * m;
        }
        acc
    }

    pub fn eval_gradient(&self, x: &[f64; 4]) -> [C64; 4] {
        std::array::from_fn(|a| self.diff(a).eval(x))
    }

    /// All coefficients real (imaginary part exactly zero)?
    pub fn is_real(&self) -> bool {
        self.terms.values().all(|c| c.im == 0.0)
    }

    /// Random polynomial of total degree <= `deg`, coefficients uniform in
    /// the complex unit square.
    pub fn random(deg: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zero();
        for e1 in 0..=deg {
            for e2 in 0..=deg - e1 {
                for e3 in 0..=deg - e1 - e2 {
                    for e4 in 0..=deg - e1 - e2 - e3 {
                        let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        p.insert([e1 as u8, e2 as u8, e3 as u8, e4 as u8], c);
                    }
                }
            }
        }
        p
    }

    /// Random polynomial with small Gaussian-integer coefficients. All f64
    /// arithmetic on such polynomials (through the degree cap and modest
    /// sums) is exact, which is what the "cancels exactly" identity tests
    /// rely on.
    pub fn random_int(deg: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zero();
        for e1 in 0..=deg {
            for e2 in 0..=deg - e1 {
                for e3 in 0..=deg - e1 - e2 {
                    for e4 in 0..=deg - e1 - e2 - e3 {
                        let c = C64::new(
                            rng.gen_range(-4i32..=4) as f64,
                            rng.gen_range(-4i32..=4) as f64,
                        );
                        p.insert([e1 as u8, e2 as u8, e3 as u8, e4 as u8], c);
                    }
                }
            }
        }
        p
    }

    /// Random polynomial with small integer real coefficients.
    pub fn random_int_real(deg: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::random_int(deg, rng);
        p.terms = p
            .terms
            .into_iter()
            .map(|(e, c)| (e, C64::new(c.re, 0.0)))
            .filter(|(_, c)| *c != C64::new(0.0, 0.0))
            .collect();
        p
    }

    /// Random polynomial with real coefficients.
    pub fn random_real(deg: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::random(deg, rng);
        p.terms = p
            .terms
            .into_iter()
            .map(|(e, c)| (e, C64::new(c.re, 0.0)))
            .filter(|(_, c)| *c != C64::new(0.0, 0.0))
            .collect();
        p
    }
}

impl FieldScalar for PolyScalar {
    fn zero_like(&self) -> Self {
        Self::zero()
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.insert(*e, *c);
        }
        out
    }

    fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.insert(*e, -c);
        }
        out
    }

    fn scale(&self, c: C64) -> Self {
        if c == C64::new(0.0, 0.0) {
            return Self::zero();
        }
        PolyScalar {
            terms: self.terms.iter().map(|(e, v)| (*e, v * c)).collect(),
        }
    }

    fn mul_field(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = std::array::from_fn(|i| ea[i] + eb[i]);
                out.insert(e, ca * cb);
            }
        }
        out
    }

    fn diff(&self, axis: usize) -> Self {
        assert!(axis < 4, "axis out of range");
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[axis] > 0 {
                let mut d = *e;
                d[axis] -= 1;
                out.insert(d, c * e[axis] as f64);
            }
        }
        out
    }

    fn norm_max(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Formal partial derivative of the polynomial backend.
pub fn poly_diff(p: &PolyScalar, axis: usize) -> PolyScalar {
    p.diff(axis)
}

// ---------------------------------------------------------------------------
// grid geometry

/// Cell-centered uniform lattice on a cube [lo, hi]^4 with n points per axis:
/// node (j1..j4) sits at lo + (j + 1/2) h.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid4 {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub h: f64,
}

impl Grid4 {
    pub fn new(n: usize, lo: f64, hi: f64) -> Self {
        assert!(n >= 3, "grid needs at least 3 points per axis");
        assert!(hi > lo, "empty interval");
        Grid4 {
            n,
            lo,
            hi,
            h: (hi - lo) / n as f64,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(4)
    }

    pub fn center(&self, idx: [usize; 4]) -> [f64; 4] {
        std::array::from_fn(|a| self.lo + (idx[a] as f64 + 0.5) * self.h)
    }

    pub fn lin(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.n + idx[1]) * self.n + idx[2]) * self.n + idx[3]
    }

    pub fn coords(&self, mut lin: usize) -> [usize; 4] {
        let mut idx = [0usize; 4];
        for a in (0..4).rev() {
            idx[a] = lin % self.n;
            lin /= self.n;
        }
        idx
    }
}

/// First-derivative stencil for one node along one axis: up to three
/// (dof, coefficient) pairs, coefficients including the 1/(2h) factor.
/// Central where both neighbors are masked, one-sided second-order at the
/// ends of a masked run.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub pts: [(u32, f64); 3],
    pub len: u8,
    /// true when this is the two-point central stencil
    pub central: bool,
}

impl Stencil {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.pts[..self.len as usize]
    }
}

/// A [`Grid4`] restricted to a mask, with degree-of-freedom numbering and
/// precomputed first-derivative stencils along every axis.
///
/// The default mask is `r < 0` at cell centers, then trimmed so every
/// in-mask run along every axis has length >= 3 — each surviving node then
/// carries a full second-order stencil in all four directions (exact on
/// quadratics, which the identity checks below rely on). `masked_strict`
/// skips the trimming and reports the first offending node instead.
#[derive(Debug)]
pub struct GridDomain {
    pub grid: Grid4,
    pub spec: DomainSpec,
    /// node linear index -> dof, or -1 outside the mask
    dof_of: Vec<i32>,
    /// dof -> node linear index (lexicographic order)
    nodes: Vec<u32>,
    stencils: [Vec<Stencil>; 4],
    /// number of r<0 nodes removed by trimming
    pub trimmed: usize,
}

impl GridDomain {
    /// Mask r < 0, trim to stencil-complete nodes.
    pub fn masked(grid: Grid4, spec: DomainSpec) -> Result<Arc<Self>, FieldsError> {
        let mut mask = Self::raw_mask(&grid, &spec);
        let trimmed = Self::trim(&grid, &mut mask);
        Self::finish(grid, spec, mask, trimmed)
    }

    /// Mask r < 0 with no trimming; errors if any node lacks a second-order
    /// stencil along some axis.
    pub fn masked_strict(grid: Grid4, spec: DomainSpec) -> Result<Arc<Self>, FieldsError> {
        let mask = Self::raw_mask(&grid, &spec);
        for (axis, line) in LineIter::new(grid.n) {
            let mut run = 0usize;
            for pos in 0..=grid.n {
                let inside = pos < grid.n && mask[grid.lin(line.at(axis, pos))];
                if inside {
                    run += 1;
                } else {
                    if run > 0 && run < 3 {
                        return Err(FieldsError::NoStencil {
                            node: line.at(axis, pos - 1),
                            axis,
                            run,
                        });
                    }
                    run = 0;
                }
            }
        }
        Self::finish(grid, spec, mask, 0)
    }

    /// Every node of the box is in the mask (the spec is kept for weights
    /// and diagnostics).
    pub fn full_box(grid: Grid4, spec: DomainSpec) -> Arc<Self> {
        let mask = vec![true; grid.node_count()];
        Self::finish(grid, spec, mask, 0).expect("full box is never empty")
    }

    fn raw_mask(grid: &Grid4, spec: &DomainSpec) -> Vec<bool> {
        (0..grid.node_count())
            .map(|lin| spec.r(&grid.center(grid.coords(lin))) < 0.0)
            .collect()
    }

    /// Repeatedly remove nodes lying in an in-mask run of length < 3 along
    /// any axis, until stable. Returns the number removed.
    fn trim(grid: &Grid4, mask: &mut [bool]) -> usize {
        let mut removed = 0usize;
        loop {
            let mut changed = false;
            for (axis, line) in LineIter::new(grid.n) {
                let mut start = 0usize;
                while start < grid.n {
                    if !mask[grid.lin(line.at(axis, start))] {
                        start += 1;
                        continue;
                    }
                    let mut end = start;
                    while end < grid.n && mask[grid.lin(line.at(axis, end))] {
                        end += 1;
                    }
                    if end - start < 3 {
                        for pos in start..end {
                            mask[grid.lin(line.at(axis, pos))] = false;
                            removed += 1;
                            changed = true;
                        }
                    }
                    start = end;
                }
            }
            if !changed {
                return removed;
            }
        }
    }

    fn finish(
        grid: Grid4,
        spec: DomainSpec,
        mask: Vec<bool>,
        trimmed: usize,
    ) -> Result<Arc<Self>, FieldsError> {
        let mut dof_of = vec![-1i32; grid.node_count()];
        let mut nodes = Vec::new();
        for (lin, &m) in mask.iter().enumerate() {
            if m {
                dof_of[lin] = nodes.len() as i32;
                nodes.push(lin as u32);
            }
        }
        if nodes.is_empty() {
            return Err(FieldsError::EmptyMask);
        }

        let dummy = Stencil {
            pts: [(0, 0.0); 3],
            len: 0,
            central: false,
        };
        let mut stencils: [Vec<Stencil>; 4] = std::array::from_fn(|_| vec![dummy; nodes.len()]);
        let inv2h = 1.0 / (2.0 * grid.h);
        for (axis, line) in LineIter::new(grid.n) {
            let mut start = 0usize;
            while start < grid.n {
                if !mask[grid.lin(line.at(axis, start))] {
                    start += 1;
                    continue;
                }
                let mut end = start;
                while end < grid.n && mask[grid.lin(line.at(axis, end))] {
                    end += 1;
                }
                debug_assert!(end - start >= 3, "trim/strict check should have run");
                let dof = |pos: usize| dof_of[grid.lin(line.at(axis, pos))] as u32;
                for pos in start..end {
                    let s = if pos == start {
                        Stencil {
                            pts: [
                                (dof(pos), -3.0 * inv2h),
                                (dof(pos + 1), 4.0 * inv2h),
                                (dof(pos + 2), -inv2h),
                            ],
                            len: 3,
                            central: false,
                        }
                    } else if pos == end - 1 {
                        Stencil {
                            pts: [
                                (dof(pos), 3.0 * inv2h),
                                (dof(pos - 1), -4.0 * inv2h),
                                (dof(pos - 2), inv2h),
                            ],
                            len: 3,
                            central: false,
                        }
                    } else {
                        Stencil {
                            pts: [(dof(pos - 1), -inv2h), (dof(pos + 1), inv2h), (0, 0.0)],
                            len: 2,
                            central: true,
                        }
                    };
                    stencils[axis][dof(pos) as usize] = s;
                }
                start = end;
            }
        }

        Ok(Arc::new(GridDomain {
            grid,
            spec,
            dof_of,
            nodes,
            stencils,
            trimmed,
        }))
    }

    pub fn dof_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dof_at(&self, lin: usize) -> Option<usize> {
        let d = self.dof_of[lin];
        (d >= 0).then_some(d as usize)
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.nodes[dof] as usize
    }

    pub fn center_of_dof(&self, dof: usize) -> [f64; 4] {
        self.grid.center(self.grid.coords(self.nodes[dof] as usize))
    }

    pub fn stencil(&self, dof: usize, axis: usize) -> &Stencil {
        &self.stencils[axis][dof]
    }

    /// All four axis stencils central (a fully interior node).
    pub fn is_interior(&self, dof: usize) -> bool {
        (0..4).all(|a| self.stencils[a][dof].central)
    }

    /// Interior, and every stencil neighbor along every axis is interior
    /// too — compositions of two derivatives are purely central here.
    pub fn is_deep_interior(&self, dof: usize) -> bool {
        self.is_interior(dof)
            && (0..4).all(|axis| {
                self.stencils[axis][dof]
                    .entries()
                    .iter()
                    .all(|&(q, _)| self.is_interior(q as usize))
            })
    }

    /// Same grid and same mask?
    pub fn same_layout(&self, other: &Self) -> bool {
        self.grid == other.grid && self.nodes == other.nodes
    }
}

/// Iterates (axis, line) over all grid lines: a line fixes the three other
/// coordinates and varies `axis`.
struct LineIter {
    n: usize,
    axis: usize,
    rem: usize,
}

#[derive(Clone, Copy)]
struct Line {
    fixed: [usize; 3],
}

impl Line {
    fn at(&self, axis: usize, pos: usize) -> [usize; 4] {
        let mut idx = [0usize; 4];
        let mut f = 0;
        for a in 0..4 {
            if a == axis {
                idx[a] = pos;
            } else {
                idx[a] = self.fixed[f];
                f += 1;
            }
        }
        idx
    }
}

impl LineIter {
    fn new(n: usize) -> Self {
        LineIter { n, axis: 0, rem: 0 }
    }
}

impl Iterator for LineIter {
    type Item = (usize, Line);

    fn next(&mut self) -> Option<(usize, Line)> {
        if self.rem == self.n * self.n * self.n {
            self.axis += 1;
            self.rem = 0;
        }
        if self.axis == 4 {
            return None;
        }
        let mut r = self.rem;
        let mut fixed = [0usize; 3];
        for f in (0..3).rev() {
            fixed[f] = r % self.n;
            r /= self.n;
        }
        self.rem += 1;
        Some((self.axis, Line { fixed }))
    }
}

/// Complex samples over the masked nodes of a [`GridDomain`].
#[derive(Debug, Clone)]
pub struct GridField {
    pub dom: Arc<GridDomain>,
    pub vals: Vec<C64>,
}

impl GridField {
    pub fn zeros(dom: &Arc<GridDomain>) -> Self {
        GridField {
            dom: dom.clone(),
            vals: vec![C64::new(0.0, 0.0); dom.dof_count()],
        }
    }

    pub fn from_fn(dom: &Arc<GridDomain>, f: impl Fn(&[f64; 4]) -> C64) -> Self {
        let vals = (0..dom.dof_count())
            .map(|d| f(&dom.center_of_dof(d)))
            .collect();
        GridField {
            dom: dom.clone(),
            vals,
        }
    }

    pub fn sample_poly(dom: &Arc<GridDomain>, p: &PolyScalar) -> Self {
        Self::from_fn(dom, |x| p.eval(x))
    }
}

impl FieldScalar for GridField {
    fn zero_like(&self) -> Self {
        Self::zeros(&self.dom)
    }

    fn add(&self, other: &Self) -> Self {
        assert!(self.dom.same_layout(&other.dom), "grid mismatch");
        GridField {
            dom: self.dom.clone(),
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    fn sub(&self, other: &Self) -> Self {
        assert!(self.dom.same_layout(&other.dom), "grid mismatch");
        GridField {
            dom: self.dom.clone(),
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    fn scale(&self, c: C64) -> Self {
        GridField {
            dom: self.dom.clone(),
            vals: self.vals.iter().map(|v| v * c).collect(),
        }
    }

    fn mul_field(&self, other: &Self) -> Self {
        assert!(self.dom.same_layout(&other.dom), "grid mismatch");
        GridField {
            dom: self.dom.clone(),
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    fn diff(&self, axis: usize) -> Self {
        assert!(axis < 4, "axis out of range");
        let vals = (0..self.vals.len())
            .map(|d| {
                self.dom
                    .stencil(d, axis)
                    .entries()
                    .iter()
                    .map(|&(q, c)| self.vals[q as usize] * c)
                    .sum()
            })
            .collect();
        GridField {
            dom: self.dom.clone(),
            vals,
        }
    }

    fn norm_max(&self) -> f64 {
        self.vals.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Stencil partial derivative of a grid field.
pub fn grid_diff(f: &GridField, axis: usize) -> GridField {
    f.diff(axis)
}

/// Midpoint-rule weighted inner product over the mask:
/// sum of a conj(b) e^{-phi} h^4.
pub fn weighted_volume_ip(a: &GridField, b: &GridField, w: &Weight) -> Result<C64, FieldsError> {
    if !a.dom.same_layout(&b.dom) {
        return Err(FieldsError::GridMismatch);
    }
    let h4 = a.dom.grid.h.powi(4);
    let mut acc = C64::new(0.0, 0.0);
    for d in 0..a.vals.len() {
        let x = a.dom.center_of_dof(d);
        acc += a.vals[d] * b.vals[d].conj() * (-w.value(&x)).exp();
    }
    Ok(acc * h4)
}

// ---------------------------------------------------------------------------
// domain catalog

/// Something with a value, gradient and Hessian at a point — what the Levi
/// forms and defining-function machinery consume.
pub trait C2Fn {
    fn value(&self, x: &[f64; 4]) -> f64;
    fn gradient(&self, x: &[f64; 4]) -> [f64; 4];
    fn hessian(&self, x: &[f64; 4]) -> [[f64; 4]; 4];
}

/// Catalog of domains in R^4 with analytic defining functions.
///
/// * `Ball`: r = |x|^2 - R^2
/// * `SumConvex`: r = c1 (x1^2 + x2^2) + c2 (x3^2 + x4^2) - 1 (both ci > 0)
/// * `HalfspaceTest`: r = x1, a flat-boundary test case
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Ball { radius: f64 },
    SumConvex { c1: f64, c2: f64 },
    HalfspaceTest,
}

impl DomainSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DomainSpec::Ball { .. } => "ball",
            DomainSpec::SumConvex { .. } => "sum_convex",
            DomainSpec::HalfspaceTest => "halfspace_test",
        }
    }

    /// Quadratic part as a diagonal: r = sum q_a x_a^2 + c0 (for the two
    /// quadratic domains).
    fn quadratic(&self) -> Option<([f64; 4], f64)> {
        match *self {
            DomainSpec::Ball { radius } => Some(([1.0; 4], -radius * radius)),
            DomainSpec::SumConvex { c1, c2 } => {
                assert!(c1 > 0.0 && c2 > 0.0, "sum_convex needs positive coefficients");
                Some(([c1, c1, c2, c2], -1.0))
            }
            DomainSpec::HalfspaceTest => None,
        }
    }

    pub fn r(&self, x: &[f64; 4]) -> f64 {
        match self.quadratic() {
            Some((q, c0)) => (0..4).map(|a| q[a] * x[a] * x[a]).sum::<f64>() + c0,
            None => x[0],
        }
    }

    pub fn grad_r(&self, x: &[f64; 4]) -> [f64; 4] {
        match self.quadratic() {
            Some((q, _)) => std::array::from_fn(|a| 2.0 * q[a] * x[a]),
            None => [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn hess_r(&self) -> [[f64; 4]; 4] {
        let mut h = [[0.0; 4]; 4];
        if let Some((q, _)) = self.quadratic() {
            for a in 0..4 {
                h[a][a] = 2.0 * q[a];
            }
        }
        h
    }

    /// The normalized defining function r / |grad r| with analytic
    /// derivatives; |grad rhat| = 1 on the boundary.
    pub fn normalized(&self) -> NormalizedDefining {
        NormalizedDefining { spec: self.clone() }
    }

    /// `m` boundary points with the unit gradient of the normalized defining
    /// function at each. Analytic samplers for every catalog domain.
    pub fn boundary_samples(
        &self,
        m: usize,
        rng: &mut impl Rng,
    ) -> Vec<([f64; 4], [f64; 4])> {
        let rhat = self.normalized();
        (0..m)
            .map(|_| {
                let x = match *self {
                    DomainSpec::Ball { radius } => {
                        let w = sphere_point(rng);
                        std::array::from_fn(|a| radius * w[a])
                    }
                    DomainSpec::SumConvex { c1, c2 } => {
                        let w = sphere_point(rng);
                        let s = [c1, c1, c2, c2];
                        std::array::from_fn(|a| w[a] / s[a].sqrt())
                    }
                    DomainSpec::HalfspaceTest => [
                        0.0,
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ],
                };
                (x, rhat.gradient(&x))
            })
            .collect()
    }

    /// Surface integral over the boundary by a product quadrature:
    /// Gauss-Legendre in the two polar angles, trapezoid in the azimuthal
    /// one, `level` points per angle (2*level azimuthal). Ball only.
    pub fn surface_quadrature(
        &self,
        level: usize,
        f: &dyn Fn(&[f64; 4]) -> C64,
    ) -> Result<C64, FieldsError> {
        let radius = match *self {
            DomainSpec::Ball { radius } => radius,
            _ => return Err(FieldsError::UnsupportedDomain(self.name())),
        };
        let gl = gauss_legendre(level);
        let mut acc = C64::new(0.0, 0.0);
        // S^3 chart: x = R (sin a sin b cos c, sin a sin b sin c, sin a cos b, cos a),
        // dS = R^3 sin^2 a sin b da db dc, a,b in (0,pi), c in [0,2pi)
        let half_pi = std::f64::consts::FRAC_PI_2;
        let nc = 2 * level;
        let dc = std::f64::consts::TAU / nc as f64;
        for &(ta, wa) in &gl {
            let a = half_pi * (ta + 1.0);
            for &(tb, wb) in &gl {
                let b = half_pi * (tb + 1.0);
                let (sa, ca) = a.sin_cos();
                let (sb, cb) = b.sin_cos();
                let jac = radius.powi(3) * sa * sa * sb * (half_pi * wa) * (half_pi * wb) * dc;
                for ic in 0..nc {
                    let c = ic as f64 * dc;
                    let x = [
                        radius * sa * sb * c.cos(),
                        radius * sa * sb * c.sin(),
                        radius * sa * cb,
                        radius * ca,
                    ];
                    acc += f(&x) * jac;
                }
            }
        }
        Ok(acc)
    }
}

fn sphere_point(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let g: [f64; 4] = std::array::from_fn(|_| {
            // Box-Muller pair member; two gen calls per component is fine here
            let u: f64 = rng.gen_range(1e-12..1.0);
            let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u.ln()).sqrt() * v.cos()
        });
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return std::array::from_fn(|a| g[a] / n);
        }
    }
}

/// r / |grad r| for a catalog domain, with analytic value, gradient and
/// Hessian. For the quadratic domains write g = |grad r|, A = Hess r
/// (constant); then grad g = A^2 x / g and
/// Hess(r/g) = A/g - (grad r grad g^T + grad g grad r^T)/g^2
///           + 2 r grad g grad g^T / g^3 - r Hess g / g^2.
#[derive(Debug, Clone)]
pub struct NormalizedDefining {
    spec: DomainSpec,
}

impl NormalizedDefining {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }
}

impl C2Fn for NormalizedDefining {
    fn value(&self, x: &[f64; 4]) -> f64 {
        match self.spec.quadratic() {
            None => x[0],
            Some(_) => {
                let g = norm4(&self.spec.grad_r(x));
                assert!(g > 1e-12, "normalized defining function singular at the center");
                self.spec.r(x) / g
            }
        }
    }

    fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
        match self.spec.quadratic() {
            None => [1.0, 0.0, 0.0, 0.0],
            Some((q, _)) => {
                let r = self.spec.r(x);
                let gr = self.spec.grad_r(x);
                let g = norm4(&gr);
                assert!(g > 1e-12, "normalized defining function singular at the center");
                // A = 2 diag(q); A^2 x = 4 q^2 x
                let gg: [f64; 4] = std::array::from_fn(|a| 4.0 * q[a] * q[a] * x[a] / g);
                std::array::from_fn(|a| gr[a] / g - r * gg[a] / (g * g))
            }
        }
    }

    fn hessian(&self, x: &[f64; 4]) -> [[f64; 4]; 4] {
        match self.spec.quadratic() {
            None => [[0.0; 4]; 4],
            Some((q, _)) => {
                let r = self.spec.r(x);
                let gr = self.spec.grad_r(x);
                let g = norm4(&gr);
                assert!(g > 1e-12, "normalized defining function singular at the center");
                let a2x: [f64; 4] = std::array::from_fn(|a| 4.0 * q[a] * q[a] * x[a]);
                let gg: [f64; 4] = std::array::from_fn(|a| a2x[a] / g);
                let mut h = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        // Hess g = A^2/g - (A^2 x)(A^2 x)^T / g^3
                        let hess_g = if i == j { 4.0 * q[i] * q[i] / g } else { 0.0 }
                            - a2x[i] * a2x[j] / (g * g * g);
                        let a_ij = if i == j { 2.0 * q[i] } else { 0.0 };
                        h[i][j] = a_ij / g - (gr[i] * gg[j] + gg[i] * gr[j]) / (g * g)
                            + 2.0 * r * gg[i] * gg[j] / (g * g * g)
                            - r * hess_g / (g * g);
                    }
                }
                h
            }
        }
    }
}

fn norm4(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// weight catalog

/// Shape of the weight function; the full weight is kappa times this.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightForm {
    /// phi = 0 (unweighted)
    Zero,
    /// phi_0 = |x|^2
    SqNorm,
    /// phi_0 = an arbitrary real-coefficient polynomial
    Poly(PolyScalar),
}

/// Real weight function phi = kappa * phi_0 with analytic derivatives, and
/// always available as an exact polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    pub form: WeightForm,
    pub kappa: f64,
}

impl Weight {
    pub fn zero() -> Self {
        Weight {
            form: WeightForm::Zero,
            kappa: 0.0,
        }
    }

    /// phi = kappa |x|^2
    pub fn sqnorm(kappa: f64) -> Self {
        Weight {
            form: WeightForm::SqNorm,
            kappa,
        }
    }

    pub fn poly(p: PolyScalar, kappa: f64) -> Result<Self, FieldsError> {
        if let Some((_, c)) = p.terms().find(|(_, c)| c.im != 0.0) {
            return Err(FieldsError::NonRealWeight(c.im));
        }
        Ok(Weight {
            form: WeightForm::Poly(p),
            kappa,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.form, WeightForm::Zero) || self.kappa == 0.0
    }

    pub fn to_poly(&self) -> PolyScalar {
        let base = match &self.form {
            WeightForm::Zero => PolyScalar::zero(),
            WeightForm::SqNorm => PolyScalar::squared_norm(),
            WeightForm::Poly(p) => p.clone(),
        };
        base.scale(C64::new(self.kappa, 0.0))
    }

    /// The per-axis-sup norm sum_j (sup over the domain of |d_j phi|)^2,
    /// analytically for the closed-form weight on the bounded catalog
    /// domains. Polynomial weights and the halfspace are not covered.
    pub fn sup_grad_sq(&self, d: &DomainSpec) -> Result<f64, FieldsError> {
        if self.is_zero() {
            return Ok(0.0);
        }
        match (&self.form, d) {
            (WeightForm::SqNorm, DomainSpec::Ball { radius }) => {
                // sup |2 kappa x_j| = 2 |kappa| R for each of the 4 axes
                Ok(16.0 * self.kappa * self.kappa * radius * radius)
            }
            (WeightForm::SqNorm, DomainSpec::SumConvex { c1, c2 }) => {
                // sup |x_j| over the ellipsoid = 1/sqrt(c_axis)
                let s = 1.0 / c1 + 1.0 / c1 + 1.0 / c2 + 1.0 / c2;
                Ok(4.0 * self.kappa * self.kappa * s)
            }
            _ => Err(FieldsError::UnsupportedDomain(d.name())),
        }
    }
}

impl C2Fn for Weight {
    fn value(&self, x: &[f64; 4]) -> f64 {
        match &self.form {
            WeightForm::Zero => 0.0,
            WeightForm::SqNorm => self.kappa * x.iter().map(|v| v * v).sum::<f64>(),
            WeightForm::Poly(p) => self.kappa * p.eval(x).re,
        }
    }

    fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
        match &self.form {
            WeightForm::Zero => [0.0; 4],
            WeightForm::SqNorm => std::array::from_fn(|a| 2.0 * self.kappa * x[a]),
            WeightForm::Poly(p) => std::array::from_fn(|a| self.kappa * p.diff(a).eval(x).re),
        }
    }

    fn hessian(&self, x: &[f64; 4]) -> [[f64; 4]; 4] {
        match &self.form {
            WeightForm::Zero => [[0.0; 4]; 4],
            WeightForm::SqNorm => {
                let mut h = [[0.0; 4]; 4];
                for a in 0..4 {
                    h[a][a] = 2.0 * self.kappa;
                }
                h
            }
            WeightForm::Poly(p) => {
                let mut h = [[0.0; 4]; 4];
                for i in 0..4 {
                    let di = p.diff(i);
                    for j in 0..4 {
                        h[i][j] = self.kappa * di.diff(j).eval(x).re;
                    }
                }
                h
            }
        }
    }
}

// ---------------------------------------------------------------------------
// quadrature

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for m in 2..=n {
        let m = m as f64;
        let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
