//! Discretized weighted Neumann problem for the first operator of the
//! complex: assemble sparse matrices for D0 and D1 over a masked grid,
//! solve the box operator `D0 D0* + D1* D1` with preconditioned CG, and
//! derive canonical solutions, Bergman-type projections, and coercivity
//! probes from it.
//!
//! Layout conventions. A field with `c` components over a domain with `m`
//! degrees of freedom is stored as one flat `Vec<C64>` of length `c * m`,
//! component-major: entry `comp * m + dof`. The inner product carries a
//! diagonal metric `mult(comp) * exp(-phi(x_dof)) * h^4` where `mult` is
//! the multiplicity of the reduced component inside the full symmetric
//! tensor, so flat-vector sums reproduce the weighted tensor L2 product.
//!
//! Adjoints are exact by construction: `A* = W_dom^{-1} A^H W_cod` with the
//! conjugate transpose taken entry-by-entry on the assembled matrix. Every
//! identity that algebra guarantees at the continuum level (adjoint pairing,
//! the energy split of the box form, orthogonality of `D0* w` to the kernel
//! of `D0`) therefore holds on the grid to rounding, independent of `h`.

use std::io::Write as IoWrite;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::convexity::{levi_matrix, multiplicity_weights, ConstraintMatrix};
use crate::fields::{C2Fn, FieldScalar, FieldsError, GridDomain, GridField, PolyScalar, Weight};
use crate::operators::{
    apply_d0, apply_d0_star, Coeffs, DeltaOperator, FieldKind, SpinorField, VectorFieldTable,
};
use crate::spinor::binomial;
use crate::C64;

#[derive(Debug, Error)]
pub enum NeumannError {
    #[error("grid has no fully interior nodes at n = {n}; raise the resolution")]
    GridTooCoarse { n: usize },
    #[error(
        "coercivity constant C0 = {c0:.6} is not positive; the weight is too flat \
         relative to its own gradient on this domain (reduce kappa or shrink the domain)"
    )]
    EstimateHypothesis { c0: f64 },
    #[error("right-hand side fails the closedness gate: |D1 f| / |f| = {ratio:.3e} > {tol:.3e}")]
    NotClosed { ratio: f64, tol: f64 },
    #[error(transparent)]
    Fields(#[from] FieldsError),
}

/// The three field spaces the solver moves between, in complex order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Sym,
    Mixed,
    TwoForm,
}

impl Space {
    pub fn component_count(self, k: usize) -> usize {
        match self {
            Space::Sym => k + 1,
            Space::Mixed => 2 * k,
            Space::TwoForm => k - 1,
        }
    }

    /// Multiplicity of reduced component `comp` inside the full tensor;
    /// these are the diagonal weights of the reduced inner product.
    pub fn multiplicity(self, k: usize, comp: usize) -> f64 {
        match self {
            Space::Sym => binomial(k, comp),
            Space::Mixed => binomial(k - 1, comp / 2),
            Space::TwoForm => 2.0 * binomial(k - 2, comp),
        }
    }
}

// ---------------------------------------------------------------------------
// sparse matrices
// ---------------------------------------------------------------------------

/// Compressed-sparse-row complex matrix. Rows are applied in parallel but
/// each row is summed sequentially in column order, so the product is
/// bitwise reproducible regardless of thread count.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(u32, u32, C64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        // row_ptr[r + 1] counts the entries of row r until the prefix sum below
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last = None;
        for &(r, c, v) in &t {
            debug_assert!((r as usize) < nrows && (c as usize) < ncols);
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[C64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols, "matrix-vector size mismatch");
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = C64::new(0.0, 0.0);
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.col_idx[idx] as usize];
            }
            *yi = acc;
        });
        y
    }

    pub fn conj_transpose(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.vals.len());
        for i in 0..self.nrows {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push((self.col_idx[idx], i as u32, self.vals[idx].conj()));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    /// Coordinate-list text dump: a header `nrows ncols nnz`, then one
    /// `row col re im` line per stored entry in row-major order.
    pub fn dump(&self, w: &mut dyn IoWrite) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.vals[idx];
                writeln!(w, "{} {} {:.17e} {:.17e}", i, self.col_idx[idx], v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// A sparse operator between two metric spaces, carrying its conjugate
/// transpose and both diagonal metrics so the adjoint
/// `A* = W_dom^{-1} A^H W_cod` is available without re-deriving anything.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    mat: CsrMatrix,
    adj: CsrMatrix,
    w_dom: Arc<Vec<f64>>,
    w_cod: Arc<Vec<f64>>,
}

impl DiscreteOperator {
    pub fn new(mat: CsrMatrix, w_dom: Arc<Vec<f64>>, w_cod: Arc<Vec<f64>>) -> Self {
        assert_eq!(mat.ncols(), w_dom.len());
        assert_eq!(mat.nrows(), w_cod.len());
        let adj = mat.conj_transpose();
        DiscreteOperator {
            mat,
            adj,
            w_dom,
            w_cod,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.mat.apply(x)
    }

    pub fn adjoint_apply(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.w_cod.len());
        let scaled: Vec<C64> = y
            .iter()
            .zip(self.w_cod.iter())
            .map(|(v, &w)| v * w)
            .collect();
        let mut z = self.adj.apply(&scaled);
        for (zi, &w) in z.iter_mut().zip(self.w_dom.iter()) {
            *zi /= w;
        }
        z
    }
}

// ---------------------------------------------------------------------------
// weighted linear algebra on flat vectors
// ---------------------------------------------------------------------------

/// Sequential weighted inner product `sum_i w_i a_i conj(b_i)`; kept
/// single-threaded so repeated runs reduce in the same order.
pub fn weighted_ip(w: &[f64], a: &[C64], b: &[C64]) -> C64 {
    assert!(w.len() == a.len() && a.len() == b.len());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.len() {
        acc += a[i] * b[i].conj() * w[i];
    }
    acc
}

pub fn weighted_norm(w: &[f64], a: &[C64]) -> f64 {
    weighted_ip(w, a, a).re.max(0.0).sqrt()
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// ---------------------------------------------------------------------------
// the assembled system
// ---------------------------------------------------------------------------

/// Convergence statistics of one conjugate-gradient solve of the box
/// operator.
#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// true if a search direction produced a non-positive curvature value,
    /// which a correctly assembled box operator can never do
    pub indefinite: bool,
    /// weighted norm of the computed inverse image, for checking the
    /// inverse-norm bound `solution_norm <= rhs_norm / c0` that coercivity
    /// of the restricted box operator implies
    pub solution_norm: f64,
    /// weighted norm of the right-hand side after restriction to the
    /// tangential subspace
    pub rhs_norm: f64,
    /// relative residual after each iteration (index 0 = after the first)
    pub residual_history: Vec<f64>,
}

/// Canonical solution of `D0 u = f` together with the diagnostics the
/// estimate cares about.
///
/// Two solves contribute. The least-squares iteration produces `u`, the
/// least-norm solution — residual and kernel-orthogonality belong to it.
/// The tangentially restricted box solve produces the bounded inverse
/// image `w` of `f`; the energy split `|D0* w|^2 + |D1 w|^2` and the norm
/// `|w|` belong to the inverse-operator bounds, which only a restricted
/// (hence uniformly positive) solve can honor. In the continuum limit the
/// two agree: `u = D0* w`.
#[derive(Debug, Clone)]
pub struct CanonicalOutcome {
    /// flat Sym-space solution, the unique one orthogonal to `ker D0`
    pub u: Vec<C64>,
    /// statistics of the least-squares solve that produced `u`
    pub stats: SolveStats,
    /// `|D1 f| / |f|` measured before solving
    pub closedness: f64,
    /// `|D0 u - f| / |f|`
    pub residual: f64,
    pub u_norm: f64,
    pub f_norm: f64,
    /// `|w|` for the restricted inverse image `w` of `f`, for the
    /// inverse-norm bound `nf_norm <= f_norm / c0`
    pub nf_norm: f64,
    /// `|D0* w|`: first term of the energy bound
    /// `|D0* w|^2 + |D1 w|^2 <= |f|^2 / C0`
    pub d0_star_nf_norm: f64,
    /// `|D1 w|`: second term of the energy bound
    pub d1_nf_norm: f64,
    /// statistics of the restricted box solve that produced `w`
    pub nf_stats: SolveStats,
}

/// Result of the randomized coercivity probe of the box form.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub k: usize,
    pub probes: usize,
    /// the predicted lower bound for the Rayleigh-type quotient
    pub c0: f64,
    /// smallest observed quotient (|D0* f|^2 + |D1 f|^2) / |f|^2
    pub min_q: f64,
    pub mean_q: f64,
    /// inverse-iteration estimate of the bottom of the spectrum of the box
    /// operator on tangential fields
    pub rayleigh_min: f64,
    /// accepted slack: the probe passes when min_q >= c0 * (1 - slack)
    pub slack: f64,
    pub pass: bool,
}

/// The constants entering the lower bound `C0 = (c - 4 g) / (2k + 6)`,
/// where `c` bounds the weighted eigenvalues of the curvature form of the
/// weight from below and `g` is the squared sup of its component gradients.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateConstants {
    pub k: usize,
    pub curvature_lower: f64,
    pub grad_sq_sup: f64,
    pub c0: f64,
}

pub struct NeumannSystem {
    k: usize,
    dom: Arc<GridDomain>,
    weight: Weight,
    v: VectorFieldTable,
    d0: DiscreteOperator,
    d1: DiscreteOperator,
    w_sym: Arc<Vec<f64>>,
    w_mixed: Arc<Vec<f64>>,
    w_two: Arc<Vec<f64>>,
    /// dofs whose stencil is one-sided in some axis: the discrete stand-in
    /// for the boundary, where tangential projection applies
    band: Vec<usize>,
    /// per-band-dof tangential projector on the 2k mixed components
    band_proj: Vec<DMatrix<C64>>,
}

impl NeumannSystem {
    pub fn assemble(k: usize, dom: &Arc<GridDomain>, weight: Weight) -> Result<Self, NeumannError> {
        assert!(k >= 2, "the complex needs k >= 2");
        let ndof = dom.dof_count();
        if !(0..ndof).any(|d| dom.is_deep_interior(d)) {
            return Err(NeumannError::GridTooCoarse { n: dom.grid.n });
        }

        let h4 = dom.grid.h.powi(4);
        let node_w: Vec<f64> = (0..ndof)
            .map(|d| (-weight.value(&dom.center_of_dof(d))).exp() * h4)
            .collect();
        let metric = |space: Space| -> Arc<Vec<f64>> {
            let comps = space.component_count(k);
            let mut w = Vec::with_capacity(comps * ndof);
            for comp in 0..comps {
                let m = space.multiplicity(k, comp);
                w.extend(node_w.iter().map(|&nw| m * nw));
            }
            Arc::new(w)
        };
        let w_sym = metric(Space::Sym);
        let w_mixed = metric(Space::Mixed);
        let w_two = metric(Space::TwoForm);

        let v = VectorFieldTable::standard();

        // D0: (2l + A)-th mixed output takes Z_A^{0'} of sym component l and
        // Z_A^{1'} of sym component l + 1
        let mut t0 = Vec::new();
        for l in 0..k {
            for a in 0..2 {
                let out = 2 * l + a;
                push_stencil_block(dom, &v.mixed[a][0], out, l, &mut t0);
                push_stencil_block(dom, &v.mixed[a][1], out, l + 1, &mut t0);
            }
        }
        let a0 = CsrMatrix::from_triplets(2 * k * ndof, (k + 1) * ndof, t0);
        let d0 = DiscreteOperator::new(a0, w_sym.clone(), w_mixed.clone());

        // D1: output l combines the two mixed components of levels l and
        // l + 1 with the complementary unprimed index and a 1/2 factor
        let mut t1 = Vec::new();
        for l in 0..k - 1 {
            for (sign, a, lev) in [
                (0.5, 0usize, l),
                (-0.5, 1, l),
                (0.5, 0, l + 1),
                (-0.5, 1, l + 1),
            ] {
                let ap = if lev == l { 0 } else { 1 };
                let in_comp = 2 * lev + (1 - a);
                let co: Coeffs = std::array::from_fn(|j| v.mixed[a][ap][j] * sign);
                push_stencil_block(dom, &co, l, in_comp, &mut t1);
            }
        }
        let a1 = CsrMatrix::from_triplets((k - 1) * ndof, 2 * k * ndof, t1);
        let d1 = DiscreteOperator::new(a1, w_mixed.clone(), w_two.clone());

        // tangential projectors over the one-sided band
        let wdiag = multiplicity_weights(k);
        let mut band = Vec::new();
        let mut band_proj = Vec::new();
        for dof in 0..ndof {
            if dom.is_interior(dof) {
                continue;
            }
            let x = dom.center_of_dof(dof);
            let g = dom.spec.grad_r(&x);
            let proj = tangential_projector(&g, k, &wdiag);
            band.push(dof);
            band_proj.push(proj);
        }

        Ok(NeumannSystem {
            k,
            dom: dom.clone(),
            weight,
            v,
            d0,
            d1,
            w_sym,
            w_mixed,
            w_two,
            band,
            band_proj,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.dom
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn d0(&self) -> &DiscreteOperator {
        &self.d0
    }

    pub fn d1(&self) -> &DiscreteOperator {
        &self.d1
    }

    pub fn metric(&self, space: Space) -> &Arc<Vec<f64>> {
        match space {
            Space::Sym => &self.w_sym,
            Space::Mixed => &self.w_mixed,
            Space::TwoForm => &self.w_two,
        }
    }

    pub fn flat_len(&self, space: Space) -> usize {
        space.component_count(self.k) * self.dom.dof_count()
    }

    pub fn band_size(&self) -> usize {
        self.band.len()
    }

    // -- conversions --------------------------------------------------------

    /// Flatten a component-wise grid field into the solver layout.
    pub fn flatten(&self, f: &SpinorField<GridField>) -> Vec<C64> {
        let ndof = self.dom.dof_count();
        let mut out = Vec::with_capacity(f.comps().len() * ndof);
        for c in f.comps() {
            assert!(c.dom.same_layout(&self.dom), "field from a different grid");
            out.extend_from_slice(&c.vals);
        }
        out
    }

    pub fn unflatten(&self, space: Space, flat: &[C64]) -> SpinorField<GridField> {
        let ndof = self.dom.dof_count();
        let comps = space.component_count(self.k);
        assert_eq!(flat.len(), comps * ndof);
        let fields = (0..comps)
            .map(|c| GridField {
                dom: self.dom.clone(),
                vals: flat[c * ndof..(c + 1) * ndof].to_vec(),
            })
            .collect();
        let kind = match space {
            Space::Sym => FieldKind::Sym(self.k),
            Space::Mixed => FieldKind::Mixed(self.k),
            Space::TwoForm => FieldKind::TwoForm(self.k),
        };
        SpinorField::new(kind, fields)
    }

    /// Sample polynomial components straight into the flat layout.
    pub fn sample_flat(&self, comps: &[PolyScalar]) -> Vec<C64> {
        let ndof = self.dom.dof_count();
        let mut out = Vec::with_capacity(comps.len() * ndof);
        for p in comps {
            out.extend((0..ndof).map(|d| p.eval(&self.dom.center_of_dof(d))));
        }
        out
    }

    // -- the box operator ---------------------------------------------------

    /// `box f = D0 D0* f + D1* D1 f` on the mixed space.
    pub fn box_apply(&self, f: &[C64]) -> Vec<C64> {
        let mut a = self.d0.apply(&self.d0.adjoint_apply(f));
        let b = self.d1.adjoint_apply(&self.d1.apply(f));
        for (ai, bi) in a.iter_mut().zip(&b) {
            *ai += bi;
        }
        a
    }

    /// Diagonal of the box operator, used as the Jacobi preconditioner.
    /// Both halves reduce to weighted row sums of squared entries:
    /// `diag_i = W_m[i] sum_j |A0[i,j]|^2 / W_s[j]
    ///         + (sum_r |A1[r,i]|^2 W_t[r]) / W_m[i]`.
    pub fn box_diag(&self) -> Vec<f64> {
        let n = self.flat_len(Space::Mixed);
        let mut diag = vec![0.0f64; n];
        for i in 0..n {
            let (cols, vals) = self.d0.mat.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v.norm_sqr() / self.w_sym[*c as usize];
            }
            diag[i] += self.w_mixed[i] * s;
            // rows of the stored conjugate transpose of A1 are exactly the
            // columns of A1
            let (cols, vals) = self.d1.adj.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v.norm_sqr() * self.w_two[*c as usize];
            }
            diag[i] += s / self.w_mixed[i];
        }
        diag
    }

    /// Jacobi-preconditioned conjugate gradients for the box equation
    /// restricted to the tangential subspace: every iterate lives in
    /// `range(band_project)` and the operator applied is
    /// `P box P` — the discrete counterpart of solving with the natural
    /// boundary condition, and the restriction that makes the operator
    /// uniformly positive (the unrestricted box operator carries
    /// boundary-layer modes with near-zero energy that stall any iteration).
    /// The right-hand side is projected first; a component of `g` outside
    /// the subspace is simply not seen. Returns the iterate and its
    /// statistics.
    pub fn solve_box(&self, g: &[C64], tol: f64, maxiter: usize) -> (Vec<C64>, SolveStats) {
        let n = self.flat_len(Space::Mixed);
        assert_eq!(g.len(), n);
        let w = &self.w_mixed;
        let mut gt = g.to_vec();
        self.band_project(&mut gt);
        let g_norm = weighted_norm(w, &gt);
        if g_norm == 0.0 {
            return (
                vec![C64::new(0.0, 0.0); n],
                SolveStats {
                    iterations: 0,
                    relative_residual: 0.0,
                    converged: true,
                    indefinite: false,
                    solution_norm: 0.0,
                    rhs_norm: 0.0,
                    residual_history: Vec::new(),
                },
            );
        }
        let diag = self.box_diag();
        let precond = |r: &[C64]| -> Vec<C64> {
            let mut z: Vec<C64> = r.iter().zip(&diag).map(|(ri, &d)| ri / d).collect();
            self.band_project(&mut z);
            z
        };
        let op = |p: &[C64]| -> Vec<C64> {
            let mut q = self.box_apply(p);
            self.band_project(&mut q);
            q
        };

        let mut x = vec![C64::new(0.0, 0.0); n];
        let mut r = gt.clone();
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = weighted_ip(w, &r, &z).re;
        let mut history = Vec::new();
        let mut indefinite = false;
        let mut converged = false;
        let mut iterations = 0;
        let mut rel = 1.0;

        for it in 0..maxiter {
            let q = op(&p);
            let pq = weighted_ip(w, &p, &q).re;
            if pq <= 0.0 {
                indefinite = pq < 0.0;
                break;
            }
            let alpha = rz / pq;
            axpy(&mut x, C64::new(alpha, 0.0), &p);
            axpy(&mut r, C64::new(-alpha, 0.0), &q);
            rel = weighted_norm(w, &r) / g_norm;
            history.push(rel);
            iterations = it + 1;
            if rel <= tol {
                converged = true;
                break;
            }
            z = precond(&r);
            let rz_next = weighted_ip(w, &r, &z).re;
            let beta = rz_next / rz;
            rz = rz_next;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }

        let solution_norm = weighted_norm(w, &x);
        (
            x,
            SolveStats {
                iterations,
                relative_residual: rel,
                converged,
                indefinite,
                solution_norm,
                rhs_norm: g_norm,
                residual_history: history,
            },
        )
    }

    // -- canonical solution and projection ----------------------------------

    /// Least-squares conjugate gradients for `D0 u = f`: minimizes the
    /// weighted residual over a Krylov space inside `range(D0*)`, which
    /// pins down the least-norm solution — the one orthogonal to `ker D0`,
    /// exactly, because every iterate is an image under `D0*`.
    ///
    /// Convergence is decided on the normal-equation residual
    /// `|D0*(D0 u - f)| / |D0* f|`, because the plain residual bottoms out
    /// at the least-squares floor whenever `f` is not exactly in
    /// `range(D0)`; the plain relative residual is what gets recorded.
    fn cgls(&self, f: &[C64], tol: f64, maxiter: usize) -> (Vec<C64>, SolveStats) {
        let n_sym = self.flat_len(Space::Sym);
        let n_mix = self.flat_len(Space::Mixed);
        assert_eq!(f.len(), n_mix);
        let wm = &self.w_mixed;
        let ws = &self.w_sym;
        let f_norm = weighted_norm(wm, f);
        let zero_stats = SolveStats {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            indefinite: false,
            solution_norm: 0.0,
            rhs_norm: f_norm,
            residual_history: Vec::new(),
        };
        if f_norm == 0.0 {
            return (vec![C64::new(0.0, 0.0); n_sym], zero_stats);
        }

        let mut u = vec![C64::new(0.0, 0.0); n_sym];
        let mut r = f.to_vec();
        let mut s = self.d0.adjoint_apply(&r);
        let mut p = s.clone();
        let gamma0 = weighted_ip(ws, &s, &s).re;
        if gamma0 == 0.0 {
            // f is orthogonal to range(D0); nothing of it is solvable
            let mut st = zero_stats;
            st.relative_residual = 1.0;
            return (u, st);
        }
        let mut gamma = gamma0;
        let mut history = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut rel = 1.0;
        for it in 0..maxiter {
            let t = self.d0.apply(&p);
            let delta = weighted_ip(wm, &t, &t).re;
            if delta <= 0.0 {
                break;
            }
            let alpha = gamma / delta;
            axpy(&mut u, C64::new(alpha, 0.0), &p);
            axpy(&mut r, C64::new(-alpha, 0.0), &t);
            rel = weighted_norm(wm, &r) / f_norm;
            history.push(rel);
            iterations = it + 1;
            s = self.d0.adjoint_apply(&r);
            let gamma_next = weighted_ip(ws, &s, &s).re;
            if (gamma_next / gamma0).sqrt() <= tol {
                converged = true;
                break;
            }
            let beta = gamma_next / gamma;
            gamma = gamma_next;
            for (pi, si) in p.iter_mut().zip(&s) {
                *pi = si + beta * *pi;
            }
        }
        let solution_norm = weighted_norm(ws, &u);
        (
            u,
            SolveStats {
                iterations,
                relative_residual: rel,
                converged,
                indefinite: false,
                solution_norm,
                rhs_norm: f_norm,
                residual_history: history,
            },
        )
    }

    /// Solve `D0 u = f` for the canonical `u`: the least-norm solution,
    /// the one orthogonal to every discrete solution of `D0 v = 0`. The
    /// right-hand side must be closed: `|D1 f| / |f| <= closed_tol` is
    /// checked first, with the tolerance supplied by the caller because its
    /// attainable size depends on where `f` came from — see
    /// [`CLOSED_TOL_STRICT`] for the tradeoff.
    ///
    /// The least-squares iteration runs entirely inside `range(D0*)` (see
    /// [`Self::cgls`]), so the orthogonality is exact up to rounding rather
    /// than up to the solver tolerance, and the residual it leaves is the
    /// distance from `f` to `range(D0)` — for data sampled from a smooth
    /// closed field that distance is pure discretization error and shrinks
    /// with the grid spacing. A second, tangentially restricted box solve
    /// supplies the bounded inverse image `w` behind the `nf_*` fields of
    /// the outcome; its operator is uniformly positive on the restricted
    /// subspace, which is what makes the inverse-norm and energy bounds
    /// meaningful at any resolution.
    pub fn canonical_solve(
        &self,
        f: &[C64],
        tol: f64,
        maxiter: usize,
        closed_tol: f64,
    ) -> Result<CanonicalOutcome, NeumannError> {
        let f_norm = weighted_norm(&self.w_mixed, f);
        let d1f = self.d1.apply(f);
        let closedness = if f_norm == 0.0 {
            0.0
        } else {
            weighted_norm(&self.w_two, &d1f) / f_norm
        };
        if closedness > closed_tol {
            return Err(NeumannError::NotClosed {
                ratio: closedness,
                tol: closed_tol,
            });
        }
        let (u, stats) = self.cgls(f, tol, maxiter);
        let residual = if f_norm == 0.0 {
            0.0
        } else {
            let mut d0u = self.d0.apply(&u);
            for (di, fi) in d0u.iter_mut().zip(f) {
                *di -= fi;
            }
            weighted_norm(&self.w_mixed, &d0u) / f_norm
        };
        let u_norm = weighted_norm(&self.w_sym, &u);
        let (w, nf_stats) = self.solve_box(f, tol, maxiter);
        let nf_norm = weighted_norm(&self.w_mixed, &w);
        let d0_star_nf_norm = weighted_norm(&self.w_sym, &self.d0.adjoint_apply(&w));
        let d1_nf_norm = weighted_norm(&self.w_two, &self.d1.apply(&w));
        Ok(CanonicalOutcome {
            u,
            stats,
            closedness,
            residual,
            u_norm,
            f_norm,
            nf_norm,
            d0_star_nf_norm,
            d1_nf_norm,
            nf_stats,
        })
    }

    /// Orthogonal projection of a Sym-space field onto the discrete kernel
    /// of `D0`: `P u = u - v` where `v` is the least-norm solution of
    /// `D0 v = D0 u`. The inner right-hand side lies in `range(D0)` by
    /// construction, so the least-squares iteration converges with no
    /// residual floor and the projection is idempotent and self-adjoint up
    /// to the solver tolerance.
    pub fn bergman_project(&self, u: &[C64], tol: f64, maxiter: usize) -> (Vec<C64>, SolveStats) {
        let g = self.d0.apply(u);
        let (corr, stats) = self.cgls(&g, tol, maxiter);
        let mut p = u.to_vec();
        for (pi, ci) in p.iter_mut().zip(&corr) {
            *pi -= ci;
        }
        (p, stats)
    }

    // -- boundary band ------------------------------------------------------

    /// Project the mixed-space field onto the tangential subspace at every
    /// band dof (interior dofs pass through untouched).
    pub fn band_project(&self, f: &mut [C64]) {
        let ndof = self.dom.dof_count();
        let comps = 2 * self.k;
        assert_eq!(f.len(), comps * ndof);
        let mut local = vec![C64::new(0.0, 0.0); comps];
        for (bi, &dof) in self.band.iter().enumerate() {
            for c in 0..comps {
                local[c] = f[c * ndof + dof];
            }
            let proj = &self.band_proj[bi];
            for c in 0..comps {
                let mut acc = C64::new(0.0, 0.0);
                for d in 0..comps {
                    acc += proj[(c, d)] * local[d];
                }
                f[c * ndof + dof] = acc;
            }
        }
    }

    // -- constants and the coercivity probe ---------------------------------

    /// Evaluate the two constants of the lower bound and combine them into
    /// `C0 = (c - 4 g) / (2k + 6)`. The curvature bound `c` is the smallest
    /// weighted eigenvalue of the curvature form of the weight over the dof
    /// centers; `g` is the analytic sup of the squared component gradients
    /// over the domain.
    pub fn compute_constants(&self) -> Result<EstimateConstants, NeumannError> {
        let k = self.k;
        let mut c = f64::INFINITY;
        for dof in 0..self.dom.dof_count() {
            let x = self.dom.center_of_dof(dof);
            let m = levi_matrix(&self.weight, &x, k).weighted_min_eig();
            if m < c {
                c = m;
            }
        }
        let grad_sq = self.weight.sup_grad_sq(&self.dom.spec)?;
        let c0 = (c - 4.0 * grad_sq) / (2 * k + 6) as f64;
        if c0 <= 0.0 {
            return Err(NeumannError::EstimateHypothesis { c0 });
        }
        Ok(EstimateConstants {
            k,
            curvature_lower: c,
            grad_sq_sup: grad_sq,
            c0,
        })
    }

    /// Randomized check of the discrete energy bound. Each probe samples a
    /// smooth mixed field (low-degree polynomial components with small
    /// integer coefficients), projects it tangentially on the band, and
    /// measures `q = (|D0* f|^2 + |D1 f|^2) / |f|^2`; the report also runs a
    /// few inverse iterations of the box operator for a sharper estimate of
    /// the bottom of its tangential spectrum. Passes when
    /// `min q >= C0 (1 - slack)`.
    pub fn estimate_probe(
        &self,
        probes: usize,
        slack: f64,
        seed: u64,
        solve_tol: f64,
        maxiter: usize,
    ) -> Result<ProbeReport, NeumannError> {
        let consts = self.compute_constants()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = 2 * self.k;
        let mut min_q = f64::INFINITY;
        let mut sum_q = 0.0;
        let mut seen = 0usize;
        let mut best: Option<Vec<C64>> = None;
        for _ in 0..probes {
            let polys: Vec<PolyScalar> = (0..comps)
                .map(|_| PolyScalar::random_int(2, &mut rng))
                .collect();
            let mut f = self.sample_flat(&polys);
            self.band_project(&mut f);
            let nf2 = weighted_ip(&self.w_mixed, &f, &f).re;
            if nf2 <= 1e-12 {
                continue;
            }
            let q = self.energy_quotient(&f, nf2);
            seen += 1;
            sum_q += q;
            if q < min_q {
                min_q = q;
                best = Some(f);
            }
        }
        // refine the worst probe by inverse iteration: each solve damps the
        // high end of the spectrum, steering the field toward the bottom
        // eigenvector compatible with the tangential constraint
        let mut rayleigh_min = min_q;
        if let Some(mut f) = best {
            for _ in 0..4 {
                let (mut x, stats) = self.solve_box(&f, solve_tol, maxiter);
                if stats.indefinite {
                    break;
                }
                self.band_project(&mut x);
                let nx = weighted_norm(&self.w_mixed, &x);
                if nx <= 0.0 {
                    break;
                }
                for xi in x.iter_mut() {
                    *xi /= nx;
                }
                f = x;
                let nf2 = weighted_ip(&self.w_mixed, &f, &f).re;
                let q = self.energy_quotient(&f, nf2);
                if q < rayleigh_min {
                    rayleigh_min = q;
                }
            }
        }
        let pass = min_q >= consts.c0 * (1.0 - slack);
        Ok(ProbeReport {
            k: self.k,
            probes: seen,
            c0: consts.c0,
            min_q,
            mean_q: if seen > 0 { sum_q / seen as f64 } else { 0.0 },
            rayleigh_min,
            slack,
            pass,
        })
    }

    fn energy_quotient(&self, f: &[C64], nf2: f64) -> f64 {
        let a = self.d0.adjoint_apply(f);
        let b = self.d1.apply(f);
        let ea = weighted_ip(&self.w_sym, &a, &a).re;
        let eb = weighted_ip(&self.w_two, &b, &b).re;
        (ea + eb) / nf2
    }

    // -- discretization diagnostics -----------------------------------------

    /// `|D1 D0 u| / |u|` for a smooth field: the closure defect of the
    /// discretized complex, concentrated on the one-sided band.
    pub fn d1d0_defect(&self, u: &[C64]) -> f64 {
        let d = self.d1.apply(&self.d0.apply(u));
        weighted_norm(&self.w_two, &d) / weighted_norm(&self.w_sym, u)
    }

    /// Gap between the assembled matrix adjoint of `D0` and the first-order
    /// formula for `D0*`, in max norm over dofs that no one-sided stencil
    /// can reach and that lie within `|x| <= within` (a fixed measurement
    /// region keeps the comparison meaningful across resolutions), relative
    /// to the max of the field. Shrinks like `h^2`: on that set the matrix
    /// adjoint is itself a central second-order discretization of the same
    /// operator, the only disagreement being the expansion of the weight
    /// ratio against the sampled gradient.
    pub fn adjoint_formula_gap(&self, f: &[C64], within: f64) -> f64 {
        let by_matrix = self.d0.adjoint_apply(f);
        let sf = self.unflatten(Space::Mixed, f);
        let delta = DeltaOperator::on_grid(&self.v, &self.weight, &self.dom);
        let by_formula = self.flatten(&apply_d0_star(&sf, &self.v, &delta));
        let ndof = self.dom.dof_count();
        let scale = f.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(1e-300);
        let mut worst = 0.0f64;
        for dof in 0..ndof {
            if !beyond_band_reach(&self.dom, dof) {
                continue;
            }
            let x = self.dom.center_of_dof(dof);
            if x.iter().map(|t| t * t).sum::<f64>().sqrt() > within {
                continue;
            }
            for comp in 0..self.k + 1 {
                let i = comp * ndof + dof;
                worst = worst.max((by_matrix[i] - by_formula[i]).norm());
            }
        }
        worst / scale
    }

    /// Pairing defect `|<A u, f> - <u, A* f>|` relative to the norms, for
    /// randomized `u`, `f`; zero to rounding by construction.
    pub fn adjoint_pairing_defect(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = |len: usize| -> Vec<C64> {
            (0..len)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let mut worst = 0.0f64;
        for _ in 0..4 {
            let u = rnd(self.flat_len(Space::Sym));
            let f = rnd(self.flat_len(Space::Mixed));
            let lhs = weighted_ip(&self.w_mixed, &self.d0.apply(&u), &f);
            let rhs = weighted_ip(&self.w_sym, &u, &self.d0.adjoint_apply(&f));
            let scale = weighted_norm(&self.w_sym, &u) * weighted_norm(&self.w_mixed, &f);
            worst = worst.max((lhs - rhs).norm() / scale);

            let g = rnd(self.flat_len(Space::TwoForm));
            let lhs = weighted_ip(&self.w_two, &self.d1.apply(&f), &g);
            let rhs = weighted_ip(&self.w_mixed, &f, &self.d1.adjoint_apply(&g));
            let scale = weighted_norm(&self.w_mixed, &f) * weighted_norm(&self.w_two, &g);
            worst = worst.max((lhs - rhs).norm() / scale);
        }
        worst
    }

    /// Polynomial solutions of `D0 u = 0` of component degree <= 2, sampled
    /// onto the grid. Because every stencil is exact on quadratics these lie
    /// in the exact discrete kernel, so they certify the orthogonality of
    /// canonical solutions without any solver in the loop.
    pub fn kernel_poly_basis(&self) -> Vec<Vec<C64>> {
        kernel_polys(self.k)
            .into_iter()
            .map(|comps| self.sample_flat(&comps))
            .collect()
    }

    /// Largest normalized inner product of `u` against the sampled
    /// polynomial kernel basis.
    pub fn kernel_overlap(&self, u: &[C64]) -> f64 {
        let un = weighted_norm(&self.w_sym, u);
        if un == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for v in self.kernel_poly_basis() {
            let vn = weighted_norm(&self.w_sym, &v);
            if vn <= 1e-14 {
                continue;
            }
            worst = worst.max(weighted_ip(&self.w_sym, u, &v).norm() / (un * vn));
        }
        worst
    }
}

/// Closedness gate for right-hand sides that must be annihilated by the
/// discrete `D1` up to solver noise. Per-line stencils on a masked domain
/// leave an `O(h^{3/2})` closure defect along the one-sided band even for
/// fields that are closed in the continuum, so this gate is only attainable
/// by right-hand sides built from the discrete operators themselves;
/// discretized analytic data should pass a tolerance matched to the
/// measured [`NeumannSystem::d1d0_defect`] instead.
pub const CLOSED_TOL_STRICT: f64 = 1e-6;

/// True when no one-sided stencil anywhere on the grid reaches this dof:
/// the dof is interior and every in-mask node within two steps along any
/// axis is interior too. On this set the rows of a matrix adjoint are
/// purely central, so they can be compared against the first-order adjoint
/// formulas termwise.
pub fn beyond_band_reach(dom: &GridDomain, dof: usize) -> bool {
    if !dom.is_interior(dof) {
        return false;
    }
    let idx = dom.grid.coords(dom.node_of_dof(dof));
    for axis in 0..4 {
        for step in [-2i64, -1, 1, 2] {
            let t = idx[axis] as i64 + step;
            if t < 0 || t >= dom.grid.n as i64 {
                continue;
            }
            let mut q = idx;
            q[axis] = t as usize;
            if let Some(nb) = dom.dof_at(dom.grid.lin(q)) {
                if !dom.is_interior(nb) {
                    return false;
                }
            }
        }
    }
    true
}

/// Scatter `sum_j c_j d_j` between one input and one output component as
/// matrix triplets, using the per-dof stencils of the domain.
fn push_stencil_block(
    dom: &GridDomain,
    co: &Coeffs,
    out_comp: usize,
    in_comp: usize,
    out: &mut Vec<(u32, u32, C64)>,
) {
    let ndof = dom.dof_count();
    let row_base = (out_comp * ndof) as u32;
    let col_base = (in_comp * ndof) as u32;
    for axis in 0..4 {
        let c = co[axis];
        if c.norm_sqr() == 0.0 {
            continue;
        }
        for dof in 0..ndof {
            let row = row_base + dof as u32;
            for &(nbr, s) in dom.stencil(dof, axis).entries() {
                out.push((row, col_base + nbr, c * s));
            }
        }
    }
}

/// `W`-orthogonal projector onto the tangential subspace picked out by the
/// gradient direction: `P = I - W^{-1} C^H (C W^{-1} C^H)^{-1} C` with `C`
/// the constraint matrix of the direction and `W` the multiplicity diagonal.
fn tangential_projector(grad: &[f64; 4], k: usize, wdiag: &[f64]) -> DMatrix<C64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm > 1e-12, "degenerate gradient at a band node");
    let unit = std::array::from_fn(|j| grad[j] / norm);
    let c = ConstraintMatrix::from_gradient(&unit, k);
    let c = c.matrix();
    let n = 2 * k;
    let winv_ch = DMatrix::from_fn(n, c.nrows(), |i, j| c[(j, i)].conj() / wdiag[i]);
    let gram = c * &winv_ch;
    let gram_inv = gram
        .clone()
        .try_inverse()
        .expect("constraint rows are independent for a nonzero direction");
    let correction = &winv_ch * gram_inv * c;
    DMatrix::identity(n, n) - correction
}

/// All polynomial fields of component degree <= 2 annihilated by the first
/// operator, found as the nullspace of the coefficient-space matrix of D0.
pub fn kernel_polys(k: usize) -> Vec<Vec<PolyScalar>> {
    let v = VectorFieldTable::standard();
    let monos: Vec<[u8; 4]> = {
        let mut m = Vec::new();
        for e1 in 0..=2u8 {
            for e2 in 0..=2 - e1 {
                for e3 in 0..=2 - e1 - e2 {
                    for e4 in 0..=2 - e1 - e2 - e3 {
                        m.push([e1, e2, e3, e4]);
                    }
                }
            }
        }
        m
    };
    // output components have degree <= 1: index their monomials
    let out_monos: Vec<[u8; 4]> = monos
        .iter()
        .copied()
        .filter(|e| e.iter().sum::<u8>() <= 1)
        .collect();
    let ncoef = monos.len();
    let ncols = (k + 1) * ncoef;
    let nrows = 2 * k * out_monos.len();
    let mut a = DMatrix::<C64>::zeros(nrows, ncols);
    for comp in 0..=k {
        for (mi, &exp) in monos.iter().enumerate() {
            let col = comp * ncoef + mi;
            let mut u_comps = vec![PolyScalar::zero(); k + 1];
            u_comps[comp] = PolyScalar::monomial(exp, C64::new(1.0, 0.0));
            let u = SpinorField::new(FieldKind::Sym(k), u_comps);
            let du = apply_d0(&u, &v);
            for out_comp in 0..2 * k {
                for (t_exp, t_val) in du.comp(out_comp).terms() {
                    let oi = out_monos
                        .iter()
                        .position(|e| e == t_exp)
                        .expect("derivative of a quadratic is at most linear");
                    a[(out_comp * out_monos.len() + oi, col)] += t_val;
                }
            }
        }
    }
    let (basis, _rank) = crate::convexity::nullspace_of(&a);
    let mut fields = Vec::new();
    for j in 0..basis.ncols() {
        let mut comps = vec![PolyScalar::zero(); k + 1];
        for comp in 0..=k {
            for (mi, &exp) in monos.iter().enumerate() {
                let cv = basis[(comp * ncoef + mi, j)];
                if cv.norm_sqr() > 1e-24 {
                    comps[comp] = comps[comp].add(&PolyScalar::monomial(exp, cv));
                }
            }
        }
        fields.push(comps);
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{DomainSpec, Grid4};
    use crate::operators::apply_d1_star;

    fn ball_system(k: usize, n: usize, kappa: f64) -> NeumannSystem {
        let grid = Grid4::new(n, -1.1, 1.1);
        let dom = GridDomain::masked(grid, DomainSpec::Ball { radius: 1.0 }).unwrap();
        let w = if kappa == 0.0 {
            Weight::zero()
        } else {
            Weight::sqnorm(kappa)
        };
        NeumannSystem::assemble(k, &dom, w).unwrap()
    }

    fn rnd_flat(sys: &NeumannSystem, space: Space, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sys.flat_len(space))
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    /// Degree <= 2 components sit in the exactness range of every stencil,
    /// so band effects only show up from degree 3 on; tests pick the degree
    /// to match what they want to see.
    fn smooth_flat(sys: &NeumannSystem, space: Space, deg: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps: Vec<PolyScalar> = (0..space.component_count(sys.k()))
            .map(|_| PolyScalar::random_int(deg, &mut rng))
            .collect();
        sys.sample_flat(&comps)
    }

    #[test]
    fn csr_roundtrip_and_duplicate_merge() {
        let t = vec![
            (1u32, 2u32, C64::new(1.0, 0.0)),
            (0, 0, C64::new(2.0, 1.0)),
            (1, 2, C64::new(0.5, -1.0)),
            (2, 1, C64::new(0.0, 3.0)),
        ];
        let m = CsrMatrix::from_triplets(3, 3, t);
        assert_eq!(m.nnz(), 3);
        let x = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(2.0, 0.0)];
        let y = m.apply(&x);
        assert_eq!(y[0], C64::new(2.0, 1.0));
        assert_eq!(y[1], C64::new(3.0, -2.0));
        assert_eq!(y[2], C64::new(-3.0, 0.0));
        // conjugate transpose twice returns the original entries
        let mm = m.conj_transpose().conj_transpose();
        assert_eq!(mm.nnz(), m.nnz());
        let y2 = mm.apply(&x);
        for (a, b) in y.iter().zip(&y2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adjoint_pairing_is_exact() {
        let sys = ball_system(2, 8, 0.25);
        assert!(sys.adjoint_pairing_defect(7) < 1e-13);
    }

    #[test]
    fn box_operator_is_self_adjoint_and_nonnegative() {
        let sys = ball_system(2, 8, 0.25);
        let f = rnd_flat(&sys, Space::Mixed, 1);
        let g = rnd_flat(&sys, Space::Mixed, 2);
        let bf = sys.box_apply(&f);
        let bg = sys.box_apply(&g);
        let w = sys.metric(Space::Mixed);
        let lhs = weighted_ip(w, &bf, &g);
        let rhs = weighted_ip(w, &f, &bg);
        let scale = weighted_norm(w, &f) * weighted_norm(w, &g);
        assert!((lhs - rhs).norm() / scale < 1e-13);

        // energy identity: <box f, f> = |D0* f|^2 + |D1 f|^2 exactly
        let quad = weighted_ip(w, &bf, &f).re;
        let a = sys.d0().adjoint_apply(&f);
        let b = sys.d1().apply(&f);
        let energy = weighted_ip(sys.metric(Space::Sym), &a, &a).re
            + weighted_ip(sys.metric(Space::TwoForm), &b, &b).re;
        assert!(quad >= 0.0);
        assert!((quad - energy).abs() / energy < 1e-13);
    }

    #[test]
    fn box_diagonal_matches_basis_probes() {
        let sys = ball_system(2, 8, 0.25);
        let diag = sys.box_diag();
        let n = sys.flat_len(Space::Mixed);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..12 {
            let i = rng.gen_range(0..n);
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[i] = C64::new(1.0, 0.0);
            let be = sys.box_apply(&e);
            assert!(
                (be[i].re - diag[i]).abs() / diag[i] < 1e-12,
                "diag[{}] = {}, probe = {}",
                i,
                diag[i],
                be[i].re
            );
            assert!(diag[i] > 0.0);
        }
    }

    #[test]
    fn closure_defect_shrinks_with_resolution() {
        let mut prev = f64::INFINITY;
        for n in [8usize, 12, 16] {
            let sys = ball_system(2, n, 0.25);
            let u = smooth_flat(&sys, Space::Sym, 3, 3);
            let d = sys.d1d0_defect(&u);
            assert!(d < prev, "defect should decrease: {} vs {}", d, prev);
            prev = d;
        }
        assert!(prev < 0.5, "defect at n = 16 still {}", prev);
    }

    #[test]
    fn adjoint_formula_gap_is_second_order() {
        // n = 10 is the coarsest ball grid with any dofs beyond band reach
        // (a small cluster near the origin), so measure there and at doubled
        // resolution inside the same fixed region
        let mut gaps = Vec::new();
        for n in [10usize, 20] {
            let sys = ball_system(2, n, 0.25);
            let f = smooth_flat(&sys, Space::Mixed, 2, 5);
            gaps.push(sys.adjoint_formula_gap(&f, 0.25));
        }
        assert!(gaps[0] > 1e-10, "gap too small to measure: {}", gaps[0]);
        let ratio = gaps[0] / gaps[1];
        assert!(
            ratio > 2.5 && ratio < 6.5,
            "expected roughly second-order decay, got ratio {} from {:?}",
            ratio,
            gaps
        );
    }

    #[test]
    fn cg_recovers_manufactured_solution() {
        let sys = ball_system(2, 8, 0.25);
        // start from a smooth field in the tangential subspace, make a
        // consistent right-hand side through the restricted operator
        let mut x_true = smooth_flat(&sys, Space::Mixed, 2, 9);
        sys.band_project(&mut x_true);
        let mut g = sys.box_apply(&x_true);
        sys.band_project(&mut g);
        let (x, stats) = sys.solve_box(&g, 1e-10, 4000);
        assert!(stats.converged, "cg stalled: {:?}", stats.relative_residual);
        assert!(!stats.indefinite);
        // compare through the operator (x may differ by a kernel component)
        let mut bx = sys.box_apply(&x);
        sys.band_project(&mut bx);
        let w = sys.metric(Space::Mixed);
        let mut diff = bx.clone();
        for (d, t) in diff.iter_mut().zip(&g) {
            *d -= t;
        }
        assert!(weighted_norm(w, &diff) / weighted_norm(w, &g) < 1e-9);
        // with the restriction the operator is far from singular, so the
        // iterate should in fact match the manufactured field directly
        let mut err = x.clone();
        for (e, t) in err.iter_mut().zip(&x_true) {
            *e -= t;
        }
        assert!(
            weighted_norm(w, &err) / weighted_norm(w, &x_true) < 1e-6,
            "iterate drifted from the manufactured field: {:e}",
            weighted_norm(w, &err) / weighted_norm(w, &x_true)
        );
        assert!(stats.solution_norm > 0.0 && stats.rhs_norm > 0.0);
        let hist = &stats.residual_history;
        assert_eq!(hist.len(), stats.iterations);
        assert!(hist.windows(2).any(|p| p[1] < p[0]));
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let sys = ball_system(2, 8, 0.0);
        let g = vec![C64::new(0.0, 0.0); sys.flat_len(Space::Mixed)];
        let (x, stats) = sys.solve_box(&g, 1e-10, 100);
        assert_eq!(stats.iterations, 0);
        assert!(stats.converged);
        assert!(x.iter().all(|v| v.norm_sqr() == 0.0));
    }

    #[test]
    fn polynomial_kernel_is_annihilated_exactly() {
        for k in 2..=3usize {
            let basis = kernel_polys(k);
            assert!(
                basis.len() >= k + 1,
                "k = {}: expected at least the constants, got {}",
                k,
                basis.len()
            );
            let v = VectorFieldTable::standard();
            for comps in &basis {
                let u = SpinorField::new(FieldKind::Sym(k), comps.clone());
                let du = apply_d0(&u, &v);
                assert!(du.norm_max() < 1e-10, "kernel candidate not annihilated");
            }
            // sampled on a grid they stay in the exact discrete kernel
            let sys = ball_system(k, 8, 0.25);
            for flat in sys.kernel_poly_basis() {
                let d = sys.d0().apply(&flat);
                let rel = weighted_norm(sys.metric(Space::Mixed), &d)
                    / weighted_norm(sys.metric(Space::Sym), &flat).max(1e-300);
                assert!(rel < 1e-12, "discrete kernel defect {}", rel);
            }
        }
    }

    #[test]
    fn canonical_solve_on_discretely_closed_data() {
        // quadratic components make the discrete complex exact, so a
        // right-hand side from D0 passes even the strict gate and the
        // canonical residual tracks the cg tolerance, not the grid
        let sys = ball_system(2, 8, 0.125);
        let u0 = smooth_flat(&sys, Space::Sym, 2, 21);
        let f = sys.d0().apply(&u0);
        let out = sys
            .canonical_solve(&f, 1e-10, 6000, CLOSED_TOL_STRICT)
            .unwrap();
        assert!(out.stats.converged);
        assert!(out.closedness < 1e-12, "closedness {}", out.closedness);
        assert!(out.residual < 1e-8, "residual {}", out.residual);
        assert!(
            sys.kernel_overlap(&out.u) < 1e-12,
            "kernel overlap {}",
            sys.kernel_overlap(&out.u)
        );
        assert!(out.u_norm <= weighted_norm(sys.metric(Space::Sym), &u0) * 1.1);
        // the restricted inverse image honors the operator-norm and energy
        // bounds that its uniformly positive restriction implies
        let c0 = sys.compute_constants().unwrap().c0;
        assert!(out.nf_norm <= out.f_norm / c0);
        assert!(
            out.d0_star_nf_norm.powi(2) + out.d1_nf_norm.powi(2) <= out.f_norm.powi(2) / c0,
            "energy split {} vs {}",
            out.d0_star_nf_norm.powi(2) + out.d1_nf_norm.powi(2),
            out.f_norm.powi(2) / c0
        );
        assert!(out.nf_stats.converged);
    }

    #[test]
    fn canonical_solve_with_band_defect() {
        // cubic components leave the one-sided band visible: the data is
        // closed in the continuum but not discretely, so the strict gate
        // refuses it and a discretization-aware gate lets it through with a
        // residual pinned at the closure defect rather than the cg tolerance
        let sys = ball_system(2, 8, 0.25);
        let u0 = smooth_flat(&sys, Space::Sym, 3, 21);
        let f = sys.d0().apply(&u0);
        match sys.canonical_solve(&f, 1e-6, 100, CLOSED_TOL_STRICT) {
            Err(NeumannError::NotClosed { ratio, tol }) => assert!(ratio > tol),
            other => panic!(
                "expected the strict gate to refuse, got {:?}",
                other.map(|o| o.residual)
            ),
        }
        let out = sys.canonical_solve(&f, 3e-6, 5000, 0.5).unwrap();
        assert!(out.stats.converged);
        assert!(
            out.closedness > 1e-3 && out.closedness < 0.5,
            "closedness {}",
            out.closedness
        );
        assert!(out.residual < 0.1, "residual {}", out.residual);
        // orthogonality to the exact discrete kernel holds by adjointness,
        // independent of how accurately the box equation was solved
        assert!(
            sys.kernel_overlap(&out.u) < 1e-12,
            "kernel overlap {}",
            sys.kernel_overlap(&out.u)
        );
    }

    #[test]
    fn bergman_projection_is_idempotent_and_fixes_the_kernel() {
        let sys = ball_system(2, 8, 0.25);
        let wsym = sys.metric(Space::Sym).clone();
        // an exact-kernel field is a fixed point: its D0 image is rounding
        // noise, so the correction the solver can build from it is noise too
        let kernel = sys.kernel_poly_basis();
        let (pk, _) = sys.bergman_project(&kernel[0], 1e-8, 50);
        let mut diff = pk.clone();
        for (d, a) in diff.iter_mut().zip(&kernel[0]) {
            *d -= *a;
        }
        assert!(weighted_norm(&wsym, &diff) <= 1e-10 * weighted_norm(&wsym, &kernel[0]));

        // generic fields: projecting twice changes nothing beyond solver
        // noise, and the projection is self-adjoint in the weighted metric
        let u = smooth_flat(&sys, Space::Sym, 3, 77);
        let v = smooth_flat(&sys, Space::Sym, 3, 78);
        let un = weighted_norm(&wsym, &u);
        let vn = weighted_norm(&wsym, &v);
        let (pu, st1) = sys.bergman_project(&u, 1e-8, 5000);
        assert!(st1.converged);
        let (ppu, _) = sys.bergman_project(&pu, 1e-8, 5000);
        let mut diff = ppu.clone();
        for (d, a) in diff.iter_mut().zip(&pu) {
            *d -= *a;
        }
        let idem = weighted_norm(&wsym, &diff) / un;
        assert!(idem < 1e-6, "idempotency gap {}", idem);
        let (pv, _) = sys.bergman_project(&v, 1e-8, 5000);
        let lhs = weighted_ip(&wsym, &pu, &v);
        let rhs = weighted_ip(&wsym, &u, &pv);
        let sa = (lhs - rhs).norm() / (un * vn);
        assert!(sa < 1e-8, "self-adjointness gap {}", sa);
    }

    #[test]
    fn band_projector_is_idempotent_and_kills_normal_part() {
        let sys = ball_system(3, 8, 0.25);
        let f = rnd_flat(&sys, Space::Mixed, 31);
        let mut p1 = f.clone();
        sys.band_project(&mut p1);
        let mut p2 = p1.clone();
        sys.band_project(&mut p2);
        let w = sys.metric(Space::Mixed);
        let mut diff = p2.clone();
        for (d, a) in diff.iter_mut().zip(&p1) {
            *d -= a;
        }
        assert!(weighted_norm(w, &diff) / weighted_norm(w, &f) < 1e-12);
        // after projection the constraint rows vanish at every band dof
        let ndof = sys.domain().dof_count();
        for &dof in &sys.band {
            let x = sys.domain().center_of_dof(dof);
            let g = sys.domain().spec.grad_r(&x);
            let norm = g.iter().map(|t| t * t).sum::<f64>().sqrt();
            let unit = std::array::from_fn(|j| g[j] / norm);
            let c = ConstraintMatrix::from_gradient(&unit, sys.k());
            let c = c.matrix();
            for r in 0..c.nrows() {
                let mut acc = C64::new(0.0, 0.0);
                for col in 0..c.ncols() {
                    acc += c[(r, col)] * p1[col * ndof + dof];
                }
                assert!(acc.norm() < 1e-10, "constraint row {} = {}", r, acc.norm());
            }
        }
    }

    #[test]
    fn constants_for_the_reference_weight_are_exact() {
        let sys = ball_system(2, 8, 0.125);
        let c = sys.compute_constants().unwrap();
        // curvature (4k + 4) kappa = 1.5, gradient sup 16 kappa^2 = 0.25,
        // c0 = (1.5 - 1.0) / 10 = 0.05; the curvature comes through an
        // eigenvalue solve, so allow it rounding-level slack
        assert!((c.curvature_lower - 1.5).abs() < 1e-12);
        assert_eq!(c.grad_sq_sup, 0.25);
        assert!((c.c0 - 0.05).abs() < 1e-13);
        // a steeper weight tips the balance and must be refused
        let sys = ball_system(2, 8, 0.1875);
        match sys.compute_constants() {
            Err(NeumannError::EstimateHypothesis { c0 }) => assert!(c0 <= 0.0),
            other => panic!("expected hypothesis failure, got {:?}", other.map(|c| c.c0)),
        }
    }

    #[test]
    fn too_coarse_grid_is_refused() {
        // a coarse ball mask erodes away entirely
        let grid = Grid4::new(6, -1.1, 1.1);
        assert!(GridDomain::masked(grid, DomainSpec::Ball { radius: 1.0 }).is_err());
        // a 3-node box survives masking but has no deep interior, which the
        // assembler must refuse
        let grid = Grid4::new(3, -1.0, 1.0);
        let dom = GridDomain::full_box(grid, DomainSpec::HalfspaceTest);
        match NeumannSystem::assemble(2, &dom, Weight::zero()) {
            Err(NeumannError::GridTooCoarse { n }) => assert_eq!(n, 3),
            other => panic!("expected coarse-grid refusal, got {:?}", other.err()),
        }
    }

    #[test]
    fn d1_star_matrix_matches_formula_in_the_interior() {
        // same construction as the d0 check, but for the second operator
        let sys = ball_system(3, 10, 0.25);
        let g = smooth_flat(&sys, Space::TwoForm, 2, 41);
        let by_matrix = sys.d1().adjoint_apply(&g);
        let sf = sys.unflatten(Space::TwoForm, &g);
        let delta = DeltaOperator::on_grid(&sys.v, &sys.weight, sys.domain());
        let by_formula = sys.flatten(&apply_d1_star(&sf, &sys.v, &delta));
        let ndof = sys.domain().dof_count();
        let scale = g.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let mut worst = 0.0f64;
        let mut measured = 0usize;
        for dof in 0..ndof {
            if !beyond_band_reach(sys.domain(), dof) {
                continue;
            }
            measured += 1;
            for comp in 0..2 * sys.k() {
                let i = comp * ndof + dof;
                worst = worst.max((by_matrix[i] - by_formula[i]).norm());
            }
        }
        assert!(measured > 0, "no measurable dofs at this resolution");
        assert!(worst / scale < 0.2, "interior gap {}", worst / scale);
    }
}
