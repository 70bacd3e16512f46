//! Levi forms of the complex as finite Hermitian matrices, and the two
//! convexity notions built on them: plurisubharmonicity of a function on a
//! domain's interior, and pseudoconvexity of a domain's boundary.
//!
//! At order k the form acts on reduced mixed-tensor coordinates xi_{l,A}
//! (l = number of primed ones, A the unprimed index), so the matrix is
//! 2k x 2k, and every bound of the shape ">= c |xi|^2" is a generalized
//! eigenvalue statement with the diagonal binomial metric supplying |xi|^2.
//! Boundary tangency enters as the nullspace of a small constraint matrix;
//! restricting the form to that nullspace gives the quantity whose sign
//! defines pseudoconvexity.

use crate::fields::{C2Fn, DomainSpec};
use crate::operators::VectorFieldTable;
use crate::spinor::binomial;
use crate::C64;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Allowed deviation from exact conjugate symmetry in an assembled form.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Slack in the interior eigenvalue bound (min eig >= c - this).
pub const INTERIOR_EIG_SLACK: f64 = 1e-9;
/// Slack in the constrained boundary eigenvalue bound.
pub const BOUNDARY_EIG_SLACK: f64 = 1e-8;
/// Singular values below this fraction of the largest count as zero.
pub const NULLSPACE_RTOL: f64 = 1e-10;
/// How far off the zero set of the defining function a "boundary" point
/// may be.
pub const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ConvexityError {
    #[error("no sample points supplied")]
    EmptySamples,
    #[error("point is off the boundary: |r| = {r:.3e} exceeds {tol:.1e}")]
    NotOnBoundary { r: f64, tol: f64 },
    #[error("reparameterization '{name}' is concave at t = {t}: chi'' = {second}")]
    ConcaveReparam {
        name: &'static str,
        t: f64,
        second: f64,
    },
}

// ---------------------------------------------------------------------------
// the form itself

/// The diagonal metric on reduced coordinates: component (l, A) carries the
/// number of full index tuples it stands for, binomial(k-1, l).
pub fn multiplicity_weights(k: usize) -> Vec<f64> {
    let mut w = vec![0.0; 2 * k];
    for l in 0..k {
        for a in 0..2 {
            w[2 * l + a] = binomial(k - 1, l);
        }
    }
    w
}

/// A Hermitian 2k x 2k matrix M on reduced mixed-tensor coordinates, with
/// multiplicities folded in so that xi* M xi is the order-k Levi form of
/// the function it was built from.
///
/// Eigenvalue questions are always asked in the multiplicity-weighted
/// metric W (so "M >= c" means xi* M xi >= c xi* W xi), which is solved as
/// an ordinary Hermitian problem for W^{-1/2} M W^{-1/2}.
#[derive(Debug, Clone)]
pub struct HermitianForm {
    k: usize,
    m: DMatrix<C64>,
}

impl HermitianForm {
    pub fn new(k: usize, m: DMatrix<C64>) -> Self {
        assert!(k >= 2, "the complex needs k >= 2");
        assert_eq!(m.nrows(), 2 * k);
        assert_eq!(m.ncols(), 2 * k);
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for r in 0..2 * k {
            for c in 0..2 * k {
                defect = defect.max((m[(r, c)] - m[(c, r)].conj()).norm());
                scale = scale.max(m[(r, c)].norm());
            }
        }
        assert!(
            defect <= HERMITICITY_TOL * scale.max(1.0),
            "form is not Hermitian: defect {defect:.3e} at scale {scale:.3e}"
        );
        HermitianForm { k, m }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    /// xi* M xi (the imaginary part cancels by Hermitian symmetry).
    pub fn value(&self, xi: &[C64]) -> f64 {
        assert_eq!(xi.len(), 2 * self.k);
        let mut acc = ZERO;
        for r in 0..2 * self.k {
            for c in 0..2 * self.k {
                acc += xi[r].conj() * self.m[(r, c)] * xi[c];
            }
        }
        acc.re
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianForm {
            k: self.k,
            m: self.m.map(|v| v * s),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        HermitianForm::new(self.k, &self.m - &other.m)
    }

    fn weighted_matrix(&self) -> DMatrix<C64> {
        let w = multiplicity_weights(self.k);
        DMatrix::from_fn(2 * self.k, 2 * self.k, |r, c| {
            self.m[(r, c)] / (w[r].sqrt() * w[c].sqrt())
        })
    }

    /// Eigenvalues in the multiplicity-weighted metric, ascending.
    pub fn weighted_eigenvalues(&self) -> Vec<f64> {
        let eig = self.weighted_matrix().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals
    }

    pub fn weighted_min_eig(&self) -> f64 {
        self.weighted_eigenvalues()[0]
    }
}

/// Assemble the order-k Levi form from a Hessian. The form is linear in
/// the Hessian, which the chain-rule machinery leans on.
///
/// The contraction constant: with T^(BC')_(D'A) the second derivative
/// taken along the mixed field (B, C') and the raised field (A, D'), one
/// symmetrization slot pairs the two fields directly (diagonal-in-l block,
/// counted with the full tuple multiplicity), and the other k-1 slots each
/// contribute the same cross block shifted by whether C', D' are primed
/// ones, counted with the remaining tuples' multiplicity.
pub fn levi_of_hessian(k: usize, hess: &[[f64; 4]; 4]) -> HermitianForm {
    assert!(k >= 2, "the complex needs k >= 2");
    let v = VectorFieldTable::standard();

    // t[b][cp][dp][a] = coefficient contraction of the two first-order
    // fields against the Hessian
    let mut t = [[[[ZERO; 2]; 2]; 2]; 2];
    for b in 0..2 {
        for cp in 0..2 {
            for dp in 0..2 {
                for a in 0..2 {
                    let mut acc = ZERO;
                    for i in 0..4 {
                        for j in 0..4 {
                            if hess[i][j] != 0.0 {
                                acc += v.mixed[b][cp][i] * v.raised[a][dp][j] * hess[i][j];
                            }
                        }
                    }
                    t[b][cp][dp][a] = acc;
                }
            }
        }
    }

    let n = 2 * k;
    let mut m = DMatrix::<C64>::zeros(n, n);

    // slot paired with the derivative: -C(k-1,l) * sum_{C'} t[b][C'][C'][a]
    for l in 0..k {
        let w = binomial(k - 1, l);
        for b in 0..2 {
            for a in 0..2 {
                let mut p = ZERO;
                for cp in 0..2 {
                    p += t[b][cp][cp][a];
                }
                m[(2 * l + b, 2 * l + a)] -= p * w;
            }
        }
    }

    // the other k-1 slots: cross blocks between classes m+dp and m+cp
    for mm in 0..=(k - 2) {
        let w = (k - 1) as f64 * binomial(k - 2, mm);
        for cp in 0..2 {
            for dp in 0..2 {
                for b in 0..2 {
                    for a in 0..2 {
                        let row = 2 * (mm + dp) + b;
                        let col = 2 * (mm + cp) + a;
                        m[(row, col)] -= t[b][cp][dp][a] * w;
                    }
                }
            }
        }
    }

    HermitianForm::new(k, m)
}

/// Levi form of a C^2 function at a point.
pub fn levi_matrix(phi: &dyn C2Fn, x: &[f64; 4], k: usize) -> HermitianForm {
    levi_of_hessian(k, &phi.hessian(x))
}

// ---------------------------------------------------------------------------
// interior check

#[derive(Debug, Clone, Serialize)]
pub struct InteriorReport {
    pub k: usize,
    pub c: f64,
    pub min_eig: f64,
    pub pass: bool,
}

/// Strict order-k plurisubharmonicity with margin c over a sample set:
/// min over samples of the weighted minimum eigenvalue, compared against c
/// with a small slack.
pub fn is_k_plurisubharmonic(
    phi: &dyn C2Fn,
    samples: &[[f64; 4]],
    k: usize,
    c: f64,
) -> Result<InteriorReport, ConvexityError> {
    if samples.is_empty() {
        return Err(ConvexityError::EmptySamples);
    }
    let mut min_eig = f64::INFINITY;
    for x in samples {
        min_eig = min_eig.min(levi_matrix(phi, x, k).weighted_min_eig());
    }
    Ok(InteriorReport {
        k,
        c,
        min_eig,
        pass: min_eig >= c - INTERIOR_EIG_SLACK,
    })
}

// ---------------------------------------------------------------------------
// boundary tangency

/// The k+1 tangency equations at a boundary point, as a (k+1) x 2k matrix
/// on reduced coordinates. Row m is the equation for the symmetric index
/// class with m primed ones; it touches only the component classes m and
/// m-1, with the fractions (k-m)/k and m/k that expanding the
/// symmetrization produces.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    k: usize,
    c: DMatrix<C64>,
}

impl ConstraintMatrix {
    /// Build from the gradient of a defining function; only the gradient
    /// enters, through the first-order coefficients of the raised fields.
    pub fn from_gradient(grad: &[f64; 4], k: usize) -> Self {
        assert!(k >= 2, "the complex needs k >= 2");
        let v = VectorFieldTable::standard();
        let zr = |a: usize, ap: usize| -> C64 {
            (0..4).map(|j| v.raised[a][ap][j] * grad[j]).sum()
        };
        let mut c = DMatrix::<C64>::zeros(k + 1, 2 * k);
        for m in 0..=k {
            for a in 0..2 {
                if m < k {
                    c[(m, 2 * m + a)] += zr(a, 0) * ((k - m) as f64 / k as f64);
                }
                if m >= 1 {
                    c[(m, 2 * (m - 1) + a)] += zr(a, 1) * (m as f64 / k as f64);
                }
            }
        }
        ConstraintMatrix { k, c }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.c
    }

    /// Orthonormal basis of the nullspace and the rank, with the relative
    /// singular-value threshold.
    pub fn nullspace(&self) -> (DMatrix<C64>, usize) {
        nullspace_of(&self.c)
    }
}

/// Rank by singular values (relative threshold [`NULLSPACE_RTOL`]) and an
/// orthonormal nullspace basis from the eigenvectors of A* A belonging to
/// its smallest eigenvalues. The eigenvector route is used because it
/// yields right-singular vectors for wide matrices without a full SVD.
pub fn nullspace_of(a: &DMatrix<C64>) -> (DMatrix<C64>, usize) {
    let n = a.ncols();
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > NULLSPACE_RTOL * smax).count()
    };
    let nullity = n - rank;
    if nullity == 0 {
        return (DMatrix::zeros(n, 0), rank);
    }
    let gram = a.adjoint() * a;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let cols: Vec<DVector<C64>> = order[..nullity]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    (DMatrix::from_columns(&cols), rank)
}

/// Tangency constraints of a catalog domain at a boundary point, built on
/// the normalized defining function. Errors if the point misses the
/// boundary by more than [`BOUNDARY_TOL`].
pub fn tangency_constraints(
    d: &DomainSpec,
    x: &[f64; 4],
    k: usize,
) -> Result<ConstraintMatrix, ConvexityError> {
    let rhat = d.normalized();
    let rv = rhat.value(x);
    if rv.abs() > BOUNDARY_TOL {
        return Err(ConvexityError::NotOnBoundary {
            r: rv.abs(),
            tol: BOUNDARY_TOL,
        });
    }
    Ok(ConstraintMatrix::from_gradient(&rhat.gradient(x), k))
}

/// A Levi form restricted to the tangent space cut out by the constraints,
/// everything expressed in the multiplicity-weighted coordinates.
#[derive(Debug, Clone)]
pub struct TangentRestriction {
    /// Eigenvalues of the restricted form, ascending.
    pub eigenvalues: Vec<f64>,
    /// Dimension of the constraint nullspace (k-1 generically).
    pub nullity: usize,
    /// Orthonormal tangent basis in weighted coordinates, 2k x nullity.
    pub basis: DMatrix<C64>,
}

/// Restrict `form` to the nullspace of `cons`. Both are first moved to
/// weighted coordinates so that orthonormality and eigenvalues carry the
/// multiplicity metric.
pub fn restrict_to_tangent(form: &HermitianForm, cons: &ConstraintMatrix) -> TangentRestriction {
    assert_eq!(form.k(), cons.k());
    let k = form.k();
    let w = multiplicity_weights(k);
    let mt = form.weighted_matrix();
    let ct = DMatrix::from_fn(k + 1, 2 * k, |r, c| cons.c[(r, c)] / w[c].sqrt());
    let (basis, _rank) = nullspace_of(&ct);
    let nullity = basis.ncols();
    let restricted = basis.adjoint() * mt * &basis;
    let mut eigenvalues: Vec<f64> = if nullity == 0 {
        Vec::new()
    } else {
        restricted.symmetric_eigen().eigenvalues.iter().copied().collect()
    };
    eigenvalues.sort_by(f64::total_cmp);
    TangentRestriction {
        eigenvalues,
        nullity,
        basis,
    }
}

/// Principal angles between the column spans of two orthonormal bases,
/// through their sines: the singular values of (I - A A*) B. The cosine
/// route (arccos of singular values of A* B) cannot resolve angles below
/// about 1e-8 in doubles; this one is exact at zero.
pub fn principal_angles(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Vec<f64> {
    let resid = b - a * (a.adjoint() * b);
    let sv = resid.svd(false, false).singular_values;
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).asin()).collect();
    angles.sort_by(f64::total_cmp);
    angles
}

// ---------------------------------------------------------------------------
// boundary check

#[derive(Debug, Clone, Serialize)]
pub struct BoundarySample {
    pub point: [f64; 4],
    pub min_eig: f64,
    pub nullity: usize,
    /// Tangent space bigger than the generic k-1: reported, never pooled.
    pub degenerate: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub k: usize,
    pub c: f64,
    pub min_constrained_eig: f64,
    pub degenerate_samples: usize,
    pub pass: bool,
    pub samples: Vec<BoundarySample>,
}

/// Strict order-k pseudoconvexity with margin c at the given boundary
/// samples: at each point, restrict the Levi form of the normalized
/// defining function to the constraint nullspace and compare its minimum
/// eigenvalue against c.
pub fn is_k_pseudoconvex(
    d: &DomainSpec,
    samples: &[[f64; 4]],
    k: usize,
    c: f64,
) -> Result<BoundaryReport, ConvexityError> {
    if samples.is_empty() {
        return Err(ConvexityError::EmptySamples);
    }
    let rhat = d.normalized();
    let mut out = Vec::with_capacity(samples.len());
    let mut global_min = f64::INFINITY;
    let mut degenerate_samples = 0;
    for &x in samples {
        let cons = tangency_constraints(d, &x, k)?;
        let form = levi_matrix(&rhat, &x, k);
        let tr = restrict_to_tangent(&form, &cons);
        let min_eig = tr.eigenvalues.first().copied().unwrap_or(f64::INFINITY);
        let degenerate = tr.nullity != k - 1;
        if degenerate {
            degenerate_samples += 1;
        }
        let pass = min_eig >= c - BOUNDARY_EIG_SLACK;
        global_min = global_min.min(min_eig);
        out.push(BoundarySample {
            point: x,
            min_eig,
            nullity: tr.nullity,
            degenerate,
            pass,
        });
    }
    let pass = out.iter().all(|s| s.pass);
    Ok(BoundaryReport {
        k,
        c,
        min_constrained_eig: global_min,
        degenerate_samples,
        pass,
        samples: out,
    })
}

// ---------------------------------------------------------------------------
// convex reparameterizations

/// Catalog of smooth 1-D reparameterizations with analytic derivatives.
/// All entries except a `Quadratic` with negative quadratic part are
/// convex everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chi {
    /// t
    Identity,
    /// t^2
    Square,
    /// e^t
    Exp,
    /// ln(1 + e^t)
    Softplus,
    /// lin * t + quad * t^2
    Quadratic { lin: f64, quad: f64 },
}

impl Chi {
    pub fn name(&self) -> &'static str {
        match self {
            Chi::Identity => "identity",
            Chi::Square => "square",
            Chi::Exp => "exp",
            Chi::Softplus => "softplus",
            Chi::Quadratic { .. } => "quadratic",
        }
    }

    /// (chi, chi', chi'') at t.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            Chi::Identity => (t, 1.0, 0.0),
            Chi::Square => (t * t, 2.0 * t, 2.0),
            Chi::Exp => {
                let e = t.exp();
                (e, e, e)
            }
            Chi::Softplus => {
                // stable around large |t|
                let v = if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                };
                let s = 1.0 / (1.0 + (-t).exp());
                (v, s, s * (1.0 - s))
            }
            Chi::Quadratic { lin, quad } => (lin * t + quad * t * t, lin + 2.0 * quad * t, 2.0 * quad),
        }
    }
}

/// chi composed with a C^2 function, with chain-rule derivatives.
pub struct Reparameterized<'a> {
    pub base: &'a dyn C2Fn,
    pub chi: Chi,
}

impl C2Fn for Reparameterized<'_> {
    fn value(&self, x: &[f64; 4]) -> f64 {
        self.chi.eval(self.base.value(x)).0
    }

    fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
        let (_, d1, _) = self.chi.eval(self.base.value(x));
        let g = self.base.gradient(x);
        std::array::from_fn(|a| d1 * g[a])
    }

    fn hessian(&self, x: &[f64; 4]) -> [[f64; 4]; 4] {
        let (_, d1, d2) = self.chi.eval(self.base.value(x));
        let g = self.base.gradient(x);
        let h = self.base.hessian(x);
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = d1 * h[i][j] + d2 * g[i] * g[j];
            }
        }
        out
    }
}

/// Levi form of chi(phi) minus chi'(phi) times the Levi form of phi, at a
/// point. For convex chi this is positive semidefinite (it is the Levi
/// form of the rank-one Hessian chi'' grad phi grad phi^T); a concave chi
/// is rejected.
pub fn chain_rule_gap(
    phi: &dyn C2Fn,
    chi: Chi,
    x: &[f64; 4],
    k: usize,
) -> Result<HermitianForm, ConvexityError> {
    let t = phi.value(x);
    let (_, d1, d2) = chi.eval(t);
    if d2 < 0.0 {
        return Err(ConvexityError::ConcaveReparam {
            name: chi.name(),
            t,
            second: d2,
        });
    }
    let composed = Reparameterized { base: phi, chi };
    Ok(levi_matrix(&composed, x, k).sub(&levi_matrix(phi, x, k).scale(d1)))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Weight;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_xi(k: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..2 * k)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn hess_r1() -> [[f64; 4]; 4] {
        let mut h = [[0.0; 4]; 4];
        h[0][0] = 2.0;
        h[1][1] = 2.0;
        h
    }

    fn hess_r2() -> [[f64; 4]; 4] {
        let mut h = [[0.0; 4]; 4];
        h[2][2] = 2.0;
        h[3][3] = 2.0;
        h
    }

    /// The two closed-form sums: 4 |xi|^2 plus 4(k-1) times the component
    /// groups with the first primed index pinned, translated to reduced
    /// coordinates and multiplicities.
    fn closed_form(k: usize, xi: &[C64], pinned_groups: [(usize, usize); 2]) -> f64 {
        let w = multiplicity_weights(k);
        let mut v = 4.0
            * xi.iter()
                .enumerate()
                .map(|(i, z)| w[i] * z.norm_sqr())
                .sum::<f64>();
        for m in 0..=(k - 2) {
            for &(pin, a) in &pinned_groups {
                v += 4.0 * (k - 1) as f64
                    * binomial(k - 2, m)
                    * xi[2 * (m + pin) + a].norm_sqr();
            }
        }
        v
    }

    #[test]
    fn k2_form_of_first_pair_is_diag_4_8_8_4() {
        let form = levi_of_hessian(2, &hess_r1());
        let m = form.matrix();
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { [4.0, 8.0, 8.0, 4.0][r] } else { 0.0 };
                assert_abs_diff_eq!(m[(r, c)].re, want, epsilon = 1e-12);
                assert_abs_diff_eq!(m[(r, c)].im, 0.0, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(form.weighted_min_eig(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_function_has_zero_form() {
        let form = levi_of_hessian(3, &[[0.0; 4]; 4]);
        assert!(form.matrix().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn squared_norm_form_is_a_multiple_of_the_metric() {
        // adding the two pair forms fills every pinned group, so the total
        // collapses to (4k+4) kappa |xi|^2
        for k in 2..=5 {
            let kappa = 0.25;
            let w = Weight::sqnorm(kappa);
            let form = levi_matrix(&w, &[0.3, -0.1, 0.2, 0.5], k);
            let want = (4 * k + 4) as f64 * kappa;
            for lam in form.weighted_eigenvalues() {
                assert_abs_diff_eq!(lam, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn closed_forms_match_the_assembled_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 2..=5 {
            let f1 = levi_of_hessian(k, &hess_r1());
            let f2 = levi_of_hessian(k, &hess_r2());
            for _ in 0..20 {
                let xi = random_xi(k, &mut rng);
                // first pair: pinned groups 1'..0 and 0'..1
                let want1 = closed_form(k, &xi, [(1, 0), (0, 1)]);
                // second pair: pinned groups 0'..0 and 1'..1
                let want2 = closed_form(k, &xi, [(0, 0), (1, 1)]);
                assert_abs_diff_eq!(f1.value(&xi), want1, epsilon = 1e-10);
                assert_abs_diff_eq!(f2.value(&xi), want2, epsilon = 1e-10);
            }
        }
    }

    /// At k = 2 the definition can be written with an explicit half-half
    /// symmetrization over the two primed indices; evaluate that wording
    /// directly and compare with the assembled matrix.
    #[test]
    fn k2_pair_symmetrized_wording_agrees() {
        let v = VectorFieldTable::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut hess = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let val = rng.gen_range(-1.0..1.0);
                hess[i][j] = val;
                hess[j][i] = val;
            }
        }
        let t = |b: usize, cp: usize, dp: usize, a: usize| -> C64 {
            let mut acc = ZERO;
            for i in 0..4 {
                for j in 0..4 {
                    acc += v.mixed[b][cp][i] * v.raised[a][dp][j] * hess[i][j];
                }
            }
            acc
        };
        let form = levi_of_hessian(2, &hess);
        for _ in 0..20 {
            let xi = random_xi(2, &mut rng);
            let comp = |ap: usize, a: usize| xi[2 * ap + a];
            let mut direct = ZERO;
            for a in 0..2 {
                for b in 0..2 {
                    for ap in 0..2 {
                        for bp in 0..2 {
                            let sym = t(b, ap, ap, a) * comp(bp, a) * 0.5
                                + t(b, ap, bp, a) * comp(ap, a) * 0.5;
                            direct += sym * comp(bp, b).conj();
                        }
                    }
                }
            }
            direct *= -2.0;
            assert_abs_diff_eq!(direct.im, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(form.value(&xi), direct.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn tangency_rank_and_nullity() {
        let ball = DomainSpec::Ball { radius: 1.0 };
        let cons = tangency_constraints(&ball, &[1.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(cons.matrix().nrows(), 3);
        assert_eq!(cons.matrix().ncols(), 4);
        let (basis, rank) = cons.nullspace();
        assert_eq!(rank, 3);
        assert_eq!(basis.ncols(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..=5 {
            for (x, _) in ball.boundary_samples(10, &mut rng) {
                let cons = tangency_constraints(&ball, &x, k).unwrap();
                let (basis, rank) = cons.nullspace();
                assert_eq!(rank, k + 1);
                assert_eq!(basis.ncols(), k - 1);
                // basis columns really solve the constraints
                for col in 0..basis.ncols() {
                    let resid = cons.matrix() * basis.column(col);
                    assert!(resid.iter().all(|v| v.norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn interior_point_is_rejected() {
        let ball = DomainSpec::Ball { radius: 1.0 };
        let err = tangency_constraints(&ball, &[0.5, 0.0, 0.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, ConvexityError::NotOnBoundary { .. }));
    }

    #[test]
    fn ball_constrained_minimum_is_2k_plus_2() {
        let ball = DomainSpec::Ball { radius: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 2..=4 {
            let samples: Vec<[f64; 4]> = ball
                .boundary_samples(40, &mut rng)
                .into_iter()
                .map(|(x, _)| x)
                .collect();
            let report = is_k_pseudoconvex(&ball, &samples, k, (2 * k + 2) as f64).unwrap();
            assert!(report.pass, "min {}", report.min_constrained_eig);
            assert_eq!(report.degenerate_samples, 0);
            assert_abs_diff_eq!(
                report.min_constrained_eig,
                (2 * k + 2) as f64,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn flat_boundary_is_weakly_pseudoconvex() {
        let hs = DomainSpec::HalfspaceTest;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<[f64; 4]> = hs
            .boundary_samples(20, &mut rng)
            .into_iter()
            .map(|(x, _)| x)
            .collect();
        let weak = is_k_pseudoconvex(&hs, &samples, 2, 0.0).unwrap();
        assert!(weak.pass);
        assert_abs_diff_eq!(weak.min_constrained_eig, 0.0, epsilon = 1e-12);
        let strict = is_k_pseudoconvex(&hs, &samples, 2, 1.0).unwrap();
        assert!(!strict.pass);
    }

    /// Rescaling the defining function by a positive factor mu(x) leaves
    /// the tangent space alone and multiplies the restricted form by
    /// mu(x) pointwise.
    #[test]
    fn defining_function_rescaling() {
        let ball = DomainSpec::Ball { radius: 1.0 };
        let rhat = ball.normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 2..=3 {
            for (x, _) in ball.boundary_samples(15, &mut rng) {
                let mu = 1.0 + 0.3 / (1.0 + x[1] * x[1]);
                let dmu = {
                    let mut g = [0.0; 4];
                    g[1] = -0.3 * 2.0 * x[1] / (1.0 + x[1] * x[1]).powi(2);
                    g
                };
                let g = rhat.gradient(&x);
                let h = rhat.hessian(&x);
                // Hess(mu * rhat) on the boundary, where rhat = 0
                let mut h_mu = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        h_mu[i][j] = mu * h[i][j] + dmu[i] * g[j] + g[i] * dmu[j];
                    }
                }
                let g_mu: [f64; 4] = std::array::from_fn(|a| mu * g[a]);

                let cons = ConstraintMatrix::from_gradient(&g, k);
                let cons_mu = ConstraintMatrix::from_gradient(&g_mu, k);
                let tr = restrict_to_tangent(&levi_of_hessian(k, &h), &cons);
                let tr_mu = restrict_to_tangent(&levi_of_hessian(k, &h_mu), &cons_mu);

                for angle in principal_angles(&tr.basis, &tr_mu.basis) {
                    assert!(angle < 1e-8, "principal angle {angle}");
                }
                assert_eq!(tr.nullity, tr_mu.nullity);
                for (lam, lam_mu) in tr.eigenvalues.iter().zip(&tr_mu.eigenvalues) {
                    assert_abs_diff_eq!(mu * lam, *lam_mu, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn interior_reports() {
        let samples = [[0.1, 0.2, -0.3, 0.0], [0.4, -0.2, 0.1, 0.3]];
        // first coordinate pair: passes at its exact minimum
        let r1 = |x: &[f64; 4]| x[0] * x[0] + x[1] * x[1];
        struct FirstPair;
        impl C2Fn for FirstPair {
            fn value(&self, x: &[f64; 4]) -> f64 {
                x[0] * x[0] + x[1] * x[1]
            }
            fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
                [2.0 * x[0], 2.0 * x[1], 0.0, 0.0]
            }
            fn hessian(&self, _x: &[f64; 4]) -> [[f64; 4]; 4] {
                let mut h = [[0.0; 4]; 4];
                h[0][0] = 2.0;
                h[1][1] = 2.0;
                h
            }
        }
        let rep = is_k_plurisubharmonic(&FirstPair, &samples, 2, 4.0).unwrap();
        assert!(rep.pass);
        assert_abs_diff_eq!(rep.min_eig, 4.0, epsilon = 1e-12);

        // sign-flipped squared norm: negative definite
        let neg = Weight::sqnorm(-1.0);
        let rep = is_k_plurisubharmonic(&neg, &samples, 2, 0.0).unwrap();
        assert!(!rep.pass);
        assert!(rep.min_eig < -1.0);

        assert!(matches!(
            is_k_plurisubharmonic(&neg, &[], 2, 0.0),
            Err(ConvexityError::EmptySamples)
        ));

        // squared reparameterization pushes the margin to chi'(t0) * 4
        let t0 = samples.iter().map(|x| r1(x)).fold(f64::INFINITY, f64::min);
        let comp = Reparameterized {
            base: &FirstPair,
            chi: Chi::Square,
        };
        let rep = is_k_plurisubharmonic(&comp, &samples, 2, 8.0 * t0).unwrap();
        assert!(rep.pass, "min {} against {}", rep.min_eig, 8.0 * t0);
    }

    #[test]
    fn chain_rule_gap_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        struct FirstPair;
        impl C2Fn for FirstPair {
            fn value(&self, x: &[f64; 4]) -> f64 {
                x[0] * x[0] + x[1] * x[1]
            }
            fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
                [2.0 * x[0], 2.0 * x[1], 0.0, 0.0]
            }
            fn hessian(&self, _x: &[f64; 4]) -> [[f64; 4]; 4] {
                let mut h = [[0.0; 4]; 4];
                h[0][0] = 2.0;
                h[1][1] = 2.0;
                h
            }
        }

        // identity chi: the gap vanishes
        let x = [0.3, -0.2, 0.1, 0.4];
        let gap = chain_rule_gap(&FirstPair, Chi::Identity, &x, 2).unwrap();
        assert!(gap.matrix().iter().all(|v| v.norm() < 1e-12));

        // squared chi at k = 2
        let gap = chain_rule_gap(&FirstPair, Chi::Square, &x, 2).unwrap();
        assert!(gap.weighted_min_eig() >= -1e-10);

        // exp chi over a random quadratic at k = 3, 50 points
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
        struct Quad([f64; 4]);
        impl C2Fn for Quad {
            fn value(&self, x: &[f64; 4]) -> f64 {
                (0..4).map(|a| self.0[a] * x[a] * x[a]).sum()
            }
            fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
                std::array::from_fn(|a| 2.0 * self.0[a] * x[a])
            }
            fn hessian(&self, _x: &[f64; 4]) -> [[f64; 4]; 4] {
                let mut h = [[0.0; 4]; 4];
                for a in 0..4 {
                    h[a][a] = 2.0 * self.0[a];
                }
                h
            }
        }
        let quad = Quad(q);
        for _ in 0..50 {
            let x: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            for chi in [Chi::Exp, Chi::Softplus] {
                let gap = chain_rule_gap(&quad, chi, &x, 3).unwrap();
                assert!(gap.weighted_min_eig() >= -1e-10, "chi {:?}", chi);
                // the gap is the form of the rank-one Hessian chi'' g g^T
                let (_, _, d2) = chi.eval(quad.value(&x));
                let g = quad.gradient(&x);
                let mut rank1 = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        rank1[i][j] = d2 * g[i] * g[j];
                    }
                }
                let direct = levi_of_hessian(3, &rank1);
                let diff = gap.sub(&direct);
                assert!(diff.matrix().iter().all(|v| v.norm() < 1e-10));
            }
        }

        // concave chi is refused
        let err = chain_rule_gap(
            &quad,
            Chi::Quadratic {
                lin: 1.0,
                quad: -1.0,
            },
            &x,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, ConvexityError::ConcaveReparam { .. }));
    }
}
