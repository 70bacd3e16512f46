//! Principal symbols of the adjoint pair at a cotangent direction: replace
//! each d_j in the first-order coefficient tables by xi_j and collect the
//! results into two small matrices on reduced coordinates. The facts the
//! density argument needs are finite-dimensional statements about these
//! matrices — the rank of the adjoint symbol, the dimension of its kernel,
//! and that the second symbol sees all of that kernel — and this module
//! exposes exactly those.

use crate::convexity::NULLSPACE_RTOL;
use crate::operators::VectorFieldTable;
use crate::C64;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SymbolError {
    #[error("symbol direction must be nonzero")]
    ZeroDirection,
}

/// Symbol matrices at one direction.
///
/// * `l4`: (k+1) x 2k, the adjoint of the first operator. Row m carries
///   the fractions (k-m)/k against the 0'-raised fields in the class-m
///   columns and m/k against the 1'-raised fields in the class-(m-1)
///   columns.
/// * `m4`: (k-1) x 2k, the second operator. Row l is the four-entry
///   stencil (1/2)(-xi1+i xi2, -xi3-i xi4, xi3-i xi4, -xi1-i xi2) sitting
///   in columns 2l..2l+3.
#[derive(Debug, Clone)]
pub struct SymbolMatrices {
    k: usize,
    xi: [f64; 4],
    l4: DMatrix<C64>,
    m4: DMatrix<C64>,
}

impl SymbolMatrices {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn xi(&self) -> &[f64; 4] {
        &self.xi
    }

    pub fn l4(&self) -> &DMatrix<C64> {
        &self.l4
    }

    pub fn m4(&self) -> &DMatrix<C64> {
        &self.m4
    }
}

pub fn build_symbols(xi: &[f64; 4], k: usize) -> Result<SymbolMatrices, SymbolError> {
    assert!(k >= 2, "the complex needs k >= 2");
    if xi.iter().all(|&v| v == 0.0) {
        return Err(SymbolError::ZeroDirection);
    }
    let v = VectorFieldTable::standard();
    let raised = |a: usize, ap: usize| VectorFieldTable::symbol(&v.raised[a][ap], xi);
    let mixed = |a: usize, ap: usize| VectorFieldTable::symbol(&v.mixed[a][ap], xi);

    let mut l4 = DMatrix::<C64>::zeros(k + 1, 2 * k);
    for m in 0..=k {
        for a in 0..2 {
            if m < k {
                l4[(m, 2 * m + a)] += raised(a, 0) * ((k - m) as f64 / k as f64);
            }
            if m >= 1 {
                l4[(m, 2 * (m - 1) + a)] += raised(a, 1) * (m as f64 / k as f64);
            }
        }
    }

    let mut m4 = DMatrix::<C64>::zeros(k - 1, 2 * k);
    for l in 0..k - 1 {
        m4[(l, 2 * l)] = -mixed(1, 0) * 0.5;
        m4[(l, 2 * l + 1)] = mixed(0, 0) * 0.5;
        m4[(l, 2 * l + 2)] = -mixed(1, 1) * 0.5;
        m4[(l, 2 * l + 3)] = mixed(0, 1) * 0.5;
    }

    Ok(SymbolMatrices {
        k,
        xi: *xi,
        l4,
        m4,
    })
}

fn rank_of(a: &DMatrix<C64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > NULLSPACE_RTOL * smax).count()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct KernelReport {
    pub k: usize,
    pub rank_l4: usize,
    pub dim_ker_l4: usize,
    /// dim(ker l4 intersect ker m4), the obstruction the density argument
    /// rules out.
    pub dim_ker_intersection: usize,
}

/// Ranks and kernel dimensions by SVD with the relative threshold
/// [`NULLSPACE_RTOL`]. The kernel intersection is the nullity of the two
/// matrices stacked.
pub fn kernel_report(s: &SymbolMatrices) -> KernelReport {
    let k = s.k;
    let rank_l4 = rank_of(&s.l4);
    let dim_ker_l4 = 2 * k - rank_l4;
    let stacked = DMatrix::from_fn(2 * k, 2 * k, |r, c| {
        if r < k + 1 {
            s.l4[(r, c)]
        } else {
            s.m4[(r - (k + 1), c)]
        }
    });
    let dim_ker_intersection = 2 * k - rank_of(&stacked);
    KernelReport {
        k,
        rank_l4,
        dim_ker_l4,
        dim_ker_intersection,
    }
}

/// Determinant of the 2x2 block of raised-field symbols over the Gaussian
/// integers, for an integer direction: rows indexed by the raised primed
/// index, columns by the unprimed one. Returns (re, im); the identity
/// says this equals (|xi|^2, 0), exactly.
///
/// The entries come out of the coefficient table (whose entries are exact
/// units), so this shares no arithmetic with the floating-point path.
pub fn raised_block_det_exact(xi: &[i128; 4]) -> (i128, i128) {
    let v = VectorFieldTable::standard();
    let entry = |a: usize, ap: usize| -> (i128, i128) {
        let mut re = 0i128;
        let mut im = 0i128;
        for j in 0..4 {
            let c = v.raised[a][ap][j];
            re += c.re as i128 * xi[j];
            im += c.im as i128 * xi[j];
        }
        (re, im)
    };
    let mul = |x: (i128, i128), y: (i128, i128)| (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0);
    // det [[s(0,0'), s(1,0')], [s(0,1'), s(1,1')]]
    let a = mul(entry(0, 0), entry(1, 1));
    let b = mul(entry(1, 0), entry(0, 1));
    (a.0 - b.0, a.1 - b.1)
}

// ---------------------------------------------------------------------------
