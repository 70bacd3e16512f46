// Temporary measurement probe — deleted before release.
use fueter::fields::{DomainSpec, Grid4, GridDomain, PolyScalar, Weight};
use fueter::neumann::{weighted_norm, NeumannSystem, Space};
use fueter::operators::{apply_d0, FieldKind, SpinorField, VectorFieldTable};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn manufactured_f(k: usize, seed: u64) -> Vec<PolyScalar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<PolyScalar> = (0..=k).map(|_| PolyScalar::random_int(3, &mut rng)).collect();
    let u0 = SpinorField::new(FieldKind::Sym(k), comps);
    let f = apply_d0(&u0, &VectorFieldTable::standard());
    f.comps().to_vec()
}

#[test]
#[ignore]
fn probe_canonical_trend() {
    let kappa = 0.125;
    let k = 2usize;
    let f_polys = manufactured_f(k, 2024);
    for (n, tol) in [(8usize, 1e-11), (12, 1e-12), (16, 1e-13)] {
        let t0 = Instant::now();
        let grid = Grid4::new(n, -1.1, 1.1);
        let dom = GridDomain::masked(grid, DomainSpec::Ball { radius: 1.0 }).unwrap();
        let sys = NeumannSystem::assemble(k, &dom, Weight::sqnorm(kappa)).unwrap();
        let f = sys.sample_flat(&f_polys);
        let fw = sys.metric(Space::Mixed);
        let fnorm = weighted_norm(fw, &f);
        match sys.canonical_solve(&f, tol, 150000, 1e-6) {
            Ok(out) => {
                let overlap = sys.kernel_overlap(&out.u);
                let consts = sys.compute_constants().unwrap();
                let energy = (out.d0_star_nf_norm.powi(2) + out.d1_nf_norm.powi(2))
                    / (out.f_norm.powi(2) / consts.c0);
                let nf_c0 = out.nf_norm * consts.c0 / out.f_norm;
                println!(
                    "n={:2} closed={:.3e} iters={} conv={} cgres={:.3e} resid={:.6e} overlap={:.3e} unorm={:.3} energy_ratio={:.4e} nf_c0={:.4e} t={:.1}s",
                    n,
                    out.closedness,
                    out.stats.iterations,
                    out.stats.converged,
                    out.stats.relative_residual,
                    out.residual,
                    overlap,
                    out.u_norm,
                    energy,
                    nf_c0,
                    t0.elapsed().as_secs_f64()
                );
                // breakdown: redo the solve to get w, then split the residual
                let (wv, _) = sys.solve_box(&f, 1e-8, 30000);
                let d1w = sys.d1().apply(&wv);
                let a1s = sys.d1().adjoint_apply(&d1w);
                let wt = sys.metric(Space::TwoForm);
                let bx = sys.box_apply(&wv);
                let mut boxdef = bx.clone();
                for (b, fi) in boxdef.iter_mut().zip(&f) {
                    *b -= fi;
                }
                let mut boxdef_t = boxdef.clone();
                sys.band_project(&mut boxdef_t);
                let full = weighted_norm(fw, &boxdef);
                let tang = weighted_norm(fw, &boxdef_t);
                println!(
                    "      |A1w|={:.3e} |A1*A1w|/|f|={:.3e} |(boxw-f)|/|f|={:.3e} tang-part={:.3e} |(I-P)f|/|f|={:.3e}",
                    weighted_norm(wt, &d1w),
                    weighted_norm(fw, &a1s) / fnorm,
                    full / fnorm,
                    tang / fnorm,
                    {
                        let mut pf = f.clone();
                        sys.band_project(&mut pf);
                        let mut nf = f.clone();
                        for (a, b) in nf.iter_mut().zip(&pf) {
                            *a -= b;
                        }
                        weighted_norm(fw, &nf) / fnorm
                    }
                );
                // residual split: band-reach dofs vs deep interior
                let mut d0u = sys.d0().apply(&out.u);
                for (a, b) in d0u.iter_mut().zip(&f) {
                    *a -= b;
                }
                let nd = sys.domain().dof_count();
                let deep: Vec<bool> = (0..nd)
                    .map(|d| fueter::neumann::beyond_band_reach(sys.domain(), d))
                    .collect();
                let (mut s_in, mut s_out) = (0.0f64, 0.0f64);
                for c in 0..2 * k {
                    for d in 0..nd {
                        let v = d0u[c * nd + d].norm_sqr() * fw[c * nd + d];
                        if deep[d] {
                            s_in += v;
                        } else {
                            s_out += v;
                        }
                    }
                }
                println!(
                    "      resid deep-interior={:.3e} band-reach={:.3e}",
                    s_in.sqrt() / fnorm,
                    s_out.sqrt() / fnorm
                );
            }
            Err(e) => println!("n={:2} ERR {:?}", n, e),
        }
    }
}

#[test]
#[ignore]
fn probe_bergman() {
    let k = 2usize;
    for n in [8usize, 12] {
        let t0 = Instant::now();
        let grid = Grid4::new(n, -1.1, 1.1);
        let dom = GridDomain::masked(grid, DomainSpec::Ball { radius: 1.0 }).unwrap();
        let sys = NeumannSystem::assemble(k, &dom, Weight::sqnorm(0.125)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comps: Vec<PolyScalar> =
            (0..=k).map(|_| PolyScalar::random_int(3, &mut rng)).collect();
        let u = sys.sample_flat(&comps);
        let w = sys.metric(Space::Sym);
        let unorm = weighted_norm(w, &u);
        let (pu, s1) = sys.bergman_project(&u, 1e-10, 30000);
        let (ppu, s2) = sys.bergman_project(&pu, 1e-10, 30000);
        let mut diff = ppu.clone();
        for (d, p) in diff.iter_mut().zip(&pu) {
            *d -= p;
        }
        let idem = weighted_norm(w, &diff) / unorm;
        println!(
            "n={:2} idem={:.3e} iters=({},{}) conv=({},{}) t={:.1}s",
            n,
            idem,
            s1.iterations,
            s2.iterations,
            s1.converged,
            s2.converged,
            t0.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn probe_compact_stokes() {
    use fueter::fields::{DomainSpec as DS, Weight as W};
    use fueter::operators::{stokes_residual_compact, CompactField, VectorFieldTable as VT};
    let v = VT::standard();
    let d = DS::Ball { radius: 1.0 };
    let w = W::sqnorm(0.125);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (rho, order) in [(1.0, 4u32), (1.0, 6), (1.0, 8), (1.0, 10)] {
        let a = CompactField::new(PolyScalar::random_int(1, &mut rng), rho, order);
        let b = CompactField::new(PolyScalar::random_int(1, &mut rng), rho, order);
        for n in [12usize, 16, 24] {
            let mut worst = 0.0f64;
            for ai in 0..2 {
                for ap in 0..2 {
                    let r = stokes_residual_compact(&v, ai, ap, &a, &b, &d, &w, n).unwrap();
                    worst = worst.max(r.norm());
                }
            }
            println!("rho={} order={} n={:2} worst={:.3e}", rho, order, n, worst);
        }
    }
}

#[test]
#[ignore]
fn probe_poly_stokes() {
    use fueter::fields::{DomainSpec, Weight, PolyScalar};
    use fueter::operators::{stokes_residual, VectorFieldTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    let v = VectorFieldTable::standard();
    let d = DomainSpec::Ball { radius: 1.0 };
    let w = Weight::sqnorm(0.125);
    for seed in [7u64, 21, 42, 77, 2024] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = PolyScalar::random_int(2, &mut rng);
        let b = PolyScalar::random_int(2, &mut rng);
        let mut vals = Vec::new();
        for n in [8usize, 12, 16] {
            let mut worst = 0.0f64;
            for ai in 0..2 {
                for api in 0..2 {
                    let r = stokes_residual(&v, ai, api, &a, &b, &d, &w, n, 2 * n).unwrap();
                    worst = worst.max(r.norm());
                }
            }
            vals.push(worst);
        }
        let order = (vals[0] / vals[2]).ln() / (16f64 / 8.0).ln();
        println!("seed={:4} vals={:.3e} {:.3e} {:.3e} order={:.2} mono={}",
            seed, vals[0], vals[1], vals[2], order, vals[0] > vals[1] && vals[1] > vals[2]);
    }
    // constant fields, zero weight: volume term vanishes by oddness of the
    // coefficients; the surface term alone must converge to zero too
    let one = PolyScalar::constant(num_complex::Complex64::new(1.0, 0.0));
    let w0 = Weight::zero();
    for n in [8usize, 12, 16, 24] {
        let r = stokes_residual(&v, 0, 0, &one, &one, &d, &w0, n, 2 * n).unwrap();
        println!("const stokes n={:2} resid={:.3e}", n, r.norm());
    }
}
