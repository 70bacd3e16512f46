//! JSON-configured experiment driver behind the `fueter-neumann` binary.
//!
//! A config file selects a spinor weight `k`, a domain, a weight function,
//! a grid, solver knobs, and a list of verification suites. [`run`]
//! executes the suites and produces a [`RunReport`] whose JSON form is
//! byte-identical across reruns with the same config and seed (the
//! timestamp lives in its own field). [`report_convergence`] repeats the
//! grid-dependent measurements over a list of resolutions and renders a
//! CSV table; [`verify`] sweeps the exact polynomial suites over a range
//! of `k`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convexity::{chain_rule_gap, is_k_pseudoconvex, levi_matrix, Chi};
use crate::fields::{DomainSpec, FieldScalar, Grid4, GridDomain, PolyScalar, Weight};
use crate::neumann::{weighted_ip, weighted_norm, NeumannSystem, Space};
use crate::operators::{
    apply_d0, apply_d1, commutator_check, stokes_residual, stokes_residual_compact, CompactField,
    FieldKind, SpinorField, VectorFieldTable,
};
use crate::symbols::{build_symbols, kernel_report, raised_block_det_exact};
use crate::C64;

// ---------------------------------------------------------------------------
// configuration

pub const K_MIN: usize = 2;
pub const K_MAX: usize = 8;

/// Identifier of the PRNG driving every randomized sweep, recorded in the
/// report so a reader can reproduce the streams outside this crate.
pub const RNG_ALGORITHM: &str = "ChaCha8 (seeded per config)";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Spinor weight of the complex; the first operator acts on
    /// `Sym^k`-valued fields.
    pub k: usize,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub suites: Vec<Suite>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

fn default_seed() -> u64 {
    2024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Ball {
        #[serde(default = "default_radius")]
        radius: f64,
    },
}

fn default_radius() -> f64 {
    1.0
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig::Ball { radius: 1.0 }
    }
}

impl DomainConfig {
    pub fn spec(&self) -> DomainSpec {
        match *self {
            DomainConfig::Ball { radius } => DomainSpec::Ball { radius },
        }
    }

    fn radius(&self) -> f64 {
        match *self {
            DomainConfig::Ball { radius } => radius,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFormConfig {
    /// `phi = 0` (unweighted L^2).
    Zero,
    /// `phi = kappa |x|^2`.
    Sqnorm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub form: WeightFormConfig,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    0.125
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            form: WeightFormConfig::Sqnorm,
            kappa: default_kappa(),
        }
    }
}

impl WeightConfig {
    pub fn weight(&self) -> Weight {
        match self.form {
            WeightFormConfig::Zero => Weight::zero(),
            WeightFormConfig::Sqnorm => Weight::sqnorm(self.kappa),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per axis of the bounding box.
    pub n: usize,
    /// Half-width of the bounding box, which spans `[-bounds, bounds]^4`.
    pub bounds: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 12, bounds: 1.1 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative tolerance of the iterative solves.
    pub tol: f64,
    /// Iteration cap; when absent, `10 * sqrt(dof)` of the space being
    /// solved, floored at 1000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maxiter: Option<usize>,
    /// Multiplicative slack accepted on the energy bounds.
    pub slack: f64,
    /// Relative closedness gate for canonical solves.
    pub closed_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            maxiter: None,
            slack: 1.25,
            closed_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    fn maxiter_for(&self, dof: usize) -> usize {
        self.maxiter
            .unwrap_or_else(|| (10.0 * (dof as f64).sqrt()).ceil().max(1000.0) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Exact polynomial operator identities.
    Identities,
    /// Weight curvature, domain pseudoconvexity, reparameterization gaps.
    Convexity,
    /// Principal-symbol rank/kernel facts and the exact determinant identity.
    Symbols,
    /// Integration-by-parts residuals with and without boundary terms.
    Stokes,
    /// Discrete solver soundness, canonical solution, projection.
    Solve,
    /// Coercivity-constant probe for the weighted estimate.
    Estimate,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Identities,
        Suite::Convexity,
        Suite::Symbols,
        Suite::Stokes,
        Suite::Solve,
        Suite::Estimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Convexity => "convexity",
            Suite::Symbols => "symbols",
            Suite::Stokes => "stokes",
            Suite::Solve => "solve",
            Suite::Estimate => "estimate",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: String,
    #[serde(default)]
    pub format: OutputFormat,
    /// When set, the assembled first-operator matrix is written here in
    /// coordinate-list form (`rows cols nnz` header, then `row col re im`
    /// lines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_dump: Option<String>,
}

// ---------------------------------------------------------------------------
// errors

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Anything wrong with the config file or its values; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn load_config(path: &str) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.k < K_MIN || cfg.k > K_MAX {
        return Err(CliError::Config(format!(
            "k = {} outside the allowed range [{K_MIN}, {K_MAX}]",
            cfg.k
        )));
    }
    if cfg.suites.is_empty() {
        return Err(CliError::Config("no suites requested".into()));
    }
    if cfg.grid.n < 4 {
        return Err(CliError::Config(format!(
            "grid.n = {} too small (need at least 4 cells per axis)",
            cfg.grid.n
        )));
    }
    if cfg.grid.bounds <= cfg.domain.radius() {
        return Err(CliError::Config(format!(
            "grid.bounds = {} must exceed the domain radius {}",
            cfg.grid.bounds,
            cfg.domain.radius()
        )));
    }
    if !(cfg.solver.tol > 0.0 && cfg.solver.tol < 1.0) {
        return Err(CliError::Config(format!(
            "solver.tol = {} outside (0, 1)",
            cfg.solver.tol
        )));
    }
    if cfg.solver.slack < 1.0 {
        return Err(CliError::Config(format!(
            "solver.slack = {} must be at least 1",
            cfg.solver.slack
        )));
    }
    if cfg.weight.kappa < 0.0 {
        return Err(CliError::Config(format!(
            "weight.kappa = {} must be nonnegative",
            cfg.weight.kappa
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report structure

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Compare {
    AtMost,
    AtLeast,
}

/// One measured quantity with its acceptance threshold. Reports carry the
/// measured values themselves, not just pass/fail verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub compare: Compare,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            compare: Compare::AtMost,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            compare: Compare::AtLeast,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SuiteReport {
    fn from_checks(suite: Suite, checks: Vec<Check>) -> Self {
        SuiteReport {
            suite: suite.name(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            error: None,
        }
    }

    fn failed(suite: Suite, error: String) -> Self {
        SuiteReport {
            suite: suite.name(),
            pass: false,
            checks: Vec::new(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    /// Wall-clock seconds since the Unix epoch. Kept in its own field so
    /// that the rest of the report is reproducible byte-for-byte.
    pub generated_unix_seconds: u64,
    pub rng_algorithm: &'static str,
    pub config: ExperimentConfig,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,check,value,threshold,compare,pass\n");
        use std::fmt::Write;
        for s in &self.suites {
            for c in &s.checks {
                let cmp = match c.compare {
                    Compare::AtMost => "at_most",
                    Compare::AtLeast => "at_least",
                };
                writeln!(
                    out,
                    "{},{},{:.9e},{:.9e},{},{}",
                    s.suite, c.name, c.value, c.threshold, cmp, c.pass
                )
                .unwrap();
            }
        }
        out
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// suite drivers

/// Deduplicate while keeping the canonical execution order.
fn ordered_suites(requested: &[Suite]) -> Vec<Suite> {
    Suite::ALL
        .iter()
        .copied()
        .filter(|s| requested.contains(s))
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let mut suites = Vec::new();
    for suite in ordered_suites(&cfg.suites) {
        let report = match suite {
            Suite::Identities => identities_suite(cfg),
            Suite::Convexity => convexity_suite(cfg),
            Suite::Symbols => symbols_suite(cfg),
            Suite::Stokes => stokes_suite(cfg),
            Suite::Solve => solve_suite(cfg),
            Suite::Estimate => estimate_suite(cfg),
        };
        suites.push(report);
    }
    if let Some(out) = &cfg.output {
        if let Some(dump_path) = &out.matrix_dump {
            dump_first_operator(cfg, dump_path)?;
        }
    }
    let pass = suites.iter().all(|s| s.pass);
    Ok(RunReport {
        schema: "fueter-neumann/report/v1",
        generated_unix_seconds: unix_now(),
        rng_algorithm: RNG_ALGORITHM,
        config: cfg.clone(),
        suites,
        pass,
    })
}

/// Write the report where the config asks for it (or to stdout when no
/// output block is present). Returns the process exit code.
pub fn emit_report(cfg: &ExperimentConfig, report: &RunReport) -> Result<i32, CliError> {
    let body = match cfg.output.as_ref().map(|o| o.format).unwrap_or_default() {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Csv => report.to_csv(),
    };
    match &cfg.output {
        Some(out) => {
            std::fs::write(&out.path, &body).map_err(|source| CliError::Io {
                path: out.path.clone(),
                source,
            })?;
        }
        None => println!("{body}"),
    }
    for s in &report.suites {
        let verdict = if s.pass { "pass" } else { "FAIL" };
        match &s.error {
            Some(e) => eprintln!("suite {:<10} {} ({e})", s.suite, verdict),
            None => eprintln!("suite {:<10} {} ({} checks)", s.suite, verdict, s.checks.len()),
        }
    }
    Ok(if report.pass { 0 } else { 1 })
}

fn random_sym_polys(k: usize, deg: usize, rng: &mut ChaCha8Rng) -> Vec<PolyScalar> {
    (0..=k).map(|_| PolyScalar::random_int(deg, rng)).collect()
}

fn random_ball_point(radius: f64, rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let x = [
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
        ];
        if x.iter().map(|v| v * v).sum::<f64>() < radius * radius * 0.96 {
            return x;
        }
    }
}

fn identities_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let v = VectorFieldTable::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.k;
    let mut checks = Vec::new();

    // the complex property: the second operator annihilates the image of
    // the first, coefficient by coefficient
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let u = SpinorField::new(FieldKind::Sym(k), random_sym_polys(k, 4, &mut rng));
        let g = apply_d1(&apply_d0(&u, &v), &v);
        for p in g.comps() {
            worst = worst.max(p.norm_max());
        }
    }
    checks.push(Check::at_most("d1_after_d0_max_coefficient", worst, 1e-12));

    // conjugating the mixed-index fields lands on minus the raised-index
    // fields when applied to real scalars
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let f = PolyScalar::random_int_real(3, &mut rng);
        for a in 0..2 {
            for ap in 0..2 {
                let defect = v
                    .apply_mixed(a, ap, &f)
                    .conj()
                    .add(&v.apply_raised(a, ap, &f));
                worst = worst.max(defect.norm_max());
            }
        }
    }
    checks.push(Check::at_most("conjugation_max_coefficient", worst, 1e-12));

    // commutator of a field with a weighted delta reproduces the second
    // derivative of the weight
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let phi = PolyScalar::random_int_real(3, &mut rng);
        let w = match Weight::poly(phi, 1.0) {
            Ok(w) => w,
            Err(e) => {
                return SuiteReport::failed(Suite::Identities, format!("weight build: {e}"));
            }
        };
        let pts: Vec<[f64; 4]> = (0..8)
            .map(|_| random_ball_point(cfg.domain.radius(), &mut rng))
            .collect();
        worst = worst.max(commutator_check(&v, &w, &pts));
    }
    checks.push(Check::at_most("commutator_max_residual", worst, 1e-12));

    SuiteReport::from_checks(Suite::Identities, checks)
}

fn convexity_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let k = cfg.k;
    let d = cfg.domain.spec();
    let w = cfg.weight.weight();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    // strict pseudoconvexity of the domain on random boundary samples
    let samples: Vec<[f64; 4]> = d
        .boundary_samples(50, &mut rng)
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    let c_expect = (2 * k + 2) as f64 / (cfg.domain.radius() * cfg.domain.radius());
    match is_k_pseudoconvex(&d, &samples, k, c_expect) {
        Ok(rep) => {
            checks.push(Check::at_least(
                "boundary_min_tangential_eigenvalue",
                rep.min_constrained_eig,
                c_expect - 1e-6,
            ));
            checks.push(Check::at_most(
                "degenerate_boundary_samples",
                rep.degenerate_samples as f64,
                0.0,
            ));
        }
        Err(e) => return SuiteReport::failed(Suite::Convexity, format!("pseudoconvexity: {e}")),
    }

    // curvature form of the weight: for the quadratic weight the weighted
    // eigenvalues are constant and strictly positive
    let expected = match cfg.weight.form {
        WeightFormConfig::Zero => 0.0,
        WeightFormConfig::Sqnorm => 12.0 * cfg.weight.kappa,
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = random_ball_point(cfg.domain.radius(), &mut rng);
        let m = levi_matrix(&w, &x, k).weighted_min_eig();
        worst = worst.max((m - expected).abs());
    }
    checks.push(Check::at_most(
        "weight_curvature_deviation_from_constant",
        worst,
        1e-10,
    ));

    // convex reparameterizations can only add curvature
    let catalog = [
        Chi::Square,
        Chi::Exp,
        Chi::Softplus,
        Chi::Quadratic {
            lin: 1.0,
            quad: 0.5,
        },
    ];
    let mut min_gap = f64::INFINITY;
    for chi in catalog {
        for _ in 0..10 {
            let x = random_ball_point(cfg.domain.radius(), &mut rng);
            match chain_rule_gap(&w, chi, &x, k) {
                Ok(form) => min_gap = min_gap.min(form.weighted_min_eig()),
                Err(e) => {
                    return SuiteReport::failed(Suite::Convexity, format!("chain rule: {e}"))
                }
            }
        }
    }
    checks.push(Check::at_least(
        "reparameterization_gap_min_eigenvalue",
        min_gap,
        -1e-9,
    ));

    SuiteReport::from_checks(Suite::Convexity, checks)
}

fn symbols_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    let mut rank_fail = 0usize;
    let mut ker_fail = 0usize;
    let mut joint_fail = 0usize;
    for _ in 0..100 {
        let xi = loop {
            let cand: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if cand.iter().map(|v| v * v).sum::<f64>() > 0.05 {
                break cand;
            }
        };
        let s = match build_symbols(&xi, k) {
            Ok(s) => s,
            Err(e) => return SuiteReport::failed(Suite::Symbols, format!("symbols: {e}")),
        };
        let rep = kernel_report(&s);
        if rep.rank_l4 != k + 1 {
            rank_fail += 1;
        }
        if rep.dim_ker_l4 != k - 1 {
            ker_fail += 1;
        }
        if rep.dim_ker_intersection != 0 {
            joint_fail += 1;
        }
    }
    checks.push(Check::at_most("first_symbol_rank_failures", rank_fail as f64, 0.0));
    checks.push(Check::at_most(
        "first_symbol_kernel_dim_failures",
        ker_fail as f64,
        0.0,
    ));
    checks.push(Check::at_most(
        "joint_kernel_nontrivial_count",
        joint_fail as f64,
        0.0,
    ));

    // determinant of the raised-field block over the Gaussian integers
    let mut det_fail = 0usize;
    for _ in 0..20 {
        let xi: [i128; 4] = [
            rng.gen_range(-9i32..=9) as i128,
            rng.gen_range(-9i32..=9) as i128,
            rng.gen_range(-9i32..=9) as i128,
            rng.gen_range(-9i32..=9) as i128,
        ];
        if xi == [0, 0, 0, 0] {
            continue;
        }
        let (re, im) = raised_block_det_exact(&xi);
        let sq: i128 = xi.iter().map(|v| v * v).sum();
        if re != sq || im != 0 {
            det_fail += 1;
        }
    }
    checks.push(Check::at_most(
        "raised_block_determinant_mismatches",
        det_fail as f64,
        0.0,
    ));

    SuiteReport::from_checks(Suite::Symbols, checks)
}

fn stokes_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let v = VectorFieldTable::standard();
    let d = cfg.domain.spec();
    let w = cfg.weight.weight();
    let radius = cfg.domain.radius();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    // compactly supported fields: no boundary term, so the residual is
    // pure volume-quadrature error and drops steeply with resolution
    let a = CompactField::new(PolyScalar::random_int(1, &mut rng), radius, 10);
    let b = CompactField::new(PolyScalar::random_int(1, &mut rng), radius, 10);
    let mut worst = 0.0f64;
    for ai in 0..2 {
        for api in 0..2 {
            match stokes_residual_compact(&v, ai, api, &a, &b, &d, &w, cfg.grid.n) {
                Ok(r) => worst = worst.max(r.norm()),
                Err(e) => return SuiteReport::failed(Suite::Stokes, format!("compact: {e}")),
            }
        }
    }
    // the tight absolute target needs the fine grid; coarser runs get a
    // slack threshold consistent with the observed convergence rate
    let compact_thr = if cfg.grid.n >= 16 { 1e-8 } else { 1e-4 };
    checks.push(Check::at_most(
        "compact_support_residual",
        worst,
        compact_thr,
    ));

    // general polynomial fields: surface term present; the residual must
    // decrease monotonically under refinement at first order or better
    let pa = PolyScalar::random_int(2, &mut rng);
    let pb = PolyScalar::random_int(2, &mut rng);
    let mut vals = Vec::new();
    for n in [8usize, 12, 16] {
        let mut worst = 0.0f64;
        for ai in 0..2 {
            for api in 0..2 {
                match stokes_residual(&v, ai, api, &pa, &pb, &d, &w, n, 2 * n) {
                    Ok(r) => worst = worst.max(r.norm()),
                    Err(e) => return SuiteReport::failed(Suite::Stokes, format!("general: {e}")),
                }
            }
        }
        vals.push(worst);
    }
    let violations = vals.windows(2).filter(|p| p[1] >= p[0]).count();
    checks.push(Check::at_most(
        "general_field_monotonicity_violations",
        violations as f64,
        0.0,
    ));
    let order = (vals[0] / vals[2]).ln() / 2f64.ln();
    checks.push(Check::at_least("general_field_convergence_order", order, 1.0));

    SuiteReport::from_checks(Suite::Stokes, checks)
}

fn assemble_system(cfg: &ExperimentConfig) -> Result<NeumannSystem, String> {
    let grid = Grid4::new(cfg.grid.n, -cfg.grid.bounds, cfg.grid.bounds);
    let dom = GridDomain::masked(grid, cfg.domain.spec()).map_err(|e| e.to_string())?;
    NeumannSystem::assemble(cfg.k, &dom, cfg.weight.weight()).map_err(|e| e.to_string())
}

fn random_flat(len: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..len)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn solve_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let sys = match assemble_system(cfg) {
        Ok(s) => s,
        Err(e) => return SuiteReport::failed(Suite::Solve, e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();
    let nd = sys.flat_len(Space::Mixed);
    let maxiter = cfg.solver.maxiter_for(nd);
    let w_mixed = Arc::clone(sys.metric(Space::Mixed));
    let w_sym = Arc::clone(sys.metric(Space::Sym));
    let w_two = Arc::clone(sys.metric(Space::TwoForm));

    // discrete adjoints are exact with respect to the weighted metrics
    checks.push(Check::at_most(
        "adjoint_pairing_defect",
        sys.adjoint_pairing_defect(cfg.seed),
        1e-12,
    ));

    // the box operator is self-adjoint, nonnegative, and satisfies the
    // energy identity against its two constituent operators
    let ga = random_flat(nd, &mut rng);
    let gb = random_flat(nd, &mut rng);
    let box_a = sys.box_apply(&ga);
    let box_b = sys.box_apply(&gb);
    let na = weighted_norm(&w_mixed, &ga);
    let nb = weighted_norm(&w_mixed, &gb);
    let sym_defect = (weighted_ip(&w_mixed, &box_a, &gb) - weighted_ip(&w_mixed, &ga, &box_b))
        .norm()
        / (na * nb);
    checks.push(Check::at_most("box_self_adjointness_defect", sym_defect, 1e-12));
    let quad = weighted_ip(&w_mixed, &box_a, &ga);
    checks.push(Check::at_least(
        "box_min_rayleigh_quotient",
        quad.re / (na * na),
        -1e-12,
    ));
    let d0s = sys.d0().adjoint_apply(&ga);
    let d1a = sys.d1().apply(&ga);
    let energy = weighted_norm(&w_sym, &d0s).powi(2) + weighted_norm(&w_two, &d1a).powi(2);
    checks.push(Check::at_most(
        "box_energy_identity_defect",
        (quad.re - energy).abs() / (na * na),
        1e-12,
    ));

    // conjugate gradients on a manufactured right-hand side recovers the
    // field it was built from
    let mut f0 = random_flat(nd, &mut rng);
    sys.band_project(&mut f0);
    let rhs = sys.box_apply(&f0);
    let (rec, stats) = sys.solve_box(&rhs, cfg.solver.tol.min(1e-9), maxiter.max(5000));
    checks.push(Check::at_most(
        "cg_operator_residual",
        stats.relative_residual,
        1e-8,
    ));
    let diff: Vec<C64> = rec.iter().zip(&f0).map(|(r, f)| r - f).collect();
    checks.push(Check::at_most(
        "cg_recovery_relative_error",
        weighted_norm(&w_mixed, &diff) / weighted_norm(&w_mixed, &f0),
        1e-6,
    ));

    // canonical solve on discretely closed manufactured data
    let u0 = random_sym_polys(cfg.k, 3, &mut rng);
    let f_polys = apply_d0(
        &SpinorField::new(FieldKind::Sym(cfg.k), u0),
        &VectorFieldTable::standard(),
    );
    let f = sys.sample_flat(f_polys.comps());
    match sys.canonical_solve(&f, cfg.solver.tol, maxiter.max(20000), cfg.solver.closed_tol) {
        Ok(out) => {
            checks.push(Check::at_most("canonical_residual", out.residual, 1e-6));
            checks.push(Check::at_most(
                "canonical_kernel_overlap",
                sys.kernel_overlap(&out.u),
                1e-6,
            ));
            match sys.compute_constants() {
                Ok(consts) if consts.c0 > 0.0 => {
                    let energy = out.d0_star_nf_norm.powi(2) + out.d1_nf_norm.powi(2);
                    checks.push(Check::at_most(
                        "energy_bound_ratio",
                        energy * consts.c0 / out.f_norm.powi(2),
                        cfg.solver.slack,
                    ));
                    checks.push(Check::at_most(
                        "inverse_norm_bound_ratio",
                        out.nf_norm * consts.c0 / out.f_norm,
                        cfg.solver.slack,
                    ));
                }
                _ => {}
            }
        }
        Err(e) => return SuiteReport::failed(Suite::Solve, format!("canonical solve: {e}")),
    }

    // the projection onto the discrete kernel is idempotent and fixes
    // kernel elements; the trial field is smooth (sampled polynomial) like
    // the data the solver is meant for
    let trial = sys.sample_flat(&random_sym_polys(cfg.k, 3, &mut rng));
    let proj_tol = cfg.solver.tol.min(1e-9);
    let (p1, _) = sys.bergman_project(&trial, proj_tol, maxiter.max(20000));
    let (p2, _) = sys.bergman_project(&p1, proj_tol, maxiter.max(20000));
    let n1 = weighted_norm(&w_sym, &p1);
    let diff: Vec<C64> = p2.iter().zip(&p1).map(|(a, b)| a - b).collect();
    checks.push(Check::at_most(
        "projection_idempotency_defect",
        weighted_norm(&w_sym, &diff) / n1,
        1e-6,
    ));
    if let Some(h) = sys.kernel_poly_basis().into_iter().next() {
        let (ph, _) = sys.bergman_project(&h, proj_tol, maxiter.max(20000));
        let diff: Vec<C64> = ph.iter().zip(&h).map(|(a, b)| a - b).collect();
        checks.push(Check::at_most(
            "projection_kernel_fixing_defect",
            weighted_norm(&w_sym, &diff) / weighted_norm(&w_sym, &h),
            1e-6,
        ));
    }

    SuiteReport::from_checks(Suite::Solve, checks)
}

fn estimate_suite(cfg: &ExperimentConfig) -> SuiteReport {
    let sys = match assemble_system(cfg) {
        Ok(s) => s,
        Err(e) => return SuiteReport::failed(Suite::Estimate, e),
    };
    let mut checks = Vec::new();
    let consts = match sys.compute_constants() {
        Ok(c) => c,
        Err(e) => return SuiteReport::failed(Suite::Estimate, format!("constants: {e}")),
    };
    checks.push(Check::at_least("estimate_constant_c0", consts.c0, 1e-12));
    let maxiter = cfg.solver.maxiter_for(sys.flat_len(Space::Mixed));
    match sys.estimate_probe(100, 0.5, cfg.seed, cfg.solver.tol.max(1e-8), maxiter) {
        Ok(probe) => {
            checks.push(Check::at_least(
                "min_rayleigh_quotient",
                probe.min_q,
                consts.c0 * 0.5,
            ));
            checks.push(Check::at_least(
                "mean_rayleigh_quotient",
                probe.mean_q,
                consts.c0 * 0.5,
            ));
        }
        Err(e) => return SuiteReport::failed(Suite::Estimate, format!("probe: {e}")),
    }
    SuiteReport::from_checks(Suite::Estimate, checks)
}

fn dump_first_operator(cfg: &ExperimentConfig, path: &str) -> Result<(), CliError> {
    let sys = assemble_system(cfg).map_err(CliError::Config)?;
    let mut file = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })?;
    sys.d0()
        .matrix()
        .dump(&mut file)
        .map_err(|source| CliError::Io {
            path: path.to_string(),
            source,
        })
}

// ---------------------------------------------------------------------------
// convergence tables

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub d1d0_defect: f64,
    pub adjoint_consistency: f64,
    pub canonical_residual: f64,
    pub min_q: f64,
}

/// Repeat the grid-dependent measurements at each requested resolution.
///
/// The canonical-solve tolerance is tightened by a factor of 10 per
/// refinement level so that solver error stays subdominant to the
/// discretization error being measured.
pub fn report_convergence(
    cfg: &ExperimentConfig,
    ns: &[usize],
) -> Result<Vec<ConvergenceRow>, CliError> {
    let mut ns: Vec<usize> = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.is_empty() {
        return Err(CliError::Config("no resolutions given".into()));
    }
    let mut rows = Vec::new();
    for (level, &n) in ns.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.grid.n = n;
        let sys = assemble_system(&sub).map_err(CliError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = 2.0 * cfg.grid.bounds / n as f64;

        let u_probe = random_sym_polys(cfg.k, 3, &mut rng);
        let u_flat = sys.sample_flat(&u_probe);
        let d1d0_defect = sys.d1d0_defect(&u_flat);

        let adjoint_consistency = sys.adjoint_pairing_defect(cfg.seed);

        let f_polys = apply_d0(
            &SpinorField::new(FieldKind::Sym(cfg.k), u_probe),
            &VectorFieldTable::standard(),
        );
        let f = sys.sample_flat(f_polys.comps());
        let tol = cfg.solver.tol * 10f64.powi(-(level as i32));
        let out = sys
            .canonical_solve(&f, tol, 150_000, cfg.solver.closed_tol)
            .map_err(|e| CliError::Config(format!("canonical solve at n={n}: {e}")))?;

        let probe = sys
            .estimate_probe(25, 0.5, cfg.seed, 1e-6, 10_000)
            .map_err(|e| CliError::Config(format!("estimate probe at n={n}: {e}")))?;

        rows.push(ConvergenceRow {
            n,
            h,
            d1d0_defect,
            adjoint_consistency,
            canonical_residual: out.residual,
            min_q: probe.min_q,
        });
    }
    Ok(rows)
}

/// Render the table as CSV. With more than one row, a trailing column
/// flags whether the canonical residual decreased from the previous row.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    use std::fmt::Write;
    let flags = rows.len() > 1;
    let mut out = String::from("n,h,d1d0_defect,adjoint_consistency,canonical_residual,min_q");
    if flags {
        out.push_str(",canonical_residual_decreasing");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        write!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.n, r.h, r.d1d0_defect, r.adjoint_consistency, r.canonical_residual, r.min_q
        )
        .unwrap();
        if flags {
            if i == 0 {
                out.push(',');
            } else {
                write!(
                    out,
                    ",{}",
                    if r.canonical_residual < rows[i - 1].canonical_residual {
                        "yes"
                    } else {
                        "no"
                    }
                )
                .unwrap();
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// k-sweep verification

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub k: usize,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

/// Parse `"2..6"` (inclusive) or a single `"3"`.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>, CliError> {
    let parse_one = |t: &str| -> Result<usize, CliError> {
        t.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("invalid k value {t:?}")))
    };
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo = parse_one(lo)?;
        let hi = parse_one(hi)?;
        if lo > hi {
            return Err(CliError::Config(format!("empty k range {s:?}")));
        }
        (lo..=hi).collect()
    } else {
        vec![parse_one(s)?]
    };
    for &k in &ks {
        if !(K_MIN..=K_MAX).contains(&k) {
            return Err(CliError::Config(format!(
                "k = {k} outside the allowed range [{K_MIN}, {K_MAX}]"
            )));
        }
    }
    Ok(ks)
}

/// Run the exact (grid-free) suites for each `k` in the range.
pub fn verify(ks: &[usize], seed: u64) -> Vec<VerifyReport> {
    ks.iter()
        .map(|&k| {
            let cfg = ExperimentConfig {
                k,
                domain: DomainConfig::default(),
                weight: WeightConfig::default(),
                grid: GridConfig::default(),
                solver: SolverConfig::default(),
                suites: vec![Suite::Identities, Suite::Symbols],
                seed,
                output: None,
            };
            let suites = vec![identities_suite(&cfg), symbols_suite(&cfg)];
            let pass = suites.iter().all(|s| s.pass);
            VerifyReport { k, suites, pass }
        })
        .collect()
}
