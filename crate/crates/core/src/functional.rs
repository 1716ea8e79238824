//! Functional observability: classical rank tests, the sample-based
//! characterisation, its two necessary-only relatives, and the certificates
//! (`F = alpha C`, or `F_J = alpha C_J Q` in Jordan coordinates) that allow a
//! sampling scheme to be designed on the observable part of `(A, F)` only.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    eigenstructure, null_space_basis, rank_of, shifted, smallest_right_singular_vectors, solve_least_squares_complex,
    to_complex, vstack, RankResult, RankTol,
};
use crate::observability::{
    check_domain, observability_matrix, observable_decomposition, sampled_observability_matrix, ObservableDecomposition,
};
use crate::system::{LtiSystem, SamplingSequence, TimeDomain};

/// Residual bound for `F_J = alpha C_J Q`.
pub const CERTIFICATE_TOL: f64 = 1e-8;
/// Residual bound for `F = alpha C`.
pub const ROWSPACE_TOL: f64 = 1e-9;
/// Relative bound on `||O(A,F) N||` for the null-space inclusion oracle.
pub const INCLUSION_TOL: f64 = 1e-7;

fn stacked_rank(blocks: &[&DMatrix<f64>], tol: RankTol) -> Result<RankResult> {
    rank_of(&vstack(blocks), tol)
}

/// Rank-based statements on `(A, C, F)` without sampling.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalFunctional {
    /// `rank O(A, C)`.
    pub observability: RankResult,
    /// `rank (O(A, C); O(A, F))`.
    pub with_functional_observability: RankResult,
    /// `rank (O(A, C); F)`.
    pub with_functional: RankResult,
    pub stacked_statement: bool,
    pub direct_statement: bool,
    pub functionally_observable: bool,
    /// The two statements agree, as they must in exact arithmetic.
    pub consistent: bool,
}

pub fn is_functionally_observable(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    f: &DMatrix<f64>,
    tol: RankTol,
) -> Result<ClassicalFunctional> {
    let o = observability_matrix(a, c)?;
    let of = observability_matrix(a, f)?;
    let observability = rank_of(&o, tol)?;
    let with_functional_observability = stacked_rank(&[&o, &of], tol)?;
    let with_functional = stacked_rank(&[&o, f], tol)?;
    let stacked_statement = with_functional_observability.rank == observability.rank;
    let direct_statement = with_functional.rank == observability.rank;
    Ok(ClassicalFunctional {
        observability,
        with_functional_observability,
        with_functional,
        stacked_statement,
        direct_statement,
        functionally_observable: stacked_statement && direct_statement,
        consistent: stacked_statement == direct_statement,
    })
}

/// `rank (O_s(A, C); O(A, F)) = rank O_s(A, C)`: the necessary and
/// sufficient condition for reconstructing `F x(t)` from the samples.
#[derive(Debug, Clone, Serialize)]
pub struct SampledFunctional {
    pub sampled: RankResult,
    pub stacked: RankResult,
    pub holds: bool,
}

pub fn is_sample_based_functionally_observable(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    seq: &SamplingSequence,
    tol: RankTol,
) -> Result<SampledFunctional> {
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let of = observability_matrix(sys.a(), f)?;
    let sampled = rank_of(&os, tol)?;
    let stacked = stacked_rank(&[&os, &of], tol)?;
    Ok(SampledFunctional {
        holds: stacked.rank == sampled.rank,
        sampled,
        stacked,
    })
}

/// `rank (O_s(A, C); O_s(A, F)) = rank O_s(A, C)`. Necessary only.
pub fn sampled_pair_condition(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    seq: &SamplingSequence,
    tol: RankTol,
) -> Result<(bool, RankResult)> {
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let osf = sampled_observability_matrix(sys, f, seq)?;
    let base = rank_of(&os, tol)?.rank;
    let stacked = stacked_rank(&[&os, &osf], tol)?;
    Ok((stacked.rank == base, stacked))
}

/// `rank (O_s(A, C); F) = rank O_s(A, C)`. Necessary only.
pub fn direct_functional_condition(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    seq: &SamplingSequence,
    tol: RankTol,
) -> Result<(bool, RankResult)> {
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let base = rank_of(&os, tol)?.rank;
    let stacked = stacked_rank(&[&os, f], tol)?;
    Ok((stacked.rank == base, stacked))
}

/// Semantic check: every initial state with vanishing sampled outputs has a
/// vanishing functional trajectory, i.e. `null O_s(A, C)` is contained in
/// `null O(A, F)`.
pub fn definition_check_oracle(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    seq: &SamplingSequence,
    tol: RankTol,
) -> Result<bool> {
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let silent = null_space_basis(&os, tol)?;
    if silent.ncols() == 0 {
        return Ok(true);
    }
    let of = observability_matrix(sys.a(), f)?;
    let scale = of.norm().max(1.0);
    Ok((of * silent).norm() <= INCLUSION_TOL * scale)
}

/// Minimum-norm `alpha` with `F = alpha C`, if one exists.
pub fn rowspace_certificate(c: &DMatrix<f64>, f: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if c.ncols() != f.ncols() || c.is_empty() {
        return None;
    }
    let smax = crate::linalg::singular_values(c).first().copied().unwrap_or(0.0);
    let eps = (c.nrows().max(c.ncols()) as f64 * f64::EPSILON * smax).max(f64::MIN_POSITIVE);
    let pinv = c.clone().svd(true, true).pseudo_inverse(eps).ok()?;
    let alpha = f * pinv;
    ((f - &alpha * c).norm() < ROWSPACE_TOL).then_some(alpha)
}

/// Observable subsystem of `(A, F)` together with the derived horizon offset.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalDecompositionSummary {
    /// Unobservable dimension of `(A, F)`.
    pub p_f: usize,
    /// Observability index of `(A_ob,F, F_ob)`.
    pub nu: usize,
    /// 0 in continuous time, `nu - 2` in discrete time.
    pub sigma: i64,
}

pub fn sigma(domain: TimeDomain, nu: usize) -> i64 {
    match domain {
        TimeDomain::Continuous => 0,
        TimeDomain::Discrete => nu as i64 - 2,
    }
}

pub fn functional_decomposition(sys: &LtiSystem, f: &DMatrix<f64>, tol: RankTol) -> Result<ObservableDecomposition> {
    observable_decomposition(sys.a(), f, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampledConditions {
    pub sampled_observability: RankResult,
    pub sample_based_observable: bool,
    pub functional: SampledFunctional,
    pub sampled_pair: bool,
    pub sampled_pair_rank: RankResult,
    pub direct: bool,
    pub direct_rank: RankResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalObservabilityReport {
    pub classical: ClassicalFunctional,
    pub decomposition: FunctionalDecompositionSummary,
    pub sample_based: Option<SampledConditions>,
    pub horizon_note: String,
    /// Violated consistency relations; empty on a clean run.
    pub diagnostics: Vec<String>,
}

impl FunctionalObservabilityReport {
    pub fn is_consistent(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

pub fn functional_report(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    seq: Option<&SamplingSequence>,
    tol: RankTol,
) -> Result<FunctionalObservabilityReport> {
    let classical = is_functionally_observable(sys.a(), sys.c(), f, tol)?;
    let mut diagnostics = Vec::new();
    if !classical.consistent {
        diagnostics.push(format!(
            "classical statements disagree: rank(O;O_F)={} rank(O;F)={} rank(O)={}",
            classical.with_functional_observability.rank, classical.with_functional.rank, classical.observability.rank
        ));
    }
    let dec = functional_decomposition(sys, f, tol)?;
    let nu = dec.observability_index;
    let decomposition = FunctionalDecompositionSummary {
        p_f: dec.p,
        nu,
        sigma: sigma(sys.domain(), nu),
    };
    let sample_based = match seq {
        None => None,
        Some(seq) => {
            check_domain(sys, seq)?;
            let (sample_based_observable, sampled_observability) =
                crate::observability::is_sample_based_observable(sys, seq, tol)?;
            let functional = is_sample_based_functionally_observable(sys, f, seq, tol)?;
            let (sampled_pair, sampled_pair_rank) = sampled_pair_condition(sys, f, seq, tol)?;
            let (direct, direct_rank) = direct_functional_condition(sys, f, seq, tol)?;
            if functional.holds && !(sampled_pair && direct) {
                diagnostics.push(
                    "sample-based functional observability holds but a necessary condition fails".to_string(),
                );
            }
            Some(SampledConditions {
                sampled_observability,
                sample_based_observable,
                functional,
                sampled_pair,
                sampled_pair_rank,
                direct,
                direct_rank,
            })
        }
    };
    let horizon_note = format!(
        "reconstruction window must satisfy t_bar > sigma = {}; not enforced against the sampling sequence",
        decomposition.sigma
    );
    Ok(FunctionalObservabilityReport {
        classical,
        decomposition,
        sample_based,
        horizon_note,
        diagnostics,
    })
}

/// Block-diagonal matrix whose blocks are polynomials in the upper shift:
/// `Q_j = q_{j,1} I + q_{j,2} U + ... + q_{j,k} U^{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuredQ {
    block_sizes: Vec<usize>,
    coefficients: Vec<Vec<Complex64>>,
}

impl StructuredQ {
    pub fn new(block_sizes: Vec<usize>, coefficients: Vec<Vec<Complex64>>) -> Result<Self> {
        if block_sizes.len() != coefficients.len() {
            return Err(Error::InvalidQ(format!(
                "{} block sizes but {} coefficient lists",
                block_sizes.len(),
                coefficients.len()
            )));
        }
        for (j, (&k, q)) in block_sizes.iter().zip(&coefficients).enumerate() {
            if k == 0 || q.len() != k {
                return Err(Error::InvalidQ(format!(
                    "block {j} has size {k} but {} coefficients",
                    q.len()
                )));
            }
        }
        Ok(StructuredQ {
            block_sizes,
            coefficients,
        })
    }

    /// Diagonal `Q` for scalar blocks.
    pub fn diagonal(values: &[Complex64]) -> Self {
        StructuredQ {
            block_sizes: vec![1; values.len()],
            coefficients: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    pub fn identity(block_sizes: &[usize]) -> Self {
        StructuredQ {
            block_sizes: block_sizes.to_vec(),
            coefficients: block_sizes
                .iter()
                .map(|&k| {
                    let mut q = vec![Complex64::new(0.0, 0.0); k];
                    q[0] = Complex64::new(1.0, 0.0);
                    q
                })
                .collect(),
        }
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn coefficients(&self) -> &[Vec<Complex64>] {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn assembled(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut q = DMatrix::<Complex64>::zeros(n, n);
        let mut offset = 0;
        for (&k, coeffs) in self.block_sizes.iter().zip(&self.coefficients) {
            for row in 0..k {
                for col in row..k {
                    q[(offset + row, offset + col)] = coeffs[col - row];
                }
            }
            offset += k;
        }
        q
    }

    /// Nonsingular iff every diagonal coefficient is nonzero.
    pub fn is_nonsingular(&self) -> bool {
        self.coefficients.iter().all(|q| q[0].norm() > 1e-12)
    }
}

/// Jordan coordinates `A_J = T^{-1} A T`, `C_J = C T`, `F_J = F T`.
#[derive(Debug, Clone)]
pub struct JordanData {
    pub a_j: DMatrix<Complex64>,
    pub c_j: DMatrix<Complex64>,
    pub f_j: DMatrix<Complex64>,
    pub block_sizes: Vec<usize>,
    /// Eigenvalue of each block; conjugate pairs are adjacent.
    pub block_eigenvalues: Vec<Complex64>,
    pub transformation: DMatrix<Complex64>,
    pub geometric_multiplicity_one: bool,
}

/// Scale the chain so that the last significant entry of its eigenvector is one.
fn normalize_chain(chain: &mut [nalgebra::DVector<Complex64>]) {
    let head = &chain[0];
    let peak = head.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if let Some(pivot) = head.iter().rev().find(|x| x.norm() > 1e-10 * peak).copied() {
        let s = Complex64::new(1.0, 0.0) / pivot;
        for v in chain.iter_mut() {
            *v *= s;
        }
    }
}

/// Jordan chain `v_1, ..., v_m` with `(A - lambda I) v_k = v_{k-1}`.
fn jordan_chain(a: &DMatrix<Complex64>, lambda: Complex64, m: usize) -> Vec<nalgebra::DVector<Complex64>> {
    let s = shifted(a, lambda);
    let top = if m == 1 {
        smallest_right_singular_vectors(&s, 1).column(0).into_owned()
    } else {
        let sm = crate::linalg::matrix_power(&s, m as i64).expect("square");
        let sm1 = crate::linalg::matrix_power(&s, m as i64 - 1).expect("square");
        let gen = smallest_right_singular_vectors(&sm, m);
        let lower = smallest_right_singular_vectors(&sm1, m - 1);
        let overlap = lower.adjoint() * &gen;
        let c = smallest_right_singular_vectors(&overlap, 1);
        let v = &gen * c;
        let norm = v.norm();
        (v / Complex64::new(norm, 0.0)).column(0).into_owned()
    };
    let mut chain = vec![top];
    for _ in 1..m {
        let next = &s * chain.last().expect("non-empty");
        chain.push(next);
    }
    chain.reverse();
    normalize_chain(&mut chain);
    chain
}

/// Jordan data for matrices without repeated Jordan blocks per eigenvalue.
pub fn jordan_data(a: &DMatrix<f64>, c: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<JordanData> {
    let es = eigenstructure(a, None)?;
    if let Some(e) = es.eigenvalues.iter().find(|e| e.geometric_multiplicity != 1) {
        return Err(Error::UnsupportedStructure(format!(
            "eigenvalue {} has {} Jordan blocks",
            e.value, e.geometric_multiplicity
        )));
    }
    if es.eigenvalues.iter().any(|e| e.index != e.algebraic_multiplicity) {
        return Err(Error::UnsupportedStructure(
            "index and algebraic multiplicity differ; Jordan structure is ambiguous".into(),
        ));
    }
    let n = a.nrows();
    let ac = to_complex(a);
    let mut columns: Vec<nalgebra::DVector<Complex64>> = Vec::with_capacity(n);
    let mut block_sizes = Vec::new();
    let mut block_eigenvalues = Vec::new();
    let mut pending_conjugate: Option<(Complex64, Vec<nalgebra::DVector<Complex64>>)> = None;
    for e in &es.eigenvalues {
        let chain = match pending_conjugate.take() {
            Some((lambda, chain)) if (lambda - e.value).norm() <= es.cluster_tol.max(1e-12) => chain,
            other => {
                pending_conjugate = other;
                let chain = jordan_chain(&ac, e.value, e.algebraic_multiplicity);
                if e.value.im < 0.0 {
                    let conj: Vec<_> = chain.iter().map(|v| v.map(|x| x.conj())).collect();
                    pending_conjugate = Some((e.value.conj(), conj));
                }
                chain
            }
        };
        block_sizes.push(chain.len());
        block_eigenvalues.push(e.value);
        columns.extend(chain);
    }
    let t = DMatrix::from_columns(&columns);
    let mut a_j = DMatrix::<Complex64>::zeros(n, n);
    let mut offset = 0;
    for (&k, &lambda) in block_sizes.iter().zip(&block_eigenvalues) {
        for i in 0..k {
            a_j[(offset + i, offset + i)] = lambda;
            if i + 1 < k {
                a_j[(offset + i, offset + i + 1)] = Complex64::new(1.0, 0.0);
            }
        }
        offset += k;
    }
    let residual = (&ac * &t - &t * &a_j).norm();
    let scale = ac.norm().max(1.0) * t.norm().max(1.0);
    if residual > 1e-8 * scale || t.clone().try_inverse().is_none() {
        return Err(Error::NumericalInconsistency(format!(
            "Jordan basis does not reproduce A (residual {residual:.3e})"
        )));
    }
    Ok(JordanData {
        c_j: to_complex(c) * &t,
        f_j: to_complex(f) * &t,
        a_j,
        block_sizes,
        block_eigenvalues,
        transformation: t,
        geometric_multiplicity_one: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QVerification {
    /// Frobenius norm of `F_J - alpha C_J Q`.
    pub residual: f64,
    pub nonsingular: bool,
    pub holds: bool,
}

pub fn verify_structured_q(jd: &JordanData, alpha: &DMatrix<f64>, q: &StructuredQ) -> Result<QVerification> {
    if q.block_sizes() != jd.block_sizes.as_slice() {
        return Err(Error::InvalidQ(format!(
            "block sizes {:?} do not match Jordan blocks {:?}",
            q.block_sizes(),
            jd.block_sizes
        )));
    }
    if alpha.nrows() != jd.f_j.nrows() || alpha.ncols() != jd.c_j.nrows() {
        return Err(Error::InvalidQ(format!(
            "alpha must be {}x{}, got {}x{}",
            jd.f_j.nrows(),
            jd.c_j.nrows(),
            alpha.nrows(),
            alpha.ncols()
        )));
    }
    let product = to_complex(alpha) * &jd.c_j * q.assembled();
    let residual = (&jd.f_j - product).norm();
    let nonsingular = q.is_nonsingular();
    Ok(QVerification {
        residual,
        nonsingular,
        holds: nonsingular && residual < CERTIFICATE_TOL,
    })
}

/// A verified `(alpha, Q)` pair.
#[derive(Debug, Clone)]
pub struct StructuredCertificate {
    pub alpha: DMatrix<f64>,
    pub q: StructuredQ,
    pub residual: f64,
}

/// A certificate allowing sampling design on `(A_ob,F, F_ob)`.
#[derive(Debug, Clone)]
pub enum Certificate {
    /// `F = alpha C`.
    RowSpace { alpha: DMatrix<f64> },
    /// `F_J = alpha C_J Q`.
    Structured(StructuredCertificate),
}

impl Certificate {
    pub fn alpha(&self) -> &DMatrix<f64> {
        match self {
            Certificate::RowSpace { alpha } => alpha,
            Certificate::Structured(s) => &s.alpha,
        }
    }
}

fn complex_column_norm(m: &DMatrix<Complex64>, i: usize) -> f64 {
    m.column(i).norm()
}

/// Real linear constraints on `vec(alpha)` (row-major, `r x q`) forcing each
/// column of `alpha C_J` to vanish or to be parallel to the matching column
/// of `F_J`.
fn pattern_constraints(jd: &JordanData, zero: &[bool]) -> DMatrix<f64> {
    let r = jd.f_j.nrows();
    let q = jd.c_j.nrows();
    let n = jd.f_j.ncols();
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for i in 0..n {
        let ci = jd.c_j.column(i);
        let projector = if zero[i] {
            DMatrix::<Complex64>::identity(r, r)
        } else {
            let fi = jd.f_j.column(i).into_owned();
            let denom = fi.norm_squared();
            DMatrix::<Complex64>::identity(r, r) - (&fi * fi.adjoint()) / Complex64::new(denom, 0.0)
        };
        for out in 0..r {
            let mut row = vec![Complex64::new(0.0, 0.0); r * q];
            for a in 0..r {
                for b in 0..q {
                    row[a * q + b] = projector[(out, a)] * ci[b];
                }
            }
            if row.iter().any(|x| x.norm() > 1e-14) {
                rows.push(row);
            }
        }
    }
    let mut m = DMatrix::<f64>::zeros(2 * rows.len(), r * q);
    for (k, row) in rows.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            m[(2 * k, j)] = x.re;
            m[(2 * k + 1, j)] = x.im;
        }
    }
    m
}

fn normalize_alpha(alpha: &mut DMatrix<f64>) {
    let peak = alpha.amax();
    if let Some(&pivot) = alpha.transpose().iter().find(|x| x.abs() > 1e-8 * peak) {
        *alpha /= pivot;
    }
}

fn diagonal_search<R: Rng>(jd: &JordanData, rng: &mut R) -> Result<Option<StructuredCertificate>> {
    let r = jd.f_j.nrows();
    let q = jd.c_j.nrows();
    let n = jd.f_j.ncols();
    let f_scale = jd.f_j.norm().max(1.0);
    let zero: Vec<bool> = (0..n).map(|i| complex_column_norm(&jd.f_j, i) <= 1e-9 * f_scale).collect();
    let constraints = pattern_constraints(jd, &zero);
    let basis = if constraints.nrows() == 0 {
        DMatrix::<f64>::identity(r * q, r * q)
    } else {
        null_space_basis(&constraints, RankTol::Relative(1e-10))?
    };
    if basis.ncols() == 0 {
        return Ok(None);
    }
    for _ in 0..8 {
        let w = DMatrix::<f64>::from_fn(basis.ncols(), 1, |_, _| rng.random_range(-1.0..1.0));
        let flat = &basis * w;
        let mut alpha = DMatrix::<f64>::from_fn(r, q, |a, b| flat[(a * q + b, 0)]);
        normalize_alpha(&mut alpha);
        let g = to_complex(&alpha) * &jd.c_j;
        let g_scale = g.norm().max(f64::MIN_POSITIVE);
        let mut values = Vec::with_capacity(n);
        let mut generic = true;
        for i in 0..n {
            let gi = g.column(i).into_owned();
            if zero[i] {
                values.push(Complex64::new(1.0, 0.0));
                continue;
            }
            let gn = gi.norm_squared();
            if gn.sqrt() <= 1e-8 * g_scale {
                generic = false;
                break;
            }
            let fi = jd.f_j.column(i).into_owned();
            values.push(gi.dotc(&fi) / gn);
        }
        if !generic {
            continue;
        }
        let qd = StructuredQ::diagonal(&values);
        let check = verify_structured_q(jd, &alpha, &qd)?;
        if check.holds {
            return Ok(Some(StructuredCertificate {
                alpha,
                q: qd,
                residual: check.residual,
            }));
        }
    }
    Ok(None)
}

fn real_alpha_for(jd: &JordanData, q: &StructuredQ) -> DMatrix<f64> {
    // alpha G = F_J with G = C_J Q, split into real and imaginary parts
    let g = &jd.c_j * q.assembled();
    let (qn, n) = g.shape();
    let r = jd.f_j.nrows();
    let mut g_real = DMatrix::<f64>::zeros(qn, 2 * n);
    let mut f_real = DMatrix::<f64>::zeros(r, 2 * n);
    for j in 0..n {
        for i in 0..qn {
            g_real[(i, j)] = g[(i, j)].re;
            g_real[(i, n + j)] = g[(i, j)].im;
        }
        for i in 0..r {
            f_real[(i, j)] = jd.f_j[(i, j)].re;
            f_real[(i, n + j)] = jd.f_j[(i, j)].im;
        }
    }
    let gt = g_real.transpose();
    let eps = 1e-12 * crate::linalg::singular_values(&gt).first().copied().unwrap_or(0.0);
    match gt.svd(true, true).solve(&f_real.transpose(), eps.max(f64::MIN_POSITIVE)) {
        Ok(x) => x.transpose(),
        Err(_) => DMatrix::zeros(r, qn),
    }
}

fn q_for(jd: &JordanData, alpha: &DMatrix<f64>) -> Option<StructuredQ> {
    let h = to_complex(alpha) * &jd.c_j;
    let r = h.nrows();
    let mut coefficients = Vec::with_capacity(jd.block_sizes.len());
    let mut offset = 0;
    for &k in &jd.block_sizes {
        let hb = h.columns(offset, k).into_owned();
        let fb = jd.f_j.columns(offset, k).into_owned();
        // column i of the design matrix is vec(hb U^i)
        let mut design = DMatrix::<Complex64>::zeros(r * k, k);
        for shift in 0..k {
            for row in 0..r {
                for col in shift..k {
                    design[(row * k + col, shift)] = hb[(row, col - shift)];
                }
            }
        }
        let target = DMatrix::<Complex64>::from_fn(r * k, 1, |idx, _| fb[(idx / k, idx % k)]);
        let sol = solve_least_squares_complex(&design, &target)?;
        coefficients.push(sol.column(0).iter().copied().collect());
        offset += k;
    }
    StructuredQ::new(jd.block_sizes.clone(), coefficients).ok()
}

fn alternating_search<R: Rng>(jd: &JordanData, rng: &mut R) -> Result<Option<StructuredCertificate>> {
    for _ in 0..64 {
        let coefficients = jd
            .block_sizes
            .iter()
            .map(|&k| {
                (0..k)
                    .map(|i| {
                        let re: f64 = rng.random_range(-1.0..1.0);
                        let im: f64 = rng.random_range(-1.0..1.0);
                        if i == 0 {
                            Complex64::new(re + re.signum(), im)
                        } else {
                            Complex64::new(re, im)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut q = StructuredQ::new(jd.block_sizes.clone(), coefficients)?;
        for _ in 0..200 {
            let alpha = real_alpha_for(jd, &q);
            let check = verify_structured_q(jd, &alpha, &q)?;
            if check.holds {
                return Ok(Some(StructuredCertificate {
                    alpha,
                    q,
                    residual: check.residual,
                }));
            }
            match q_for(jd, &alpha) {
                Some(next) => q = next,
                None => break,
            }
            let check = verify_structured_q(jd, &alpha, &q)?;
            if check.holds {
                return Ok(Some(StructuredCertificate {
                    alpha,
                    q,
                    residual: check.residual,
                }));
            }
        }
    }
    Ok(None)
}

/// Search for `(alpha, Q)` with `F_J = alpha C_J Q`.
///
/// Exact for diagonalizable `A`; best effort (alternating least squares with
/// random restarts) when Jordan blocks are nontrivial. A returned certificate
/// has always passed [`verify_structured_q`].
pub fn find_structured_q<R: Rng>(jd: &JordanData, rng: &mut R) -> Result<Option<StructuredCertificate>> {
    if !jd.geometric_multiplicity_one {
        return Err(Error::UnsupportedStructure(
            "an eigenvalue has more than one Jordan block".into(),
        ));
    }
    if jd.block_sizes.iter().all(|&k| k == 1) {
        diagonal_search(jd, rng)
    } else {
        alternating_search(jd, rng)
    }
}

/// [`find_structured_q`] with a generator seeded from `seed`.
pub fn search_structured_q(jd: &JordanData, seed: u64) -> Result<Option<StructuredCertificate>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    find_structured_q(jd, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand_chacha::ChaCha8Rng;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn counterexample() -> LtiSystem {
        LtiSystem::autonomous(
            TimeDomain::Discrete,
            dmatrix![1.0, 1.0, 0.0, 0.0; -1.0, 1.0, 0.0, 0.0; 0.0, 0.0, 2.0, 2.0; 0.0, 0.0, -2.0, 2.0],
            dmatrix![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    fn example_system() -> LtiSystem {
        LtiSystem::autonomous(
            TimeDomain::Discrete,
            dmatrix![
                1.0, 0.0, 0.0, 0.0;
                1.0, -1.0, 0.0, 0.0;
                -2.0, 3.2, 0.6, 2.4;
                0.0, -0.3, -0.15, 0.6
            ],
            dmatrix![1.0, 0.0, 0.0, 0.0; 1.5, -4.0, -1.0, 0.0; 2.0, -6.0, -1.0, -4.0],
        )
        .unwrap()
    }

    fn example_f() -> DMatrix<f64> {
        dmatrix![0.0, -2.0, -1.0, 1.0]
    }

    #[test]
    fn output_as_functional_is_observable() {
        let sys = counterexample();
        let r = is_functionally_observable(sys.a(), sys.c(), sys.c(), RankTol::Default).unwrap();
        assert!(r.functionally_observable && r.consistent);
    }

    #[test]
    fn counterexample_is_functionally_observable() {
        let sys = counterexample();
        let r = is_functionally_observable(sys.a(), sys.c(), &dmatrix![1.0, 1.0, 0.0, 0.0], RankTol::Default).unwrap();
        assert!(r.functionally_observable);
        assert_eq!(r.observability.rank, 4);
    }

    #[test]
    fn unobservable_direction_is_not_recoverable() {
        // x2 never reaches the output
        let a = dmatrix![0.5, 0.0; 0.0, 0.9];
        let c = dmatrix![1.0, 0.0];
        let null = null_space_basis(&observability_matrix(&a, &c).unwrap(), RankTol::Default).unwrap();
        let f = null.transpose();
        let r = is_functionally_observable(&a, &c, &f, RankTol::Default).unwrap();
        assert!(!r.functionally_observable);
        assert!(r.consistent);
        assert!(r.with_functional.rank > r.observability.rank);
    }

    #[test]
    fn counterexample_conditions() {
        let sys = counterexample();
        let f = dmatrix![1.0, 1.0, 0.0, 0.0];
        let irregular = SamplingSequence::discrete(&[0, 4, 8, 13]).unwrap();
        let sb = is_sample_based_functionally_observable(&sys, &f, &irregular, RankTol::Default).unwrap();
        assert!(!sb.holds);
        assert_eq!((sb.sampled.rank, sb.stacked.rank), (3, 4));
        let (ii, rii) = sampled_pair_condition(&sys, &f, &irregular, RankTol::Default).unwrap();
        let (iii, riii) = direct_functional_condition(&sys, &f, &irregular, RankTol::Default).unwrap();
        assert!(!ii && iii);
        assert_eq!((rii.rank, riii.rank), (4, 3));
        assert!(!definition_check_oracle(&sys, &f, &irregular, RankTol::Default).unwrap());

        let periodic = SamplingSequence::discrete(&[2, 6, 10, 14]).unwrap();
        let (ii, rii) = sampled_pair_condition(&sys, &f, &periodic, RankTol::Default).unwrap();
        let (iii, riii) = direct_functional_condition(&sys, &f, &periodic, RankTol::Default).unwrap();
        assert!(ii && !iii);
        assert_eq!((rii.rank, riii.rank), (2, 3));
        let sb = is_sample_based_functionally_observable(&sys, &f, &periodic, RankTol::Default).unwrap();
        assert!(!sb.holds);
        assert!(!definition_check_oracle(&sys, &f, &periodic, RankTol::Default).unwrap());
    }

    #[test]
    fn output_functional_with_full_rank_samples() {
        let sys = counterexample();
        let seq = SamplingSequence::discrete(&[0, 1, 2, 3]).unwrap();
        let c = sys.c().clone();
        assert!(is_sample_based_functionally_observable(&sys, &c, &seq, RankTol::Default).unwrap().holds);
        assert!(sampled_pair_condition(&sys, &c, &seq, RankTol::Default).unwrap().0);
        assert!(direct_functional_condition(&sys, &c, &seq, RankTol::Default).unwrap().0);
        assert!(definition_check_oracle(&sys, &c, &seq, RankTol::Default).unwrap());
    }

    #[test]
    fn full_output_single_sample_oracle() {
        let sys = LtiSystem::autonomous(
            TimeDomain::Continuous,
            dmatrix![0.0, 1.0; -4.0, -0.2],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let seq = SamplingSequence::continuous(&[0.0]).unwrap();
        for f in [dmatrix![1.0, 0.0], dmatrix![3.0, -7.0], dmatrix![1.0, 1.0; 0.0, 2.0]] {
            assert!(definition_check_oracle(&sys, &f, &seq, RankTol::Default).unwrap());
        }
    }

    #[test]
    fn report_flags_sigma_and_conditions() {
        let sys = counterexample();
        let f = dmatrix![1.0, 1.0, 0.0, 0.0];
        let seq = SamplingSequence::discrete(&[0, 4, 8, 13]).unwrap();
        let rep = functional_report(&sys, &f, Some(&seq), RankTol::Default).unwrap();
        assert!(rep.is_consistent());
        assert_eq!(rep.decomposition.p_f, 2);
        assert_eq!(rep.decomposition.nu, 2);
        assert_eq!(rep.decomposition.sigma, 0);
        let sb = rep.sample_based.unwrap();
        assert!(!sb.functional.holds && sb.direct && !sb.sampled_pair);
    }

    #[test]
    fn rowspace_certificates() {
        let c = dmatrix![1.0, 0.0, 2.0; 0.0, 1.0, -1.0];
        let alpha = rowspace_certificate(&c, &c).unwrap();
        assert!((alpha - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        let f = dmatrix![2.0, 0.0, 4.0];
        let alpha = rowspace_certificate(&c, &f).unwrap();
        assert!((alpha - dmatrix![2.0, 0.0]).amax() < 1e-12);
        let sys = example_system();
        assert!(rowspace_certificate(sys.c(), &example_f()).is_none());
    }

    #[test]
    fn structured_q_assembly() {
        let q = StructuredQ::new(
            vec![3, 1],
            vec![vec![c64(2.0, 0.0), c64(3.0, 0.0), c64(4.0, 0.0)], vec![c64(5.0, 1.0)]],
        )
        .unwrap();
        let m = q.assembled();
        assert_eq!(m[(0, 0)], c64(2.0, 0.0));
        assert_eq!(m[(0, 1)], c64(3.0, 0.0));
        assert_eq!(m[(0, 2)], c64(4.0, 0.0));
        assert_eq!(m[(1, 2)], c64(3.0, 0.0));
        assert_eq!(m[(2, 2)], c64(2.0, 0.0));
        assert_eq!(m[(1, 0)], c64(0.0, 0.0));
        assert_eq!(m[(0, 3)], c64(0.0, 0.0));
        assert_eq!(m[(3, 3)], c64(5.0, 1.0));
        assert!(q.is_nonsingular());
        assert!(StructuredQ::new(vec![2], vec![vec![c64(1.0, 0.0)]]).is_err());
    }

    #[test]
    fn jordan_data_of_diagonal_matrix() {
        let a = dmatrix![2.0, 0.0; 0.0, -1.0];
        let jd = jordan_data(&a, &dmatrix![1.0, 1.0], &dmatrix![1.0, 0.0]).unwrap();
        assert_eq!(jd.block_sizes, vec![1, 1]);
        assert!((jd.a_j[(0, 0)] - c64(-1.0, 0.0)).norm() < 1e-12);
        assert!((jd.a_j[(1, 1)] - c64(2.0, 0.0)).norm() < 1e-12);
        // permutation of the identity
        let t = &jd.transformation;
        assert!((t[(1, 0)].norm() - 1.0).abs() < 1e-12 && (t[(0, 1)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jordan_data_of_single_chain() {
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let jd = jordan_data(&a, &dmatrix![1.0, 0.0], &dmatrix![0.0, 1.0]).unwrap();
        assert_eq!(jd.block_sizes, vec![2]);
        assert!((jd.a_j[(0, 1)] - c64(1.0, 0.0)).norm() < 1e-12);
        let t_inv = jd.transformation.clone().try_inverse().unwrap();
        assert!((&jd.a_j * &t_inv - &t_inv * to_complex(&a)).norm() < 1e-8);
    }

    #[test]
    fn repeated_blocks_are_unsupported() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            jordan_data(&a, &dmatrix![1.0, 0.0], &dmatrix![0.0, 1.0]),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn example_jordan_coordinates() {
        let sys = example_system();
        let jd = jordan_data(sys.a(), sys.c(), &example_f()).unwrap();
        let expected_eigs = [c64(-1.0, 0.0), c64(1.0, 0.0), c64(0.6, -0.6), c64(0.6, 0.6)];
        for (g, e) in jd.block_eigenvalues.iter().zip(expected_eigs.iter()) {
            assert!((g - e).norm() < 1e-10);
        }
        let expected_f = [c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0, -4.0), c64(1.0, 4.0)];
        for (i, e) in expected_f.iter().enumerate() {
            assert!((jd.f_j[(0, i)] - e).norm() < 1e-8, "F_J[{i}] = {}", jd.f_j[(0, i)]);
        }
    }

    #[test]
    fn example_certificate_verifies() {
        let sys = example_system();
        let jd = jordan_data(sys.a(), sys.c(), &example_f()).unwrap();
        let alpha = dmatrix![1.0, -2.0, 1.0];
        let q = StructuredQ::diagonal(&[c64(1.0, 0.0), c64(1.0, 0.0), c64(-0.625, 0.375), c64(-0.625, -0.375)]);
        let v = verify_structured_q(&jd, &alpha, &q).unwrap();
        assert!(v.holds, "residual {}", v.residual);
        let product = to_complex(&alpha) * &jd.c_j * q.assembled();
        assert!((product[(0, 2)] - c64(1.0, -4.0)).norm() < 1e-8);
        // commutation with the Jordan form
        let qa = q.assembled();
        assert!((&jd.a_j * &qa - &qa * &jd.a_j).norm() < 1e-8);

        let singular = StructuredQ::diagonal(&[c64(0.0, 0.0), c64(1.0, 0.0), c64(-0.625, 0.375), c64(-0.625, -0.375)]);
        assert!(!verify_structured_q(&jd, &alpha, &singular).unwrap().holds);
        let wrong = StructuredQ::identity(&[2, 2]);
        assert!(matches!(verify_structured_q(&jd, &alpha, &wrong), Err(Error::InvalidQ(_))));
    }

    #[test]
    fn example_certificate_is_found() {
        let sys = example_system();
        let jd = jordan_data(sys.a(), sys.c(), &example_f()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cert = find_structured_q(&jd, &mut rng).unwrap().expect("certificate");
        assert!((&cert.alpha - dmatrix![1.0, -2.0, 1.0]).amax() < 1e-9);
        let q = cert.q.coefficients();
        assert!((q[2][0] - c64(-0.625, 0.375)).norm() < 1e-9);
        assert!((q[3][0] - c64(-0.625, -0.375)).norm() < 1e-9);
    }

    #[test]
    fn scalar_multiple_of_output() {
        let a = dmatrix![0.5, 0.2; 0.0, -0.3];
        let c = dmatrix![1.0, 2.0];
        let f = &c * 3.0;
        let jd = jordan_data(&a, &c, &f).unwrap();
        let alpha = dmatrix![3.0];
        assert!(verify_structured_q(&jd, &alpha, &StructuredQ::identity(&[1, 1])).unwrap().holds);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cert = find_structured_q(&jd, &mut rng).unwrap().unwrap();
        // alpha is normalised to a unit leading entry, so the scale moves into Q
        assert!((cert.alpha[(0, 0)] - 1.0).abs() < 1e-9);
        for q in cert.q.coefficients() {
            assert!((q[0] - c64(3.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn hidden_mode_has_no_certificate() {
        // the second mode never reaches the output but drives the functional
        let a = dmatrix![0.5, 0.0; 0.0, -0.3];
        let c = dmatrix![1.0, 0.0];
        let f = dmatrix![1.0, 1.0];
        let jd = jordan_data(&a, &c, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(find_structured_q(&jd, &mut rng).unwrap().is_none());
    }

    #[test]
    fn chain_certificate_by_alternation() {
        let a = dmatrix![0.8, 1.0, 0.0; 0.0, 0.8, 0.0; 0.0, 0.0, -0.5];
        let c = dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 0.0];
        // F_J = alpha C_J Q for alpha = (1, 0) and a Toeplitz block (2, 1) on the chain
        let jd0 = jordan_data(&a, &c, &c.rows(0, 1).into_owned()).unwrap();
        let q = StructuredQ::new(vec![2, 1], vec![vec![c64(2.0, 0.0), c64(1.0, 0.0)], vec![c64(-1.5, 0.0)]]).unwrap();
        let f_j = to_complex(&dmatrix![1.0, 0.0]) * &jd0.c_j * q.assembled();
        let t_inv = jd0.transformation.clone().try_inverse().unwrap();
        let f = (f_j * t_inv).map(|x| x.re);
        let jd = jordan_data(&a, &c, &f).unwrap();
        assert_eq!(jd.block_sizes, vec![1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cert = find_structured_q(&jd, &mut rng).unwrap().expect("certificate");
        assert!(verify_structured_q(&jd, &cert.alpha, &cert.q).unwrap().holds);
    }
}
