//! Design and certification of sampling sequences.
//!
//! Continuous-time designs place more than `k*` distinct instants in a window;
//! discrete-time designs are drawn at random while avoiding pathological
//! spacings. Every design is certified by an explicit rank computation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::functional::{
    find_structured_q, is_functionally_observable, is_sample_based_functionally_observable, jordan_data,
    rowspace_certificate, Certificate, SampledFunctional,
};
use crate::linalg::{eigenstructure, matrix_power, rank_of, RankResult, RankTol};
use crate::observability::{
    check_partial_observability, observability_index, observability_matrix, observable_decomposition, sampled_stack,
};
use crate::system::{sampling_to_json, LtiSystem, SamplingSequence, TimeDomain};

/// Slack on `k*` so that an integer-valued bound is not undercut by rounding.
const K_STAR_SLACK: f64 = 1e-9;
const CONTINUOUS_RETRIES: usize = 3;
const DISCRETE_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingTarget {
    FullState,
    ObservableSubspace,
    FunctionalViaC,
    FunctionalViaQ,
}

impl std::str::FromStr for SamplingTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full_state" => Ok(SamplingTarget::FullState),
            "observable_subspace" => Ok(SamplingTarget::ObservableSubspace),
            "functional_via_C" | "functional_via_c" => Ok(SamplingTarget::FunctionalViaC),
            "functional_via_Q" | "functional_via_q" => Ok(SamplingTarget::FunctionalViaQ),
            other => Err(format!(
                "unknown target `{other}` (expected full_state, observable_subspace, functional_via_C, functional_via_Q)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Midpoints of `k` equal sub-intervals of `(0, T]`.
    #[default]
    Uniform,
    /// Independent uniform draws in `(0, T]`.
    Random,
}

impl std::str::FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Placement::Uniform),
            "random" => Ok(Placement::Random),
            other => Err(format!("unknown placement `{other}` (expected uniform or random)")),
        }
    }
}

/// The pair a design was computed on.
#[derive(Debug, Clone)]
pub struct DesignPair {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl DesignPair {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct SamplingDesign {
    pub target: Option<SamplingTarget>,
    pub designed_on: DesignPair,
    /// Continuous-time designs only.
    pub k_star: Option<f64>,
    pub k: usize,
    pub sequence: SamplingSequence,
    /// Rank of the sample-based observability matrix of `designed_on`.
    pub certificate: RankResult,
    /// Functional test on the original triple, when `F` was available.
    pub validation: Option<SampledFunctional>,
    /// Certificate that justified designing on `(A_ob,F, F_ob)`.
    pub relaxation: Option<Certificate>,
}

impl SamplingDesign {
    pub fn to_json(&self) -> Value {
        let mut doc = sampling_to_json(&self.sequence);
        let obj = doc.as_object_mut().expect("sampling JSON is an object");
        obj.insert("domain".into(), json!(self.sequence.domain()));
        obj.insert("target".into(), json!(self.target));
        obj.insert(
            "designed_on".into(),
            json!({ "n": self.designed_on.dim(), "outputs": self.designed_on.c.nrows() }),
        );
        obj.insert("k".into(), json!(self.k));
        obj.insert("k_star".into(), json!(self.k_star));
        obj.insert("certificate".into(), json!(self.certificate));
        if let Some(v) = &self.validation {
            obj.insert("validation".into(), json!(v));
        }
        if let Some(cert) = &self.relaxation {
            obj.insert("relaxation".into(), certificate_to_json(cert));
        }
        doc
    }
}

/// `d - 1 + T delta / (2 pi)`, where `delta` is the spread of the imaginary
/// parts of the spectrum and `d` the sum of the eigenvalue indices.
pub fn k_star_bound(a: &DMatrix<f64>, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidMatrix(format!("horizon must be positive, got {horizon}")));
    }
    let es = eigenstructure(a, None)?;
    if es.eigenvalues.is_empty() {
        return Ok(0.0);
    }
    let hi = es.distinct().map(|l| l.im).fold(f64::NEG_INFINITY, f64::max);
    let lo = es.distinct().map(|l| l.im).fold(f64::INFINITY, f64::min);
    let delta = hi - lo;
    Ok(es.d() as f64 - 1.0 + horizon * delta / (2.0 * PI))
}

fn check_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: RankTol) -> Result<()> {
    let rank = rank_of(&observability_matrix(a, c)?, tol)?;
    if rank.rank < a.nrows() {
        return Err(Error::NotObservable { rank, n: a.nrows() });
    }
    Ok(())
}

fn certify(a: &DMatrix<f64>, c: &DMatrix<f64>, seq: &SamplingSequence, tol: RankTol) -> Result<RankResult> {
    rank_of(&sampled_stack(a, c, seq.domain(), seq.times())?, tol)
}

fn place(k: usize, horizon: f64, placement: Placement, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let mut times: Vec<f64> = match placement {
        Placement::Uniform => (0..k).map(|i| horizon * (i as f64 + 0.5) / k as f64).collect(),
        // 1 - U lies in (0, 1]
        Placement::Random => (0..k).map(|_| horizon * (1.0 - rng.random::<f64>())).collect(),
    };
    times.sort_by(f64::total_cmp);
    times.windows(2).all(|w| w[0] < w[1]).then_some(times)
}

pub fn design_continuous(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    horizon: f64,
    placement: Placement,
    seed: u64,
    tol: RankTol,
) -> Result<SamplingDesign> {
    let n = a.nrows();
    check_observable(a, c, tol)?;
    let k_star = k_star_bound(a, horizon)?;
    let mut k = (k_star + K_STAR_SLACK).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last: Option<RankResult> = None;
    for _ in 0..=CONTINUOUS_RETRIES {
        if let Some(times) = place(k, horizon, placement, &mut rng) {
            let sequence = SamplingSequence::continuous(&times)?;
            let certificate = certify(a, c, &sequence, tol)?;
            if certificate.rank == n {
                return Ok(SamplingDesign {
                    target: None,
                    designed_on: DesignPair { a: a.clone(), c: c.clone() },
                    k_star: Some(k_star),
                    k,
                    sequence,
                    certificate,
                    validation: None,
                    relaxation: None,
                });
            }
            last = Some(certificate);
        }
        if placement == Placement::Uniform {
            k += 1;
        }
    }
    Err(Error::DesignFailure(format!(
        "no full-rank continuous design on a {n}-dimensional pair (k* = {k_star:.4}, last k = {k}, last rank {})",
        last.map_or("n/a".to_string(), |r| r.rank.to_string())
    )))
}

pub fn certificate_to_json(cert: &Certificate) -> Value {
    let alpha: Vec<Vec<f64>> = cert.alpha().row_iter().map(|r| r.iter().copied().collect()).collect();
    match cert {
        Certificate::RowSpace { .. } => json!({ "kind": "rowspace", "alpha": alpha }),
        Certificate::Structured(s) => {
            let q: Vec<Vec<[f64; 2]>> = s
                .q
                .coefficients()
                .iter()
                .map(|b| b.iter().map(|z| [z.re, z.im]).collect())
                .collect();
            json!({
                "kind": "structured",
                "alpha": alpha,
                "block_sizes": s.q.block_sizes(),
                "q": q,
                "residual": s.residual,
            })
        }
    }
}

const ANGLE_TOL: f64 = 1e-7;
const MODULUS_TOL: f64 = 1e-7;

/// Uniform periods `s <= s_max` under which distinct eigenvalues alias
/// (`lambda_i^s = lambda_j^s`) or a nilpotent Jordan block is skipped over.
pub fn pathological_periods(a: &DMatrix<f64>, s_max: usize) -> Result<Vec<usize>> {
    let es = eigenstructure(a, None)?;
    let zero_tol = es.cluster_tol.max(1e-12);
    let eigs = &es.eigenvalues;
    let defective_zero = eigs.iter().any(|e| e.value.norm() <= zero_tol && e.index >= 2);
    let mut out = Vec::new();
    for s in 1..=s_max {
        let mut hit = defective_zero && s >= 2;
        'pairs: for (i, ei) in eigs.iter().enumerate() {
            for ej in &eigs[i + 1..] {
                if hit {
                    break 'pairs;
                }
                let (ri, rj) = (ei.value.norm(), ej.value.norm());
                if ri <= zero_tol || rj <= zero_tol {
                    continue;
                }
                if (ri - rj).abs() > MODULUS_TOL * ri.max(rj) {
                    continue;
                }
                let turns = s as f64 * (ei.value.arg() - ej.value.arg()) / (2.0 * PI);
                hit = (turns - turns.round()).abs() <= ANGLE_TOL * s as f64;
            }
        }
        if hit {
            out.push(s);
        }
    }
    Ok(out)
}

/// Explicit-rank counterpart of [`pathological_periods`]: `s` is reported
/// when `O(A^s, C)` loses rank against `O(A, C)` for a fixed generic `C`.
/// Only meaningful while `A^s` stays well conditioned.
pub fn pathological_periods_by_rank(a: &DMatrix<f64>, s_max: usize, tol: RankTol) -> Result<Vec<usize>> {
    let es = eigenstructure(a, None)?;
    let rows = es.eigenvalues.iter().map(|e| e.geometric_multiplicity).max().unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let c = DMatrix::from_fn(rows, a.ncols(), |_, _| rng.random_range(-1.0..1.0));
    let reference = rank_of(&observability_matrix(a, &c)?, tol)?.rank;
    let mut out = Vec::new();
    for s in 1..=s_max {
        let stepped = matrix_power(a, s as i64)?;
        if rank_of(&equilibrated(observability_matrix(&stepped, &c)?), tol)?.rank < reference {
            out.push(s);
        }
    }
    Ok(out)
}

/// Rows, then columns, scaled to unit norm; the rank is unchanged.
fn equilibrated(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    m
}

/// Admissible spacings: small increments first, then anything up to `s_max`.
fn admissible_steps(pathological: &[usize], s_max: usize) -> Vec<usize> {
    let small: Vec<usize> = (1..=3).filter(|s| !pathological.contains(s)).collect();
    if !small.is_empty() {
        return small;
    }
    (1..=s_max.max(3)).filter(|s| !pathological.contains(s)).collect()
}

fn draw_discrete(k: usize, steps: &[usize], pathological: &[usize], rng: &mut impl Rng) -> Vec<i64> {
    let mut times: Vec<i64> = vec![0];
    while times.len() < k {
        let last = *times.last().expect("non-empty");
        let mut candidate = last + steps[rng.random_range(0..steps.len())] as i64;
        for _ in 0..16 {
            let clean = times.iter().all(|&t| !pathological.contains(&((candidate - t) as usize)));
            if clean {
                break;
            }
            candidate = last + steps[rng.random_range(0..steps.len())] as i64;
        }
        times.push(candidate);
    }
    times
}

pub fn default_s_max(n: usize) -> usize {
    (4 * n * n).max(1)
}

pub fn design_discrete(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: usize,
    s_max: usize,
    seed: u64,
    tol: RankTol,
) -> Result<SamplingDesign> {
    let n = a.nrows();
    let q = c.nrows().max(1);
    check_observable(a, c, tol)?;
    if k < n.div_ceil(q) {
        return Err(Error::DesignFailure(format!(
            "{k} samples of {q} outputs cannot reach rank {n}"
        )));
    }
    let pathological = pathological_periods(a, s_max)?;
    let steps = admissible_steps(&pathological, s_max);
    if steps.is_empty() {
        return Err(Error::DesignFailure(format!(
            "every spacing up to {s_max} is pathological"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<RankResult> = None;
    for _ in 0..=DISCRETE_RETRIES {
        let times = draw_discrete(k, &steps, &pathological, &mut rng);
        let sequence = SamplingSequence::discrete(&times)?;
        let certificate = certify(a, c, &sequence, tol)?;
        if certificate.rank == n {
            return Ok(SamplingDesign {
                target: None,
                designed_on: DesignPair { a: a.clone(), c: c.clone() },
                k_star: None,
                k,
                sequence,
                certificate,
                validation: None,
                relaxation: None,
            });
        }
        best = Some(certificate);
    }
    Err(Error::DesignFailure(format!(
        "no certified discrete design with {k} samples on a {n}-dimensional pair (pathological periods {pathological:?}, last rank {})",
        best.map_or(0, |r| r.rank)
    )))
}

#[derive(Debug, Clone)]
pub struct DesignParams {
    /// Window length `T` (continuous time).
    pub horizon: Option<f64>,
    /// Sample count (discrete time); defaults to the observability index of the design pair.
    pub k: Option<usize>,
    pub placement: Placement,
    pub s_max: Option<usize>,
    pub seed: u64,
    pub tol: RankTol,
    /// Supplied certificate; searched for when absent.
    pub certificate: Option<Certificate>,
}

impl Default for DesignParams {
    fn default() -> Self {
        DesignParams {
            horizon: None,
            k: None,
            placement: Placement::Uniform,
            s_max: None,
            seed: 0,
            tol: RankTol::Default,
            certificate: None,
        }
    }
}

fn search_certificate(sys: &LtiSystem, f: &DMatrix<f64>, target: SamplingTarget, seed: u64) -> Result<Certificate> {
    if target == SamplingTarget::FunctionalViaC {
        return rowspace_certificate(sys.c(), f)
            .map(|alpha| Certificate::RowSpace { alpha })
            .ok_or_else(|| Error::MissingCertificate("F is not a combination of the rows of C".into()));
    }
    find_certificate(sys, f, seed)
}

/// `F = alpha C` if possible, otherwise a searched `(alpha, Q)` pair.
pub fn find_certificate(sys: &LtiSystem, f: &DMatrix<f64>, seed: u64) -> Result<Certificate> {
    if let Some(alpha) = rowspace_certificate(sys.c(), f) {
        return Ok(Certificate::RowSpace { alpha });
    }
    let jd = jordan_data(sys.a(), sys.c(), f)
        .map_err(|e| Error::MissingCertificate(format!("Jordan data unavailable: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match find_structured_q(&jd, &mut rng) {
        Ok(Some(cert)) => Ok(Certificate::Structured(cert)),
        Ok(None) => Err(Error::MissingCertificate(
            "no (alpha, Q) with F_J = alpha C_J Q was found".into(),
        )),
        Err(e) => Err(Error::MissingCertificate(e.to_string())),
    }
}

fn design_pair(
    sys: &LtiSystem,
    target: SamplingTarget,
    params: &DesignParams,
) -> Result<(DesignPair, Option<Certificate>)> {
    match target {
        SamplingTarget::FullState => {
            check_observable(sys.a(), sys.c(), params.tol).map_err(|e| Error::DesignFailure(e.to_string()))?;
            Ok((DesignPair { a: sys.a().clone(), c: sys.c().clone() }, None))
        }
        SamplingTarget::ObservableSubspace => {
            let dec = observable_decomposition(sys.a(), sys.c(), params.tol)?;
            Ok((DesignPair { a: dec.a_ob, c: dec.c_ob }, None))
        }
        SamplingTarget::FunctionalViaC | SamplingTarget::FunctionalViaQ => {
            let f = sys.require_f()?;
            let cert = match &params.certificate {
                Some(c) => c.clone(),
                None => search_certificate(sys, f, target, params.seed)?,
            };
            if target == SamplingTarget::FunctionalViaC && !matches!(cert, Certificate::RowSpace { .. }) {
                return Err(Error::MissingCertificate("functional_via_C needs F = alpha C".into()));
            }
            let dec = observable_decomposition(sys.a(), f, params.tol)?;
            Ok((DesignPair { a: dec.a_ob, c: dec.c_ob }, Some(cert)))
        }
    }
}

fn design_on(pair: &DesignPair, domain: TimeDomain, params: &DesignParams, seed: u64) -> Result<SamplingDesign> {
    let n = pair.dim();
    if n == 0 {
        let t = match domain {
            TimeDomain::Discrete => 0.0,
            TimeDomain::Continuous => params.horizon.unwrap_or(1.0) / 2.0,
        };
        let sequence = SamplingSequence::new(vec![t], domain)?;
        return Ok(SamplingDesign {
            target: None,
            designed_on: pair.clone(),
            k_star: (domain == TimeDomain::Continuous).then_some(0.0),
            k: 1,
            certificate: RankResult {
                rank: 0,
                singular_values: vec![],
                tolerance_used: 0.0,
            },
            sequence,
            validation: None,
            relaxation: None,
        });
    }
    match domain {
        TimeDomain::Continuous => {
            let horizon = params
                .horizon
                .ok_or_else(|| Error::DesignFailure("continuous-time design needs a horizon T".into()))?;
            design_continuous(&pair.a, &pair.c, horizon, params.placement, seed, params.tol)
        }
        TimeDomain::Discrete => {
            let k = match params.k {
                Some(k) => k,
                None => observability_index(&pair.a, &pair.c, params.tol)?.max(1),
            };
            let s_max = params.s_max.unwrap_or_else(|| default_s_max(n));
            design_discrete(&pair.a, &pair.c, k, s_max, seed, params.tol)
        }
    }
}

/// Designs on the pair appropriate for `target` and re-validates the result
/// on the original system.
pub fn design_for_target(sys: &LtiSystem, target: SamplingTarget, params: &DesignParams) -> Result<SamplingDesign> {
    if let Some(f) = sys.f() {
        let classical = is_functionally_observable(sys.a(), sys.c(), f, params.tol)?;
        if !classical.functionally_observable {
            return Err(Error::DesignFailure(format!(
                "F is not functionally observable: rank (O; F) = {} > rank O = {}",
                classical.with_functional.rank, classical.observability.rank
            )));
        }
    }
    let (pair, relaxation) = design_pair(sys, target, params)?;
    let mut failure = String::new();
    for attempt in 0..=CONTINUOUS_RETRIES as u64 {
        let mut design = design_on(&pair, sys.domain(), params, params.seed.wrapping_add(attempt))?;
        design.target = Some(target);
        design.relaxation = relaxation.clone();
        match sys.f() {
            Some(f) => {
                let check = is_sample_based_functionally_observable(sys, f, &design.sequence, params.tol)?;
                if check.holds {
                    design.validation = Some(check);
                    return Ok(design);
                }
                failure = format!(
                    "functional test fails on the original system: rank {} vs {}",
                    check.stacked.rank, check.sampled.rank
                );
            }
            None => {
                let report = check_partial_observability(sys, &design.sequence, params.tol)?;
                let ok = match target {
                    SamplingTarget::FullState => report.sampled_rank.rank == sys.n(),
                    _ => report.conclusion_holds,
                };
                if ok {
                    return Ok(design);
                }
                failure = format!(
                    "sampled rank {} does not recover the observable subspace",
                    report.sampled_rank.rank
                );
            }
        }
    }
    Err(Error::DesignFailure(failure))
}

#[derive(Debug, Clone, Copy)]
pub struct ScheduleParams {
    pub window: usize,
    pub end: f64,
    /// Mean spacing of continuous-time instants.
    pub step: f64,
    pub seed: u64,
    pub tol: RankTol,
}

/// Sequence on `[0, end]` in which every run of `window` consecutive samples
/// certifies full rank of the sampled observability matrix of `(a, c)`.
///
/// Discrete spacings are drawn from the admissible small steps; continuous
/// spacings are uniform in `[step / 2, 3 step / 2]`.
pub fn certified_schedule(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    domain: TimeDomain,
    params: ScheduleParams,
) -> Result<SamplingSequence> {
    let ScheduleParams {
        window,
        end,
        step,
        seed,
        tol,
    } = params;
    let n = a.nrows();
    if window == 0 || window * c.nrows().max(1) < n {
        return Err(Error::DesignFailure(format!(
            "windows of {window} samples cannot reach rank {n}"
        )));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(Error::DesignFailure(format!("step must be positive, got {step}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = match domain {
        TimeDomain::Discrete => {
            let s_max = default_s_max(n);
            admissible_steps(&pathological_periods(a, s_max)?, s_max)
        }
        TimeDomain::Continuous => vec![],
    };
    if domain == TimeDomain::Discrete && steps.is_empty() {
        return Err(Error::DesignFailure("every small spacing is pathological".into()));
    }
    let mut times = vec![0.0];
    loop {
        let last = *times.last().expect("non-empty");
        let mut accepted = None;
        for _ in 0..32 {
            let next = match domain {
                TimeDomain::Discrete => last + steps[rng.random_range(0..steps.len())] as f64,
                TimeDomain::Continuous => last + step * rng.random_range(0.5..1.5),
            };
            if next > end {
                return SamplingSequence::new(times, domain);
            }
            if times.len() + 1 < window {
                accepted = Some(next);
                break;
            }
            let mut recent = times[times.len() + 1 - window..].to_vec();
            recent.push(next);
            let rank = rank_of(&sampled_stack(a, c, domain, &rank_window(&recent))?, tol)?;
            if rank.rank == n {
                accepted = Some(next);
                break;
            }
        }
        match accepted {
            Some(t) => times.push(t),
            None => {
                return Err(Error::DesignFailure(format!(
                    "could not extend a certified schedule beyond t = {last}"
                )))
            }
        }
    }
}

/// Window instants relative to the first one, as used by the regressor.
fn rank_window(times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| t - times[0]).collect()
}
