//! Classical and sample-based observability matrices and the observable
//! canonical decomposition.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    matrix_exponential, matrix_power, null_space_basis, rank_of, row_and_null_space, subspaces_equal, vstack,
    RankResult, RankTol,
};
use crate::system::{LtiSystem, SamplingSequence, TimeDomain};

/// Tolerance on basis projection residuals when comparing null spaces.
pub const SUBSPACE_TOL: f64 = 1e-6;

fn check_pair(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if c.ncols() != a.nrows() {
        return Err(Error::InvalidMatrix(format!(
            "output matrix has {} columns, state dimension is {}",
            c.ncols(),
            a.nrows()
        )));
    }
    Ok(())
}

/// `(C; CA; ...; CA^{n-1})`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_pair(a, c)?;
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut row = c.clone();
    for _ in 0..n {
        let next = &row * a;
        blocks.push(row);
        row = next;
    }
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    Ok(if refs.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        vstack(&refs)
    })
}

/// State transition over `t`: `A^t` (discrete) or `e^{At}` (continuous).
pub fn transition(a: &DMatrix<f64>, domain: TimeDomain, t: f64) -> Result<DMatrix<f64>> {
    match domain {
        TimeDomain::Discrete => {
            if t.fract() != 0.0 {
                return Err(Error::InvalidMatrix(format!("discrete transition over non-integer time {t}")));
            }
            matrix_power(a, t as i64)
        }
        TimeDomain::Continuous => matrix_exponential(a, t),
    }
}

/// Stack of `C_like * Psi(t_i)` over the sequence, for an explicit pair.
pub fn sampled_stack(
    a: &DMatrix<f64>,
    c_like: &DMatrix<f64>,
    domain: TimeDomain,
    times: &[f64],
) -> Result<DMatrix<f64>> {
    check_pair(a, c_like)?;
    let blocks = times
        .iter()
        .map(|&t| Ok(c_like * transition(a, domain, t)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    if refs.is_empty() || a.nrows() == 0 {
        return Ok(DMatrix::zeros(c_like.nrows() * times.len(), a.nrows()));
    }
    Ok(vstack(&refs))
}

pub(crate) fn check_domain(sys: &LtiSystem, seq: &SamplingSequence) -> Result<()> {
    if sys.domain() != seq.domain() {
        return Err(Error::DomainMismatch {
            system: sys.domain(),
            sequence: seq.domain(),
        });
    }
    Ok(())
}

/// Sample-based observability matrix of `(A, C_like)` for `seq`.
pub fn sampled_observability_matrix(
    sys: &LtiSystem,
    c_like: &DMatrix<f64>,
    seq: &SamplingSequence,
) -> Result<DMatrix<f64>> {
    check_domain(sys, seq)?;
    sampled_stack(sys.a(), c_like, sys.domain(), seq.times())
}

/// Full column rank of the sample-based observability matrix.
pub fn is_sample_based_observable(
    sys: &LtiSystem,
    seq: &SamplingSequence,
    tol: RankTol,
) -> Result<(bool, RankResult)> {
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let rank = rank_of(&os, tol)?;
    Ok((rank.rank == sys.n(), rank))
}

/// Observable canonical decomposition with an orthogonal transformation.
///
/// `P_o = [R N]` where `R` spans the row space of `O(A, C)` and `N` its null
/// space, so that
/// `P_o^T A P_o = [[A_ob, 0], [A_21, A_unob]]` and `C P_o = [C_ob, 0]`.
#[derive(Debug, Clone)]
pub struct ObservableDecomposition {
    pub p_o: DMatrix<f64>,
    pub a_o: DMatrix<f64>,
    pub c_o: DMatrix<f64>,
    pub a_ob: DMatrix<f64>,
    pub c_ob: DMatrix<f64>,
    /// Unobservable-subspace dimension.
    pub p: usize,
    /// Observability index of `(A_ob, C_ob)`; zero when the observable block is empty.
    pub observability_index: usize,
    pub rank: RankResult,
}

impl ObservableDecomposition {
    pub fn n(&self) -> usize {
        self.p_o.nrows()
    }

    pub fn n_ob(&self) -> usize {
        self.n() - self.p
    }

    /// `P_o^{-1}`; the transformation is orthogonal.
    pub fn p_o_inv(&self) -> DMatrix<f64> {
        self.p_o.transpose()
    }

    /// First `n - p` columns of `M P_o`.
    pub fn observable_part(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        (m * &self.p_o).columns(0, self.n_ob()).into_owned()
    }

    /// Observable coordinates of a state given in the original basis.
    pub fn project_state(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        (self.p_o_inv() * x).rows(0, self.n_ob()).into_owned()
    }
}

pub fn observable_decomposition(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: RankTol,
) -> Result<ObservableDecomposition> {
    let o = observability_matrix(a, c)?;
    let n = a.nrows();
    let (rank, range, null) = row_and_null_space(&o, tol)?;
    let r = rank.rank;
    let mut p_o = DMatrix::<f64>::zeros(n, n);
    p_o.columns_mut(0, r).copy_from(&range);
    p_o.columns_mut(r, n - r).copy_from(&null);
    let a_o = p_o.transpose() * a * &p_o;
    let c_o = c * &p_o;
    let a_ob = a_o.view((0, 0), (r, r)).into_owned();
    let c_ob = c_o.columns(0, r).into_owned();
    let observability_index = if r == 0 { 0 } else { observability_index(&a_ob, &c_ob, tol)? };
    Ok(ObservableDecomposition {
        p_o,
        a_o,
        c_o,
        a_ob,
        c_ob,
        p: n - r,
        observability_index,
        rank,
    })
}

/// Smallest `nu` such that `(C; ...; CA^{nu-1})` has rank `n`.
pub fn observability_index(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: RankTol) -> Result<usize> {
    check_pair(a, c)?;
    let n = a.nrows();
    let full = rank_of(&observability_matrix(a, c)?, tol)?;
    if full.rank < n {
        return Err(Error::NotObservable { rank: full, n });
    }
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut row = c.clone();
    for nu in 1..=n {
        let next = &row * a;
        blocks.push(row);
        row = next;
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        if rank_of(&vstack(&refs), tol)?.rank == n {
            return Ok(nu);
        }
    }
    Err(Error::NotObservable { rank: full, n })
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialObservabilityReport {
    /// Rank of the sample-based observability matrix of `(A_ob, C_ob)`.
    pub observable_block_rank: RankResult,
    /// `n - p`.
    pub observable_dimension: usize,
    pub hypothesis_holds: bool,
    pub sampled_rank: RankResult,
    pub classical_rank: RankResult,
    /// `null(O_s(A, C)) = null(O(A, C))`.
    pub conclusion_holds: bool,
}

/// Evaluates the hypothesis (full rank of the sampled observable block) and
/// the conclusion (sampled and classical null spaces coincide) independently.
pub fn check_partial_observability(sys: &LtiSystem, seq: &SamplingSequence, tol: RankTol) -> Result<PartialObservabilityReport> {
    check_domain(sys, seq)?;
    let decomp = observable_decomposition(sys.a(), sys.c(), tol)?;
    let n_ob = decomp.n_ob();
    let block = sampled_stack(&decomp.a_ob, &decomp.c_ob, sys.domain(), seq.times())?;
    let observable_block_rank = rank_of(&block, tol)?;
    let os = sampled_observability_matrix(sys, sys.c(), seq)?;
    let o = observability_matrix(sys.a(), sys.c())?;
    let sampled_rank = rank_of(&os, tol)?;
    let classical_rank = rank_of(&o, tol)?;
    let null_s = null_space_basis(&os, tol)?;
    let null_o = null_space_basis(&o, tol)?;
    let conclusion_holds = subspaces_equal(&null_s, &null_o, SUBSPACE_TOL)?;
    Ok(PartialObservabilityReport {
        hypothesis_holds: observable_block_rank.rank == n_ob,
        observable_block_rank,
        observable_dimension: n_ob,
        sampled_rank,
        classical_rank,
        conclusion_holds,
    })
}
