//! Dense linear algebra kernel.
//!
//! Every rank decision in the crate goes through [`rank_of`] so that the
//! threshold is explicit and reported back in a [`RankResult`]. Real data is
//! handled in `f64`; complex arithmetic is only used where Jordan data is
//! required.

use nalgebra::{ComplexField, DMatrix, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold policy for singular-value rank decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum RankTol {
    /// `max(rows, cols) * eps * sigma_max`.
    #[default]
    Default,
    /// Singular values strictly above this value count toward the rank.
    Absolute(f64),
    /// Threshold is `factor * sigma_max`.
    Relative(f64),
}

impl RankTol {
    fn resolve(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        let tol = match self {
            RankTol::Default => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            RankTol::Absolute(t) => t,
            RankTol::Relative(f) => f * sigma_max,
        };
        tol.max(f64::MIN_POSITIVE)
    }
}

impl From<Option<f64>> for RankTol {
    fn from(tol: Option<f64>) -> Self {
        tol.map_or(RankTol::Default, RankTol::Absolute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    /// Non-increasing, `min(rows, cols)` entries.
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

impl RankResult {
    pub fn is_full(&self, dim: usize) -> bool {
        self.rank == dim
    }
}

pub(crate) fn check_finite<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.clone().is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
    }
}

/// Singular values (descending) and the full set of right singular vectors.
struct FullSvd<T: ComplexField> {
    sigma: Vec<f64>,
    /// `cols x cols`; column `j` pairs with `sigma[j]` (zero for `j >= min(rows, cols)`).
    v: DMatrix<T>,
}

fn full_svd<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> FullSvd<T> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return FullSvd {
            sigma: Vec::new(),
            v: DMatrix::zeros(0, 0),
        };
    }
    // Zero rows leave the spectrum unchanged but force a square V.
    let work = if rows < cols {
        let mut padded = DMatrix::<T>::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = SVD::new(work, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut v = DMatrix::<T>::zeros(cols, cols);
    for (j, &src) in order.iter().enumerate() {
        for i in 0..cols {
            v[(i, j)] = v_t[(src, i)].clone().conjugate();
        }
    }
    let sigma = order
        .iter()
        .take(rows.min(cols))
        .map(|&i| svd.singular_values[i])
        .collect();
    FullSvd { sigma, v }
}

fn rank_from_sigma(sigma: &[f64], rows: usize, cols: usize, tol: RankTol) -> RankResult {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tolerance_used = tol.resolve(rows, cols, smax);
    RankResult {
        rank: sigma.iter().filter(|&&s| s > tolerance_used).count(),
        singular_values: sigma.to_vec(),
        tolerance_used,
    }
}

pub fn singular_values<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn rank_of<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, tol: RankTol) -> Result<RankResult> {
    check_finite(m, "matrix")?;
    let sigma = singular_values(m);
    Ok(rank_from_sigma(&sigma, m.nrows(), m.ncols(), tol))
}

/// Rank together with orthonormal bases of the row space (as columns) and
/// the right null space.
pub fn row_and_null_space<T: ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
    tol: RankTol,
) -> Result<(RankResult, DMatrix<T>, DMatrix<T>)> {
    check_finite(m, "matrix")?;
    let cols = m.ncols();
    let svd = full_svd(m);
    let rank = rank_from_sigma(&svd.sigma, m.nrows(), cols, tol);
    let r = rank.rank;
    let range = svd.v.columns(0, r).into_owned();
    let null = svd.v.columns(r, cols - r).into_owned();
    Ok((rank, range, null))
}

pub fn null_space_basis<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, tol: RankTol) -> Result<DMatrix<T>> {
    Ok(row_and_null_space(m, tol)?.2)
}

/// The `count` right singular vectors belonging to the smallest singular values.
pub(crate) fn smallest_right_singular_vectors(m: &DMatrix<Complex64>, count: usize) -> DMatrix<Complex64> {
    let svd = full_svd(m);
    let cols = m.ncols();
    svd.v.columns(cols - count, count).into_owned()
}

fn orthonormality_defect<T: ComplexField<RealField = f64>>(b: &DMatrix<T>) -> f64 {
    let gram = b.adjoint() * b;
    let eye = DMatrix::<T>::identity(b.ncols(), b.ncols());
    (gram - eye).iter().map(|x| x.clone().modulus()).fold(0.0, f64::max)
}

/// Whether two orthonormal bases span the same subspace.
pub fn subspaces_equal<T: ComplexField<RealField = f64>>(b1: &DMatrix<T>, b2: &DMatrix<T>, tol: f64) -> Result<bool> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::InvalidBasis(format!(
            "bases live in different spaces ({} vs {} rows)",
            b1.nrows(),
            b2.nrows()
        )));
    }
    for (name, b) in [("first", b1), ("second", b2)] {
        let defect = orthonormality_defect(b);
        if defect > 1e-8 {
            return Err(Error::InvalidBasis(format!(
                "{name} basis is not orthonormal (defect {defect:.3e})"
            )));
        }
    }
    if b1.ncols() != b2.ncols() {
        return Ok(false);
    }
    let contained = |x: &DMatrix<T>, y: &DMatrix<T>| {
        let residual = x - y * (y.adjoint() * x);
        residual.column_iter().all(|c| c.norm() < tol)
    };
    Ok(contained(b1, b2) && contained(b2, b1))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

// Degree-m Padé numerator coefficients, m in {3, 5, 7, 9, 13}.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
// Largest 1-norm for which each degree meets unit roundoff in double precision.
const THETA: [(f64, usize); 4] = [
    (1.495585217958292e-2, 3),
    (2.539_398_330_063_23e-1, 5),
    (9.504178996162932e-1, 7),
    (2.097847961257068, 9),
];
const THETA13: f64 = 5.371920351148152;

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut u_poly = &eye * b[1];
    let mut v = &eye * b[0];
    let mut power = eye.clone();
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        u_poly += &power * b[2 * k + 1];
        v += &power * b[2 * k];
    }
    (a * u_poly, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    (u, v)
}

/// `e^{A t}` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !t.is_finite() {
        return Err(Error::InvalidMatrix("non-finite time argument".into()));
    }
    check_finite(a, "matrix")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let at = a * t;
    let norm = one_norm(&at);
    let (num_plus, num_minus, squarings) = match THETA.iter().find(|(theta, _)| norm <= *theta) {
        Some(&(_, m)) => {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(&at, coeffs);
            (&v + &u, &v - &u, 0)
        }
        None => {
            let s = if norm > THETA13 {
                (norm / THETA13).log2().ceil() as i32
            } else {
                0
            };
            let scaled = &at / 2f64.powi(s);
            let (u, v) = pade13(&scaled);
            (&v + &u, &v - &u, s)
        }
    };
    let mut result = num_minus
        .lu()
        .solve(&num_plus)
        .ok_or_else(|| Error::InvalidMatrix("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// `A^t` by binary exponentiation.
pub fn matrix_power<T: ComplexField>(a: &DMatrix<T>, t: i64) -> Result<DMatrix<T>> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "matrix power needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if t < 0 {
        return Err(Error::InvalidExponent(t));
    }
    let n = a.nrows();
    let mut result = DMatrix::<T>::identity(n, n);
    let mut base = a.clone();
    let mut e = t as u64;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub value: Complex64,
    pub algebraic_multiplicity: usize,
    pub geometric_multiplicity: usize,
    /// Size of the largest Jordan block.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenStructure {
    /// Distinct eigenvalues, real ones first (ascending), then conjugate
    /// pairs with the negative imaginary part first.
    pub eigenvalues: Vec<Eigenvalue>,
    pub cluster_tol: f64,
    /// Two clusters lie closer than `2 * cluster_tol`.
    pub ambiguous: bool,
}

impl EigenStructure {
    /// Number of distinct eigenvalues.
    pub fn v(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Sum of the eigenvalue indices.
    pub fn d(&self) -> usize {
        self.eigenvalues.iter().map(|e| e.index).sum()
    }

    pub fn distinct(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.eigenvalues.iter().map(|e| e.value)
    }

    pub fn geometric_multiplicity_one(&self) -> bool {
        self.eigenvalues.iter().all(|e| e.geometric_multiplicity == 1)
    }
}

pub fn default_cluster_tol(a: &DMatrix<f64>) -> f64 {
    (1e-8 * a.norm()).max(f64::MIN_POSITIVE)
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub(crate) fn shifted(a: &DMatrix<Complex64>, lambda: Complex64) -> DMatrix<Complex64> {
    let mut s = a.clone();
    for i in 0..a.nrows() {
        s[(i, i)] -= lambda;
    }
    s
}

fn eigen_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    let a_real = a.im == 0.0;
    let b_real = b.im == 0.0;
    b_real
        .cmp(&a_real)
        .then(a.re.total_cmp(&b.re))
        .then(a.im.abs().total_cmp(&b.im.abs()))
        .then(a.im.total_cmp(&b.im))
}

/// Distinct eigenvalues with multiplicities and indices.
///
/// Eigenvalues within `cluster_tol` of each other (single linkage) form one
/// cluster; the index is read off the stabilisation of
/// `nullity((A - lambda I)^k)`.
pub fn eigenstructure(a: &DMatrix<f64>, cluster_tol: Option<f64>) -> Result<EigenStructure> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "eigenstructure needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "matrix")?;
    let n = a.nrows();
    let tol = cluster_tol.unwrap_or_else(|| default_cluster_tol(a));
    if n == 0 {
        return Ok(EigenStructure {
            eigenvalues: Vec::new(),
            cluster_tol: tol,
            ambiguous: false,
        });
    }
    let raw: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();

    // union-find over pairs within tolerance
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (raw[i] - raw[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match roots.iter().position(|&x| x == r) {
            Some(k) => {
                clusters[k].0 += raw[i];
                clusters[k].1 += 1;
            }
            None => {
                roots.push(r);
                clusters.push((raw[i], 1));
            }
        }
    }
    let mut values: Vec<(Complex64, usize)> = clusters
        .into_iter()
        .map(|(sum, m)| {
            let mut mean = sum / m as f64;
            if mean.im.abs() <= tol {
                mean.im = 0.0;
            }
            (mean, m)
        })
        .collect();
    // exact conjugate symmetry for the pairs of a real matrix
    for i in 0..values.len() {
        if values[i].0.im > 0.0 {
            let target = values[i].0.conj();
            if let Some(j) = (0..values.len())
                .filter(|&j| j != i && values[j].0.im < 0.0)
                .min_by(|&x, &y| (values[x].0 - target).norm().total_cmp(&(values[y].0 - target).norm()))
            {
                let avg = (values[i].0 + values[j].0.conj()) / 2.0;
                values[i].0 = avg;
                values[j].0 = avg.conj();
            }
        }
    }
    values.sort_by(|x, y| eigen_order(&x.0, &y.0));

    let mut ambiguous = false;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if (values[i].0 - values[j].0).norm() < 2.0 * tol {
                ambiguous = true;
            }
        }
    }

    let ac = to_complex(a);
    let eigenvalues = values
        .into_iter()
        .map(|(value, m)| {
            let (geometric, index) = nullity_profile(&ac, value, m);
            Eigenvalue {
                value,
                algebraic_multiplicity: m,
                geometric_multiplicity: geometric,
                index,
            }
        })
        .collect();
    Ok(EigenStructure {
        eigenvalues,
        cluster_tol: tol,
        ambiguous,
    })
}

/// Geometric multiplicity and index of `lambda` with algebraic multiplicity `m`.
fn nullity_profile(a: &DMatrix<Complex64>, lambda: Complex64, m: usize) -> (usize, usize) {
    let n = a.nrows();
    let s = shifted(a, lambda);
    let scale = s.norm().max(1.0);
    let mut power = DMatrix::<Complex64>::identity(n, n);
    let mut prev = 0usize;
    let mut geometric = 1usize;
    let mut index = 1usize;
    for k in 1..=m {
        power = &power * &s;
        let tau = 1e-8 * scale.powi(k as i32);
        let nullity = singular_values(&power).iter().filter(|&&x| x <= tau).count().min(m);
        if k == 1 {
            geometric = nullity.max(1);
        }
        if nullity <= prev {
            break;
        }
        index = k;
        prev = nullity;
        if nullity == m {
            break;
        }
    }
    (geometric, index)
}

/// Least-squares solution of `Phi x = Y` via Householder QR.
pub fn solve_least_squares(phi: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(phi, "regressor")?;
    check_finite(y, "right-hand side")?;
    if phi.nrows() != y.nrows() {
        return Err(Error::InvalidMatrix(format!(
            "regressor has {} rows but right-hand side has {}",
            phi.nrows(),
            y.nrows()
        )));
    }
    let cols = phi.ncols();
    if cols == 0 {
        return Ok(DMatrix::zeros(0, y.ncols()));
    }
    let rank = rank_of(phi, RankTol::Default)?;
    if rank.rank < cols {
        return Err(Error::RankDeficientRegressor {
            rank,
            columns: cols,
            window: None,
        });
    }
    let qr = phi.clone().qr();
    let rhs = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::InvalidMatrix("triangular factor is singular".into()))
}

/// Complex least squares via SVD pseudo-inverse.
pub(crate) fn solve_least_squares_complex(
    m: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
) -> Option<DMatrix<Complex64>> {
    if m.is_empty() {
        return Some(DMatrix::zeros(m.ncols(), b.ncols()));
    }
    let eps = 1e-12 * singular_values(m).first().copied().unwrap_or(0.0);
    SVD::new(m.clone(), true, true).solve(b, eps.max(f64::MIN_POSITIVE)).ok()
}

/// Vertical concatenation.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert!(b.nrows() == 0 || b.ncols() == cols);
        if b.nrows() > 0 {
            out.rows_mut(r, b.nrows()).copy_from(*b);
        }
        r += b.nrows();
    }
    out
}
