#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use obsvkit::{LtiSystem, RankTol, SamplingSequence, TimeDomain};
use rand::seq::SliceRandom;
use rand::Rng;

/// Threshold used by the randomized suites; generated spectra keep the
/// relevant singular values well above it.
pub const TOL: RankTol = RankTol::Relative(1e-9);

/// One real or complex-pair mode of a modal-form matrix.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Real(f64),
    /// `re +- i im`
    Pair(f64, f64),
}

impl Mode {
    pub fn dim(self) -> usize {
        match self {
            Mode::Real(_) => 1,
            Mode::Pair(..) => 2,
        }
    }
}

fn discrete_modes() -> (Vec<f64>, Vec<(f64, f64)>) {
    (
        vec![0.5, 0.8, -0.8, 1.0, 1.2, -1.0, -0.6],
        vec![(1.0, PI / 2.0), (1.1, 2.0 * PI / 3.0), (0.9, 1.0), (0.8, 2.0), (1.2, 1.0)],
    )
}

fn continuous_modes() -> (Vec<f64>, Vec<(f64, f64)>) {
    (
        vec![-1.0, -0.5, 0.0, 0.3, 0.7],
        vec![(0.0, 1.0), (-0.2, 2.0), (0.1, 0.5), (-0.3, 1.5)],
    )
}

/// Distinct modes totalling exactly `n` states.
pub fn random_modes(rng: &mut impl Rng, n: usize, domain: TimeDomain) -> Vec<Mode> {
    let (mut reals, mut pairs) = match domain {
        TimeDomain::Discrete => discrete_modes(),
        TimeDomain::Continuous => continuous_modes(),
    };
    reals.shuffle(rng);
    pairs.shuffle(rng);
    let mut modes = Vec::new();
    let mut left = n;
    while left > 0 {
        let want_pair = left >= 2 && !pairs.is_empty() && (reals.is_empty() || rng.random_bool(0.5));
        if want_pair {
            let (a, b) = pairs.pop().unwrap();
            modes.push(match domain {
                TimeDomain::Discrete => Mode::Pair(a * b.cos(), a * b.sin()),
                TimeDomain::Continuous => Mode::Pair(a, b),
            });
            left -= 2;
        } else {
            modes.push(Mode::Real(reals.pop().expect("enough real modes")));
            left -= 1;
        }
    }
    modes
}

pub fn modal_matrix(modes: &[Mode]) -> DMatrix<f64> {
    let n: usize = modes.iter().map(|m| m.dim()).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    for m in modes {
        match *m {
            Mode::Real(l) => {
                a[(k, k)] = l;
                k += 1;
            }
            Mode::Pair(re, im) => {
                a[(k, k)] = re;
                a[(k, k + 1)] = im;
                a[(k + 1, k)] = -im;
                a[(k + 1, k + 1)] = re;
                k += 2;
            }
        }
    }
    a
}

pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A triple in modal coordinates, rotated by a random orthogonal matrix.
pub struct RandomSystem {
    pub sys: LtiSystem,
    pub modes: Vec<Mode>,
    /// Modal columns hidden from `C`.
    pub hidden: Vec<bool>,
    pub transform: DMatrix<f64>,
}

impl RandomSystem {
    /// Maps a modal-coordinate row matrix to original coordinates.
    pub fn modal_to_original(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        rows * self.transform.transpose()
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }
}

/// Random system with `hide` modes (at most) removed from the output.
pub fn random_system(rng: &mut impl Rng, n: usize, q: usize, domain: TimeDomain, hide: usize) -> RandomSystem {
    let modes = random_modes(rng, n, domain);
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.shuffle(rng);
    let hidden_modes: Vec<usize> = order.into_iter().take(hide.min(modes.len().saturating_sub(1))).collect();
    let mut hidden = vec![false; n];
    let mut k = 0;
    for (i, m) in modes.iter().enumerate() {
        for j in 0..m.dim() {
            hidden[k + j] = hidden_modes.contains(&i);
        }
        k += m.dim();
    }
    let mut c = random_matrix(rng, q, n);
    for (j, h) in hidden.iter().enumerate() {
        if *h {
            c.column_mut(j).fill(0.0);
        }
    }
    let t = random_orthogonal(rng, n);
    let a = &t * modal_matrix(&modes) * t.transpose();
    let sys = LtiSystem::autonomous(domain, a, c * t.transpose()).expect("valid system");
    RandomSystem {
        sys,
        modes,
        hidden,
        transform: t,
    }
}

/// Functional flavours: arbitrary rows, combinations of observable modal
/// directions, or support on a random subset of modes.
pub fn random_functional(rng: &mut impl Rng, rs: &RandomSystem, r: usize) -> DMatrix<f64> {
    let n = rs.n();
    let mut modal = random_matrix(rng, r, n);
    match rng.random_range(0..3) {
        0 => {}
        1 => {
            for (j, h) in rs.hidden.iter().enumerate() {
                if *h {
                    modal.column_mut(j).fill(0.0);
                }
            }
        }
        _ => {
            let mut k = 0;
            for m in &rs.modes {
                if rng.random_bool(0.5) {
                    modal.columns_mut(k, m.dim()).fill(0.0);
                }
                k += m.dim();
            }
        }
    }
    rs.modal_to_original(&modal)
}

/// Functionally observable by construction.
pub fn observable_functional(rng: &mut impl Rng, rs: &RandomSystem, r: usize) -> DMatrix<f64> {
    let mut modal = random_matrix(rng, r, rs.n());
    for (j, h) in rs.hidden.iter().enumerate() {
        if *h {
            modal.column_mut(j).fill(0.0);
        }
    }
    rs.modal_to_original(&modal)
}

pub fn random_discrete_sequence(rng: &mut impl Rng, max_len: usize, t_max: i64) -> SamplingSequence {
    let len = rng.random_range(1..=max_len);
    let mut pool: Vec<i64> = (0..=t_max).collect();
    pool.shuffle(rng);
    let mut times: Vec<i64> = pool.into_iter().take(len).collect();
    times.sort();
    SamplingSequence::discrete(&times).unwrap()
}

/// Mostly irregular instants in `(0, 5]`; occasionally uniform with a period
/// that aliases an oscillation of the generators.
pub fn random_continuous_sequence(rng: &mut impl Rng, max_len: usize) -> SamplingSequence {
    let len = rng.random_range(1..=max_len);
    let mut times: Vec<f64> = if rng.random_bool(0.25) {
        let period = [PI, PI / 2.0, 2.0 * PI][rng.random_range(0..3)];
        (0..len).map(|i| 0.3 + period * i as f64).collect()
    } else {
        (0..len).map(|_| 5.0 * (1.0 - rng.random::<f64>())).collect()
    };
    times.sort_by(f64::total_cmp);
    times.dedup();
    SamplingSequence::continuous(&times).unwrap()
}

fn to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite entry")
}

/// Exact rank over the rationals of a floating-point matrix.
pub fn exact_rank(m: &DMatrix<f64>) -> usize {
    let (rows, cols) = m.shape();
    let a = (0..rows).map(|i| (0..cols).map(|j| to_rational(m[(i, j)])).collect()).collect();
    rational_rank(a, cols)
}

/// Exact integer matrix power for the rational oracle.
pub fn exact_power(a: &DMatrix<f64>, t: u32) -> Vec<Vec<BigInt>> {
    let n = a.nrows();
    let base: Vec<Vec<BigInt>> = (0..n).map(|i| (0..n).map(|j| BigInt::from(a[(i, j)] as i64)).collect()).collect();
    let mut out: Vec<Vec<BigInt>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect()).collect();
    for _ in 0..t {
        out = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| &out[i][k] * &base[k][j]).sum()).collect())
            .collect();
    }
    out
}

/// Exact rank of a stack of integer row blocks `C_k A^{t}`.
pub fn exact_stack_rank(a: &DMatrix<f64>, blocks: &[(&DMatrix<f64>, &[u32])]) -> usize {
    let n = a.ncols();
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    for (c, times) in blocks {
        for &t in times.iter() {
            let p = exact_power(a, t);
            for r in 0..c.nrows() {
                rows.push(
                    (0..n)
                        .map(|j| {
                            let v: BigInt = (0..n).map(|k| BigInt::from(c[(r, k)] as i64) * &p[k][j]).sum();
                            BigRational::from_integer(v)
                        })
                        .collect(),
                );
            }
        }
    }
    rational_rank(rows, n)
}

fn rational_rank(mut a: Vec<Vec<BigRational>>, cols: usize) -> usize {
    let rows = a.len();
    let mut rank = 0;
    for col in 0..cols {
        let Some(p) = (rank..rows).find(|&i| !a[i][col].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][col].clone();
        for i in rank + 1..rows {
            if a[i][col].is_zero() {
                continue;
            }
            let factor = &a[i][col] / &pivot;
            for j in col..cols {
                let delta = &factor * &a[rank][j];
                a[i][j] -= delta;
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}
