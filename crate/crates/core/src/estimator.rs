//! Least-squares reconstruction of the observable state and of `z = F x`
//! from windows of sampled outputs, with open-loop propagation in between.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Certificate;
use crate::linalg::{rank_of, solve_least_squares, vstack, RankResult, RankTol};
use crate::observability::{observability_index, observable_decomposition, transition, ObservableDecomposition};
use crate::system::{LtiSystem, SamplingSequence, TimeDomain};

/// Stacked window regression `Y = Phi x(t_j)`.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub phi: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Index of the first window sample within the schedule.
    pub first_index: usize,
    pub count: usize,
    pub base_time: f64,
    pub relative_times: Vec<f64>,
    pub rank: RankResult,
}

fn regressor_from_pair(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    window: &SamplingSequence,
    outputs: &[DVector<f64>],
    first_index: usize,
    tol: RankTol,
) -> Result<Regressor> {
    if outputs.len() != window.len() {
        return Err(Error::InvalidMatrix(format!(
            "{} outputs for a window of {} samples",
            outputs.len(),
            window.len()
        )));
    }
    if let Some((i, y)) = outputs.iter().enumerate().find(|(_, y)| y.len() != c.nrows()) {
        return Err(Error::InvalidMatrix(format!(
            "output {i} has {} entries, expected {}",
            y.len(),
            c.nrows()
        )));
    }
    let base_time = window.times()[0];
    let relative_times: Vec<f64> = window.times().iter().map(|t| t - base_time).collect();
    let blocks = relative_times
        .iter()
        .map(|&dt| Ok(c * transition(a, window.domain(), dt)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    let phi = if a.ncols() == 0 {
        DMatrix::zeros(c.nrows() * window.len(), 0)
    } else {
        vstack(&refs)
    };
    let y = DMatrix::from_iterator(
        c.nrows() * outputs.len(),
        1,
        outputs.iter().flat_map(|y| y.iter().copied()),
    );
    let rank = rank_of(&phi, tol)?;
    if rank.rank < phi.ncols() {
        return Err(Error::RankDeficientRegressor {
            columns: phi.ncols(),
            rank,
            window: Some(first_index),
        });
    }
    Ok(Regressor {
        phi,
        y,
        first_index,
        count: window.len(),
        base_time,
        relative_times,
        rank,
    })
}

/// Regressor on `(A_ob, C_ob)`.
pub fn build_regressor(
    decomp: &ObservableDecomposition,
    window: &SamplingSequence,
    outputs: &[DVector<f64>],
    first_index: usize,
    tol: RankTol,
) -> Result<Regressor> {
    regressor_from_pair(&decomp.a_ob, &decomp.c_ob, window, outputs, first_index, tol)
}

/// Regressor on the observable part of `(A, F)` driven by `alpha y`.
pub fn build_reduced_regressor(
    certificate: Option<&Certificate>,
    c: &DMatrix<f64>,
    decomp_f: &ObservableDecomposition,
    window: &SamplingSequence,
    outputs: &[DVector<f64>],
    first_index: usize,
    tol: RankTol,
) -> Result<Regressor> {
    let alpha = certificate
        .ok_or_else(|| Error::MissingCertificate("reduced estimation needs alpha".into()))?
        .alpha();
    let combined: Vec<DVector<f64>> = outputs.iter().map(|y| alpha * y).collect();
    let c_red = decomp_f.observable_part(&(alpha * c));
    regressor_from_pair(&decomp_f.a_ob, &c_red, window, &combined, first_index, tol)
}

/// `(Phi^T Phi)^{-1} Phi^T Y`: the observable state at the window's first instant.
pub fn estimate_state(reg: &Regressor) -> Result<DVector<f64>> {
    if reg.phi.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let x = solve_least_squares(&reg.phi, &reg.y)?;
    Ok(x.column(0).into_owned())
}

/// `(F P_o)_ob Psi_ob(dt) x_ob`.
pub fn functional_estimate(
    decomp: &ObservableDecomposition,
    f: &DMatrix<f64>,
    x_ob: &DVector<f64>,
    dt: f64,
    domain: TimeDomain,
) -> Result<DVector<f64>> {
    let z_map = decomp.observable_part(f);
    if x_ob.is_empty() {
        return Ok(DVector::zeros(f.nrows()));
    }
    Ok(z_map * transition(&decomp.a_ob, domain, dt)? * x_ob)
}

#[derive(Debug, Clone)]
pub enum EstimatorMode {
    /// Estimate the observable part of `(A, C)`.
    Full,
    /// Estimate the observable part of `(A, F)` from `alpha y`.
    Reduced(Certificate),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub x0: DVector<f64>,
    pub schedule: SamplingSequence,
    pub window: usize,
    pub noise_bound: f64,
    pub seed: u64,
    pub query_times: Vec<f64>,
    /// Initial-state guess propagated until the first window is full; zero when absent.
    pub prior: Option<DVector<f64>>,
    pub mode: EstimatorMode,
    pub tol: RankTol,
}

#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub schedule: SamplingSequence,
    pub window: usize,
    pub noise_bound: f64,
    pub seed: u64,
    pub query_times: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    pub estimates: Vec<DVector<f64>>,
    /// `|z_hat - z|` (Euclidean) per query time.
    pub error_trace: Vec<f64>,
    /// Instant of the last sample of the first full window.
    pub first_window_time: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub queries: usize,
    pub first_window_time: f64,
    pub initial_error: f64,
    pub post_window_max_error: f64,
    pub steady_state_median_error: f64,
    pub notes: Vec<String>,
}

impl EstimationRun {
    /// Errors at query times at or after the first full window.
    pub fn post_window_errors(&self) -> Vec<f64> {
        self.query_times
            .iter()
            .zip(&self.error_trace)
            .filter(|(t, _)| **t >= self.first_window_time)
            .map(|(_, e)| *e)
            .collect()
    }

    pub fn steady_state_median(&self) -> f64 {
        median(&self.post_window_errors())
    }

    pub fn summary(&self) -> RunSummary {
        let post = self.post_window_errors();
        RunSummary {
            queries: self.query_times.len(),
            first_window_time: self.first_window_time,
            initial_error: self.error_trace.first().copied().unwrap_or(f64::NAN),
            post_window_max_error: post.iter().copied().fold(f64::NAN, f64::max),
            steady_state_median_error: median(&post),
            notes: self.notes.clone(),
        }
    }

    /// `time,z_true,z_hat,abs_error`; multi-output functionals get indexed columns.
    pub fn to_csv(&self) -> String {
        let r = self.truth.first().map_or(1, |z| z.len());
        let mut out = String::new();
        if r == 1 {
            out.push_str("time,z_true,z_hat,abs_error\n");
        } else {
            let mut header = vec!["time".to_string()];
            header.extend((1..=r).map(|i| format!("z_true_{i}")));
            header.extend((1..=r).map(|i| format!("z_hat_{i}")));
            header.push("abs_error".into());
            out.push_str(&header.join(","));
            out.push('\n');
        }
        for ((t, (z, zh)), e) in self.query_times.iter().zip(self.truth.iter().zip(&self.estimates)).zip(&self.error_trace) {
            let mut fields = vec![t.to_string()];
            fields.extend(z.iter().map(|v| format!("{v:e}")));
            fields.extend(zh.iter().map(|v| format!("{v:e}")));
            fields.push(format!("{e:e}"));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Coordinates the estimator works in.
struct EstimatorModel {
    decomp: ObservableDecomposition,
    combine: Option<DMatrix<f64>>,
    regression_output: DMatrix<f64>,
    z_map: DMatrix<f64>,
}

impl EstimatorModel {
    fn new(sys: &LtiSystem, f: &DMatrix<f64>, mode: &EstimatorMode, tol: RankTol) -> Result<Self> {
        match mode {
            EstimatorMode::Full => {
                let decomp = observable_decomposition(sys.a(), sys.c(), tol)?;
                Ok(EstimatorModel {
                    regression_output: decomp.c_ob.clone(),
                    z_map: decomp.observable_part(f),
                    combine: None,
                    decomp,
                })
            }
            EstimatorMode::Reduced(cert) => {
                let alpha = cert.alpha().clone();
                if alpha.ncols() != sys.q() || alpha.nrows() != f.nrows() {
                    return Err(Error::MissingCertificate(format!(
                        "alpha is {}x{}, expected {}x{}",
                        alpha.nrows(),
                        alpha.ncols(),
                        f.nrows(),
                        sys.q()
                    )));
                }
                let decomp = observable_decomposition(sys.a(), f, tol)?;
                Ok(EstimatorModel {
                    regression_output: decomp.observable_part(&(&alpha * sys.c())),
                    z_map: decomp.observable_part(f),
                    combine: Some(alpha),
                    decomp,
                })
            }
        }
    }

    fn window_estimate(
        &self,
        schedule: &SamplingSequence,
        outputs: &[DVector<f64>],
        first: usize,
        k: usize,
        tol: RankTol,
    ) -> Result<DVector<f64>> {
        let window = schedule.window(first, k)?;
        let ys: Vec<DVector<f64>> = outputs[first..first + k]
            .iter()
            .map(|y| match &self.combine {
                Some(alpha) => alpha * y,
                None => y.clone(),
            })
            .collect();
        let reg = regressor_from_pair(&self.decomp.a_ob, &self.regression_output, &window, &ys, first, tol)?;
        estimate_state(&reg)
    }
}

/// Smallest window giving a full-rank regressor on consecutive instants:
/// the observability index of the pair the estimator works on.
pub fn default_window(sys: &LtiSystem, mode: &EstimatorMode, tol: RankTol) -> Result<usize> {
    let f = sys.require_f()?;
    let model = EstimatorModel::new(sys, f, mode, tol)?;
    if model.decomp.a_ob.nrows() == 0 {
        return Ok(1);
    }
    Ok(observability_index(&model.decomp.a_ob, &model.regression_output, tol)?.max(1))
}

/// Simulates `x(t) = Psi(t) x0` with bounded uniform output noise and runs
/// the sliding-window estimator over the schedule.
pub fn simulate_run(sys: &LtiSystem, config: &RunConfig) -> Result<EstimationRun> {
    let f = sys.require_f()?;
    let n = sys.n();
    let domain = sys.domain();
    let k = config.window;
    let schedule = &config.schedule;
    if schedule.domain() != domain {
        return Err(Error::DomainMismatch {
            system: domain,
            sequence: schedule.domain(),
        });
    }
    if config.x0.len() != n {
        return Err(Error::InvalidMatrix(format!("x0 has {} entries, state dimension is {n}", config.x0.len())));
    }
    if !(config.noise_bound >= 0.0 && config.noise_bound.is_finite()) {
        return Err(Error::InvalidMatrix(format!("noise bound must be non-negative, got {}", config.noise_bound)));
    }
    if k == 0 || k > schedule.len() {
        return Err(Error::InvalidMatrix(format!(
            "window of {k} samples for a schedule of {}",
            schedule.len()
        )));
    }
    let prior = match &config.prior {
        Some(p) if p.len() != n => {
            return Err(Error::InvalidMatrix(format!("prior has {} entries, state dimension is {n}", p.len())))
        }
        Some(p) => p.clone(),
        None => DVector::zeros(n),
    };
    let mut notes = Vec::new();
    if sys.has_inputs() {
        notes.push("system has inputs; simulated and estimated with u = 0".to_string());
    }
    let model = EstimatorModel::new(sys, f, &config.mode, config.tol)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let outputs = schedule
        .times()
        .iter()
        .map(|&t| {
            let y = sys.c() * transition(sys.a(), domain, t)? * &config.x0;
            let noise = DVector::from_fn(sys.q(), |_, _| config.noise_bound * rng.random_range(-1.0..=1.0));
            Ok(y + noise)
        })
        .collect::<Result<Vec<_>>>()?;

    let windows = (0..=schedule.len() - k)
        .map(|first| model.window_estimate(schedule, &outputs, first, k, config.tol))
        .collect::<Result<Vec<_>>>()?;

    let times = schedule.times();
    let first_window_time = times[k - 1];
    let mut truth = Vec::with_capacity(config.query_times.len());
    let mut estimates = Vec::with_capacity(config.query_times.len());
    let mut error_trace = Vec::with_capacity(config.query_times.len());
    for &tau in &config.query_times {
        let z = f * transition(sys.a(), domain, tau)? * &config.x0;
        let latest = times.partition_point(|&t| t <= tau);
        let z_hat = if latest >= k {
            let first = latest - k;
            let elapsed = tau - times[first];
            &model.z_map * transition(&model.decomp.a_ob, domain, elapsed)? * &windows[first]
        } else {
            f * transition(sys.a(), domain, tau)? * &prior
        };
        error_trace.push((&z_hat - &z).norm());
        truth.push(z);
        estimates.push(z_hat);
    }
    Ok(EstimationRun {
        schedule: schedule.clone(),
        window: k,
        noise_bound: config.noise_bound,
        seed: config.seed,
        query_times: config.query_times.clone(),
        truth,
        estimates,
        error_trace,
        first_window_time,
        notes,
    })
}

/// Integer instants `0..=end` (discrete) or `count + 1` evenly spaced points on `[0, end]`.
pub fn query_grid(domain: TimeDomain, end: f64, count: usize) -> Vec<f64> {
    match domain {
        TimeDomain::Discrete => (0..=end.floor() as i64).map(|t| t as f64).collect(),
        TimeDomain::Continuous => {
            let count = count.max(1);
            (0..=count).map(|i| end * i as f64 / count as f64).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{find_structured_q, jordan_data, rowspace_certificate};
    use crate::sampling::{certified_schedule, ScheduleParams};
    use nalgebra::{dmatrix, dvector};

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
        .with_functional(dmatrix![0.0, -2.0, -1.0, 1.0])
        .unwrap()
    }

    fn example_certificate(sys: &LtiSystem) -> Certificate {
        let jd = jordan_data(sys.a(), sys.c(), sys.f().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Certificate::Structured(find_structured_q(&jd, &mut rng).unwrap().unwrap())
    }

    #[test]
    fn single_sample_regressor_is_output_map() {
        let sys = example_system();
        let dec = observable_decomposition(sys.a(), sys.c(), RankTol::Default).unwrap();
        let seq = SamplingSequence::discrete(&[0, 1]).unwrap();
        let ys = vec![DVector::zeros(3), DVector::zeros(3)];
        let reg = build_regressor(&dec, &seq, &ys, 0, RankTol::Default).unwrap();
        assert_eq!(reg.phi.rows(0, 3), dec.c_ob.rows(0, 3));
        assert_eq!(reg.relative_times, vec![0.0, 1.0]);
        assert_eq!(estimate_state(&reg).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn consistent_data_is_recovered() {
        let sys = example_system();
        let dec = observable_decomposition(sys.a(), sys.c(), RankTol::Default).unwrap();
        let seq = SamplingSequence::discrete(&[3, 4]).unwrap();
        let x = dvector![0.3, -1.0, 2.0, 0.5];
        let ys: Vec<DVector<f64>> = [0.0, 1.0]
            .iter()
            .map(|&dt| &dec.c_ob * transition(&dec.a_ob, TimeDomain::Discrete, dt).unwrap() * &x)
            .collect();
        let reg = build_regressor(&dec, &seq, &ys, 5, RankTol::Default).unwrap();
        assert_eq!(reg.base_time, 3.0);
        assert!((estimate_state(&reg).unwrap() - x).norm() < 1e-9);
    }

    #[test]
    fn aliased_window_is_rank_deficient() {
        let sys = LtiSystem::autonomous(
            TimeDomain::Discrete,
            dmatrix![1.0, 1.0, 0.0, 0.0; -1.0, 1.0, 0.0, 0.0; 0.0, 0.0, 2.0, 2.0; 0.0, 0.0, -2.0, 2.0],
            dmatrix![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let dec = observable_decomposition(sys.a(), sys.c(), RankTol::Default).unwrap();
        let seq = SamplingSequence::discrete(&[2, 6, 10, 14]).unwrap();
        let ys = vec![DVector::zeros(1); 4];
        match build_regressor(&dec, &seq, &ys, 7, RankTol::Default) {
            Err(Error::RankDeficientRegressor { rank, window, .. }) => {
                assert_eq!(rank.rank, 2);
                assert_eq!(window, Some(7));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn reduced_regressor_needs_certificate() {
        let sys = example_system();
        let dec = observable_decomposition(sys.a(), sys.f().unwrap(), RankTol::Default).unwrap();
        let seq = SamplingSequence::discrete(&[0, 1]).unwrap();
        let ys = vec![DVector::zeros(3); 2];
        assert!(matches!(
            build_reduced_regressor(None, sys.c(), &dec, &seq, &ys, 0, RankTol::Default),
            Err(Error::MissingCertificate(_))
        ));
        let cert = example_certificate(&sys);
        let reg = build_reduced_regressor(Some(&cert), sys.c(), &dec, &seq, &ys, 0, RankTol::Default).unwrap();
        assert_eq!(reg.phi.shape(), (2, 2));
        assert_eq!(reg.rank.rank, 2);
    }

    #[test]
    fn output_functional_is_exact_at_base_time() {
        let sys = LtiSystem::autonomous(TimeDomain::Discrete, dmatrix![0.9, 0.2; 0.0, 0.5], dmatrix![1.0, 1.0]).unwrap();
        let dec = observable_decomposition(sys.a(), sys.c(), RankTol::Default).unwrap();
        let x = dvector![1.0, -2.0];
        let x_ob = dec.project_state(&DMatrix::from_column_slice(2, 1, x.as_slice()));
        let z = functional_estimate(&dec, sys.c(), &x_ob.column(0).into_owned(), 0.0, TimeDomain::Discrete).unwrap();
        assert!((z[0] - (sys.c() * &x)[0]).abs() < 1e-12);
    }

    #[test]
    fn nominal_reduced_run_is_exact_after_first_window() {
        let sys = example_system();
        let cert = example_certificate(&sys);
        let dec = observable_decomposition(sys.a(), sys.f().unwrap(), RankTol::Default).unwrap();
        let schedule =
            certified_schedule(
                &dec.a_ob,
                &dec.c_ob,
                TimeDomain::Discrete,
                ScheduleParams {
                    window: 2,
                    end: 40.0,
                    step: 1.0,
                    seed: 3,
                    tol: RankTol::Default,
                },
            )
            .unwrap();
        let config = RunConfig {
            x0: dvector![1.0, -0.5, 0.7, 2.0],
            schedule,
            window: 2,
            noise_bound: 0.0,
            seed: 0,
            query_times: query_grid(TimeDomain::Discrete, 40.0, 0),
            prior: None,
            mode: EstimatorMode::Reduced(cert),
            tol: RankTol::Default,
        };
        let run = simulate_run(&sys, &config).unwrap();
        assert!(run.error_trace[0] > 0.1);
        assert!(run.post_window_errors().iter().all(|&e| e < 1e-6));
        let csv = run.to_csv();
        assert!(csv.starts_with("time,z_true,z_hat,abs_error\n"));
        assert_eq!(csv.lines().count(), 42);
    }

    #[test]
    fn exact_prior_gives_zero_error_throughout() {
        let sys = example_system();
        let schedule = SamplingSequence::discrete(&[0, 1, 3, 4, 6]).unwrap();
        let x0 = dvector![0.2, 0.1, -0.3, 1.0];
        let config = RunConfig {
            prior: Some(x0.clone()),
            x0,
            schedule,
            window: 2,
            noise_bound: 0.0,
            seed: 0,
            query_times: query_grid(TimeDomain::Discrete, 8.0, 0),
            mode: EstimatorMode::Full,
            tol: RankTol::Default,
        };
        let run = simulate_run(&sys, &config).unwrap();
        assert!(run.error_trace.iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn full_mode_with_inputs_notes_zero_input() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.5];
        let sys = LtiSystem::new(
            TimeDomain::Continuous,
            a,
            Some(dmatrix![0.0; 1.0]),
            dmatrix![1.0, 0.0],
            None,
            Some(dmatrix![1.0, 0.0]),
        )
        .unwrap();
        let c = sys.c().clone();
        let cert = Certificate::RowSpace {
            alpha: rowspace_certificate(&c, sys.f().unwrap()).unwrap(),
        };
        let schedule = SamplingSequence::continuous(&[0.1, 0.6, 1.3, 1.9, 2.4]).unwrap();
        let config = RunConfig {
            x0: dvector![1.0, 1.0],
            schedule,
            window: 2,
            noise_bound: 0.0,
            seed: 0,
            query_times: query_grid(TimeDomain::Continuous, 3.0, 30),
            prior: None,
            mode: EstimatorMode::Reduced(cert),
            tol: RankTol::Default,
        };
        let run = simulate_run(&sys, &config).unwrap();
        assert_eq!(run.notes.len(), 1);
        assert!(run.post_window_errors().iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
