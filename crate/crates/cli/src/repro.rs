use std::path::Path;

use clap::ValueEnum;
use num_complex::Complex64;
use obsvkit::cases;
use obsvkit::estimator::{median, query_grid, simulate_run, EstimationRun, EstimatorMode, RunConfig};
use obsvkit::functional::{
    direct_functional_condition, is_sample_based_functionally_observable, jordan_data, sampled_pair_condition,
    verify_structured_q, Certificate, StructuredCertificate, StructuredQ,
};
use obsvkit::linalg::rank_of;
use obsvkit::observability::{observable_decomposition, sampled_observability_matrix};
use obsvkit::sampling::{
    certified_schedule, design_for_target, pathological_periods, DesignParams, SamplingTarget, ScheduleParams,
};
use obsvkit::system::sampling_to_json;
use obsvkit::{Error, LtiSystem, RankTol, SamplingSequence};
use serde::Serialize;
use serde_json::json;

use crate::report::pretty;
use crate::{write_file, CliResult, Failure, EXIT_MISMATCH};

#[derive(Clone, Copy, ValueEnum)]
pub enum Case {
    Counterexample,
    Example,
}

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

fn finish(out: &Path, file: &str, checks: Vec<Check>, extra: serde_json::Value) -> CliResult {
    let passed = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let doc = json!({ "passed": passed, "checks": checks, "data": extra });
    write_file(&out.join(file), &pretty(&doc))?;
    if passed {
        Ok(())
    } else {
        Err(Failure::new(EXIT_MISMATCH, "reproduction mismatch"))
    }
}

pub fn run(case: Case, out: &Path, tol: RankTol) -> CliResult {
    match case {
        Case::Counterexample => counterexample(out, tol),
        Case::Example => example(out, tol),
    }
}

fn rank_checks(sys: &LtiSystem, seq: &SamplingSequence, tol: RankTol, expected: [usize; 4]) -> obsvkit::Result<Vec<Check>> {
    let f = sys.require_f()?;
    let os = rank_of(&sampled_observability_matrix(sys, sys.c(), seq)?, tol)?.rank;
    let direct = direct_functional_condition(sys, f, seq, tol)?.1.rank;
    let pair = sampled_pair_condition(sys, f, seq, tol)?.1.rank;
    let stacked = is_sample_based_functionally_observable(sys, f, seq, tol)?.stacked.rank;
    let label = label(seq);
    let names = ["rank O_s", "rank (O_s; F)", "rank (O_s; O_s(A,F))", "rank (O_s; O(A,F))"];
    Ok(names
        .iter()
        .zip([os, direct, pair, stacked])
        .zip(expected)
        .map(|((name, got), want)| Check::new(&format!("{label} {name}"), got == want, format!("{got} (expected {want})")))
        .collect())
}

fn label(seq: &SamplingSequence) -> String {
    format!("{:?}", seq.times().iter().map(|t| *t as i64).collect::<Vec<_>>())
}

fn counterexample(out: &Path, tol: RankTol) -> CliResult {
    let sys = cases::counterexample();
    let mut checks = rank_checks(&sys, &cases::counterexample_irregular(), tol, [3, 3, 4, 4])?;
    checks.extend(rank_checks(&sys, &cases::counterexample_periodic(), tol, [2, 3, 2, 3])?);
    let f = sys.require_f()?;
    for seq in [cases::counterexample_irregular(), cases::counterexample_periodic()] {
        let holds = is_sample_based_functionally_observable(&sys, f, &seq, tol)?.holds;
        checks.push(Check::new(
            &format!("{} functional reconstruction", label(&seq)),
            !holds,
            format!("holds = {holds} (expected false)"),
        ));
    }
    let periods = pathological_periods(sys.a(), 64)?;
    let expected: Vec<usize> = (4..=64).step_by(4).collect();
    checks.push(Check::new(
        "pathological periods",
        periods == expected,
        format!("{periods:?}"),
    ));
    let uniform = SamplingSequence::discrete(&[0, 4, 8, 12])?;
    let r = rank_of(&sampled_observability_matrix(&sys, sys.c(), &uniform)?, tol)?.rank;
    checks.push(Check::new("period-4 sampled rank", r == 2, format!("{r} (expected 2)")));
    finish(out, "counterexample.json", checks, json!({ "pathological_periods": periods }))
}

fn reference_certificate(sys: &LtiSystem) -> obsvkit::Result<(StructuredCertificate, f64, f64)> {
    let jd = jordan_data(sys.a(), sys.c(), sys.require_f()?)?;
    let values: Vec<Complex64> = cases::ESTIMATION_EXAMPLE_Q.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
    let q = StructuredQ::diagonal(&values);
    let alpha = cases::estimation_example_alpha();
    let v = verify_structured_q(&jd, &alpha, &q)?;
    if !v.holds {
        return Err(Error::NumericalInconsistency(format!("certificate residual {:.3e}", v.residual)));
    }
    let product = alpha.map(|x| Complex64::new(x, 0.0)) * &jd.c_j * q.assembled();
    let target = [(0.0, 0.0), (0.0, 0.0), (1.0, -4.0), (1.0, 4.0)];
    let deviation = target
        .iter()
        .enumerate()
        .map(|(i, &(re, im))| (product[(0, i)] - Complex64::new(re, im)).norm())
        .fold(0.0, f64::max);
    Ok((
        StructuredCertificate {
            alpha,
            q,
            residual: v.residual,
        },
        v.residual,
        deviation,
    ))
}

fn example(out: &Path, tol: RankTol) -> CliResult {
    let sys = cases::estimation_example();
    let f = sys.require_f()?.clone();
    let mut checks = Vec::new();

    let (cert, residual, deviation) = reference_certificate(&sys)?;
    checks.push(Check::new("certificate residual", residual < 1e-8, format!("{residual:.3e}")));
    checks.push(Check::new("alpha C_J Q entries", deviation < 1e-8, format!("max deviation {deviation:.3e}")));

    let design = design_for_target(&sys, SamplingTarget::FunctionalViaQ, &DesignParams { tol, ..Default::default() })?;
    checks.push(Check::new(
        "reduced design",
        design.designed_on.dim() == 2 && design.certificate.rank == 2,
        format!("dimension {}, certificate rank {}", design.designed_on.dim(), design.certificate.rank),
    ));
    write_file(&out.join("example_design.json"), &pretty(&design.to_json()))?;

    let dec = observable_decomposition(sys.a(), &f, tol)?;
    let schedule = certified_schedule(
        &dec.a_ob,
        &dec.c_ob,
        sys.domain(),
        ScheduleParams {
            window: 2,
            end: 60.0,
            step: 1.0,
            seed: 0,
            tol,
        },
    )?;
    write_file(&out.join("example_schedule.json"), &pretty(&sampling_to_json(&schedule)))?;

    let x0 = cases::unit_mismatch_state(&f);
    let base = RunConfig {
        x0,
        schedule,
        window: 2,
        noise_bound: 0.0,
        seed: 0,
        query_times: query_grid(sys.domain(), 60.0, 0),
        prior: None,
        mode: EstimatorMode::Reduced(Certificate::Structured(cert)),
        tol,
    };
    let nominal = simulate_run(&sys, &base)?;
    let nominal_max = nominal.post_window_errors().into_iter().fold(0.0, f64::max);
    checks.push(Check::new("nominal post-window error", nominal_max < 1e-6, format!("{nominal_max:.3e}")));
    write_file(&out.join("example_nominal.csv"), &nominal.to_csv())?;

    let full = simulate_run(&sys, &RunConfig { mode: EstimatorMode::Full, ..base.clone() })?;
    let gap = max_gap(&nominal, &full);
    checks.push(Check::new("reduced vs full estimates", gap < 1e-8, format!("{gap:.3e}")));

    let mut medians = Vec::new();
    let mut noisy0 = None;
    for seed in 0..50 {
        let run = simulate_run(&sys, &RunConfig { noise_bound: 0.1, seed, ..base.clone() })?;
        medians.push(run.steady_state_median());
        if seed == 0 {
            noisy0 = Some(run);
        }
    }
    let noisy = noisy0.expect("at least one seed");
    let initial = noisy.error_trace[0];
    let med = median(&medians);
    checks.push(Check::new(
        "noisy steady-state median",
        med.is_finite() && med > 0.0 && med < initial,
        format!("{med:.4} over 50 seeds (initial error {initial:.4})"),
    ));
    let envelope_pre = noisy.error_trace.iter().copied().fold(0.0, f64::max);
    let envelope_post = noisy.post_window_errors().into_iter().fold(0.0, f64::max);
    checks.push(Check::new(
        "error envelope decreases",
        envelope_post < envelope_pre,
        format!("{envelope_pre:.4} -> {envelope_post:.4}"),
    ));
    write_file(&out.join("example_noisy.csv"), &noisy.to_csv())?;

    finish(
        out,
        "example_summary.json",
        checks,
        json!({
            "alpha": crate::report::matrix_json(&cases::estimation_example_alpha()),
            "nominal": nominal.summary(),
            "noisy_seed0": noisy.summary(),
            "noisy_median_over_seeds": med,
        }),
    )
}

fn max_gap(a: &EstimationRun, b: &EstimationRun) -> f64 {
    a.query_times
        .iter()
        .zip(a.estimates.iter().zip(&b.estimates))
        .filter(|(t, _)| **t >= a.first_window_time)
        .map(|(_, (x, y))| (x - y).norm())
        .fold(0.0, f64::max)
}
