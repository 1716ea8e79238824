use nalgebra::DMatrix;
use obsvkit::functional::{functional_report, search_structured_q, jordan_data, rowspace_certificate, Certificate};
use obsvkit::linalg::rank_of;
use obsvkit::observability::{
    check_partial_observability, is_sample_based_observable, observability_matrix, observable_decomposition,
};
use obsvkit::sampling::certificate_to_json;
use obsvkit::system::sampling_to_json;
use obsvkit::{LtiSystem, RankTol, Result, SamplingSequence};
use serde_json::{json, Value};

pub fn pretty(doc: &Value) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn tol_json(tol: RankTol) -> Value {
    match tol {
        RankTol::Default => json!({ "kind": "default" }),
        RankTol::Absolute(v) => json!({ "kind": "absolute", "value": v }),
        RankTol::Relative(v) => json!({ "kind": "relative", "value": v }),
    }
}

fn certificates(sys: &LtiSystem, f: &DMatrix<f64>) -> Value {
    let rowspace = rowspace_certificate(sys.c(), f)
        .map(|alpha| certificate_to_json(&Certificate::RowSpace { alpha }))
        .unwrap_or(Value::Null);
    let structured = match jordan_data(sys.a(), sys.c(), f) {
        Err(e) => json!({ "found": false, "reason": e.to_string() }),
        Ok(jd) => {
            match search_structured_q(&jd, 0) {
                Ok(Some(cert)) => {
                    let mut v = certificate_to_json(&Certificate::Structured(cert));
                    v["found"] = json!(true);
                    v
                }
                Ok(None) => json!({ "found": false, "reason": "no (alpha, Q) satisfies F_J = alpha C_J Q" }),
                Err(e) => json!({ "found": false, "reason": e.to_string() }),
            }
        }
    };
    json!({ "rowspace": rowspace, "structured": structured })
}

/// The analysis report and any consistency diagnostics it raised.
pub fn analyze(sys: &LtiSystem, seq: Option<&SamplingSequence>, tol: RankTol) -> Result<(Value, Vec<String>)> {
    let o = observability_matrix(sys.a(), sys.c())?;
    let rank = rank_of(&o, tol)?;
    let dec = observable_decomposition(sys.a(), sys.c(), tol)?;
    let mut doc = json!({
        "system": {
            "domain": sys.domain(),
            "n": sys.n(),
            "outputs": sys.q(),
            "inputs": sys.m(),
            "functionals": sys.r(),
        },
        "tolerance": tol_json(tol),
        "observability": {
            "rank": rank,
            "observable": rank.rank == sys.n(),
            "p": dec.p,
            "observable_dimension": dec.n_ob(),
            "nu": dec.observability_index,
        },
    });
    let mut diagnostics = Vec::new();
    if let Some(seq) = seq {
        let (holds, sampled) = is_sample_based_observable(sys, seq, tol)?;
        let partial = check_partial_observability(sys, seq, tol)?;
        if partial.hypothesis_holds && !partial.conclusion_holds {
            diagnostics.push("sampled observable block has full rank but null spaces differ".to_string());
        }
        doc["sampling"] = json!({
            "times": sampling_to_json(seq)["times"],
            "sample_based_observable": { "holds": holds, "rank": sampled },
            "partial_observability": partial,
        });
    }
    if let Some(f) = sys.f() {
        let rep = functional_report(sys, f, seq, tol)?;
        diagnostics.extend(rep.diagnostics.iter().cloned());
        let verdict = rep.sample_based.as_ref().map(|s| {
            if s.functional.holds {
                "sample-based functionally observable"
            } else {
                "not sample-based functionally observable"
            }
        });
        doc["functional"] = json!(rep);
        if let Some(v) = verdict {
            doc["functional"]["verdict"] = json!(v);
        }
        doc["certificates"] = certificates(sys, f);
    }
    doc["diagnostics"] = json!(diagnostics);
    Ok((doc, diagnostics))
}
