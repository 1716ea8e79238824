//! System and sampling-sequence model with validated JSON ingestion.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

impl fmt::Display for TimeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeDomain::Continuous => "continuous",
            TimeDomain::Discrete => "discrete",
        })
    }
}

impl std::str::FromStr for TimeDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(TimeDomain::Continuous),
            "discrete" => Ok(TimeDomain::Discrete),
            other => Err(Error::schema(
                "domain",
                format!("expected \"continuous\" or \"discrete\", got {other:?}"),
            )),
        }
    }
}

/// `x+ = A x + B u`, `y = C x + D u`, `z = F x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: Option<DMatrix<f64>>,
    c: DMatrix<f64>,
    d: Option<DMatrix<f64>>,
    f: Option<DMatrix<f64>>,
    domain: TimeDomain,
}

fn finite(m: &DMatrix<f64>, path: &str) -> Result<()> {
    match m.iter().position(|x| !x.is_finite()) {
        Some(k) => {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            Err(Error::schema(format!("{path}[{i}][{j}]"), "entry is not finite"))
        }
        None => Ok(()),
    }
}

impl LtiSystem {
    pub fn new(
        domain: TimeDomain,
        a: DMatrix<f64>,
        b: Option<DMatrix<f64>>,
        c: DMatrix<f64>,
        d: Option<DMatrix<f64>>,
        f: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::schema("A", format!("must be square with n >= 1, got {}x{}", n, a.ncols())));
        }
        finite(&a, "A")?;
        if c.nrows() == 0 || c.ncols() != n {
            return Err(Error::schema(
                "C",
                format!("must be q x {n} with q >= 1, got {}x{}", c.nrows(), c.ncols()),
            ));
        }
        finite(&c, "C")?;
        if let Some(b) = &b {
            if b.nrows() != n {
                return Err(Error::schema("B", format!("must have {n} rows, got {}", b.nrows())));
            }
            finite(b, "B")?;
        }
        if let Some(d) = &d {
            let m = b.as_ref().map_or(d.ncols(), |b| b.ncols());
            if d.nrows() != c.nrows() || d.ncols() != m {
                return Err(Error::schema(
                    "D",
                    format!("must be {}x{m}, got {}x{}", c.nrows(), d.nrows(), d.ncols()),
                ));
            }
            finite(d, "D")?;
        }
        if let Some(f) = &f {
            if f.nrows() == 0 || f.ncols() != n {
                return Err(Error::schema(
                    "F",
                    format!("must be r x {n} with r >= 1, got {}x{}", f.nrows(), f.ncols()),
                ));
            }
            finite(f, "F")?;
        }
        Ok(LtiSystem { a, b, c, d, f, domain })
    }

    /// Autonomous system without a functional output.
    pub fn autonomous(domain: TimeDomain, a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        Self::new(domain, a, None, c, None, None)
    }

    pub fn with_functional(mut self, f: DMatrix<f64>) -> Result<Self> {
        self.f = Some(f);
        Self::new(self.domain, self.a, self.b, self.c, self.d, self.f)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn f(&self) -> Option<&DMatrix<f64>> {
        self.f.as_ref()
    }

    pub fn require_f(&self) -> Result<&DMatrix<f64>> {
        self.f.as_ref().ok_or(Error::MissingFunctional)
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn r(&self) -> Option<usize> {
        self.f.as_ref().map(|f| f.nrows())
    }

    /// Number of inputs (0 when B and D are both absent).
    pub fn m(&self) -> usize {
        self.b
            .as_ref()
            .map(|b| b.ncols())
            .or_else(|| self.d.as_ref().map(|d| d.ncols()))
            .unwrap_or(0)
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.b.clone().unwrap_or_else(|| DMatrix::zeros(self.n(), self.m()))
    }

    pub fn d(&self) -> DMatrix<f64> {
        self.d.clone().unwrap_or_else(|| DMatrix::zeros(self.q(), self.m()))
    }

    pub fn has_inputs(&self) -> bool {
        self.b.as_ref().is_some_and(|b| b.iter().any(|&x| x != 0.0))
    }
}

fn parse_matrix(value: &Value, path: &str) -> Result<DMatrix<f64>> {
    let rows = value
        .as_array()
        .ok_or_else(|| Error::schema(path, "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(Error::schema(path, "matrix has no rows"));
    }
    let mut data: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::schema(format!("{path}[{i}]"), "expected an array of numbers"))?;
        let mut out = Vec::with_capacity(row.len());
        for (j, x) in row.iter().enumerate() {
            let v = x
                .as_f64()
                .ok_or_else(|| Error::schema(format!("{path}[{i}][{j}]"), "expected a number"))?;
            if !v.is_finite() {
                return Err(Error::schema(format!("{path}[{i}][{j}]"), "entry is not finite"));
            }
            out.push(v);
        }
        if let Some(first) = data.first() {
            if first.len() != out.len() {
                return Err(Error::schema(
                    format!("{path}[{i}]"),
                    format!("row has {} entries, expected {}", out.len(), first.len()),
                ));
            }
        }
        data.push(out);
    }
    let cols = data[0].len();
    Ok(DMatrix::from_fn(data.len(), cols, |i, j| data[i][j]))
}

fn matrix_to_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

fn parse_json(document: &str) -> Result<Value> {
    serde_json::from_str(document).map_err(|e| Error::schema("$", e.to_string()))
}

/// Parse the system JSON document
/// `{"domain": ..., "A": [[..]], "C": [[..]], "B"?, "D"?, "F"?}`.
pub fn parse_system(document: &str) -> Result<LtiSystem> {
    let root = parse_json(document)?;
    let obj = root.as_object().ok_or_else(|| Error::schema("$", "expected a JSON object"))?;
    let domain: TimeDomain = obj
        .get("domain")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::schema("domain", "missing or not a string"))?
        .parse()?;
    let required = |key: &str| -> Result<DMatrix<f64>> {
        let v = obj.get(key).ok_or_else(|| Error::schema(key, "missing"))?;
        parse_matrix(v, key)
    };
    let optional = |key: &str| -> Result<Option<DMatrix<f64>>> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => parse_matrix(v, key).map(Some),
        }
    };
    LtiSystem::new(
        domain,
        required("A")?,
        optional("B")?,
        required("C")?,
        optional("D")?,
        optional("F")?,
    )
}

pub fn system_to_json(sys: &LtiSystem) -> Value {
    let mut obj = Map::new();
    obj.insert("domain".into(), json!(sys.domain.to_string()));
    obj.insert("A".into(), matrix_to_json(&sys.a));
    if let Some(b) = &sys.b {
        obj.insert("B".into(), matrix_to_json(b));
    }
    obj.insert("C".into(), matrix_to_json(&sys.c));
    if let Some(d) = &sys.d {
        obj.insert("D".into(), matrix_to_json(d));
    }
    if let Some(f) = &sys.f {
        obj.insert("F".into(), matrix_to_json(f));
    }
    Value::Object(obj)
}

pub fn serialize_system(sys: &LtiSystem) -> String {
    serde_json::to_string_pretty(&system_to_json(sys)).expect("JSON values always serialize")
}

/// Strictly increasing measurement instants starting at or after zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingSequence {
    times: Vec<f64>,
    domain: TimeDomain,
}

impl SamplingSequence {
    pub fn new(times: Vec<f64>, domain: TimeDomain) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::schema("times", "at least one sampling instant is required"));
        }
        for (i, &t) in times.iter().enumerate() {
            let path = format!("times[{i}]");
            if !t.is_finite() {
                return Err(Error::schema(path, "instant is not finite"));
            }
            if t < 0.0 {
                return Err(Error::schema(path, format!("instant {t} is negative")));
            }
            if domain == TimeDomain::Discrete && (t.fract() != 0.0 || t > 2f64.powi(53)) {
                return Err(Error::schema(path, format!("discrete-time instant {t} is not an integer")));
            }
            if i > 0 && times[i - 1] >= t {
                return Err(Error::schema(
                    path,
                    format!("instants must be strictly increasing ({} then {t})", times[i - 1]),
                ));
            }
        }
        Ok(SamplingSequence { times, domain })
    }

    pub fn discrete(steps: &[i64]) -> Result<Self> {
        Self::new(steps.iter().map(|&s| s as f64).collect(), TimeDomain::Discrete)
    }

    pub fn continuous(times: &[f64]) -> Result<Self> {
        Self::new(times.to_vec(), TimeDomain::Continuous)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sub-sequence `[start, start + count)`.
    pub fn window(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.times.len() {
            return Err(Error::InvalidMatrix(format!(
                "window [{start}, {}) outside a sequence of {} samples",
                start + count,
                self.times.len()
            )));
        }
        Ok(SamplingSequence {
            times: self.times[start..start + count].to_vec(),
            domain: self.domain,
        })
    }
}

/// Parse `{"times": [...]}`; extra keys (such as a design certificate) are ignored.
pub fn parse_sampling(document: &str, domain: TimeDomain) -> Result<SamplingSequence> {
    let root = parse_json(document)?;
    let times = root
        .get("times")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::schema("times", "missing or not an array"))?;
    let parsed = times
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .ok_or_else(|| Error::schema(format!("times[{i}]"), "expected a number"))
        })
        .collect::<Result<Vec<f64>>>()?;
    SamplingSequence::new(parsed, domain)
}

pub fn sampling_to_json(seq: &SamplingSequence) -> Value {
    let times = match seq.domain {
        TimeDomain::Discrete => seq.times.iter().map(|&t| json!(t as i64)).collect(),
        TimeDomain::Continuous => seq.times.iter().map(|&t| json!(t)).collect(),
    };
    json!({ "times": Value::Array(times) })
}
