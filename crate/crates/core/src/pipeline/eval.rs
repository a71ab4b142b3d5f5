use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UrlVerdictRecord, Verdict};

/// Confusion counts and the metrics derived from them. A metric whose
/// denominator is zero is `None` and shown as `undefined`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    /// Mean wall-clock seconds per evaluated URL.
    pub mean_execution_time: Option<f64>,
    /// URLs with no ground truth; excluded from every figure above.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_truth: Vec<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let tpr = ratio(tp, tp + fn_);
        let f1 = match (precision, tpr) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            tpr,
            tnr: ratio(tn, tn + fp),
            precision,
            f1,
            mean_execution_time: None,
            missing_truth: Vec::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores `(url, predicted, seconds)` outcomes against ground truth.
pub fn evaluate<'a>(
    outcomes: impl IntoIterator<Item = (&'a str, Verdict, f64)>,
    truth: &HashMap<String, Verdict>,
) -> EvalReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut missing = Vec::new();
    let mut seconds = 0.0;
    for (url, predicted, elapsed) in outcomes {
        let Some(&actual) = truth.get(url) else {
            tracing::warn!(url, "no ground truth; excluded from evaluation");
            missing.push(url.to_string());
            continue;
        };
        seconds += elapsed;
        match (actual, predicted) {
            (Verdict::Phishing, Verdict::Phishing) => tp += 1,
            (Verdict::Phishing, Verdict::NonPhishing) => fn_ += 1,
            (Verdict::NonPhishing, Verdict::NonPhishing) => tn += 1,
            (Verdict::NonPhishing, Verdict::Phishing) => fp += 1,
        }
    }
    let mut report = EvalReport::from_counts(tp, fp, tn, fn_);
    report.mean_execution_time = (report.total() > 0).then(|| seconds / report.total() as f64);
    report.missing_truth = missing;
    report
}

pub fn evaluate_records(records: &[UrlVerdictRecord], truth: &HashMap<String, Verdict>) -> EvalReport {
    evaluate(records.iter().map(|r| (r.url.as_str(), r.verdict, r.timings.total)), truth)
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    url: String,
    label: String,
}

/// Parses a truth label. Accepts `phishing`/`1`/`true` and
/// `non-phishing`/`benign`/`0`/`false`.
pub fn parse_truth_label(label: &str) -> Option<Verdict> {
    match label.trim().to_ascii_lowercase().as_str() {
        "phishing" | "phish" | "malicious" | "1" | "true" => Some(Verdict::Phishing),
        "non-phishing" | "nonphishing" | "non_phishing" | "benign" | "legitimate" | "0" | "false" => {
            Some(Verdict::NonPhishing)
        }
        _ => None,
    }
}

/// Reads a ground-truth CSV with `url,label` columns.
pub fn load_truth(path: &Path) -> Result<HashMap<String, Verdict>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut truth = HashMap::new();
    for (i, row) in reader.deserialize::<TruthRow>().enumerate() {
        let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
        let verdict = parse_truth_label(&row.label)
            .ok_or_else(|| format!("{} row {}: unknown label {:?}", path.display(), i + 2, row.label))?;
        truth.insert(row.url, verdict);
    }
    Ok(truth)
}

pub fn write_truth(path: &Path, truth: &[(String, Verdict)]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    w.write_record(["url", "label"]).map_err(|e| e.to_string())?;
    for (url, v) in truth {
        w.write_record([url.as_str(), v.as_str()]).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "TP {}  FP {}  TN {}  FN {}", self.tp, self.fp, self.tn, self.fn_)?;
        writeln!(f, "accuracy   {}", show(self.accuracy))?;
        writeln!(f, "TPR        {}", show(self.tpr))?;
        writeln!(f, "TNR        {}", show(self.tnr))?;
        writeln!(f, "precision  {}", show(self.precision))?;
        writeln!(f, "F1         {}", show(self.f1))?;
        write!(
            f,
            "mean time  {}",
            self.mean_execution_time.map_or_else(|| "undefined".to_string(), |t| format!("{t:.3} s"))
        )?;
        if !self.missing_truth.is_empty() {
            write!(f, "\n{} URL(s) without ground truth were excluded", self.missing_truth.len())?;
        }
        Ok(())
    }
}
