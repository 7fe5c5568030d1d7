//! Evaluation metrics and comparison reports.
//!
//! Fake is the positive class throughout: TP is a fake sample called fake.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::domain::{Label, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_acc: Option<f64>,
    pub f_acc: Option<f64>,
    pub b_acc: Option<f64>,
    pub f1: f64,
    pub bias_gap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub n: usize,
}

impl MetricReport {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.n as f64
    }

    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::Input("no verdicts to score".into()));
        }
        let rate = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
        let r_acc = rate(tn, tn + fp);
        let f_acc = rate(tp, tp + fn_);
        let (b_acc, bias_gap) = match (r_acc, f_acc) {
            (Some(r), Some(f)) => (Some((r + f) / 2.0), Some((r - f).abs())),
            _ => (None, None),
        };
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        Ok(MetricReport {
            r_acc,
            f_acc,
            b_acc,
            f1,
            bias_gap,
            tp,
            fp,
            tn,
            fn_,
            n,
        })
    }
}

pub fn compute_metrics<I>(pairs: I) -> Result<MetricReport>
where
    I: IntoIterator<Item = (Verdict, Label)>,
{
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (v, l) in pairs {
        match (v, l) {
            (Label::Fake, Label::Fake) => tp += 1,
            (Label::Fake, Label::Real) => fp += 1,
            (Label::Real, Label::Real) => tn += 1,
            (Label::Real, Label::Fake) => fn_ += 1,
        }
    }
    MetricReport::from_counts(tp, fp, tn, fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    method: String,
    r_acc: Option<f64>,
    f_acc: Option<f64>,
    b_acc: Option<f64>,
    f1: f64,
    bias_gap: Option<f64>,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    n: usize,
}

/// Methods ordered by B-Acc (descending, undefined last), ties by name.
pub fn sorted_entries(reports: &[(String, MetricReport)]) -> Vec<&(String, MetricReport)> {
    let mut rows: Vec<_> = reports.iter().collect();
    rows.sort_by(|a, b| {
        let ka = a.1.b_acc.unwrap_or(f64::NEG_INFINITY);
        let kb = b.1.b_acc.unwrap_or(f64::NEG_INFINITY);
        kb.total_cmp(&ka).then_with(|| a.0.cmp(&b.0))
    });
    rows
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn render_csv(reports: &[(String, MetricReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (name, r) in sorted_entries(reports) {
        w.serialize(CsvRow {
            method: name.clone(),
            r_acc: r.r_acc.map(round6),
            f_acc: r.f_acc.map(round6),
            b_acc: r.b_acc.map(round6),
            f1: round6(r.f1),
            bias_gap: r.bias_gap.map(round6),
            tp: r.tp,
            fp: r.fp,
            tn: r.tn,
            fn_: r.fn_,
            n: r.n,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv<R: Read>(r: R) -> Result<Vec<(String, MetricReport)>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok((
                row.method,
                MetricReport {
                    r_acc: row.r_acc,
                    f_acc: row.f_acc,
                    b_acc: row.b_acc,
                    f1: row.f1,
                    bias_gap: row.bias_gap,
                    tp: row.tp,
                    fp: row.fp,
                    tn: row.tn,
                    fn_: row.fn_,
                    n: row.n,
                },
            ))
        })
        .collect()
}

/// Markdown table with the best value of every metric column in bold
/// (highest for rates and F1, lowest for the bias gap).
pub fn render_markdown(reports: &[(String, MetricReport)]) -> String {
    let rows = sorted_entries(reports);
    type Col = (&'static str, fn(&MetricReport) -> Option<f64>, bool);
    let cols: [Col; 5] = [
        ("R-Acc", |r| r.r_acc, true),
        ("F-Acc", |r| r.f_acc, true),
        ("B-Acc", |r| r.b_acc, true),
        ("F1", |r| Some(r.f1), true),
        ("Bias gap", |r| r.bias_gap, false),
    ];
    let fmt4 = |x: f64| format!("{x:.4}");
    let best: Vec<Option<String>> = cols
        .iter()
        .map(|(_, get, higher)| {
            rows.iter()
                .filter_map(|(_, r)| get(r))
                .reduce(|a, b| if (b > a) == *higher && b != a { b } else { a })
                .map(fmt4)
        })
        .collect();
    let mut out = String::from("| Method |");
    for (name, _, _) in &cols {
        out.push_str(&format!(" {name} |"));
    }
    out.push_str(" n |\n|---|");
    out.push_str(&"---:|".repeat(cols.len() + 1));
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("| {name} |"));
        for ((_, get, _), best) in cols.iter().zip(&best) {
            let cell = match get(r) {
                None => "n/a".to_string(),
                Some(x) => {
                    let s = fmt4(x);
                    if best.as_deref() == Some(s.as_str()) {
                        format!("**{s}**")
                    } else {
                        s
                    }
                }
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push_str(&format!(" {} |\n", r.n));
    }
    out
}
