//! Confusion matrices and the five reported metrics: weighted accuracy (WA),
//! unweighted accuracy (UA, the mean of per-class recalls) and the recall of
//! each class.

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new();
        for (t, p) in pairs {
            cm.accumulate(t, p)?;
        }
        Ok(cm)
    }

    pub fn accumulate(&mut self, true_label: usize, predicted_label: usize) -> Result<()> {
        if true_label >= 3 || predicted_label >= 3 {
            return Err(Error::invalid(format!(
                "label pair ({true_label}, {predicted_label}) outside 0..3"
            )));
        }
        self.counts[true_label][predicted_label] += 1;
        Ok(())
    }

    pub fn add(&mut self, label: SentimentLabel, predicted: SentimentLabel) {
        self.counts[label.index()][predicted.index()] += 1;
    }

    /// Elementwise sum, for merging partial matrices scored in parallel.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self) -> [u64; 3] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wa: f64,
    pub ua: f64,
    pub neg_recall: f64,
    pub pos_recall: f64,
    pub neu_recall: f64,
    pub support: [u64; 3],
    pub confusion: ConfusionMatrix,
}

/// Metric selectors, also used as training monitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "WA")]
    Wa,
    #[serde(rename = "UA")]
    Ua,
    NegRecall,
    PosRecall,
    NeuRecall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Wa,
        Metric::NegRecall,
        Metric::PosRecall,
        Metric::NeuRecall,
        Metric::Ua,
    ];

    /// Column heading used in rendered tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Metric::Wa => "WA",
            Metric::Ua => "UA",
            Metric::NegRecall => "Ng.R",
            Metric::PosRecall => "Ps.R",
            Metric::NeuRecall => "Nt.R",
        }
    }

    pub fn recall_of(label: SentimentLabel) -> Metric {
        match label {
            SentimentLabel::Negative => Metric::NegRecall,
            SentimentLabel::Positive => Metric::PosRecall,
            SentimentLabel::Neutral => Metric::NeuRecall,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Metric::Wa => "WA",
            Metric::Ua => "UA",
            Metric::NegRecall => "NegRecall",
            Metric::PosRecall => "PosRecall",
            Metric::NeuRecall => "NeuRecall",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['.', '_', '-'], "").as_str() {
            "wa" => Ok(Metric::Wa),
            "ua" => Ok(Metric::Ua),
            "negrecall" | "ngr" => Ok(Metric::NegRecall),
            "posrecall" | "psr" => Ok(Metric::PosRecall),
            "neurecall" | "ntr" => Ok(Metric::NeuRecall),
            _ => Err(Error::invalid(format!("unknown metric {s:?}"))),
        }
    }
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Wa => self.wa,
            Metric::Ua => self.ua,
            Metric::NegRecall => self.neg_recall,
            Metric::PosRecall => self.pos_recall,
            Metric::NeuRecall => self.neu_recall,
        }
    }

    pub fn recalls(&self) -> [f64; 3] {
        [self.neg_recall, self.pos_recall, self.neu_recall]
    }

    /// JSON with metrics rounded to 4 decimals and the raw counts.
    pub fn to_json(&self) -> serde_json::Value {
        let r4 = |x: f64| (x * 1e4).round() / 1e4;
        serde_json::json!({
            "WA": r4(self.wa),
            "UA": r4(self.ua),
            "neg_recall": r4(self.neg_recall),
            "pos_recall": r4(self.pos_recall),
            "neu_recall": r4(self.neu_recall),
            "support": self.support,
            "confusion": self.confusion.counts,
        })
    }
}

/// Requires every class to have non-zero support.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let support = cm.support();
    if let Some(missing) = SentimentLabel::ALL.into_iter().find(|l| support[l.index()] == 0) {
        return Err(Error::invalid(format!(
            "class {missing} has no samples; recall is undefined"
        )));
    }
    let recall = |i: usize| cm.counts[i][i] as f64 / support[i] as f64;
    let (neg, pos, neu) = (recall(0), recall(1), recall(2));
    Ok(MetricsReport {
        wa: cm.trace() as f64 / cm.total() as f64,
        ua: (neg + pos + neu) / 3.0,
        neg_recall: neg,
        pos_recall: pos,
        neu_recall: neu,
        support,
        confusion: *cm,
    })
}

/// Unweighted mean of each metric across folds; support and confusion counts
/// are summed.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no fold reports to aggregate"))?;
    if reports.len() == 1 {
        return Ok(*first);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut confusion = ConfusionMatrix::new();
    for r in reports {
        confusion.merge(&r.confusion);
    }
    Ok(MetricsReport {
        wa: mean(|r| r.wa),
        ua: mean(|r| r.ua),
        neg_recall: mean(|r| r.neg_recall),
        pos_recall: mean(|r| r.pos_recall),
        neu_recall: mean(|r| r.neu_recall),
        support: confusion.support(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_basics() {
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(0, 0).unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert!(cm.accumulate(3, 0).is_err());
        assert!(cm.accumulate(0, 3).is_err());
    }

    #[test]
    fn hand_computed_report() {
        let cm = ConfusionMatrix::from_pairs([(0, 0), (0, 1), (1, 1), (2, 2)]).unwrap();
        let r = report(&cm).unwrap();
        assert_eq!(r.wa, 0.75);
        assert_eq!(r.recalls(), [0.5, 1.0, 1.0]);
        assert!((r.ua - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let cm = ConfusionMatrix::from_pairs([(0, 0), (1, 1), (2, 2), (2, 2)]).unwrap();
        let r = report(&cm).unwrap();
        assert_eq!((r.wa, r.ua), (1.0, 1.0));
        assert_eq!(r.recalls(), [1.0; 3]);
    }

    #[test]
    fn zero_support_names_class() {
        let cm = ConfusionMatrix::from_pairs([(0, 0), (2, 2)]).unwrap();
        let err = report(&cm).unwrap_err().to_string();
        assert!(err.contains("positive"), "{err}");
    }

    #[test]
    fn aggregation() {
        let a = report(&ConfusionMatrix::from_pairs([(0, 0), (1, 1), (2, 2), (2, 1), (2, 2)]).unwrap()).unwrap();
        assert_eq!(aggregate_folds(&[a]).unwrap(), a);
        let mut b = a;
        b.wa = 0.6;
        let mut c = a;
        c.wa = 0.8;
        assert!((aggregate_folds(&[b, c]).unwrap().wa - 0.7).abs() < 1e-15);
        let d = report(&ConfusionMatrix::from_pairs([(0, 1), (1, 1), (2, 2)]).unwrap()).unwrap();
        let m = aggregate_folds(&[a, d]).unwrap();
        assert!((m.ua - m.recalls().iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert_eq!(m.support, [2, 2, 4]);
        assert!(aggregate_folds(&[]).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
            assert_eq!(m.short_name().parse::<Metric>().unwrap(), m);
        }
        let json = serde_json::to_string(&Metric::NegRecall).unwrap();
        assert_eq!(json, "\"NegRecall\"");
    }
}
