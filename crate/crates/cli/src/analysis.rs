//! Empirical report: detail-to-total ratios, variance ratios against the
//! naive estimator and coefficients of variation.

use serde::Serialize;

use nnri::estimate::{Estimator, VarianceReport};

/// Variance ratios above this are printed as `XXX`.
pub const RATIO_CAP: f64 = 1000.0;

#[derive(Debug, Clone, Serialize)]
pub struct ItemAnalysis {
    pub item: String,
    pub estimate: f64,
    /// Imputed detail total over the weighted total of `x`.
    pub r_hat: f64,
    pub naive_variance: f64,
    /// `(method, V_method / V_naive)`; `None` when the naive variance is 0.
    pub variance_ratios: Vec<(String, Option<f64>)>,
    /// `(method, cv in percent)`, naive first.
    pub cv_pct: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub sample_size: usize,
    pub respondents: usize,
    pub demoted: Vec<u64>,
    pub total_x: f64,
    pub items: Vec<ItemAnalysis>,
    pub report: VarianceReport,
}

pub fn analyze(
    report: VarianceReport,
    sample_size: usize,
    respondents: usize,
    demoted: Vec<u64>,
) -> Analysis {
    let naive = report
        .method(Estimator::Naive)
        .expect("analysis always includes the naive estimator");
    let items = report
        .item_labels
        .iter()
        .enumerate()
        .map(|(t, label)| {
            let v_naive = naive.items[t].v_total;
            let others = report
                .methods
                .iter()
                .filter(|m| m.estimator != Estimator::Naive);
            ItemAnalysis {
                item: label.clone(),
                estimate: report.totals[t],
                r_hat: report.totals[t] / report.total_x,
                naive_variance: v_naive,
                variance_ratios: others
                    .map(|m| {
                        let r = (v_naive > 0.0).then(|| m.items[t].v_total / v_naive);
                        (m.estimator.label(), r)
                    })
                    .collect(),
                cv_pct: report
                    .methods
                    .iter()
                    .map(|m| (m.estimator.label(), m.items[t].cv_pct))
                    .collect(),
            }
        })
        .collect();
    Analysis {
        sample_size,
        respondents,
        demoted,
        total_x: report.total_x,
        items,
        report,
    }
}

pub fn render_ratio(r: Option<f64>) -> String {
    match r {
        None => "NA".into(),
        Some(v) if v > RATIO_CAP => "XXX".into(),
        Some(v) => format!("{v:.1}"),
    }
}

pub fn render_cv(cv: Option<f64>) -> String {
    cv.map(|v| format!("{v:.1}")).unwrap_or_else(|| "NA".into())
}

impl Analysis {
    pub fn ratio_table(&self) -> String {
        let mut out = format!("{:<14}{:>8}", "item", "R_y");
        if let Some(first) = self.items.first() {
            for (m, _) in &first.variance_ratios {
                out.push_str(&format!(" {:>14}", format!("R_{m}")));
            }
        }
        out.push('\n');
        for it in &self.items {
            out.push_str(&format!("{:<14}{:>8.3}", it.item, it.r_hat));
            for (_, r) in &it.variance_ratios {
                out.push_str(&format!(" {:>14}", render_ratio(*r)));
            }
            out.push('\n');
        }
        out
    }

    pub fn cv_table(&self) -> String {
        let mut out = format!("{:<14}", "item");
        if let Some(first) = self.items.first() {
            for (m, _) in &first.cv_pct {
                out.push_str(&format!(" {m:>12}"));
            }
        }
        out.push('\n');
        for it in &self.items {
            out.push_str(&format!("{:<14}", it.item));
            for (_, cv) in &it.cv_pct {
                out.push_str(&format!(" {:>12}", render_cv(*cv)));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "item",
            "r_hat",
            "method",
            "v_total",
            "ratio_to_naive",
            "cv_pct",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (t, it) in self.items.iter().enumerate() {
            for m in &self.report.methods {
                let v = m.items[t].v_total;
                let ratio = (it.naive_variance > 0.0).then(|| v / it.naive_variance);
                out.write_record([
                    it.item.clone(),
                    it.r_hat.to_string(),
                    m.estimator.label(),
                    v.to_string(),
                    opt(ratio),
                    opt(m.items[t].cv_pct),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_rendering() {
        assert_eq!(render_ratio(Some(1500.0)), "XXX");
        assert_eq!(render_ratio(Some(1000.0)), "1000.0");
        assert_eq!(render_ratio(Some(2.345)), "2.3");
        assert_eq!(render_ratio(None), "NA");
        assert_eq!(render_cv(Some(12.26)), "12.3");
    }
}
