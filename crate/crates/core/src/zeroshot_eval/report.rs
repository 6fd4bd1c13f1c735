use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::classify::{classify, confidence_report, per_class_accuracy, top1_accuracy, Classification, Confidence};
use super::features::ImageFeatureSet;
use super::head::ClassifierHead;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub name: String,
    pub count: usize,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub n: usize,
    pub top1: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confidence: Confidence,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text summary with one row per class.
    pub fn render_text(&self) -> String {
        let mut t = Table::new(vec!["class".into(), "n".into(), "top-1 (%)".into()]);
        for c in &self.per_class {
            t.push(vec![c.name.clone(), c.count.to_string(), c.accuracy.map_or("-".into(), |a| format!("{:.2}", 100.0 * a))]);
        }
        t.push(vec!["all".into(), self.n.to_string(), format!("{:.2}", 100.0 * self.top1)]);
        format!(
            "{}\n{}\ncorrect-class confidence {:.4}, incorrect-class confidence {:.4}\n",
            self.tag,
            t.render(),
            self.confidence.correct,
            self.confidence.incorrect
        )
    }
}

/// Classifies `images` with `head` and summarizes the result.
pub fn evaluate(images: &ImageFeatureSet, head: &ClassifierHead, tag: &str) -> Result<(EvalReport, Classification)> {
    let cls = classify(images, head)?;
    let top1 = top1_accuracy(&cls.predictions, &images.labels)?;
    let per = per_class_accuracy(&cls.predictions, &images.labels, head.num_classes());
    let mut counts = vec![0; head.num_classes()];
    for &l in &images.labels {
        counts[l as usize] += 1;
    }
    let per_class = head
        .class_names
        .iter()
        .zip(per)
        .zip(counts)
        .map(|((name, accuracy), count)| ClassAccuracy { name: name.clone(), count, accuracy })
        .collect();
    let confidence = confidence_report(&cls.probabilities, &images.labels)?;
    let report = EvalReport { tag: tag.to_string(), n: images.len(), top1, per_class, confidence };
    Ok((report, cls))
}

/// Plain-text table with right-aligned numeric columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Self { headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let cols = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, cell) in width.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut out = Vec::with_capacity(cols);
            for (i, w) in width.iter().enumerate() {
                let cell = cells.get(i).map_or("", String::as_str);
                if i == 0 {
                    out.push(format!("{cell:<w$}"));
                } else {
                    out.push(format!("{cell:>w$}"));
                }
            }
            out.join("  ").trim_end().to_string()
        };
        let mut s = line(&self.headers);
        s.push('\n');
        s.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &self.rows {
            s.push('\n');
            s.push_str(&line(r));
        }
        s
    }
}
