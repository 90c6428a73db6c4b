use std::fmt::Write as _;
use std::path::Path;

use super::train::{Evaluation, ExperimentResult};
use crate::error::{Error, Result};

pub const BUCKET_HEADERS: [&str; 5] = [">0 µm", ">1 µm", ">2 µm", ">3 µm", ">4 µm"];

#[derive(Debug, Clone)]
pub struct GridCell {
    pub activation: String,
    pub loss: String,
    pub outcome: std::result::Result<ExperimentResult, String>,
}

/// Grid results in activation-major, loss-minor order.
#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
}

fn fmt_cell(v: Option<f64>, best: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) => {
            let mark = if best == Some(x) { "*" } else { "" };
            format!("{x:.4}{mark}")
        }
    }
}

struct Row<'a> {
    activation: &'a str,
    loss: &'a str,
    buckets: Option<&'a [Option<f64>]>,
}

fn render(split: &str, rows: &[Row<'_>]) -> String {
    let best: Vec<Option<f64>> = (0..BUCKET_HEADERS.len())
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.buckets?.get(j).copied().flatten())
                .fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v))))
        })
        .collect();
    let mut table: Vec<Vec<String>> = vec![["Activation", "Loss"]
        .iter()
        .chain(BUCKET_HEADERS.iter())
        .map(|s| s.to_string())
        .collect()];
    let mut last_act = "";
    for r in rows {
        let act = if r.activation == last_act { "" } else { r.activation };
        last_act = r.activation;
        let mut line = vec![act.to_string(), r.loss.to_string()];
        match r.buckets {
            Some(b) => line.extend(b.iter().zip(&best).map(|(&v, &m)| fmt_cell(v, m))),
            None => line.extend(std::iter::repeat_n("failed".to_string(), BUCKET_HEADERS.len())),
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = format!("Detection accuracy by minimum crack width ({split} split)\n");
    for (i, r) in table.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(v, &w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
            .collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    s
}

/// Single-row table for one evaluation, followed by pixel metrics.
pub fn evaluation_table(activation: &str, loss: &str, split: &str, e: &Evaluation) -> String {
    let mut s = render(
        split,
        &[Row {
            activation,
            loss,
            buckets: Some(&e.buckets),
        }],
    );
    let c = e.counts;
    let _ = writeln!(
        s,
        "samples {}  DSC {:.4}  accuracy {:.4}  TP {} TN {} FP {} FN {}",
        e.samples, e.dsc, e.accuracy, c.tp, c.tn, c.fp, c.fn_
    );
    s
}

impl GridReport {
    pub fn completed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }

    fn split_label(&self) -> String {
        let mut labels: Vec<&str> = self
            .cells
            .iter()
            .filter_map(|c| Some(c.outcome.as_ref().ok()?.split.label()))
            .collect();
        labels.dedup();
        match labels.as_slice() {
            [] => "none".into(),
            [one] => (*one).into(),
            _ => "mixed".into(),
        }
    }

    /// Aligned text table of bucketed detection accuracy, one row per cell,
    /// with the best value of each column marked `*`.
    pub fn to_text(&self) -> String {
        let rows: Vec<Row<'_>> = self
            .cells
            .iter()
            .map(|c| Row {
                activation: &c.activation,
                loss: &c.loss,
                buckets: c.outcome.as_ref().ok().map(|r| r.evaluation.buckets.as_slice()),
            })
            .collect();
        let mut s = render(&self.split_label(), &rows);
        for c in self.cells.iter().filter(|c| c.outcome.is_err()) {
            let _ = writeln!(s, "{} + {} failed: {}", c.activation, c.loss, c.outcome.as_ref().unwrap_err());
        }
        s
    }

    /// Machine-readable twin of [`GridReport::to_text`] with DSC, pixel
    /// accuracy and the final training loss added.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("activation,loss,status,split,gt0_um,gt1_um,gt2_um,gt3_um,gt4_um,dsc,accuracy,final_train_loss\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(r) => {
                    let b: Vec<String> = r
                        .evaluation
                        .buckets
                        .iter()
                        .map(|v| v.map_or(String::new(), |x| x.to_string()))
                        .collect();
                    let _ = writeln!(
                        s,
                        "{},{},ok,{},{},{},{},{}",
                        c.activation,
                        c.loss,
                        r.split.label(),
                        b.join(","),
                        r.evaluation.dsc,
                        r.evaluation.accuracy,
                        r.final_train_loss
                    );
                }
                Err(_) => {
                    let _ = writeln!(s, "{},{},failed,,,,,,,,,", c.activation, c.loss);
                }
            }
        }
        s
    }

    /// Writes `report.txt` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.txt", self.to_text()), ("report.csv", self.to_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
