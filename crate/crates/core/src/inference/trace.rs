use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub objective: f64,
    pub elbo: Option<f64>,
    pub kl: Option<f64>,
}

/// Per-step training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn elbos(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.elbo).collect()
    }

    /// CSV with columns `step,lr,objective` plus `elbo,kl` when any row has them.
    pub fn to_csv(&self) -> String {
        let vb = self.rows.iter().any(|r| r.elbo.is_some());
        let mut s = String::from(if vb {
            "step,lr,objective,elbo,kl\n"
        } else {
            "step,lr,objective\n"
        });
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.step, r.lr, r.objective);
            if vb {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let _ = write!(s, ",{},{}", opt(r.elbo), opt(r.kl));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Means of consecutive non-overlapping windows (a shorter tail window is dropped).
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}
