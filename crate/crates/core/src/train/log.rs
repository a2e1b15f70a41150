use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    /// Held-out metrics, filled on evaluation iterations only.
    pub metrics: Vec<(String, f64)>,
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the last `window` iterations.
    pub fn tail_loss(&self, window: usize) -> Option<f64> {
        let k = window.min(self.rows.len());
        (k > 0).then(|| self.rows[self.rows.len() - k..].iter().map(|r| r.loss).sum::<f64>() / k as f64)
    }

    /// Metric column names in first-seen order.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for (n, _) in self.rows.iter().flat_map(|r| &r.metrics) {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        names
    }

    /// Bitwise comparison of every number in the log.
    pub fn bitwise_eq(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.lr.to_bits() == b.lr.to_bits()
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.metrics.len() == b.metrics.len()
                    && a.metrics.iter().zip(&b.metrics).all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
    }

    /// `iteration,lr,loss[,metric columns]`; floats print in shortest
    /// round-trip form so reading back is exact.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let names = self.metric_names();
        write!(out, "iteration,lr,loss")?;
        for n in &names {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        for r in &self.rows {
            write!(out, "{},{},{}", r.iteration, r.lr, r.loss)?;
            for n in &names {
                match r.metrics.iter().find(|(k, _)| k == n) {
                    Some((_, v)) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<TrainLog> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Corruption("empty train log".into()))??;
        let cols: Vec<String> = header.split(',').map(str::to_string).collect();
        if cols.len() < 3 || cols[..3] != ["iteration", "lr", "loss"] {
            return Err(Error::Corruption(format!("bad train log header {header:?}")));
        }
        let bad = |line: usize| Error::Corruption(format!("bad train log row {line}"));
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(i + 2));
            }
            let mut metrics = Vec::new();
            for (name, f) in cols[3..].iter().zip(&fields[3..]) {
                if !f.is_empty() {
                    metrics.push((name.clone(), f.parse().map_err(|_| bad(i + 2))?));
                }
            }
            rows.push(LogRow {
                iteration: fields[0].parse().map_err(|_| bad(i + 2))?,
                lr: fields[1].parse().map_err(|_| bad(i + 2))?,
                loss: fields[2].parse().map_err(|_| bad(i + 2))?,
                metrics,
            });
        }
        Ok(TrainLog { rows })
    }
}
