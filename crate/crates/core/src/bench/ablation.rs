//! Grid-by-seed training sweeps with a result cache keyed by config hash.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use super::run::run_config;
use super::svg::{downsample, line_chart};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::train::TrainLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    SamplingFraction,
    Diversity,
    BiasRho,
    MlpWidth,
    Multiscale,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::SamplingFraction, Ablation::Diversity, Ablation::BiasRho, Ablation::MlpWidth, Ablation::Multiscale];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::SamplingFraction => "sampling_fraction",
            Ablation::Diversity => "diversity",
            Ablation::BiasRho => "bias_rho",
            Ablation::MlpWidth => "mlp_width",
            Ablation::Multiscale => "multiscale",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?}; expected one of sampling_fraction, diversity, bias_rho, mlp_width, multiscale")))
    }

    /// Keys every run of this ablation needs on top of the user's config.
    pub fn prepare(self, base: &Config) -> Result<Config> {
        let mut c = base.clone();
        match self {
            Ablation::Diversity => {
                // 1280 pixels from one image need more than 32×32
                if c.task.size * c.task.size < 1280 {
                    c.apply_override("task.size=64")?;
                }
            }
            Ablation::BiasRho => {
                c.apply_override("task.kind=edges")?;
                c.apply_override("sample.pixels=32")?;
            }
            _ => {}
        }
        Ok(c)
    }

    /// The registered grid for `base`.
    pub fn grid(self, base: &Config) -> Vec<GridPoint> {
        let px = base.task.size * base.task.size;
        let point = |label: &str, kv: &[(&str, String)]| GridPoint {
            label: label.into(),
            overrides: kv.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        match self {
            Ablation::SamplingFraction => [1.0, 0.04]
                .iter()
                .map(|&f: &f64| {
                    let n = ((f * px as f64).round() as usize).max(1);
                    point(&format!("{}%", f * 100.0), &[("sample.pixels", n.to_string())])
                })
                .collect(),
            Ablation::Diversity => vec![
                point("M5xN256", &[("sample.images", "5".into()), ("sample.pixels", "256".into())]),
                point("M1xN1280", &[("sample.images", "1".into()), ("sample.pixels", "1280".into())]),
            ],
            Ablation::BiasRho => {
                let mut g = vec![point("uniform", &[("sample.strategy", "uniform".into())])];
                for rho in ["0.25", "0.5", "0.75"] {
                    g.push(point(&format!("rho={rho}"), &[("sample.strategy", "biased".into()), ("sample.rho", rho.into())]));
                }
                g
            }
            Ablation::MlpWidth => [32, 64, 128, 256]
                .iter()
                .map(|w| point(&format!("{w}"), &[("head.hidden", format!("{w},{w},{w}"))]))
                .collect(),
            Ablation::Multiscale => vec![
                point("1", &[("task.scales", "1".into())]),
                point("0.5+1", &[("task.scales", "0.5,1".into())]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub score: f64,
    pub tail_loss: f64,
    pub metrics: Vec<(String, f64)>,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub grid: String,
    pub seed: u64,
    pub config_hash: String,
    /// Error message of a failed run.
    pub outcome: std::result::Result<RunMetrics, String>,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub grid: String,
    pub median_score: f64,
    pub median_tail_loss: f64,
    pub ok_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub ablation: Ablation,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<SummaryRow>,
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationReport {
    pub fn summary_for(&self, grid: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.grid == grid)
    }

    /// Per-seed outcomes of `grid`, in seed order.
    pub fn runs(&self, grid: &str) -> Vec<&AblationRow> {
        self.rows.iter().filter(|r| r.grid == grid).collect()
    }

    fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for m in self.rows.iter().filter_map(|r| r.outcome.as_ref().ok()) {
            for (k, _) in &m.metrics {
                if !names.contains(k) {
                    names.push(k.clone());
                }
            }
        }
        names
    }

    /// One row per run, then one `median` row per grid point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let names = self.metric_names();
        write!(out, "ablation,grid,seed,config_hash,status,score,tail_loss")?;
        for n in &names {
            write!(out, ",{n}")?;
        }
        writeln!(out, ",error")?;
        let name = self.ablation.name();
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => {
                    write!(out, "{name},{},{},{},ok,{},{}", r.grid, r.seed, r.config_hash, m.score, m.tail_loss)?;
                    for n in &names {
                        match m.metrics.iter().find(|(k, _)| k == n) {
                            Some((_, v)) => write!(out, ",{v}")?,
                            None => write!(out, ",")?,
                        }
                    }
                    writeln!(out, ",")?;
                }
                Err(e) => {
                    write!(out, "{name},{},{},{},failed,,", r.grid, r.seed, r.config_hash)?;
                    for _ in &names {
                        write!(out, ",")?;
                    }
                    writeln!(out, ",{}", e.replace([',', '\n'], ";"))?;
                }
            }
        }
        for s in &self.summary {
            write!(out, "{name},{},median,,summary,{},{}", s.grid, s.median_score, s.median_tail_loss)?;
            for _ in &names {
                write!(out, ",")?;
            }
            writeln!(out, ",")?;
        }
        Ok(())
    }

    /// Mean training loss per grid point against iteration.
    pub fn loss_svg(&self) -> String {
        let series: Vec<(String, Vec<(f64, f64)>)> = self
            .summary
            .iter()
            .map(|s| {
                let logs: Vec<&TrainLog> =
                    self.runs(&s.grid).iter().filter_map(|r| r.outcome.as_ref().ok()).map(|m| &m.log).collect();
                let len = logs.iter().map(|l| l.len()).min().unwrap_or(0);
                let mean: Vec<f64> =
                    (0..len).map(|i| logs.iter().map(|l| l.rows[i].loss).sum::<f64>() / logs.len() as f64).collect();
                (s.grid.clone(), downsample(&mean, 200))
            })
            .collect();
        line_chart(&format!("{}: training loss", self.ablation.name()), "iteration", "loss", &series)
    }

    /// Median held-out score against grid position.
    pub fn metric_svg(&self) -> String {
        let pts = self.summary.iter().enumerate().map(|(i, s)| (i as f64, s.median_score)).collect();
        let labels: Vec<&str> = self.summary.iter().map(|s| s.grid.as_str()).collect();
        line_chart(
            &format!("{}: median held-out score", self.ablation.name()),
            &format!("grid point ({})", labels.join(", ")),
            "score",
            &[("median".into(), pts)],
        )
    }
}

fn cache_paths(dir: &Path, hash: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{hash}.txt")), dir.join(format!("{hash}.log.csv")))
}

fn read_cached(dir: &Path, hash: &str) -> Option<std::result::Result<RunMetrics, String>> {
    let (meta, log) = cache_paths(dir, hash);
    let text = fs::read_to_string(meta).ok()?;
    let mut lines = text.lines();
    match lines.next()? {
        "status=failed" => Some(Err(lines.next()?.strip_prefix("error=")?.to_string())),
        "status=ok" => {
            let mut m = RunMetrics { score: f64::NAN, tail_loss: f64::NAN, metrics: Vec::new(), log: TrainLog::default() };
            for l in lines {
                let (k, v) = l.split_once('=')?;
                let v: f64 = v.parse().ok()?;
                match k {
                    "score" => m.score = v,
                    "tail_loss" => m.tail_loss = v,
                    _ => m.metrics.push((k.strip_prefix("metric.")?.to_string(), v)),
                }
            }
            m.log = TrainLog::read_csv(BufReader::new(fs::File::open(log).ok()?)).ok()?;
            Some(Ok(m))
        }
        _ => None,
    }
}

fn write_cached(dir: &Path, hash: &str, outcome: &std::result::Result<RunMetrics, String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (meta, log) = cache_paths(dir, hash);
    let text = match outcome {
        Err(e) => format!("status=failed\nerror={}\n", e.replace('\n', " ")),
        Ok(m) => {
            m.log.write_csv(fs::File::create(&log)?)?;
            let mut t = format!("status=ok\nscore={}\ntail_loss={}\n", m.score, m.tail_loss);
            for (k, v) in &m.metrics {
                t += &format!("metric.{k}={v}\n");
            }
            t
        }
    };
    // the metadata file marks the entry complete, so write it last
    fs::write(meta, text)?;
    Ok(())
}

/// Trains and evaluates every grid point under every seed. With `out_dir`
/// set, finished runs are cached under `out_dir/cache` and reused, and the
/// CSV plus two SVG charts are written there.
pub fn run_ablation(
    ablation: Ablation,
    base: &Config,
    grid: &[GridPoint],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::contract("ablation needs at least one grid point and one seed"));
    }
    let cache = out_dir.map(|d| d.join("cache"));
    let mut rows = Vec::new();
    for point in grid {
        for &seed in seeds {
            let mut cfg = base.clone();
            let assignments: Vec<String> = point
                .overrides
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .chain(std::iter::once(format!("train.seed={seed}")))
                .collect();
            let configured = cfg.apply_overrides(&assignments);
            let hash = cfg.hash();
            if let Some(hit) = cache.as_deref().and_then(|d| read_cached(d, &hash)) {
                rows.push(AblationRow { grid: point.label.clone(), seed, config_hash: hash, outcome: hit, cached: true });
                continue;
            }
            let outcome = configured.and_then(|_| run_config(&cfg)).map_err(|e| format!("{}: {e}", e.kind())).map(|o| {
                RunMetrics {
                    score: o.score,
                    tail_loss: o.tail_loss,
                    metrics: o.report.columns().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                    log: o.log,
                }
            });
            if let Some(d) = cache.as_deref() {
                write_cached(d, &hash, &outcome)?;
            }
            rows.push(AblationRow { grid: point.label.clone(), seed, config_hash: hash, outcome, cached: false });
        }
    }
    let summary = grid
        .iter()
        .map(|p| {
            let ok: Vec<&RunMetrics> = rows.iter().filter(|r| r.grid == p.label).filter_map(|r| r.outcome.as_ref().ok()).collect();
            SummaryRow {
                grid: p.label.clone(),
                median_score: median(&ok.iter().map(|m| m.score).collect::<Vec<_>>()),
                median_tail_loss: median(&ok.iter().map(|m| m.tail_loss).collect::<Vec<_>>()),
                ok_runs: ok.len(),
            }
        })
        .collect();
    let report = AblationReport { ablation, rows, summary };
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
        report.write_csv(fs::File::create(d.join(format!("{}.csv", ablation.name())))?)?;
        fs::write(d.join(format!("{}_loss.svg", ablation.name())), report.loss_svg())?;
        fs::write(d.join(format!("{}_metric.svg", ablation.name())), report.metric_svg())?;
    }
    Ok(report)
}
