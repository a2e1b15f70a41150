//! Checkpoint directories: `manifest.txt`, one PXT1 file per tensor and the
//! training log so far.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::log::TrainLog;
use super::optim::OptimState;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{read_pxt_file, write_pxt_file, Scalar, Tensor};

const HEADER: &str = "pixelnet-checkpoint 1";

/// Everything needed to continue a run bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub state: OptimState<T>,
    pub seed: u64,
    /// Word positions of the sampling and dropout streams.
    pub sampling_pos: u128,
    pub dropout_pos: u128,
    pub log: TrainLog,
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Weight => "weight",
        ParamKind::Bias => "bias",
        ParamKind::Gamma => "gamma",
        ParamKind::Beta => "beta",
        ParamKind::RunningMean => "running_mean",
        ParamKind::RunningVar => "running_var",
    }
}

fn parse_kind(s: &str) -> Option<ParamKind> {
    [
        ParamKind::Weight,
        ParamKind::Bias,
        ParamKind::Gamma,
        ParamKind::Beta,
        ParamKind::RunningMean,
        ParamKind::RunningVar,
    ]
    .into_iter()
    .find(|k| kind_name(*k) == s)
}

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = format!(
            "{HEADER}\nmeta iteration {}\nmeta epoch {}\nmeta seed {}\nmeta rng.sampling {}\nmeta rng.dropout {}\n",
            self.state.iteration, self.state.epoch, self.seed, self.sampling_pos, self.dropout_pos
        );
        for (p, v) in self.params.params().iter().zip(&self.state.velocity) {
            let file = format!("{}.pxt", p.name);
            write_pxt_file(&p.value, &dir.join(&file))?;
            manifest += &format!("param {} {} {} {}\n", p.name, kind_name(p.kind), file, shape_str(p.value.shape()));
            if let Some(v) = v {
                let file = format!("velocity.{}.pxt", p.name);
                write_pxt_file(v, &dir.join(&file))?;
                manifest += &format!("velocity {} {} {}\n", p.name, file, shape_str(v.shape()));
            }
        }
        self.log.write_csv(BufWriter::new(fs::File::create(dir.join("log.csv"))?))?;
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.txt"))
            .map_err(|e| Error::Corruption(format!("cannot read {}: {e}", dir.join("manifest.txt").display())))?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Corruption("unrecognized checkpoint manifest header".into()));
        }
        let mut params = ParamStore::new();
        let mut velocity: Vec<Option<Tensor<T>>> = Vec::new();
        let (mut iteration, mut epoch, mut seed, mut sampling_pos, mut dropout_pos) = (None, None, None, None, None);
        let load_tensor = |name: &str, file: &str, shape: &str| -> Result<Tensor<T>> {
            let path = dir.join(file);
            if !path.exists() {
                return Err(Error::Corruption(format!("tensor {name} is missing its file {file}")));
            }
            let t = read_pxt_file::<T>(&path)
                .map_err(|e| Error::Corruption(format!("tensor {name} in {file} is unreadable: {e}")))?;
            let want = parse_shape(shape).ok_or_else(|| Error::Corruption(format!("bad shape {shape:?} for {name}")))?;
            if t.shape() != want.as_slice() {
                return Err(Error::Corruption(format!("tensor {name} has shape {:?}, manifest says {want:?}", t.shape())));
            }
            Ok(t)
        };
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Corruption(format!("manifest line {}: {line:?}", i + 2));
            match f.as_slice() {
                ["meta", key, value] => {
                    let v: u128 = value.parse().map_err(|_| bad())?;
                    match *key {
                        "iteration" => iteration = Some(v as usize),
                        "epoch" => epoch = Some(v as usize),
                        "seed" => seed = Some(v as u64),
                        "rng.sampling" => sampling_pos = Some(v),
                        "rng.dropout" => dropout_pos = Some(v),
                        _ => return Err(bad()),
                    }
                }
                ["param", name, kind, file, shape] => {
                    let kind = parse_kind(kind).ok_or_else(bad)?;
                    params.insert(*name, kind, load_tensor(name, file, shape)?)?;
                    velocity.push(None);
                }
                ["velocity", name, file, shape] => {
                    let idx = params.params().iter().position(|p| p.name == *name).ok_or_else(bad)?;
                    velocity[idx] = Some(load_tensor(&format!("velocity of {name}"), file, shape)?);
                }
                [] => {}
                _ => return Err(bad()),
            }
        }
        let missing = |what: &str| Error::Corruption(format!("manifest lacks {what}"));
        let log = TrainLog::read_csv(BufReader::new(
            fs::File::open(dir.join("log.csv")).map_err(|_| Error::Corruption("checkpoint has no log.csv".into()))?,
        ))?;
        for (p, v) in params.params().iter().zip(&velocity) {
            if p.kind.trainable() != v.is_some() {
                return Err(Error::Corruption(format!("velocity of {} does not match its kind", p.name)));
            }
        }
        Ok(Checkpoint {
            state: OptimState {
                velocity,
                iteration: iteration.ok_or_else(|| missing("iteration"))?,
                epoch: epoch.ok_or_else(|| missing("epoch"))?,
            },
            params,
            seed: seed.ok_or_else(|| missing("seed"))?,
            sampling_pos: sampling_pos.ok_or_else(|| missing("rng.sampling"))?,
            dropout_pos: dropout_pos.ok_or_else(|| missing("rng.dropout"))?,
            log,
        })
    }
}
