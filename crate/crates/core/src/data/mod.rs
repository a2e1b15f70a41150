//! Datasets of images with per-pixel targets, and their on-disk form.

mod synth;

pub use synth::{
    gen_edges, gen_normals, gen_segmentation, lights, normals_field, render_field, transition_set, EdgeConfig,
    HeightField, NormalsConfig, SegmentationConfig, PALETTE,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_pxt_file, write_pxt_file, Tensor};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Segmentation { classes: usize },
    Normals,
    Edges,
}

impl TaskKind {
    /// Output width of the prediction head.
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Segmentation { classes } => classes,
            TaskKind::Normals => 3,
            TaskKind::Edges => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Segmentation { .. } => "segmentation",
            TaskKind::Normals => "normals",
            TaskKind::Edges => "edges",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

/// Per-pixel targets of one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetMap {
    Classes(Vec<u8>),
    Normals(Vec<[f32; 3]>),
    Edges(Vec<u8>),
}

/// Target of a single pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(u8),
    Normal([f32; 3]),
    Edge(u8),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Class(c) | Target::Edge(c) => write!(f, "{c}"),
            Target::Normal([x, y, z]) => write!(f, "{x};{y};{z}"),
        }
    }
}

impl TargetMap {
    pub fn len(&self) -> usize {
        match self {
            TargetMap::Classes(v) | TargetMap::Edges(v) => v.len(),
            TargetMap::Normals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, index: usize) -> Target {
        match self {
            TargetMap::Classes(v) => Target::Class(v[index]),
            TargetMap::Normals(v) => Target::Normal(v[index]),
            TargetMap::Edges(v) => Target::Edge(v[index]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub split: Split,
    pub generator: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `[C×H×W]` each.
    pub images: Vec<Tensor<f32>>,
    pub targets: Vec<TargetMap>,
    /// Fraction of positive pixels, edge datasets only.
    pub positive_rate: Option<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Stacks the selected images into `[B×C×H×W]`.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.pixels());
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::contract(format!("image {i} out of range for {} images", self.len())))?;
            data.extend_from_slice(img.data());
        }
        Tensor::from_vec(&[indices.len(), self.channels, self.height, self.width], data)
    }

    /// Writes `manifest.txt` plus `images.pxt` and `targets.pxt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut put = |k: &str, v: String| manifest.push_str(&format!("{k}={v}\n"));
        put("task", self.task.name().into());
        if let TaskKind::Segmentation { classes } = self.task {
            put("classes", classes.to_string());
        }
        put("split", self.split.name().into());
        put("generator", self.generator.clone());
        put("seed", self.seed.to_string());
        put("n_images", self.len().to_string());
        put("height", self.height.to_string());
        put("width", self.width.to_string());
        put("channels", self.channels.to_string());
        if let Some(rate) = self.positive_rate {
            put("positive_rate", format!("{rate}"));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        if self.is_empty() {
            return Ok(());
        }
        let n = self.len();
        let all: Vec<usize> = (0..n).collect();
        write_pxt_file(&self.stack(&all)?, &dir.join("images.pxt"))?;
        let hw = self.pixels();
        let targets = match self.task {
            TaskKind::Normals => {
                let mut data = Vec::with_capacity(n * 3 * hw);
                for t in &self.targets {
                    let TargetMap::Normals(v) = t else { return Err(Error::contract("mixed target kinds")) };
                    for axis in 0..3 {
                        data.extend(v.iter().map(|n| n[axis]));
                    }
                }
                Tensor::from_vec(&[n, 3, self.height, self.width], data)?
            }
            _ => {
                let mut data = Vec::with_capacity(n * hw);
                for t in &self.targets {
                    match t {
                        TargetMap::Classes(v) | TargetMap::Edges(v) => data.extend(v.iter().map(|&c| c as f32)),
                        TargetMap::Normals(_) => return Err(Error::contract("mixed target kinds")),
                    }
                }
                Tensor::from_vec(&[n, self.height, self.width], data)?
            }
        };
        write_pxt_file(&targets, &dir.join("targets.pxt"))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Corruption(format!("cannot read {}: {e}", path.display())))?;
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Corruption(format!("manifest missing {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Corruption(format!("manifest field {k} is not an integer")))
        };
        let task = match get("task")? {
            "segmentation" => TaskKind::Segmentation { classes: num("classes")? },
            "normals" => TaskKind::Normals,
            "edges" => TaskKind::Edges,
            other => return Err(Error::Corruption(format!("unknown task {other}"))),
        };
        let split = match get("split")? {
            "train" => Split::Train,
            "heldout" => Split::Heldout,
            other => return Err(Error::Corruption(format!("unknown split {other}"))),
        };
        let (n, height, width, channels) = (num("n_images")?, num("height")?, num("width")?, num("channels")?);
        let seed = get("seed")?.parse().map_err(|_| Error::Corruption("manifest seed".into()))?;
        let positive_rate = kv.get("positive_rate").and_then(|v| v.parse().ok());
        let mut ds = Dataset {
            task,
            split,
            generator: get("generator")?.to_string(),
            seed,
            height,
            width,
            channels,
            images: Vec::new(),
            targets: Vec::new(),
            positive_rate,
        };
        if n == 0 {
            return Ok(ds);
        }
        let images: Tensor<f32> = read_pxt_file(&dir.join("images.pxt"))
            .map_err(|e| Error::Corruption(format!("images.pxt: {e}")))?;
        if images.shape() != [n, channels, height, width] {
            return Err(Error::Corruption(format!("images.pxt has shape {:?}", images.shape())));
        }
        let targets: Tensor<f32> = read_pxt_file(&dir.join("targets.pxt"))
            .map_err(|e| Error::Corruption(format!("targets.pxt: {e}")))?;
        let hw = height * width;
        let per_image = channels * hw;
        for i in 0..n {
            ds.images.push(Tensor::from_vec(&[channels, height, width], images.data()[i * per_image..(i + 1) * per_image].to_vec())?);
        }
        match task {
            TaskKind::Normals => {
                if targets.shape() != [n, 3, height, width] {
                    return Err(Error::Corruption(format!("targets.pxt has shape {:?}", targets.shape())));
                }
                for i in 0..n {
                    let t = &targets.data()[i * 3 * hw..(i + 1) * 3 * hw];
                    ds.targets.push(TargetMap::Normals((0..hw).map(|p| [t[p], t[hw + p], t[2 * hw + p]]).collect()));
                }
            }
            _ => {
                if targets.shape() != [n, height, width] {
                    return Err(Error::Corruption(format!("targets.pxt has shape {:?}", targets.shape())));
                }
                for i in 0..n {
                    let v: Vec<u8> = targets.data()[i * hw..(i + 1) * hw].iter().map(|&c| c as u8).collect();
                    ds.targets.push(if task == TaskKind::Edges { TargetMap::Edges(v) } else { TargetMap::Classes(v) });
                }
            }
        }
        Ok(ds)
    }
}
