//! Flat `key=value` run configuration with dotted sections.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty document is a complete configuration.

use sha2::{Digest, Sha256};

use crate::data::{gen_edges, gen_normals, gen_segmentation, Dataset, EdgeConfig, NormalsConfig, SegmentationConfig, Split, TaskKind};
use crate::error::{Error, Result};
use crate::heads::MlpSpec;
use crate::hypercolumn::SamplingStrategy;
use crate::layers::{BackboneSpec, BatchNormConfig};
use crate::model::{ModelSpec, PipelineMode};
use crate::tensor::ScalarMode;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskName {
    Segmentation,
    Normals,
    Edges,
}

impl TaskName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Segmentation => "segmentation",
            TaskName::Normals => "normals",
            TaskName::Edges => "edges",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Two ×0.1 drops at one and two thirds of the budget.
    Auto,
    Fixed(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub kind: TaskName,
    pub size: usize,
    pub classes: usize,
    pub edge_rate: f64,
    pub max_bumps: usize,
    pub train_images: usize,
    pub heldout_images: usize,
    /// Test-time scales averaged by evaluation.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSection {
    pub stages: Vec<(usize, usize)>,
    pub head_channels: usize,
    pub kernel: usize,
    pub taps: Vec<String>,
    pub batch_norm: bool,
    pub init_sigma: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub input_bn: bool,
    /// `None` is fan-in scaled init.
    pub init_sigma: Option<f64>,
    pub final_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub seed: u64,
    pub scalar: ScalarMode,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub half_resize: bool,
    pub checked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSection {
    pub images: usize,
    pub pixels: usize,
    pub strategy: Strategy,
    pub rho: f64,
    pub pipeline: PipelineMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Uniform,
    Biased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub warmup: usize,
    pub iterations: usize,
    /// Largest number of scalars a single pipeline may hold.
    pub budget: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub task: TaskSection,
    pub backbone: BackboneSection,
    pub head: HeadSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub bench: BenchSection,
}

impl Default for Config {
    fn default() -> Self {
        let bb = BackboneSpec::default();
        Config {
            task: TaskSection {
                kind: TaskName::Segmentation,
                size: 32,
                classes: 4,
                edge_rate: 0.05,
                max_bumps: 5,
                train_images: 200,
                heldout_images: 50,
                scales: vec![1.0],
            },
            backbone: BackboneSection {
                stages: bb.stages,
                head_channels: bb.head_channels,
                kernel: bb.kernel,
                taps: bb.taps,
                batch_norm: bb.batch_norm,
                init_sigma: bb.init_sigma,
                bn_momentum: bb.bn.momentum,
                bn_eps: bb.bn.eps,
            },
            head: HeadSection { hidden: vec![128, 128, 128], dropout: 0.1, input_bn: false, init_sigma: None, final_sigma: None },
            train: TrainSection {
                lr0: 0.01,
                momentum: 0.9,
                weight_decay: 0.0005,
                schedule: Schedule::Auto,
                iterations: 2000,
                seed: 0,
                scalar: ScalarMode::Standard,
                eval_every: 0,
                checkpoint_every: 0,
                half_resize: false,
                checked: false,
            },
            sample: SampleSection { images: 5, pixels: 256, strategy: Strategy::Uniform, rho: 0.5, pipeline: PipelineMode::Sampled },
            bench: BenchSection { warmup: 5, iterations: 20, budget: 1 << 26, seeds: 5 },
        }
    }
}

/// Every key with a one-line description, in render order.
pub const KEYS: &[(&str, &str)] = &[
    ("task.kind", "segmentation | normals | edges"),
    ("task.size", "image height and width in pixels"),
    ("task.classes", "segmentation classes including background"),
    ("task.edge_rate", "target fraction of edge pixels"),
    ("task.max_bumps", "largest number of bumps per normals height field"),
    ("task.train_images", "training images generated"),
    ("task.heldout_images", "held-out images generated"),
    ("task.scales", "comma-separated test-time scales"),
    ("backbone.stages", "comma-separated NxC stages: N convolutions of C channels"),
    ("backbone.head_channels", "width of the 1x1 head layer, 0 for none"),
    ("backbone.kernel", "odd convolution kernel size"),
    ("backbone.taps", "comma-separated tapped layer names"),
    ("backbone.batch_norm", "batch norm after every convolution"),
    ("backbone.init_sigma", "Gaussian weight init std"),
    ("backbone.bn_momentum", "running statistics momentum"),
    ("backbone.bn_eps", "variance epsilon"),
    ("head.hidden", "comma-separated hidden widths"),
    ("head.dropout", "dropout rate after every hidden layer"),
    ("head.input_bn", "batch norm on the hypercolumn features"),
    ("head.init_sigma", "Gaussian init std, or he for sqrt(2/fan_in)"),
    ("head.final_sigma", "init std of the output layer, or none to follow head.init_sigma"),
    ("train.lr0", "initial learning rate"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 decay on weights"),
    ("train.schedule", "auto, none, or comma-separated iteration:multiplier"),
    ("train.iterations", "number of updates"),
    ("train.seed", "root seed of every random stream"),
    ("train.scalar", "standard (f32) | verification (f64)"),
    ("train.eval_every", "held-out evaluation cadence, 0 for never"),
    ("train.checkpoint_every", "checkpoint cadence, 0 for never"),
    ("train.half_resize", "train on half-resolution batches half of the time"),
    ("train.checked", "abort on the first non-finite value"),
    ("sample.images", "images per batch (M)"),
    ("sample.pixels", "pixels per image (N)"),
    ("sample.strategy", "uniform | biased"),
    ("sample.rho", "fraction of positive pixels under biased sampling"),
    ("sample.pipeline", "sampled | masked_dense | dense_upsample"),
    ("bench.warmup", "untimed iterations before a throughput window"),
    ("bench.iterations", "timed iterations per throughput window"),
    ("bench.budget", "scalar budget of one pipeline"),
    ("bench.seeds", "seeds per ablation grid point"),
];

type SetResult = std::result::Result<(), String>;

fn num<V: std::str::FromStr>(v: &str) -> std::result::Result<V, String> {
    v.parse().map_err(|_| format!("expected a number, got {v:?}"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a float, got {v:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v} is not finite"))
    }
}

fn positive(v: &str) -> std::result::Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be positive".into()),
        n => Ok(n),
    }
}

fn unit(v: &str, open_top: bool) -> std::result::Result<f64, String> {
    let x = float(v)?;
    let ok = if open_top { (0.0..1.0).contains(&x) } else { (0.0..=1.0).contains(&x) };
    if ok {
        Ok(x)
    } else {
        Err(format!("{x} outside [0, 1{}", if open_top { ")" } else { "]" }))
    }
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn list<V>(v: &str, item: impl Fn(&str) -> std::result::Result<V, String>) -> std::result::Result<Vec<V>, String> {
    if v.is_empty() {
        return Err("empty list".into());
    }
    v.split(',').map(|s| item(s.trim())).collect()
}

fn join<V>(items: &[V], f: impl Fn(&V) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> SetResult {
        match key {
            "task.kind" => {
                self.task.kind = match v {
                    "segmentation" => TaskName::Segmentation,
                    "normals" => TaskName::Normals,
                    "edges" => TaskName::Edges,
                    _ => return Err(format!("unknown task {v:?}")),
                }
            }
            "task.size" => self.task.size = positive(v)?,
            "task.classes" => {
                let c = num::<usize>(v)?;
                if !(2..=8).contains(&c) {
                    return Err(format!("classes {c} outside 2..=8"));
                }
                self.task.classes = c;
            }
            "task.edge_rate" => {
                let r = float(v)?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(format!("edge rate {r} outside (0, 1)"));
                }
                self.task.edge_rate = r;
            }
            "task.max_bumps" => {
                let b = num::<usize>(v)?;
                if !(1..=7).contains(&b) {
                    return Err(format!("max_bumps {b} outside 1..=7"));
                }
                self.task.max_bumps = b;
            }
            "task.train_images" => self.task.train_images = positive(v)?,
            "task.heldout_images" => self.task.heldout_images = positive(v)?,
            "task.scales" => {
                self.task.scales = list(v, |s| match float(s)? {
                    x if x > 0.0 => Ok(x),
                    x => Err(format!("scale {x} must be positive")),
                })?
            }
            "backbone.stages" => {
                self.backbone.stages = list(v, |s| {
                    let (n, c) = s.split_once('x').ok_or_else(|| format!("stage {s:?} is not NxC"))?;
                    Ok((positive(n)?, positive(c)?))
                })?
            }
            "backbone.head_channels" => self.backbone.head_channels = num(v)?,
            "backbone.kernel" => {
                let k = positive(v)?;
                if k % 2 == 0 {
                    return Err(format!("kernel {k} must be odd"));
                }
                self.backbone.kernel = k;
            }
            "backbone.taps" => self.backbone.taps = list(v, |s| Ok(s.to_string()))?,
            "backbone.batch_norm" => self.backbone.batch_norm = boolean(v)?,
            "backbone.init_sigma" => {
                let s = float(v)?;
                if s <= 0.0 {
                    return Err("init std must be positive".into());
                }
                self.backbone.init_sigma = s;
            }
            "backbone.bn_momentum" => self.backbone.bn_momentum = unit(v, false)?,
            "backbone.bn_eps" => {
                let e = float(v)?;
                if e <= 0.0 {
                    return Err("eps must be positive".into());
                }
                self.backbone.bn_eps = e;
            }
            "head.hidden" => self.head.hidden = list(v, positive)?,
            "head.dropout" => self.head.dropout = unit(v, true)?,
            "head.input_bn" => self.head.input_bn = boolean(v)?,
            "head.init_sigma" => {
                self.head.init_sigma = match v {
                    "he" => None,
                    _ => Some(float(v).and_then(|s| if s > 0.0 { Ok(s) } else { Err("init std must be positive".into()) })?),
                }
            }
            "head.final_sigma" => {
                self.head.final_sigma = match v {
                    "none" => None,
                    _ => Some(float(v).and_then(|s| if s > 0.0 { Ok(s) } else { Err("init std must be positive".into()) })?),
                }
            }
            "train.lr0" => {
                let lr = float(v)?;
                if lr <= 0.0 {
                    return Err("learning rate must be positive".into());
                }
                self.train.lr0 = lr;
            }
            "train.momentum" => self.train.momentum = unit(v, true)?,
            "train.weight_decay" => {
                let wd = float(v)?;
                if wd < 0.0 {
                    return Err("weight decay must be non-negative".into());
                }
                self.train.weight_decay = wd;
            }
            "train.schedule" => {
                self.train.schedule = match v {
                    "auto" => Schedule::Auto,
                    "none" => Schedule::Fixed(Vec::new()),
                    _ => {
                        let pts = list(v, |s| {
                            let (it, m) = s.split_once(':').ok_or_else(|| format!("milestone {s:?} is not iteration:multiplier"))?;
                            let m = float(m)?;
                            if m <= 0.0 {
                                return Err(format!("multiplier {m} must be positive"));
                            }
                            Ok((num::<usize>(it)?, m))
                        })?;
                        if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                            return Err("milestones must be strictly increasing".into());
                        }
                        Schedule::Fixed(pts)
                    }
                }
            }
            "train.iterations" => self.train.iterations = num(v)?,
            "train.seed" => self.train.seed = num(v)?,
            "train.scalar" => {
                self.train.scalar = match v {
                    "standard" => ScalarMode::Standard,
                    "verification" => ScalarMode::Verification,
                    _ => return Err(format!("unknown scalar mode {v:?}")),
                }
            }
            "train.eval_every" => self.train.eval_every = num(v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(v)?,
            "train.half_resize" => self.train.half_resize = boolean(v)?,
            "train.checked" => self.train.checked = boolean(v)?,
            "sample.images" => self.sample.images = positive(v)?,
            "sample.pixels" => self.sample.pixels = positive(v)?,
            "sample.strategy" => {
                self.sample.strategy = match v {
                    "uniform" => Strategy::Uniform,
                    "biased" => Strategy::Biased,
                    _ => return Err(format!("unknown strategy {v:?}")),
                }
            }
            "sample.rho" => self.sample.rho = unit(v, false)?,
            "sample.pipeline" => self.sample.pipeline = PipelineMode::parse(v).map_err(|_| format!("unknown pipeline {v:?}"))?,
            "bench.warmup" => self.bench.warmup = num(v)?,
            "bench.iterations" => self.bench.iterations = positive(v)?,
            "bench.budget" => self.bench.budget = positive(v)?,
            "bench.seeds" => self.bench.seeds = positive(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Textual value of `key`.
    pub fn get(&self, key: &str) -> Option<String> {
        let f = |x: f64| x.to_string();
        Some(match key {
            "task.kind" => self.task.kind.as_str().into(),
            "task.size" => self.task.size.to_string(),
            "task.classes" => self.task.classes.to_string(),
            "task.edge_rate" => f(self.task.edge_rate),
            "task.max_bumps" => self.task.max_bumps.to_string(),
            "task.train_images" => self.task.train_images.to_string(),
            "task.heldout_images" => self.task.heldout_images.to_string(),
            "task.scales" => join(&self.task.scales, |x| f(*x)),
            "backbone.stages" => join(&self.backbone.stages, |(n, c)| format!("{n}x{c}")),
            "backbone.head_channels" => self.backbone.head_channels.to_string(),
            "backbone.kernel" => self.backbone.kernel.to_string(),
            "backbone.taps" => self.backbone.taps.join(","),
            "backbone.batch_norm" => self.backbone.batch_norm.to_string(),
            "backbone.init_sigma" => f(self.backbone.init_sigma),
            "backbone.bn_momentum" => f(self.backbone.bn_momentum),
            "backbone.bn_eps" => f(self.backbone.bn_eps),
            "head.hidden" => join(&self.head.hidden, |w| w.to_string()),
            "head.dropout" => f(self.head.dropout),
            "head.input_bn" => self.head.input_bn.to_string(),
            "head.init_sigma" => self.head.init_sigma.map_or("he".into(), f),
            "head.final_sigma" => self.head.final_sigma.map_or("none".into(), f),
            "train.lr0" => f(self.train.lr0),
            "train.momentum" => f(self.train.momentum),
            "train.weight_decay" => f(self.train.weight_decay),
            "train.schedule" => match &self.train.schedule {
                Schedule::Auto => "auto".into(),
                Schedule::Fixed(p) if p.is_empty() => "none".into(),
                Schedule::Fixed(p) => join(p, |(it, m)| format!("{it}:{}", f(*m))),
            },
            "train.iterations" => self.train.iterations.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.scalar" => self.train.scalar.as_str().into(),
            "train.eval_every" => self.train.eval_every.to_string(),
            "train.checkpoint_every" => self.train.checkpoint_every.to_string(),
            "train.half_resize" => self.train.half_resize.to_string(),
            "train.checked" => self.train.checked.to_string(),
            "sample.images" => self.sample.images.to_string(),
            "sample.pixels" => self.sample.pixels.to_string(),
            "sample.strategy" => match self.sample.strategy {
                Strategy::Uniform => "uniform".into(),
                Strategy::Biased => "biased".into(),
            },
            "sample.rho" => f(self.sample.rho),
            "sample.pipeline" => self.sample.pipeline.name().into(),
            "bench.warmup" => self.bench.warmup.to_string(),
            "bench.iterations" => self.bench.iterations.to_string(),
            "bench.budget" => self.bench.budget.to_string(),
            "bench.seeds" => self.bench.seeds.to_string(),
            _ => return None,
        })
    }

    /// Parses a document over the defaults. Errors carry the 1-based line
    /// and column of the offending key or value.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut located: Vec<(&str, usize, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let indent = raw.len() - raw.trim_start().len();
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some(eq) = raw.find('=') else {
                return Err(Error::Parse { line, column: indent + 1, message: "expected key=value".into() });
            };
            let key = raw[..eq].trim();
            let value_raw = &raw[eq + 1..];
            let value_col = eq + 2 + (value_raw.len() - value_raw.trim_start().len());
            let value = value_raw.trim();
            if cfg.get(key).is_none() {
                return Err(Error::Parse { line, column: indent + 1, message: format!("unknown key {key:?}") });
            }
            if located.iter().any(|(k, _, _)| *k == key) {
                return Err(Error::Parse { line, column: indent + 1, message: format!("duplicate key {key:?}") });
            }
            cfg.set(key, value).map_err(|message| Error::Parse { line, column: value_col, message: format!("{key}: {message}") })?;
            located.push((key, line, value_col));
        }
        if let Err((key, message)) = cfg.check() {
            let (line, column) = located.iter().find(|(k, _, _)| *k == key).map_or((0, 0), |(_, l, c)| (*l, *c));
            return Err(Error::Parse { line, column, message: format!("{key}: {message}") });
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override on top of the current values.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        self.apply_overrides(&[assignment])
    }

    /// Applies every override in order, then checks cross-key constraints
    /// once on the result.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for assignment in assignments {
            let assignment = assignment.as_ref();
            let (key, value) = assignment
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
            let key = key.trim();
            self.set(key, value.trim()).map_err(|m| Error::config(format!("override {key}: {m}")))?;
        }
        self.validate()
    }

    /// Cross-key constraints as a config error.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(k, m)| Error::config(format!("{k}: {m}")))
    }

    /// One `key=value` line per key, in schema order.
    pub fn render(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k}={}\n", self.get(k).expect("schema key"))).collect()
    }

    /// Hex SHA-256 of the rendered document.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Constraints spanning several keys, reported against one of them.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let spec = self.model_spec().map_err(|e| ("backbone.taps", e.to_string()))?;
        let stride = spec.backbone.max_stride();
        if self.task.size % stride != 0 {
            return Err(("task.size", format!("{} is not a multiple of the backbone stride {stride}", self.task.size)));
        }
        let half = if self.train.half_resize { 2 } else { 1 };
        if self.task.size % (stride * half) != 0 {
            return Err(("train.half_resize", format!("half of {} is not a multiple of stride {stride}", self.task.size)));
        }
        if self.sample.pixels > self.task.size * self.task.size {
            return Err(("sample.pixels", format!("{} pixels exceed a {0}×{0} image", self.task.size)));
        }
        if self.sample.images > self.task.train_images {
            return Err(("sample.images", format!("{} images per batch from {} training images", self.sample.images, self.task.train_images)));
        }
        if self.sample.strategy == Strategy::Biased && self.task.kind != TaskName::Edges {
            return Err(("sample.strategy", "biased sampling needs the edges task".into()));
        }
        self.train_config().map_err(|e| ("train.schedule", e.to_string()))?;
        Ok(())
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.task.kind {
            TaskName::Segmentation => TaskKind::Segmentation { classes: self.task.classes },
            TaskName::Normals => TaskKind::Normals,
            TaskName::Edges => TaskKind::Edges,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let backbone = BackboneSpec {
            in_channels: 3,
            stages: self.backbone.stages.clone(),
            head_channels: self.backbone.head_channels,
            kernel: self.backbone.kernel,
            taps: self.backbone.taps.clone(),
            batch_norm: self.backbone.batch_norm,
            bn: BatchNormConfig { eps: self.backbone.bn_eps, momentum: self.backbone.bn_momentum },
            init_sigma: self.backbone.init_sigma,
        };
        backbone.validate()?;
        let task = self.task_kind();
        let mut mlp = MlpSpec::new(backbone.hypercolumn_dim()?, task.outputs());
        mlp.hidden = self.head.hidden.clone();
        mlp.dropout = self.head.dropout;
        mlp.input_bn = self.head.input_bn;
        mlp.bn = backbone.bn;
        mlp.init_sigma = self.head.init_sigma;
        mlp.final_sigma = self.head.final_sigma;
        let spec = ModelSpec { backbone, mlp, task };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            lr0: t.lr0,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            schedule: match &t.schedule {
                Schedule::Auto => TrainConfig::auto_schedule(t.iterations),
                Schedule::Fixed(p) => p.clone(),
            },
            images_per_batch: self.sample.images,
            pixels_per_image: self.sample.pixels,
            strategy: match self.sample.strategy {
                Strategy::Uniform => SamplingStrategy::Uniform,
                Strategy::Biased => SamplingStrategy::Biased { rho: self.sample.rho },
            },
            iterations: t.iterations,
            seed: t.seed,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            half_resize: t.half_resize,
            pipeline: self.sample.pipeline,
            checked: t.checked,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Generates the dataset of `split` from `train.seed`.
    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let (seed, size) = (self.train.seed, self.task.size);
        let n = match split {
            Split::Train => self.task.train_images,
            Split::Heldout => self.task.heldout_images,
        };
        match self.task.kind {
            TaskName::Segmentation => {
                gen_segmentation(seed, n, &SegmentationConfig { size, classes: self.task.classes, ..Default::default() }, split)
            }
            TaskName::Normals => gen_normals(seed, n, &NormalsConfig { size, max_bumps: self.task.max_bumps, ..Default::default() }, split),
            TaskName::Edges => gen_edges(seed, n, &EdgeConfig { size, pos_rate: self.task.edge_rate, ..Default::default() }, split),
        }
    }
}
