//! Analytic scalar accounting of one training iteration.
//!
//! [`plan_iteration`] lists the nodes a training graph records, with the
//! same value and retained sizes [`Graph::profile`] reports, and
//! [`simulate`] replays forward and backward over such a list. Every
//! forward buffer stays live until the backward sweep finishes; an
//! interior gradient lives from its first contribution until its node has
//! propagated it, and parameter gradients live to the end.
//!
//! [`Graph::profile`]: crate::autodiff::Graph::profile

use crate::autodiff::NodeProfile;
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::heads::MlpSpec;
use crate::layers::BackboneSpec;
use crate::model::PipelineMode;
use crate::tensor::ScalarMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Params,
    Input,
    Backbone,
    Hypercolumn,
    Mlp,
    Loss,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Params => "params",
            Stage::Input => "input",
            Stage::Backbone => "backbone",
            Stage::Hypercolumn => "hypercolumn",
            Stage::Mlp => "mlp",
            Stage::Loss => "loss",
        }
    }
}

/// Shapes that determine the memory of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    pub task: TaskKind,
    pub backbone: BackboneSpec,
    pub mlp: MlpSpec,
    pub height: usize,
    pub width: usize,
    pub images: usize,
    pub pixels_per_image: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedNode {
    pub stage: Stage,
    pub node: NodeProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub mode: PipelineMode,
    pub peak_scalars: usize,
    /// Live scalars per buffer group at the peak instant.
    pub breakdown: Vec<(String, usize)>,
    /// Values and retained scalars recorded by the hypercolumn stage.
    pub hypercolumn_stage: usize,
    /// The per-pixel hypercolumn matrix that feeds the predictor.
    pub hypercolumn_buffer: usize,
    pub bytes_at_mode: usize,
    pub scalar_mode: ScalarMode,
}

struct Planner {
    nodes: Vec<PlannedNode>,
}

impl MemoryConfig {
    /// Shapes of a training iteration under `config`.
    pub fn from_config(config: &crate::config::Config) -> Result<Self> {
        let spec = config.model_spec()?;
        Ok(MemoryConfig {
            task: spec.task,
            backbone: spec.backbone,
            mlp: spec.mlp,
            height: config.task.size,
            width: config.task.size,
            images: config.sample.images,
            pixels_per_image: config.sample.pixels,
        })
    }
}

impl Planner {
    fn push(&mut self, stage: Stage, op: &'static str, value: usize, saved: usize, inputs: Vec<usize>, leaf_grad: bool) -> usize {
        let requires_grad = if op == "leaf" { leaf_grad } else { inputs.iter().any(|&i| self.nodes[i].node.requires_grad) };
        self.nodes.push(PlannedNode {
            stage,
            node: NodeProfile { op, value_scalars: value, saved_scalars: saved, inputs, requires_grad },
        });
        self.nodes.len() - 1
    }
}

/// Node list of one training iteration in `mode`, in recording order.
pub fn plan_iteration(mode: PipelineMode, cfg: &MemoryConfig) -> Result<Vec<PlannedNode>> {
    let bb = &cfg.backbone;
    bb.validate()?;
    cfg.mlp.validate()?;
    bb.check_input(&[cfg.images, bb.in_channels, cfg.height, cfg.width])?;
    let d = bb.hypercolumn_dim()?;
    if cfg.mlp.outputs != cfg.task.outputs() {
        return Err(Error::config(format!("{} task needs {} outputs, mlp has {}", cfg.task.name(), cfg.task.outputs(), cfg.mlp.outputs)));
    }
    if cfg.mlp.input_dim != d {
        return Err(Error::config(format!("mlp input {} does not match hypercolumn width {d}", cfg.mlp.input_dim)));
    }
    let (b, hw) = (cfg.images, cfg.height * cfg.width);
    if cfg.pixels_per_image == 0 || cfg.pixels_per_image > hw {
        return Err(Error::config(format!("{} pixels per image on {}×{}", cfg.pixels_per_image, cfg.height, cfg.width)));
    }
    let p = b * cfg.pixels_per_image;
    let mut pl = Planner { nodes: Vec::new() };

    // parameters, bound in store order: backbone then predictor
    let mut param = std::collections::HashMap::new();
    for l in bb.layers() {
        let w = pl.push(Stage::Params, "leaf", l.out_ch * l.in_ch * l.kernel * l.kernel, 0, vec![], true);
        param.insert(format!("{}.weight", l.name), w);
        let extras: &[&str] = if bb.batch_norm { &["bn.gamma", "bn.beta"] } else { &["bias"] };
        for e in extras {
            param.insert(format!("{}.{e}", l.name), pl.push(Stage::Params, "leaf", l.out_ch, 0, vec![], true));
        }
    }
    if cfg.mlp.input_bn {
        for e in ["gamma", "beta"] {
            param.insert(format!("mlp.bn.{e}"), pl.push(Stage::Params, "leaf", d, 0, vec![], true));
        }
    }
    for (i, (fi, fo)) in cfg.mlp.widths().into_iter().enumerate() {
        param.insert(format!("mlp.fc{}.weight", i + 1), pl.push(Stage::Params, "leaf", fi * fo, 0, vec![], true));
        param.insert(format!("mlp.fc{}.bias", i + 1), pl.push(Stage::Params, "leaf", fo, 0, vec![], true));
    }

    let mut x = pl.push(Stage::Input, "leaf", b * bb.in_channels * hw, 0, vec![], false);
    let (mut h, mut w) = (cfg.height, cfg.width);
    let metas = bb.metas()?;
    let mut taps = vec![(0usize, 0usize); metas.len()];
    for l in bb.layers() {
        let out = b * l.out_ch * h * w;
        let cols = if l.kernel == 1 { 0 } else { b * l.in_ch * l.kernel * l.kernel * h * w };
        let wt = param[&format!("{}.weight", l.name)];
        if bb.batch_norm {
            x = pl.push(Stage::Backbone, "conv2d", out, cols, vec![x, wt], false);
            let (g, be) = (param[&format!("{}.bn.gamma", l.name)], param[&format!("{}.bn.beta", l.name)]);
            x = pl.push(Stage::Backbone, "batchnorm", out, out + l.out_ch, vec![x, g, be], false);
        } else {
            x = pl.push(Stage::Backbone, "conv2d", out, cols, vec![x, wt, param[&format!("{}.bias", l.name)]], false);
        }
        x = pl.push(Stage::Backbone, "relu", out, 0, vec![x], false);
        for (slot, m) in taps.iter_mut().zip(&metas) {
            if m.name == l.name {
                *slot = (x, m.channels);
            }
        }
        if l.pool_after {
            h /= 2;
            w /= 2;
            let pooled = b * l.out_ch * h * w;
            x = pl.push(Stage::Backbone, "maxpool2d", pooled, pooled, vec![x], false);
        }
    }
    let tap_vars: Vec<usize> = taps.iter().map(|t| t.0).collect();
    let nt = taps.len();

    let mlp_rows = |pl: &mut Planner, mut x: usize, rows: usize| -> usize {
        if cfg.mlp.input_bn {
            x = pl.push(Stage::Mlp, "batchnorm", rows * d, rows * d + d, vec![x, param["mlp.bn.gamma"], param["mlp.bn.beta"]], false);
        }
        let widths = cfg.mlp.widths();
        for (i, &(_, fo)) in widths.iter().enumerate() {
            x = pl.push(Stage::Mlp, "matmul", rows * fo, 0, vec![x, param[&format!("mlp.fc{}.weight", i + 1)]], false);
            x = pl.push(Stage::Mlp, "add_bias", rows * fo, 0, vec![x, param[&format!("mlp.fc{}.bias", i + 1)]], false);
            if i + 1 < widths.len() {
                x = pl.push(Stage::Mlp, "relu", rows * fo, 0, vec![x], false);
                if cfg.mlp.dropout > 0.0 {
                    x = pl.push(Stage::Mlp, "dropout", rows * fo, rows * fo, vec![x], false);
                }
            }
        }
        x
    };

    let k = cfg.mlp.outputs;
    let out = match mode {
        PipelineMode::Sampled => {
            let hc = pl.push(Stage::Hypercolumn, "sample_hypercolumn", p * d, 8 * p * nt, tap_vars, false);
            mlp_rows(&mut pl, hc, p)
        }
        PipelineMode::MaskedDense => {
            let all = pl.push(Stage::Hypercolumn, "sample_hypercolumn", b * hw * d, 8 * b * hw * nt, tap_vars, false);
            let picked = pl.push(Stage::Hypercolumn, "gather_rows", p * d, p, vec![all], false);
            mlp_rows(&mut pl, picked, p)
        }
        PipelineMode::DenseUpsample => {
            let parts: Vec<usize> = taps
                .iter()
                .map(|&(v, c)| pl.push(Stage::Hypercolumn, "sample_hypercolumn", b * hw * c, 8 * b * hw, vec![v], false))
                .collect();
            let dense = pl.push(Stage::Hypercolumn, "concat_cols", b * hw * d, 0, parts, false);
            let o = mlp_rows(&mut pl, dense, b * hw);
            pl.push(Stage::Mlp, "gather_rows", p * k, p, vec![o], false)
        }
    };
    let loss = match cfg.task {
        TaskKind::Segmentation { .. } => "softmax_xent",
        TaskKind::Normals => "euclidean_normal_loss",
        TaskKind::Edges => "balanced_bce",
    };
    pl.push(Stage::Loss, loss, 1, p * k, vec![out], false);
    Ok(pl.nodes)
}

/// Peak live scalars over forward then backward, and the live amount per
/// group at that instant. Groups are `stage` values and `stage.saved`
/// retained buffers plus `gradients`.
pub fn simulate(nodes: &[NodeProfile], stages: Option<&[Stage]>) -> (usize, Vec<(String, usize)>) {
    let group = |i: usize| stages.map_or("graph", |s| s[i].name());
    let forward: usize = nodes.iter().map(|n| n.value_scalars + n.saved_scalars).sum();
    let Some(last) = nodes.len().checked_sub(1) else { return (0, Vec::new()) };
    let mut grad: Vec<Option<usize>> = vec![None; nodes.len()];
    grad[last] = Some(nodes[last].value_scalars);
    let mut live = nodes[last].value_scalars;
    let mut peak = (forward + live, grad.clone());
    for i in (0..=last).rev() {
        let n = &nodes[i];
        if n.op == "leaf" || !n.requires_grad || grad[i].is_none() {
            continue;
        }
        for &j in &n.inputs {
            if nodes[j].requires_grad && grad[j].is_none() {
                grad[j] = Some(nodes[j].value_scalars);
                live += nodes[j].value_scalars;
            }
        }
        if forward + live > peak.0 {
            peak = (forward + live, grad.clone());
        }
        live -= grad[i].take().expect("checked above");
    }
    let mut breakdown: Vec<(String, usize)> = Vec::new();
    let mut add = |name: String, v: usize| {
        if v == 0 {
            return;
        }
        match breakdown.iter_mut().find(|(k, _)| *k == name) {
            Some((_, acc)) => *acc += v,
            None => breakdown.push((name, v)),
        }
    };
    for (i, n) in nodes.iter().enumerate() {
        add(group(i).to_string(), n.value_scalars);
        add(format!("{}.saved", group(i)), n.saved_scalars);
    }
    add("gradients".into(), peak.1.iter().flatten().sum());
    (peak.0, breakdown)
}

/// Scalar accounting of one training iteration of `mode`.
pub fn account_memory(mode: PipelineMode, cfg: &MemoryConfig, scalar: ScalarMode) -> Result<MemoryReport> {
    let plan = plan_iteration(mode, cfg)?;
    let stages: Vec<Stage> = plan.iter().map(|n| n.stage).collect();
    let nodes: Vec<NodeProfile> = plan.iter().map(|n| n.node.clone()).collect();
    let (peak, breakdown) = simulate(&nodes, Some(&stages));
    let hypercolumn_stage = plan
        .iter()
        .filter(|n| n.stage == Stage::Hypercolumn)
        .map(|n| n.node.value_scalars + n.node.saved_scalars)
        .sum();
    let d = cfg.mlp.input_dim;
    let hypercolumn_buffer = match mode {
        PipelineMode::Sampled => cfg.images * cfg.pixels_per_image * d,
        PipelineMode::MaskedDense | PipelineMode::DenseUpsample => cfg.images * cfg.height * cfg.width * d,
    };
    let width = match scalar {
        ScalarMode::Standard => 4,
        ScalarMode::Verification => 8,
    };
    Ok(MemoryReport {
        mode,
        peak_scalars: peak,
        breakdown,
        hypercolumn_stage,
        hypercolumn_buffer,
        bytes_at_mode: peak * width,
        scalar_mode: scalar,
    })
}
