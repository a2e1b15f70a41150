use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = n + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::shape(format!(
            "conv extent {n} with kernel {k}, stride {stride}, pad {pad} is not integral"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Unfolds one image `[C×H×W]` into `[C·kh·kw × OH·OW]`.
fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ohw = g.out_hw();
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[base + jj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dst: &mut [T]) {
    let ohw = g.out_hw();
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            let d = &mut dst[base + jj as usize];
                            *d = *d + src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dRule<T> {
    geom: ConvGeom,
    /// Unfolded input, one `[patch × OH·OW]` block per batch item.
    cols: Vec<T>,
    has_bias: bool,
}

impl<T: Scalar> BackwardRule<T> for Conv2dRule<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geom;
        let (patch, ohw) = (g.patch(), g.out_hw());
        let weights = inputs[1].data();
        let mut dx = inputs[0].zeros_like();
        let mut dw = vec![T::zero(); g.out_ch * patch];
        let mut db = vec![T::zero(); g.out_ch];
        let mut dcols = vec![T::zero(); patch * ohw];
        let img = g.in_ch * g.h * g.w;
        for b in 0..g.batch {
            let gout = &grad.data()[b * g.out_ch * ohw..(b + 1) * g.out_ch * ohw];
            let cols: &[T] = if g.is_pointwise() {
                &inputs[0].data()[b * img..(b + 1) * img]
            } else {
                &self.cols[b * patch * ohw..(b + 1) * patch * ohw]
            };
            // dW += dY · colsᵀ
            T::gemm(g.out_ch, ohw, patch, gout, ohw as isize, 1, cols, 1, ohw as isize, T::one(), &mut dw);
            // dcols = Wᵀ · dY
            T::gemm(patch, g.out_ch, ohw, weights, 1, patch as isize, gout, ohw as isize, 1, T::zero(), &mut dcols);
            let dst = &mut dx.data_mut()[b * img..(b + 1) * img];
            if g.is_pointwise() {
                dst.copy_from_slice(&dcols);
            } else {
                col2im(&dcols, g, dst);
            }
            if self.has_bias {
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc = *acc + gout[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
                }
            }
        }
        let mut out = vec![Some(dx), Some(Tensor::from_vec(inputs[1].shape(), dw)?)];
        if self.has_bias {
            out.push(Some(Tensor::from_vec(&[g.out_ch], db)?));
        }
        Ok(out)
    }

    fn saved_scalars(&self) -> usize {
        self.cols.len()
    }
}

/// Cross-correlation of `[B×C×H×W]` with `[O×C×kh×kw]` weights.
pub fn conv2d<T: Scalar>(
    graph: &mut Graph<T>,
    x: Var,
    weights: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let [batch, in_ch, h, w] = *graph.shape(x) else {
        return Err(Error::shape(format!("conv2d input must be rank 4, got {:?}", graph.shape(x))));
    };
    let [out_ch, wc, kh, kw] = *graph.shape(weights) else {
        return Err(Error::shape(format!("conv2d weights must be rank 4, got {:?}", graph.shape(weights))));
    };
    if wc != in_ch {
        return Err(Error::shape(format!("conv2d weights expect {wc} channels, input has {in_ch}")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be positive"));
    }
    if let Some(b) = bias {
        if graph.shape(b) != [out_ch] {
            return Err(Error::shape(format!("conv2d bias {:?} for {out_ch} channels", graph.shape(b))));
        }
    }
    let oh = out_extent(h, kh, stride, pad)?;
    let ow = out_extent(w, kw, stride, pad)?;
    let geom = ConvGeom { batch, in_ch, h, w, out_ch, kh, kw, stride, pad, oh, ow };
    let (patch, ohw) = (geom.patch(), geom.out_hw());
    let img = in_ch * h * w;

    let cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        let mut cols = vec![T::zero(); batch * patch * ohw];
        for b in 0..batch {
            im2col(
                &graph.value(x).data()[b * img..(b + 1) * img],
                &geom,
                &mut cols[b * patch * ohw..(b + 1) * patch * ohw],
            );
        }
        cols
    };

    let mut out = vec![T::zero(); batch * out_ch * ohw];
    let wdata = graph.value(weights).data();
    for b in 0..batch {
        let src: &[T] = if geom.is_pointwise() {
            &graph.value(x).data()[b * img..(b + 1) * img]
        } else {
            &cols[b * patch * ohw..(b + 1) * patch * ohw]
        };
        let dst = &mut out[b * out_ch * ohw..(b + 1) * out_ch * ohw];
        T::gemm(out_ch, patch, ohw, wdata, patch as isize, 1, src, ohw as isize, 1, T::zero(), dst);
        if let Some(bv) = bias {
            for (o, &bo) in graph.value(bv).data().iter().enumerate() {
                for v in &mut dst[o * ohw..(o + 1) * ohw] {
                    *v = *v + bo;
                }
            }
        }
    }
    let value = Tensor::from_vec(&[batch, out_ch, oh, ow], out)?;
    let mut inputs = vec![x, weights];
    inputs.extend(bias);
    let rule = Conv2dRule { geom, cols, has_bias: bias.is_some() };
    graph.record(inputs, value, Box::new(rule))
}
