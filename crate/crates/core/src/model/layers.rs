use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv3x3,
    Relu,
    Flatten,
    AvgPool2x2,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Dense,
        LayerKind::Conv3x3,
        LayerKind::Relu,
        LayerKind::Flatten,
        LayerKind::AvgPool2x2,
    ];

    /// Stable one-byte tag used by the weight file format.
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Dense => 1,
            LayerKind::Conv3x3 => 2,
            LayerKind::Relu => 3,
            LayerKind::Flatten => 4,
            LayerKind::AvgPool2x2 => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        LayerKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv3x3 => "conv3x3",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::AvgPool2x2 => "avgpool2x2",
        }
    }

    pub fn is_parametric(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv3x3)
    }
}

/// One stage of a classifier.
///
/// `Dense` weights are `[out, in]`; `Conv3x3` weights are
/// `[out_channels, in_channels, 3, 3]` with stride 1 and zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { weight: Tensor, bias: Tensor },
    Conv3x3 { weight: Tensor, bias: Tensor },
    Relu,
    Flatten,
    AvgPool2x2,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv3x3 { .. } => LayerKind::Conv3x3,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
            Layer::AvgPool2x2 => LayerKind::AvgPool2x2,
        }
    }

    /// `(weight, bias)` for parametric layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv3x3 { weight, bias } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv3x3 { weight, bias } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub(crate) fn output_shape(&self, input: &Shape) -> core::result::Result<Shape, String> {
        let dims = input.dims();
        match self {
            Layer::Dense { weight, bias } => {
                let &[out, inp] = weight.dims() else {
                    return Err(format!("weight must be rank 2, got {}", weight.shape()));
                };
                if bias.dims() != [out] {
                    return Err(format!("bias {} does not match {out} outputs", bias.shape()));
                }
                if dims != [inp] {
                    return Err(format!("expects input [{inp}], got {input}"));
                }
                Ok(shape(vec![out]))
            }
            Layer::Conv3x3 { weight, bias } => {
                let &[out, inp, 3, 3] = weight.dims() else {
                    return Err(format!(
                        "weight must be [out, in, 3, 3], got {}",
                        weight.shape()
                    ));
                };
                if bias.dims() != [out] {
                    return Err(format!("bias {} does not match {out} channels", bias.shape()));
                }
                match *dims {
                    [c, h, w] if c == inp => Ok(shape(vec![out, h, w])),
                    _ => Err(format!("expects [{inp}, H, W], got {input}")),
                }
            }
            Layer::Relu => Ok(input.clone()),
            Layer::Flatten => Ok(shape(vec![input.numel()])),
            Layer::AvgPool2x2 => match *dims {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(shape(vec![c, h / 2, w / 2])),
                _ => Err(format!("expects [C, H, W] with even H and W, got {input}")),
            },
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense { weight, bias } => {
                let (out, inp) = (weight.dims()[0], weight.dims()[1]);
                let w = weight.as_slice();
                let xs = x.as_slice();
                let y = (0..out)
                    .map(|o| {
                        let row = &w[o * inp..(o + 1) * inp];
                        bias.as_slice()[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                Tensor::from_parts(shape(vec![out]), y)
            }
            Layer::Conv3x3 { weight, bias } => conv3x3_forward(weight, bias, x),
            Layer::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::Flatten => Tensor::from_parts(shape(vec![x.len()]), x.as_slice().to_vec()),
            Layer::AvgPool2x2 => {
                let &[c, h, w] = x.dims() else { unreachable!() };
                let (oh, ow) = (h / 2, w / 2);
                let xs = x.as_slice();
                let mut y = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let base = ch * h * w + 2 * i * w + 2 * j;
                            y[(ch * oh + i) * ow + j] =
                                0.25 * (xs[base] + xs[base + 1] + xs[base + w] + xs[base + w + 1]);
                        }
                    }
                }
                Tensor::from_parts(shape(vec![c, oh, ow]), y)
            }
        }
    }

    /// Gradient with respect to the layer input; accumulates parameter
    /// gradients into `param_grads` when given.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        param_grads: Option<&mut (Tensor, Tensor)>,
    ) -> Tensor {
        match self {
            Layer::Dense { weight, .. } => {
                let (out, inp) = (weight.dims()[0], weight.dims()[1]);
                let w = weight.as_slice();
                let g = grad_out.as_slice();
                let mut gx = vec![0.0; inp];
                for o in 0..out {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    for (acc, wv) in gx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                        *acc += wv * go;
                    }
                }
                if let Some((gw, gb)) = param_grads {
                    let xs = x.as_slice();
                    let gw = gw.as_mut_slice();
                    for o in 0..out {
                        let go = g[o];
                        for (acc, xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xs) {
                            *acc += go * xv;
                        }
                        gb.as_mut_slice()[o] += go;
                    }
                }
                Tensor::from_parts(x.shape().clone(), gx)
            }
            Layer::Conv3x3 { weight, .. } => conv3x3_backward(weight, x, grad_out, param_grads),
            Layer::Relu => {
                let data = x
                    .as_slice()
                    .iter()
                    .zip(grad_out.as_slice())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::from_parts(x.shape().clone(), data)
            }
            Layer::Flatten => {
                Tensor::from_parts(x.shape().clone(), grad_out.as_slice().to_vec())
            }
            Layer::AvgPool2x2 => {
                let &[c, h, w] = x.dims() else { unreachable!() };
                let (oh, ow) = (h / 2, w / 2);
                let g = grad_out.as_slice();
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = 0.25 * g[(ch * oh + i) * ow + j];
                            let base = ch * h * w + 2 * i * w + 2 * j;
                            gx[base] = v;
                            gx[base + 1] = v;
                            gx[base + w] = v;
                            gx[base + w + 1] = v;
                        }
                    }
                }
                Tensor::from_parts(x.shape().clone(), gx)
            }
        }
    }
}

fn shape(dims: Vec<usize>) -> Shape {
    Shape::new(dims).expect("layer output extents are positive")
}

fn conv3x3_forward(weight: &Tensor, bias: &Tensor, x: &Tensor) -> Tensor {
    let (out, inp) = (weight.dims()[0], weight.dims()[1]);
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let xs = x.as_slice();
    let ws = weight.as_slice();
    let mut y = vec![0.0; out * h * w];
    for o in 0..out {
        let plane = &mut y[o * h * w..(o + 1) * h * w];
        plane.fill(bias.as_slice()[o]);
        for c in 0..inp {
            let src = &xs[c * h * w..(c + 1) * h * w];
            let k = &ws[(o * inp + c) * 9..(o * inp + c + 1) * 9];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in 0..3 {
                        let si = i + di;
                        if si == 0 || si > h {
                            continue;
                        }
                        for dj in 0..3 {
                            let sj = j + dj;
                            if sj == 0 || sj > w {
                                continue;
                            }
                            acc += k[di * 3 + dj] * src[(si - 1) * w + sj - 1];
                        }
                    }
                    plane[i * w + j] += acc;
                }
            }
        }
    }
    Tensor::from_parts(shape(vec![out, h, w]), y)
}

fn conv3x3_backward(
    weight: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
    param_grads: Option<&mut (Tensor, Tensor)>,
) -> Tensor {
    let (out, inp) = (weight.dims()[0], weight.dims()[1]);
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let xs = x.as_slice();
    let ws = weight.as_slice();
    let g = grad_out.as_slice();
    let mut gx = vec![0.0; inp * h * w];
    let mut grads = param_grads;
    for o in 0..out {
        let gplane = &g[o * h * w..(o + 1) * h * w];
        if let Some((_, gb)) = grads.as_deref_mut() {
            gb.as_mut_slice()[o] += gplane.iter().sum::<f64>();
        }
        for c in 0..inp {
            let kidx = (o * inp + c) * 9;
            let k = &ws[kidx..kidx + 9];
            let src = &xs[c * h * w..(c + 1) * h * w];
            let dst = &mut gx[c * h * w..(c + 1) * h * w];
            let mut kgrad = [0.0; 9];
            for i in 0..h {
                for j in 0..w {
                    let go = gplane[i * w + j];
                    if go == 0.0 {
                        continue;
                    }
                    for di in 0..3 {
                        let si = i + di;
                        if si == 0 || si > h {
                            continue;
                        }
                        for dj in 0..3 {
                            let sj = j + dj;
                            if sj == 0 || sj > w {
                                continue;
                            }
                            let idx = (si - 1) * w + sj - 1;
                            dst[idx] += k[di * 3 + dj] * go;
                            kgrad[di * 3 + dj] += src[idx] * go;
                        }
                    }
                }
            }
            if let Some((gw, _)) = grads.as_deref_mut() {
                for (acc, v) in gw.as_mut_slice()[kidx..kidx + 9].iter_mut().zip(kgrad) {
                    *acc += v;
                }
            }
        }
    }
    Tensor::from_parts(x.shape().clone(), gx)
}
