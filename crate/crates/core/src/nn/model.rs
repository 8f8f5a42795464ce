//! Encoder, dense bottleneck and two decoder branches (one per velocity
//! component).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv2d, conv2d_backward, conv_out, deconv2d, deconv2d_backward, deconv_out, dense, dense_backward, relu_backward,
    relu_inplace,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::FieldKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { filters, kernel, stride, padding }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `Sdf` or `Binary`.
    pub input_kind: FieldKind,
    pub n: usize,
    pub encoder: Vec<LayerSpec>,
    pub bottleneck: usize,
    /// Shared by both branches; the last layer must have one filter.
    pub decoder: Vec<LayerSpec>,
    /// Adds the first encoder output to the second decoder output.
    pub use_residual: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Default ladder for an `n`×`n` input, `n` divisible by 64.
    pub fn default_for(n: usize) -> Self {
        Self {
            input_kind: FieldKind::Sdf,
            n,
            encoder: vec![LayerSpec::new(64, 8, 4, 2), LayerSpec::new(128, 4, 2, 1), LayerSpec::new(256, 4, 2, 1)],
            bottleneck: 1024,
            decoder: vec![LayerSpec::new(128, 4, 2, 1), LayerSpec::new(64, 4, 2, 1), LayerSpec::new(1, 8, 4, 2)],
            use_residual: true,
            init_seed: 0,
        }
    }

    /// Small model on a 16×16 grid for gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_kind: FieldKind::Sdf,
            n: 16,
            encoder: vec![LayerSpec::new(4, 4, 2, 1), LayerSpec::new(8, 4, 2, 1)],
            bottleneck: 8,
            decoder: vec![LayerSpec::new(4, 4, 2, 1), LayerSpec::new(4, 3, 1, 1), LayerSpec::new(1, 4, 2, 1)],
            use_residual: true,
            init_seed: 0,
        }
    }

    /// `(label, [channels, height, width])` after every layer, validated.
    pub fn layer_shapes(&self) -> Result<Vec<(String, [usize; 3])>> {
        if !matches!(self.input_kind, FieldKind::Sdf | FieldKind::Binary) {
            return Err(Error::InvalidParams(format!("input kind must be sdf or binary, got {}", self.input_kind)));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() || self.bottleneck == 0 {
            return Err(Error::InvalidParams("encoder, decoder and bottleneck must be non-empty".into()));
        }
        let mut shapes = vec![("input".to_string(), [1, self.n, self.n])];
        let mut cur = [1, self.n, self.n];
        for (i, l) in self.encoder.iter().enumerate() {
            let s = conv_out(cur[1], l.kernel, l.stride, l.padding)?;
            cur = [l.filters, s, s];
            shapes.push((format!("conv{}", i + 1), cur));
        }
        if cur[1] < 4 {
            return Err(Error::Shape(format!("encoder output {}x{} is below 4x4", cur[1], cur[1])));
        }
        let code = cur;
        shapes.push(("dense".into(), [self.bottleneck, 1, 1]));
        shapes.push(("branch dense".into(), code));
        for (i, l) in self.decoder.iter().enumerate() {
            let s = deconv_out(cur[1], l.kernel, l.stride, l.padding)?;
            cur = [l.filters, s, s];
            shapes.push((format!("deconv{}", i + 1), cur));
        }
        if cur != [1, self.n, self.n] {
            return Err(Error::Shape(format!("decoder output {cur:?} does not match input 1x{}x{}", self.n, self.n)));
        }
        if self.use_residual {
            let (Some(src), Some(dst)) = (shapes.get(1), shapes.get(self.encoder.len() + 4)) else {
                return Err(Error::Shape("residual needs two decoder layers".into()));
            };
            if self.decoder.len() < 3 || src.1 != dst.1 {
                return Err(Error::Shape(format!("residual source {:?} does not match target {:?}", src.1, dst.1)));
            }
        }
        Ok(shapes)
    }

    fn code_shape(&self) -> Result<[usize; 3]> {
        Ok(self.layer_shapes()?[self.encoder.len()].1)
    }

    pub fn to_text(&self) -> String {
        let specs = |v: &[LayerSpec]| {
            v.iter().map(|l| format!("{}:{}:{}:{}", l.filters, l.kernel, l.stride, l.padding)).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "input_kind = {}", self.input_kind);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "encoder = {}", specs(&self.encoder));
        let _ = writeln!(s, "bottleneck = {}", self.bottleneck);
        let _ = writeln!(s, "decoder = {}", specs(&self.decoder));
        let _ = writeln!(s, "use_residual = {}", self.use_residual);
        let _ = writeln!(s, "init_seed = {}", self.init_seed);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format { what: "model config", reason };
        let mut cfg = ModelConfig::tiny();
        let parse_specs = |v: &str| -> Result<Vec<LayerSpec>> {
            v.split(',')
                .map(|part| {
                    let nums: Vec<usize> = part
                        .split(':')
                        .map(|x| x.trim().parse().map_err(|_| bad(format!("bad layer spec {part:?}"))))
                        .collect::<Result<_>>()?;
                    match nums[..] {
                        [f, k, s, p] => Ok(LayerSpec::new(f, k, s, p)),
                        _ => Err(bad(format!("layer spec {part:?} needs filters:kernel:stride:padding"))),
                    }
                })
                .collect()
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let value = value.trim();
            let num = || value.parse::<u64>().map_err(|_| bad(format!("{key}: bad number {value:?}")));
            match key.trim() {
                "input_kind" => cfg.input_kind = value.parse()?,
                "n" => cfg.n = num()? as usize,
                "encoder" => cfg.encoder = parse_specs(value)?,
                "bottleneck" => cfg.bottleneck = num()? as usize,
                "decoder" => cfg.decoder = parse_specs(value)?,
                "use_residual" => cfg.use_residual = value.parse().map_err(|_| bad(format!("bad bool {value:?}")))?,
                "init_seed" => cfg.init_seed = num()?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        cfg.layer_shapes()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    dense: DenseLayer,
    decoder: Vec<ConvLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder: Vec<ConvLayer>,
    bottleneck: DenseLayer,
    branches: [Branch; 2],
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    input: Tensor,
    mask: Tensor,
    /// Post-activation output of each encoder layer.
    encoder: Vec<Tensor>,
    code: Tensor,
    branches: Vec<BranchCache>,
}

struct BranchCache {
    hidden: Tensor,
    /// Post-activation output of each decoder layer before any residual sum;
    /// the last entry is the raw linear output.
    outputs: Vec<Tensor>,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl Model {
    /// He-uniform weights drawn from `init_seed`, zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let code = config.code_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut ch = 1;
        let mut encoder = Vec::new();
        for l in &config.encoder {
            encoder.push(ConvLayer {
                weight: uniform(&[l.filters, ch, l.kernel, l.kernel], ch * l.kernel * l.kernel, &mut rng),
                bias: Tensor::zeros(&[l.filters]),
                stride: l.stride,
                padding: l.padding,
            });
            ch = l.filters;
        }
        let flat = code.iter().product::<usize>();
        let bottleneck =
            DenseLayer { weight: uniform(&[config.bottleneck, flat], flat, &mut rng), bias: Tensor::zeros(&[config.bottleneck]) };
        let make_branch = |rng: &mut ChaCha8Rng| {
            let dense = DenseLayer {
                weight: uniform(&[flat, config.bottleneck], config.bottleneck, rng),
                bias: Tensor::zeros(&[flat]),
            };
            let mut ch = code[0];
            let decoder = config
                .decoder
                .iter()
                .map(|l| {
                    let taps = (l.kernel as f64 / l.stride as f64).powi(2);
                    let fan_in = ((ch as f64 * taps).round() as usize).max(1);
                    let layer = ConvLayer {
                        weight: uniform(&[ch, l.filters, l.kernel, l.kernel], fan_in, rng),
                        bias: Tensor::zeros(&[l.filters]),
                        stride: l.stride,
                        padding: l.padding,
                    };
                    ch = l.filters;
                    layer
                })
                .collect();
            Branch { dense, decoder }
        };
        let branches = [make_branch(&mut rng), make_branch(&mut rng)];
        Ok(Self { config, encoder, bottleneck, branches })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameters in declaration order: encoder, bottleneck, then each
    /// branch's dense and decoder layers; weight before bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.bottleneck.weight, &self.bottleneck.bias]);
        for b in &self.branches {
            out.extend([&b.dense.weight, &b.dense.bias]);
            for l in &b.decoder {
                out.extend([&l.weight, &l.bias]);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.bottleneck.weight, &mut self.bottleneck.bias]);
        for b in &mut self.branches {
            out.extend([&mut b.dense.weight, &mut b.dense.bias]);
            for l in &mut b.decoder {
                out.extend([&mut l.weight, &mut l.bias]);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, input: &Tensor, mask: &Tensor) -> Result<usize> {
        let [b, c, h, w] = input.dims4()?;
        let n = self.config.n;
        if c != 1 || h != n || w != n || mask.shape() != input.shape() || b == 0 {
            return Err(Error::Shape(format!(
                "model expects [B, 1, {n}, {n}] input and mask, got {:?} and {:?}",
                input.shape(),
                mask.shape()
            )));
        }
        Ok(b)
    }

    /// Masked `(vx, vy)` predictions for `input` and `mask` of shape `[B, 1, n, n]`.
    pub fn forward(&self, input: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor, ForwardCache)> {
        let b = self.check_input(input, mask)?;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut x = input.clone();
        for l in &self.encoder {
            x = conv2d(&x, &l.weight, Some(&l.bias), l.stride, l.padding)?;
            relu_inplace(&mut x);
            encoder.push(x.clone());
        }
        let code_shape = x.shape().to_vec();
        let mut code = dense(&x.reshape(&[b, code_shape[1..].iter().product()])?, &self.bottleneck.weight, Some(&self.bottleneck.bias))?;
        relu_inplace(&mut code);

        let mut preds = Vec::with_capacity(2);
        let mut branches = Vec::with_capacity(2);
        for branch in &self.branches {
            let mut hidden = dense(&code, &branch.dense.weight, Some(&branch.dense.bias))?;
            relu_inplace(&mut hidden);
            let mut y = hidden.clone().reshape(&code_shape)?;
            let mut outputs = Vec::with_capacity(branch.decoder.len());
            let last = branch.decoder.len() - 1;
            for (i, l) in branch.decoder.iter().enumerate() {
                y = deconv2d(&y, &l.weight, Some(&l.bias), l.stride, l.padding)?;
                if i < last {
                    relu_inplace(&mut y);
                }
                outputs.push(y.clone());
                if self.config.use_residual && i == 1 {
                    y.add_assign(&encoder[0]);
                }
            }
            let mut pred = y;
            for (p, m) in pred.data_mut().iter_mut().zip(mask.data()) {
                *p *= m;
            }
            preds.push(pred);
            branches.push(BranchCache { hidden, outputs });
        }
        let vy = preds.pop().expect("two branches");
        let vx = preds.pop().expect("two branches");
        Ok((vx, vy, ForwardCache { input: input.clone(), mask: mask.clone(), encoder, code, branches }))
    }

    pub fn predict(&self, input: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (vx, vy, _) = self.forward(input, mask)?;
        Ok((vx, vy))
    }

    /// Gradients of a scalar loss given its derivatives with respect to
    /// the masked predictions, in [`Model::params`] order.
    pub fn backward(&self, cache: &ForwardCache, d_vx: &Tensor, d_vy: &Tensor) -> Result<Vec<Tensor>> {
        let b = cache.input.shape()[0];
        let mut d_code = Tensor::zeros(cache.code.shape());
        let mut d_enc0 = Tensor::zeros(cache.encoder[0].shape());
        let mut branch_grads = Vec::with_capacity(2);
        for ((branch, bc), d_pred) in self.branches.iter().zip(&cache.branches).zip([d_vx, d_vy]) {
            if d_pred.shape() != cache.mask.shape() {
                return Err(Error::Shape(format!("prediction gradient {:?} vs {:?}", d_pred.shape(), cache.mask.shape())));
            }
            let mut dy = d_pred.clone();
            for (g, m) in dy.data_mut().iter_mut().zip(cache.mask.data()) {
                *g *= m;
            }
            let last = branch.decoder.len() - 1;
            let mut grads = Vec::with_capacity(2 * branch.decoder.len());
            for i in (0..=last).rev() {
                let l = &branch.decoder[i];
                if self.config.use_residual && i == 1 {
                    d_enc0.add_assign(&dy);
                }
                let pre = if i < last { relu_backward(&bc.outputs[i], &dy) } else { dy };
                let input = if i == 0 {
                    bc.hidden.clone().reshape(cache.encoder.last().expect("encoder").shape())?
                } else {
                    input_of(bc, i, &cache.encoder[0], self.config.use_residual)
                };
                let g = deconv2d_backward(&input, &l.weight, &pre, l.stride, l.padding)?;
                grads.push((g.weight, g.bias));
                dy = g.input;
            }
            grads.reverse();
            let d_hidden = relu_backward(&bc.hidden, &dy.reshape(bc.hidden.shape())?);
            let g = dense_backward(&cache.code, &branch.dense.weight, &d_hidden)?;
            d_code.add_assign(&g.input);
            branch_grads.push(((g.weight, g.bias), grads));
        }

        let d_pre_code = relu_backward(&cache.code, &d_code);
        let last_enc = cache.encoder.last().expect("encoder");
        let flat = last_enc.clone().reshape(&[b, last_enc.len() / b])?;
        let g = dense_backward(&flat, &self.bottleneck.weight, &d_pre_code)?;
        let bottleneck_grads = (g.weight, g.bias);
        let mut dy = g.input.reshape(last_enc.shape())?;
        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        for i in (0..self.encoder.len()).rev() {
            let l = &self.encoder[i];
            if i == 0 {
                dy.add_assign(&d_enc0);
            }
            let pre = relu_backward(&cache.encoder[i], &dy);
            let input = if i == 0 { &cache.input } else { &cache.encoder[i - 1] };
            let g = conv2d_backward(input, &l.weight, &pre, l.stride, l.padding)?;
            enc_grads.push((g.weight, g.bias));
            dy = g.input;
        }
        enc_grads.reverse();

        let mut out = Vec::new();
        for (w, b) in enc_grads {
            out.extend([w, b]);
        }
        out.extend([bottleneck_grads.0, bottleneck_grads.1]);
        for ((dw, db), dec) in branch_grads {
            out.extend([dw, db]);
            for (w, b) in dec {
                out.extend([w, b]);
            }
        }
        Ok(out)
    }
}

/// Input of decoder layer `i > 0`: previous output plus the residual when
/// it was added after layer 1.
fn input_of(bc: &BranchCache, i: usize, enc0: &Tensor, residual: bool) -> Tensor {
    let mut x = bc.outputs[i - 1].clone();
    if residual && i == 2 {
        x.add_assign(enc0);
    }
    x
}
