//! Encoder-decoder segmentation network with an exposed voxel embedding.
//!
//! The topology is a symmetric UNet: every encoder level is two
//! conv-bn-relu blocks followed by 2x2 max pooling, the deepest level is a
//! bottleneck conv pair, and every decoder level is a 2x2 transposed
//! convolution, a skip concatenation and two conv-bn-relu blocks. The output
//! of the last decoder block is the embedding used by the metric-learning
//! losses; the segmentation head (3x3 conv-bn-relu, then 1x1 conv to two
//! classes) reads from it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{
    batch_norm2d, concat, conv2d, conv_transpose2d, max_pool2d, relu, softmax_foreground,
    BatchNormConfig, NormMode, RunningStats,
};
use crate::tensor::optim::Parameter;
use crate::tensor::{Element, Tensor};

/// Prefix shared by every parameter of the segmentation head.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    /// Number of stacked slices per input patch.
    pub in_channels: usize,
    pub num_classes: usize,
    pub head_channels: usize,
    pub variant: Variant,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            encoder_channels: vec![32, 64, 128, 256],
            decoder_channels: vec![128, 64, 32],
            in_channels: 3,
            num_classes: 2,
            head_channels: 32,
            variant: Variant::Metric,
        }
    }
}

/// One row of [`NetworkSpec::layers`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// convolution + batch norm + ReLU, stride 1, "same" padding
    ConvBnRelu,
    MaxPool,
    TransposedConv,
    Concat,
    /// plain 1x1 convolution producing logits
    Conv,
}

impl LayerInfo {
    /// Learnable weights in this layer (batch-norm scale and shift included).
    pub fn parameter_count(&self) -> usize {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel);
        match self.kind {
            LayerKind::ConvBnRelu => i * o * k * k + o + 2 * o,
            LayerKind::TransposedConv | LayerKind::Conv => i * o * k * k + o,
            LayerKind::MaxPool | LayerKind::Concat => 0,
        }
    }
}

impl NetworkSpec {
    /// The stage-1 detector: same topology, no layer wider than 32 filters,
    /// five stacked slices in.
    pub fn detection() -> Self {
        Self {
            in_channels: 5,
            ..Self::default()
        }
        .capped(32)
    }

    /// Copy with every channel count limited to `max`.
    pub fn capped(&self, max: usize) -> Self {
        Self {
            encoder_channels: self.encoder_channels.iter().map(|&c| c.min(max)).collect(),
            decoder_channels: self.decoder_channels.iter().map(|&c| c.min(max)).collect(),
            head_channels: self.head_channels.min(max),
            ..self.clone()
        }
    }

    /// Copy with encoder widths `base * 2^i` and matching decoder widths.
    pub fn with_base_width(&self, base: usize) -> Self {
        let levels = self.encoder_channels.len();
        Self {
            encoder_channels: (0..levels).map(|i| base << i).collect(),
            decoder_channels: (0..levels.saturating_sub(1)).rev().map(|i| base << i).collect(),
            head_channels: base,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != self.decoder_channels.len() + 1 {
            return Err(Error::invalid(format!(
                "need one more encoder level than decoder levels, got {} and {}",
                self.encoder_channels.len(),
                self.decoder_channels.len()
            )));
        }
        if self.decoder_channels.is_empty() {
            return Err(Error::invalid("network needs at least one pooling level"));
        }
        let all = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain([&self.in_channels, &self.head_channels]);
        if all.into_iter().any(|&c| c == 0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.num_classes != 2 {
            return Err(Error::invalid(format!(
                "num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Number of 2x2 pooling steps; input height and width must be
    /// divisible by `2^depth`.
    pub fn depth(&self) -> usize {
        self.decoder_channels.len()
    }

    /// Channels of the embedding map the metric losses read.
    pub fn embedding_channels(&self) -> usize {
        *self.decoder_channels.last().expect("validated spec")
    }

    /// Declarative layer list in forward order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let enc = &self.encoder_channels;
        let dec = &self.decoder_channels;
        let depth = dec.len();
        let mut out = Vec::new();
        let mut push = |name: String, kind, i, o, k| {
            out.push(LayerInfo {
                name,
                kind,
                in_channels: i,
                out_channels: o,
                kernel: k,
            })
        };
        let mut ch = self.in_channels;
        for (lvl, &c) in enc.iter().enumerate() {
            push(format!("enc{lvl}.conv_a"), LayerKind::ConvBnRelu, ch, c, 3);
            push(format!("enc{lvl}.conv_b"), LayerKind::ConvBnRelu, c, c, 3);
            if lvl < depth {
                push(format!("enc{lvl}.pool"), LayerKind::MaxPool, c, c, 2);
            }
            ch = c;
        }
        for (lvl, &c) in dec.iter().enumerate() {
            let skip = enc[depth - 1 - lvl];
            push(format!("dec{lvl}.up"), LayerKind::TransposedConv, ch, c, 2);
            push(format!("dec{lvl}.concat"), LayerKind::Concat, c + skip, c + skip, 0);
            push(format!("dec{lvl}.conv_a"), LayerKind::ConvBnRelu, c + skip, c, 3);
            push(format!("dec{lvl}.conv_b"), LayerKind::ConvBnRelu, c, c, 3);
            ch = c;
        }
        push("head.conv".into(), LayerKind::ConvBnRelu, ch, self.head_channels, 3);
        push("head.out".into(), LayerKind::Conv, self.head_channels, self.num_classes, 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(LayerInfo::parameter_count).sum()
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Element> {
    /// `[N, 2, H, W]`
    pub logits: Tensor<T>,
    /// `[N, d, H, W]`, post-ReLU activations of the last decoder block
    pub embedding: Tensor<T>,
    /// foreground softmax probability, `[N, H, W]`
    pub prob: Vec<T>,
}

/// A network's parameters, running statistics and mode.
#[derive(Debug, Clone)]
pub struct ModelState<T: Element> {
    spec: NetworkSpec,
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    mode: NormMode,
    bn: BatchNormConfig,
}

fn uniform<T: Element>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

/// Builds the segmentation network described by `spec`; weights are drawn
/// from `seed`.
pub fn build_metric_unet<T: Element>(spec: &NetworkSpec, seed: u64) -> Result<ModelState<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for layer in spec.layers() {
        let (i, o, k) = (layer.in_channels, layer.out_channels, layer.kernel);
        let name = &layer.name;
        match layer.kind {
            LayerKind::ConvBnRelu | LayerKind::Conv => {
                let bound = 1.0 / ((i * k * k) as f64).sqrt();
                let w = Tensor::new(&[o, i, k, k], uniform(&mut rng, o * i * k * k, bound))?;
                let b = Tensor::new(&[o], uniform(&mut rng, o, bound))?;
                params.push(Parameter::new(format!("{name}.weight"), w, true));
                params.push(Parameter::new(format!("{name}.bias"), b, true));
                if layer.kind == LayerKind::ConvBnRelu {
                    params.push(Parameter::new(
                        format!("{name}.bn.gamma"),
                        Tensor::full(&[o], T::one()),
                        true,
                    ));
                    params.push(Parameter::new(format!("{name}.bn.beta"), Tensor::zeros(&[o]), true));
                    params.push(Parameter::new(
                        format!("{name}.bn.running_mean"),
                        Tensor::zeros(&[o]),
                        false,
                    ));
                    params.push(Parameter::new(
                        format!("{name}.bn.running_var"),
                        Tensor::full(&[o], T::one()),
                        false,
                    ));
                }
            }
            LayerKind::TransposedConv => {
                let bound = 1.0 / ((o * k * k) as f64).sqrt();
                let w = Tensor::new(&[i, o, k, k], uniform(&mut rng, i * o * k * k, bound))?;
                let b = Tensor::new(&[o], uniform(&mut rng, o, bound))?;
                params.push(Parameter::new(format!("{name}.weight"), w, true));
                params.push(Parameter::new(format!("{name}.bias"), b, true));
            }
            LayerKind::MaxPool | LayerKind::Concat => {}
        }
    }
    ModelState::from_parameters(spec.clone(), params)
}

/// Builds the lightweight stage-1 detector: `spec` with every width capped
/// at 32 filters. The detector reads five stacked slices.
pub fn build_detection_unet<T: Element>(spec: &NetworkSpec, seed: u64) -> Result<ModelState<T>> {
    if spec.in_channels != 5 {
        return Err(Error::invalid(format!(
            "detection network reads 5 slices, spec has {}",
            spec.in_channels
        )));
    }
    build_metric_unet(&spec.capped(32), seed)
}

impl<T: Element> ModelState<T> {
    /// Assembles a model from an explicit parameter list, checking that the
    /// names and shapes are exactly those `spec` implies.
    pub fn from_parameters(spec: NetworkSpec, params: Vec<Parameter<T>>) -> Result<Self> {
        spec.validate()?;
        let index: HashMap<String, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        if index.len() != params.len() {
            return Err(Error::invalid("duplicate parameter names"));
        }
        let model = Self {
            spec,
            params,
            index,
            mode: NormMode::Train,
            bn: BatchNormConfig::default(),
        };
        model.check_layout()?;
        Ok(model)
    }

    fn check_layout(&self) -> Result<()> {
        let mut expected = 0;
        for layer in self.spec.layers() {
            let (i, o, k) = (layer.in_channels, layer.out_channels, layer.kernel);
            let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
            match layer.kind {
                LayerKind::ConvBnRelu | LayerKind::Conv => {
                    shapes.push((format!("{}.weight", layer.name), vec![o, i, k, k]));
                    shapes.push((format!("{}.bias", layer.name), vec![o]));
                    if layer.kind == LayerKind::ConvBnRelu {
                        for s in ["gamma", "beta", "running_mean", "running_var"] {
                            shapes.push((format!("{}.bn.{s}", layer.name), vec![o]));
                        }
                    }
                }
                LayerKind::TransposedConv => {
                    shapes.push((format!("{}.weight", layer.name), vec![i, o, k, k]));
                    shapes.push((format!("{}.bias", layer.name), vec![o]));
                }
                LayerKind::MaxPool | LayerKind::Concat => {}
            }
            for (name, shape) in shapes {
                let p = self.param(&name)?;
                if p.tensor.shape() != shape.as_slice() {
                    return Err(Error::dim(
                        "model",
                        format!("{name} has shape {:?}, expected {shape:?}", p.tensor.shape()),
                    ));
                }
                expected += 1;
            }
        }
        if expected != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameters given, network defines {expected}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Result<&Parameter<T>> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Replaces a parameter's values, keeping its trainable flag.
    pub fn set_param(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        let p = &mut self.params[i];
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::dim(
                "set_param",
                format!("{name}: shape {:?} for {:?}", tensor.shape(), p.tensor.shape()),
            ));
        }
        p.tensor = if p.trainable { tensor } else { tensor.detach() };
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }

    /// Same weights in another precision.
    pub fn cast<U: Element>(&self) -> ModelState<U> {
        let params = self
            .params
            .iter()
            .map(|p| Parameter::new(p.name.clone(), p.tensor.cast(), p.trainable))
            .collect();
        let mut m = ModelState::from_parameters(self.spec.clone(), params)
            .expect("layout preserved by cast");
        m.mode = self.mode;
        m
    }

    fn tensor(&self, name: &str) -> Tensor<T> {
        self.params[self.index[name]].tensor.clone()
    }

    fn conv_bn_relu(&mut self, name: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d(
            x,
            &self.tensor(&format!("{name}.weight")),
            Some(&self.tensor(&format!("{name}.bias"))),
            1,
            1,
        )?;
        let mean_key = format!("{name}.bn.running_mean");
        let var_key = format!("{name}.bn.running_var");
        let stats = RunningStats {
            mean: self.tensor(&mean_key).data().to_vec(),
            var: self.tensor(&var_key).data().to_vec(),
        };
        let (y, updated) = batch_norm2d(
            &y,
            &self.tensor(&format!("{name}.bn.gamma")),
            &self.tensor(&format!("{name}.bn.beta")),
            &stats,
            self.mode,
            self.bn,
        )?;
        if let Some(s) = updated {
            let c = s.mean.len();
            self.set_param(&mean_key, Tensor::new(&[c], s.mean)?)?;
            self.set_param(&var_key, Tensor::new(&[c], s.var)?)?;
        }
        Ok(relu(&y))
    }

    /// Runs the network on `[N, C, H, W]` slices-as-channels input.
    ///
    /// In train mode batch-norm layers normalise with batch statistics and
    /// update the running statistics held by the model.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let [_, c, h, w] = input.dims4("forward")?;
        if c != self.spec.in_channels {
            return Err(Error::dim(
                "forward",
                format!("input has {c} channels, network expects {}", self.spec.in_channels),
            ));
        }
        let factor = 1usize << self.spec.depth();
        if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(Error::dim(
                "forward",
                format!("spatial size {h}x{w} must be a positive multiple of {factor} (one halving per pooling level)"),
            ));
        }
        let depth = self.spec.depth();
        let mut skips = Vec::with_capacity(depth);
        let mut x = input.clone();
        for lvl in 0..=depth {
            x = self.conv_bn_relu(&format!("enc{lvl}.conv_a"), &x)?;
            x = self.conv_bn_relu(&format!("enc{lvl}.conv_b"), &x)?;
            if lvl < depth {
                skips.push(x.clone());
                x = max_pool2d(&x)?;
            }
        }
        for lvl in 0..depth {
            let up = conv_transpose2d(
                &x,
                &self.tensor(&format!("dec{lvl}.up.weight")),
                Some(&self.tensor(&format!("dec{lvl}.up.bias"))),
                2,
            )?;
            let skip = &skips[depth - 1 - lvl];
            x = concat(&up, skip, 1)?;
            x = self.conv_bn_relu(&format!("dec{lvl}.conv_a"), &x)?;
            x = self.conv_bn_relu(&format!("dec{lvl}.conv_b"), &x)?;
        }
        let embedding = x;
        let hidden = self.conv_bn_relu("head.conv", &embedding)?;
        let logits = conv2d(
            &hidden,
            &self.tensor("head.out.weight"),
            Some(&self.tensor("head.out.bias")),
            1,
            0,
        )?;
        let prob = softmax_foreground(&logits)?;
        Ok(ForwardOutput {
            logits,
            embedding,
            prob,
        })
    }

    /// Eval-mode forward pass that leaves `self` untouched.
    pub fn predict(&self, input: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut m = self.clone();
        m.mode = NormMode::Eval;
        m.forward(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{softmax_cross_entropy, sum};
    use crate::testutil::random_tensor;

    /// Independent count: sum over conv shapes written out by hand.
    fn enumerate_default_count() -> usize {
        let conv = |i: usize, o: usize| i * o * 9 + o + 2 * o;
        let tconv = |i: usize, o: usize| i * o * 4 + o;
        let encoder = conv(3, 32) + conv(32, 32) + conv(32, 64) + conv(64, 64) + conv(64, 128)
            + conv(128, 128)
            + conv(128, 256)
            + conv(256, 256);
        let decoder = tconv(256, 128) + conv(256, 128) + conv(128, 128)
            + tconv(128, 64) + conv(128, 64) + conv(64, 64)
            + tconv(64, 32) + conv(64, 32) + conv(32, 32);
        let head = conv(32, 32) + 32 * 2 + 2;
        encoder + decoder + head
    }

    #[test]
    fn default_parameter_count() {
        let spec = NetworkSpec::default();
        let model = build_metric_unet::<f32>(&spec, 0).unwrap();
        assert_eq!(model.parameter_count(), enumerate_default_count());
        assert_eq!(model.parameter_count(), 1_937_762);
        assert_eq!(spec.parameter_count(), model.parameter_count());
        // same order of magnitude as the 3.28M reported for the original
        assert!((1_000_000..10_000_000).contains(&model.parameter_count()));
    }

    #[test]
    fn detection_network_is_smaller() {
        let det = build_detection_unet::<f32>(&NetworkSpec::detection(), 0).unwrap();
        let seg = build_metric_unet::<f32>(&NetworkSpec::default(), 0).unwrap();
        assert!(det.parameter_count() < seg.parameter_count());
        assert!(det
            .spec()
            .layers()
            .iter()
            .all(|l| l.out_channels <= 32 || l.kind == LayerKind::Concat || l.kind == LayerKind::MaxPool));
        assert!(build_detection_unet::<f32>(&NetworkSpec::default(), 0).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = NetworkSpec::default();
        s.decoder_channels.pop();
        assert!(build_metric_unet::<f32>(&s, 0).is_err());
        let s = NetworkSpec {
            num_classes: 3,
            ..NetworkSpec::default()
        };
        assert!(build_metric_unet::<f32>(&s, 0).is_err());
        let s = NetworkSpec {
            head_channels: 0,
            ..NetworkSpec::default()
        };
        assert!(build_metric_unet::<f32>(&s, 0).is_err());
    }

    #[test]
    fn seeded_builds_match() {
        let spec = NetworkSpec::default().with_base_width(4);
        let a = build_metric_unet::<f32>(&spec, 7).unwrap();
        let b = build_metric_unet::<f32>(&spec, 7).unwrap();
        let c = build_metric_unet::<f32>(&spec, 8).unwrap();
        for ((pa, pb), pc) in a.params().iter().zip(b.params()).zip(c.params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data());
            if pa.name.ends_with(".weight") {
                assert_ne!(pa.tensor.data(), pc.tensor.data());
            }
        }
    }

    #[test]
    fn output_shapes() {
        let spec = NetworkSpec::default().with_base_width(4);
        let mut model = build_metric_unet::<f64>(&spec, 1).unwrap();
        let x = random_tensor(&[2, 3, 16, 24], 2);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.logits.shape(), &[2, 2, 16, 24]);
        assert_eq!(out.embedding.shape(), &[2, spec.embedding_channels(), 16, 24]);
        assert_eq!(out.prob.len(), 2 * 16 * 24);
        let err = model.forward(&random_tensor(&[1, 3, 12, 16], 3)).unwrap_err();
        assert!(err.to_string().contains("multiple of 8"), "{err}");
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let spec = NetworkSpec::default().with_base_width(4);
        let mut model = build_metric_unet::<f64>(&spec, 1).unwrap();
        model.set_param("head.out.weight", Tensor::zeros(&[2, 4, 1, 1])).unwrap();
        model.set_param("head.out.bias", Tensor::zeros(&[2])).unwrap();
        let out = model.forward(&random_tensor(&[1, 3, 8, 8], 4)).unwrap();
        assert!(out.prob.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn eval_forward_is_deterministic_and_pure() {
        let spec = NetworkSpec::default().with_base_width(4);
        let model = build_metric_unet::<f32>(&spec, 3).unwrap();
        let x = random_tensor(&[1, 3, 16, 16], 5).cast::<f32>();
        let a = model.predict(&x).unwrap();
        let b = model.predict(&x).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
        assert_eq!(a.embedding.data(), b.embedding.data());
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let spec = NetworkSpec::default().with_base_width(4);
        let mut model = build_metric_unet::<f64>(&spec, 3).unwrap();
        let before = model.param("enc0.conv_a.bn.running_mean").unwrap().tensor.data().to_vec();
        model.forward(&random_tensor(&[2, 3, 8, 8], 6)).unwrap();
        let after = model.param("enc0.conv_a.bn.running_mean").unwrap().tensor.data().to_vec();
        assert_ne!(before, after);
    }

    #[test]
    fn every_trainable_parameter_receives_gradient() {
        let spec = NetworkSpec::default().with_base_width(4);
        let mut model = build_metric_unet::<f64>(&spec, 9).unwrap();
        let out = model.forward(&random_tensor(&[2, 3, 16, 16], 10)).unwrap();
        let labels: Vec<u8> = (0..512).map(|i| ((i / 7) % 2) as u8).collect();
        let loss = softmax_cross_entropy(&out.logits, &labels).unwrap();
        let emb = sum(&out.embedding);
        let total = crate::tensor::ops::add(&loss, &crate::tensor::ops::mul_scalar(&emb, 1e-3)).unwrap();
        let g = total.backward();
        for p in model.params().iter().filter(|p| p.trainable) {
            let grad = g.get(&p.tensor).unwrap_or_else(|| panic!("{} missing", p.name));
            assert!(grad.iter().any(|&v| v != 0.0), "{} identically zero", p.name);
        }
    }
}
