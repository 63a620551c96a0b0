//! The per-user feature extractor: three convolution blocks, global average
//! pooling and a dense layer form the hidden part; a dense layer with softmax
//! is the classifier head.
//!
//! Only the hidden part is ever shared between users. Its parameter shapes do
//! not depend on the series length (pooling removes it) or on the number of
//! classes (the head is excluded), so bundles from different datasets can be
//! compared element by element.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv1d_backward, conv1d_forward,
    dense_backward, dense_forward, global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward,
    softmax_rows, BatchNormCache, BatchNormLayer, ConvLayer, DenseLayer, NamedParam, NormMode,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kernel: usize,
    pub channels: usize,
}

/// Layer sizes of the hidden part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub blocks: [BlockSpec; 3],
    pub hidden: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            blocks: [
                BlockSpec { kernel: 9, channels: 128 },
                BlockSpec { kernel: 5, channels: 256 },
                BlockSpec { kernel: 3, channels: 128 },
            ],
            hidden: 128,
        }
    }
}

impl ArchSpec {
    /// Small widths for tests and gradient checks.
    pub fn tiny() -> Self {
        ArchSpec {
            blocks: [
                BlockSpec { kernel: 3, channels: 4 },
                BlockSpec { kernel: 5, channels: 6 },
                BlockSpec { kernel: 3, channels: 4 },
            ],
            hidden: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel % 2 == 0 || b.channels == 0 {
                return Err(Error::Config(format!(
                    "block {} needs an odd kernel and at least one channel, got kernel {} channels {}",
                    i + 1,
                    b.kernel,
                    b.channels
                )));
            }
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvLayer,
    pub bn: BatchNormLayer,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    blocks: Vec<BlockCache>,
    pooled: Tensor,
    o4: Tensor,
    length: usize,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub o1: Tensor,
    pub o2: Tensor,
    pub o3: Tensor,
    /// Output of the hidden dense layer, `[B, hidden]`.
    pub o4: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardTrace {
    pub fn hidden_outputs(&self) -> [&Tensor; 4] {
        [&self.o1, &self.o2, &self.o3, &self.o4]
    }
}

/// Upstream gradients with respect to the trace fields.
#[derive(Debug, Clone, Default)]
pub struct TraceGrads {
    pub hidden: [Option<Tensor>; 4],
    pub logits: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub blocks: [ConvBlock; 3],
    pub hidden: DenseLayer,
    pub classifier: DenseLayer,
    arch: ArchSpec,
    cache: Option<ForwardCache>,
}

// The backward cache is transient and excluded from equality.
impl PartialEq for FeatureExtractor {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks
            && self.hidden == other.hidden
            && self.classifier == other.classifier
            && self.arch == other.arch
    }
}

const BLOCK_NAMES: [&str; 3] = ["ConvBlock1", "ConvBlock2", "ConvBlock3"];

pub const PARAM_NAMES: [&str; 16] = [
    "block1.conv.kernel",
    "block1.conv.bias",
    "block1.bn.alpha",
    "block1.bn.beta",
    "block2.conv.kernel",
    "block2.conv.bias",
    "block2.bn.alpha",
    "block2.bn.beta",
    "block3.conv.kernel",
    "block3.conv.bias",
    "block3.bn.alpha",
    "block3.bn.beta",
    "hidden.weight",
    "hidden.bias",
    "classifier.weight",
    "classifier.bias",
];

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} output")))
    }
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(arch: ArchSpec, num_classes: usize, mode: NormMode, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut c_in = 1;
        let mut make_block = |spec: BlockSpec, rng: &mut R| -> Result<ConvBlock> {
            let conv = ConvLayer::init(c_in, spec.channels, spec.kernel, rng)?;
            c_in = spec.channels;
            Ok(ConvBlock {
                conv,
                bn: BatchNormLayer::new(spec.channels, mode),
            })
        };
        let blocks = [
            make_block(arch.blocks[0], rng)?,
            make_block(arch.blocks[1], rng)?,
            make_block(arch.blocks[2], rng)?,
        ];
        let hidden = DenseLayer::init(arch.blocks[2].channels, arch.hidden, rng)?;
        let classifier = DenseLayer::init(arch.hidden, num_classes, rng)?;
        Ok(FeatureExtractor {
            blocks,
            hidden,
            classifier,
            arch,
            cache: None,
        })
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_features()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_rank("extractor", 3)?;
        if x.dim(1) != 1 {
            return Err(Error::shape(
                "extractor",
                format!("expected a single input channel, got {}", x.dim(1)),
            ));
        }
        if x.dim(2) == 0 {
            return Err(Error::EmptyLength("extractor"));
        }
        Ok(())
    }

    fn head(&self, o3: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let pooled = global_avg_pool(o3)?;
        let o4 = dense_forward(&pooled, &self.hidden)?;
        check_finite(&o4, "hidden dense")?;
        let logits = dense_forward(&o4, &self.classifier)?;
        check_finite(&logits, "classifier")?;
        let probs = softmax_rows(&logits);
        Ok((pooled, o4, logits, probs))
    }

    /// Forward pass. In training mode batch statistics are used, running
    /// statistics are updated and intermediates are kept for [`backward`].
    ///
    /// [`backward`]: FeatureExtractor::backward
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<ForwardTrace> {
        if !training {
            self.cache = None;
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(3);
        let mut current = x.clone();
        for (block, name) in self.blocks.iter_mut().zip(BLOCK_NAMES) {
            let conv_out = conv1d_forward(&current, &block.conv)?;
            let (bn_out, bn_cache) = batchnorm_forward_train(&conv_out, &mut block.bn)?;
            let output = relu_forward(&bn_out);
            check_finite(&output, name)?;
            caches.push(BlockCache {
                input: std::mem::replace(&mut current, output.clone()),
                bn: bn_cache,
                output,
            });
        }
        let (pooled, o4, logits, probs) = self.head(&current)?;
        let trace = ForwardTrace {
            o1: caches[0].output.clone(),
            o2: caches[1].output.clone(),
            o3: current,
            o4: o4.clone(),
            logits,
            probs,
        };
        self.cache = Some(ForwardCache {
            blocks: caches,
            pooled,
            o4,
            length: x.dim(2),
        });
        Ok(trace)
    }

    /// Inference-mode forward using running statistics. Leaves the model untouched.
    pub fn infer(&self, x: &Tensor) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut outs = Vec::with_capacity(3);
        let mut current = x.clone();
        for (block, name) in self.blocks.iter().zip(BLOCK_NAMES) {
            let conv_out = conv1d_forward(&current, &block.conv)?;
            let bn_out = batchnorm_forward_eval(&conv_out, &block.bn)?;
            current = relu_forward(&bn_out);
            check_finite(&current, name)?;
            outs.push(current.clone());
        }
        let (_, o4, logits, probs) = self.head(&current)?;
        let o3 = outs.pop().expect("three blocks");
        let o2 = outs.pop().expect("three blocks");
        let o1 = outs.pop().expect("three blocks");
        Ok(ForwardTrace {
            o1,
            o2,
            o3,
            o4,
            logits,
            probs,
        })
    }

    /// Reverse pass through the cached training-mode forward. Returns one
    /// gradient per entry of [`PARAM_NAMES`]. The cache is consumed.
    pub fn backward(&mut self, upstream: &TraceGrads) -> Result<Vec<Tensor>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached training-mode forward".into()))?;
        let batch = cache.o4.dim(0);

        let mut d_o4 = upstream.hidden[3]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(cache.o4.shape()));
        d_o4.expect_shape("backward", cache.o4.shape())?;
        let (cls_w, cls_b) = match &upstream.logits {
            Some(d_logits) => {
                let g = dense_backward(&cache.o4, &self.classifier, d_logits)?;
                d_o4.add_assign(&g.input)?;
                (g.weight, g.bias)
            }
            None => (
                Tensor::zeros(self.classifier.weight.shape()),
                Tensor::zeros(self.classifier.bias.shape()),
            ),
        };
        let hidden_g = dense_backward(&cache.pooled, &self.hidden, &d_o4)?;
        let mut d_out = global_avg_pool_backward(&hidden_g.input, cache.length)?;
        debug_assert_eq!(d_out.dim(0), batch);

        let mut block_grads: Vec<[Tensor; 4]> = Vec::with_capacity(3);
        for m in (0..3).rev() {
            if let Some(extra) = &upstream.hidden[m] {
                d_out.add_assign(extra)?;
            }
            let bc = &cache.blocks[m];
            let block = &self.blocks[m];
            let d_bn = relu_backward(&bc.output, &d_out);
            let bn_g = batchnorm_backward(&block.bn, &bc.bn, &d_bn)?;
            let conv_g = conv1d_backward(&bc.input, &block.conv, &bn_g.input)?;
            block_grads.push([conv_g.kernel, conv_g.bias, bn_g.alpha, bn_g.beta]);
            d_out = conv_g.input;
        }
        block_grads.reverse();

        let mut grads: Vec<Tensor> = block_grads.into_iter().flatten().collect();
        grads.extend([hidden_g.weight, hidden_g.bias, cls_w, cls_b]);
        Ok(grads)
    }

    pub fn has_cached_forward(&self) -> bool {
        self.cache.is_some()
    }

    /// Learnable parameters in [`PARAM_NAMES`] order.
    pub fn params_mut(&mut self) -> Vec<NamedParam<'_>> {
        let [b1, b2, b3] = &mut self.blocks;
        let mut tensors: Vec<&mut Tensor> = Vec::with_capacity(16);
        for b in [b1, b2, b3] {
            tensors.push(&mut b.conv.kernel);
            tensors.push(&mut b.conv.bias);
            tensors.push(&mut b.bn.alpha);
            tensors.push(&mut b.bn.beta);
        }
        tensors.extend([
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
        ]);
        tensors
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(value, name)| NamedParam { name, value })
            .collect()
    }

    pub fn extract_hidden_weights(&self, epoch: u32) -> WeightBundle {
        let mut entries = Vec::with_capacity(20);
        for (m, block) in self.blocks.iter().enumerate() {
            let layer = m as u8 + 1;
            let mut push = |kind, t: &Tensor| entries.push(BundleEntry::new(ParamTag { layer, kind }, t.clone()));
            push(ParamKind::ConvKernel, &block.conv.kernel);
            push(ParamKind::ConvBias, &block.conv.bias);
            push(ParamKind::BnAlpha, &block.bn.alpha);
            push(ParamKind::BnBeta, &block.bn.beta);
            push(ParamKind::BnRunningMean, &block.bn.running_mean);
            push(ParamKind::BnRunningVar, &block.bn.running_var);
        }
        entries.push(BundleEntry::new(
            ParamTag { layer: 4, kind: ParamKind::DenseWeight },
            self.hidden.weight.clone(),
        ));
        entries.push(BundleEntry::new(
            ParamTag { layer: 4, kind: ParamKind::DenseBias },
            self.hidden.bias.clone(),
        ));
        WeightBundle { epoch, entries }
    }

    /// Overwrites the hidden part with `bundle`; the classifier is untouched.
    pub fn load_hidden_weights(&mut self, bundle: &WeightBundle) -> Result<()> {
        let current = self.extract_hidden_weights(bundle.epoch);
        current.check_compatible(bundle)?;
        let mut it = bundle.entries.iter().map(|e| e.tensor.clone());
        let mut next = || it.next().expect("compatibility checked");
        for block in self.blocks.iter_mut() {
            block.conv.kernel = next();
            block.conv.bias = next();
            block.bn.alpha = next();
            block.bn.beta = next();
            block.bn.running_mean = next();
            block.bn.running_var = next();
        }
        self.hidden.weight = next();
        self.hidden.bias = next();
        self.cache = None;
        Ok(())
    }

    /// Top-1 class per row, computed in inference mode.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(x)?.probs))
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let cols = probs.dim(1);
    probs
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// What a bundle tensor holds within its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ParamKind {
    ConvKernel = 0,
    ConvBias = 1,
    BnAlpha = 2,
    BnBeta = 3,
    BnRunningMean = 4,
    BnRunningVar = 5,
    DenseWeight = 6,
    DenseBias = 7,
}

impl ParamKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        use ParamKind::*;
        Some(match v {
            0 => ConvKernel,
            1 => ConvBias,
            2 => BnAlpha,
            3 => BnBeta,
            4 => BnRunningMean,
            5 => BnRunningVar,
            6 => DenseWeight,
            7 => DenseBias,
            _ => return None,
        })
    }

    /// Running statistics ride along but are not trained.
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

/// Hidden layer index (1..=4) plus tensor kind. Encoded in one byte as
/// `layer << 4 | kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamTag {
    pub layer: u8,
    pub kind: ParamKind,
}

impl ParamTag {
    pub fn to_byte(self) -> u8 {
        (self.layer << 4) | self.kind as u8
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        let layer = b >> 4;
        if !(1..=4).contains(&layer) {
            return None;
        }
        ParamKind::from_u8(b & 0x0f).map(|kind| ParamTag { layer, kind })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub tag: ParamTag,
    pub tensor: Tensor,
}

impl BundleEntry {
    pub fn new(tag: ParamTag, tensor: Tensor) -> Self {
        BundleEntry { tag, tensor }
    }
}

/// Snapshot of one user's hidden-layer weights for a given round.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub epoch: u32,
    pub entries: Vec<BundleEntry>,
}

impl WeightBundle {
    pub fn new(epoch: u32, entries: Vec<BundleEntry>) -> Self {
        WeightBundle { epoch, entries }
    }

    pub fn learnable(&self) -> impl Iterator<Item = &BundleEntry> {
        self.entries.iter().filter(|e| e.tag.kind.is_learnable())
    }

    pub fn learnable_count(&self) -> usize {
        self.learnable().map(|e| e.tensor.len()).sum()
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Same tags in the same order with the same shapes.
    pub fn check_compatible(&self, other: &WeightBundle) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::IncompatibleBundle(format!(
                "{} tensors vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (i, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            if a.tag != b.tag || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::IncompatibleBundle(format!(
                    "entry {i}: {:?}{:?} vs {:?}{:?}",
                    a.tag,
                    a.tensor.shape(),
                    b.tag,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny(classes: usize, seed: u64) -> FeatureExtractor {
        FeatureExtractor::new(ArchSpec::tiny(), classes, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn probs_are_distributions() {
        let mut model = tiny(3, 0);
        let x = Tensor::uniform(&[1, 1, 13], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        for training in [true, false] {
            let trace = model.forward(&x, training).unwrap();
            assert_eq!(trace.probs.shape(), &[1, 3]);
            assert!((trace.probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(trace.probs.data().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn zero_input_zero_biases_gives_uniform() {
        let mut model = tiny(4, 2);
        model.hidden.bias.fill(0.0);
        model.classifier.bias.fill(0.0);
        let trace = model.forward(&Tensor::zeros(&[2, 1, 10]), true).unwrap();
        for p in trace.probs.data() {
            assert!((p - 0.25).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let x = Tensor::uniform(&[3, 1, 20], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let mut a = tiny(2, 7);
        let mut b = tiny(2, 7);
        assert_eq!(a.forward(&x, true).unwrap(), b.forward(&x, true).unwrap());
        assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
    }

    #[test]
    fn extract_is_a_deep_copy() {
        let mut model = tiny(2, 4);
        let bundle = model.extract_hidden_weights(1);
        assert_eq!(bundle, model.extract_hidden_weights(1));
        model.blocks[0].conv.kernel.data_mut()[0] += 1.0;
        model.hidden.bias.fill(9.0);
        assert_ne!(bundle, model.extract_hidden_weights(1));
        assert_eq!(bundle.entries[0].tensor.data()[0] + 1.0, model.blocks[0].conv.kernel.data()[0]);
    }

    #[test]
    fn default_arch_parameter_count() {
        // block1: 128*1*9 + 3*128, block2: 256*128*5 + 3*256,
        // block3: 128*256*3 + 3*128, hidden: 128*128 + 128
        let expected = (1152 + 384) + (163_840 + 768) + (98_304 + 384) + (16_384 + 128);
        assert_eq!(expected, 281_344);
        let model =
            FeatureExtractor::new(ArchSpec::default(), 2, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        let bundle = model.extract_hidden_weights(0);
        assert_eq!(bundle.learnable_count(), expected);
        assert_eq!(bundle.value_count(), expected + 2 * (128 + 256 + 128));
    }

    #[test]
    fn hidden_shapes_independent_of_length_and_classes() {
        let arch = ArchSpec::default();
        let a = FeatureExtractor::new(arch, 2, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = FeatureExtractor::new(arch, 39, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (ba, bb) = (a.extract_hidden_weights(0), b.extract_hidden_weights(0));
        ba.check_compatible(&bb).unwrap();

        // Length only affects activations.
        let mut t = tiny(2, 3);
        let short = t.forward(&Tensor::zeros(&[1, 1, 24]), true).unwrap();
        let long = t.forward(&Tensor::zeros(&[1, 1, 1024]), true).unwrap();
        assert_eq!(short.o4.shape(), long.o4.shape());
    }

    #[test]
    fn load_extract_round_trip() {
        let src = tiny(2, 5);
        let mut dst = tiny(7, 6);
        let classifier_before = dst.classifier.clone();
        let bundle = src.extract_hidden_weights(3);
        dst.load_hidden_weights(&bundle).unwrap();
        assert_eq!(dst.extract_hidden_weights(3), bundle);
        assert_eq!(dst.classifier, classifier_before);

        let x = Tensor::uniform(&[2, 1, 15], 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let (ts, td) = (src.infer(&x).unwrap(), dst.infer(&x).unwrap());
        assert_eq!(ts.hidden_outputs(), td.hidden_outputs());
    }

    #[test]
    fn load_rejects_incompatible_bundle() {
        let mut model = tiny(2, 1);
        let other = FeatureExtractor::new(ArchSpec::default(), 2, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let err = model.load_hidden_weights(&other.extract_hidden_weights(0)).unwrap_err();
        assert!(matches!(err, Error::IncompatibleBundle(_)));
    }

    #[test]
    fn backward_requires_forward() {
        let mut model = tiny(2, 0);
        assert!(matches!(model.backward(&TraceGrads::default()), Err(Error::State(_))));
        model.forward(&Tensor::zeros(&[1, 1, 5]), false).unwrap();
        assert!(matches!(model.backward(&TraceGrads::default()), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut model = tiny(3, 9);
        let x = Tensor::uniform(&[2, 1, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let trace = model.forward(&x, true).unwrap();
        let upstream = TraceGrads {
            hidden: [None, None, None, Some(Tensor::zeros(trace.o4.shape()))],
            logits: Some(Tensor::zeros(trace.logits.shape())),
        };
        let grads = model.backward(&upstream).unwrap();
        assert_eq!(grads.len(), PARAM_NAMES.len());
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        let shapes: Vec<Vec<usize>> = model.params_mut().iter().map(|p| p.value.shape().to_vec()).collect();
        for (g, s) in grads.iter().zip(shapes) {
            assert_eq!(g.shape(), s.as_slice());
        }
    }

    #[test]
    fn argmax_tie_rule() {
        let p = Tensor::from_vec(&[3, 2], vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8]).unwrap();
        assert_eq!(argmax_rows(&p), vec![0, 0, 1]);
    }

    #[test]
    fn argmax_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = Tensor::uniform(&[5, 4], 1.0, &mut rng).map(f64::abs);
        let got = argmax_rows(&p);
        for (r, row) in p.data().chunks(4).enumerate() {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (i, v);
                }
            }
            assert_eq!(got[r], best.0);
        }
    }

    #[test]
    fn tag_byte_round_trip() {
        for layer in 1..=4u8 {
            for k in 0..8u8 {
                let tag = ParamTag {
                    layer,
                    kind: ParamKind::from_u8(k).unwrap(),
                };
                assert_eq!(ParamTag::from_byte(tag.to_byte()), Some(tag));
            }
        }
        assert_eq!(ParamTag::from_byte(0x08), None);
        assert_eq!(ParamTag::from_byte(0x58), None);
    }
}
