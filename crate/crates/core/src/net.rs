//! The residual pose-regression network: thirteen bottleneck blocks
//! (1×1 → 3×3 → 1×1 convolutions, each followed by batch normalization)
//! with identity or projection shortcuts, then two fully connected layers
//! producing 17 × 3 coordinates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{BatchNormConfig, BatchNormIds, ConvGeometry, Mode, NdArray, NodeId, ParamId, ParamStore, Padding, Tape};
use crate::error::{Error, Result};
use crate::image::{CsiImage, IMAGE_SHAPE};
use crate::skeleton::{SkeletonPose, POSE_SCALARS};

/// Output widths of the thirteen blocks at full scale.
pub const BLOCK_WIDTHS: [usize; 13] = [4, 8, 8, 16, 16, 64, 64, 256, 256, 1024, 1024, 2048, 2048];
/// Blocks (1-based) whose 3×3 convolution and shortcut use stride 2.
pub const STRIDED_BLOCKS: [usize; 5] = [3, 5, 7, 9, 11];
pub const HIDDEN_WIDTH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Width of the 1×1 → 3×3 → 1×1 bottleneck interior.
    pub inner_channels: usize,
    pub stride: usize,
    pub projection: bool,
}

impl ResidualBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            inner_channels: (out_channels / 4).max(4),
            stride,
            projection: stride != 1 || in_channels != out_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub blocks: Vec<ResidualBlockSpec>,
    pub hidden: usize,
    pub outputs: usize,
    /// Batch-normalize the projection shortcut like every other convolution.
    pub shortcut_batch_norm: bool,
    /// Rectify the hidden fully connected layer.
    pub hidden_relu: bool,
    pub batch_norm: BatchNormConfig,
}

/// One row of a shape trace: `[h, w, c]` for blocks, `[1, d]` for dense layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub stride: Option<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_width_divisor(1)
    }
}

impl NetworkSpec {
    /// The full-size network, or one with every width divided by `divisor`
    /// (floored at 4 channels, hidden layer at 8 units).
    pub fn with_width_divisor(divisor: usize) -> Self {
        let divisor = divisor.max(1);
        let mut blocks = Vec::with_capacity(BLOCK_WIDTHS.len());
        let mut in_c = IMAGE_SHAPE[2];
        for (i, &w) in BLOCK_WIDTHS.iter().enumerate() {
            let out_c = (w / divisor).max(4);
            let stride = if STRIDED_BLOCKS.contains(&(i + 1)) { 2 } else { 1 };
            blocks.push(ResidualBlockSpec::new(in_c, out_c, stride));
            in_c = out_c;
        }
        Self {
            input: IMAGE_SHAPE,
            blocks,
            hidden: (HIDDEN_WIDTH / divisor).max(8),
            outputs: POSE_SCALARS,
            shortcut_batch_norm: true,
            hidden_relu: true,
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Empty { what: "network blocks" });
        }
        let mut c = self.input[2];
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels != c {
                return Err(Error::InvalidConfig(format!(
                    "block {} expects {} input channels, previous layer gives {c}",
                    i + 1,
                    b.in_channels
                )));
            }
            if (b.stride != 1 || b.in_channels != b.out_channels) && !b.projection {
                return Err(Error::InvalidConfig(format!("block {} needs a projection shortcut", i + 1)));
            }
            if !matches!(b.stride, 1 | 2) || b.inner_channels == 0 || b.out_channels == 0 {
                return Err(Error::InvalidConfig(format!("block {} has invalid widths or stride", i + 1)));
            }
            c = b.out_channels;
        }
        if self.outputs != POSE_SCALARS {
            return Err(Error::InvalidConfig(format!("network must emit {POSE_SCALARS} values")));
        }
        Ok(())
    }

    /// Shapes each layer produces, derived from the convolution geometry.
    pub fn shape_trace(&self) -> Result<Vec<LayerShape>> {
        self.validate()?;
        let mut rows = Vec::new();
        let [mut h, mut w, mut c] = self.input;
        for (i, b) in self.blocks.iter().enumerate() {
            let g = ConvGeometry::new([1, h, w, b.inner_channels], &[3, 3, b.inner_channels, b.inner_channels], b.stride, Padding::Same)?;
            rows.push(LayerShape {
                name: format!("BLOCK{}", i + 1),
                input: vec![h, w, c],
                output: vec![g.out_h, g.out_w, b.out_channels],
                stride: Some(b.stride),
            });
            (h, w, c) = (g.out_h, g.out_w, b.out_channels);
        }
        let flat = h * w * c;
        rows.push(LayerShape {
            name: String::from("FC1"),
            input: vec![h, w, c],
            output: vec![1, self.hidden],
            stride: None,
        });
        rows.push(LayerShape {
            name: String::from("FC2"),
            input: vec![1, self.hidden],
            output: vec![1, self.outputs],
            stride: None,
        });
        debug_assert!(flat > 0);
        Ok(rows)
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    kernel: ParamId,
    bn: BatchNormIds,
}

#[derive(Clone, Debug)]
struct BlockParams {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    shortcut: Option<(ParamId, Option<BatchNormIds>)>,
}

#[derive(Clone, Debug, PartialEq)]
struct ParamSlot {
    name: String,
    shape: Vec<usize>,
    fan_in: Option<usize>,
    trainable: bool,
    fill: f64,
}

/// A forward pass: the `[n, 51]` output node plus the output node of
/// every block and dense layer, for shape tracing.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: NodeId,
    pub layers: Vec<(String, NodeId)>,
}

#[derive(Clone, Debug)]
pub struct PoseNet {
    spec: NetworkSpec,
    slots: Vec<ParamSlot>,
    blocks: Vec<BlockParams>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

struct Layout<'a> {
    slots: &'a mut Vec<ParamSlot>,
}

impl Layout<'_> {
    fn add(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>, trainable: bool, fill: f64) -> ParamId {
        self.slots.push(ParamSlot {
            name,
            shape,
            fan_in,
            trainable,
            fill,
        });
        ParamId(self.slots.len() - 1)
    }

    fn conv_bn(&mut self, prefix: &str, k: usize, cin: usize, cout: usize) -> ConvBn {
        let kernel = self.add(format!("{prefix}.kernel"), vec![k, k, cin, cout], Some(k * k * cin), true, 0.0);
        let bn = self.bn(&format!("{prefix}.bn"), cout);
        ConvBn { kernel, bn }
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BatchNormIds {
        BatchNormIds {
            scale: self.add(format!("{prefix}.scale"), vec![c], None, true, 1.0),
            shift: self.add(format!("{prefix}.shift"), vec![c], None, true, 0.0),
            running_mean: self.add(format!("{prefix}.running_mean"), vec![c], None, false, 0.0),
            running_var: self.add(format!("{prefix}.running_var"), vec![c], None, false, 1.0),
        }
    }
}

impl PoseNet {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut slots = Vec::new();
        let mut layout = Layout { slots: &mut slots };
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (i, b) in spec.blocks.iter().enumerate() {
            let p = format!("block{:02}", i + 1);
            let reduce = layout.conv_bn(&format!("{p}.reduce"), 1, b.in_channels, b.inner_channels);
            let spatial = layout.conv_bn(&format!("{p}.spatial"), 3, b.inner_channels, b.inner_channels);
            let expand = layout.conv_bn(&format!("{p}.expand"), 1, b.inner_channels, b.out_channels);
            let shortcut = b.projection.then(|| {
                let kernel = layout.add(
                    format!("{p}.shortcut.kernel"),
                    vec![1, 1, b.in_channels, b.out_channels],
                    Some(b.in_channels),
                    true,
                    0.0,
                );
                let bn = spec
                    .shortcut_batch_norm
                    .then(|| layout.bn(&format!("{p}.shortcut.bn"), b.out_channels));
                (kernel, bn)
            });
            blocks.push(BlockParams {
                reduce,
                spatial,
                expand,
                shortcut,
            });
        }
        let trace = spec.shape_trace()?;
        let last = &trace[spec.blocks.len() - 1].output;
        let flat = last.iter().product::<usize>();
        let fc1 = (
            layout.add(String::from("fc1.weight"), vec![flat, spec.hidden], Some(flat), true, 0.0),
            layout.add(String::from("fc1.bias"), vec![spec.hidden], None, true, 0.0),
        );
        let fc2 = (
            layout.add(String::from("fc2.weight"), vec![spec.hidden, spec.outputs], Some(spec.hidden), true, 0.0),
            layout.add(String::from("fc2.bias"), vec![spec.outputs], None, true, 0.0),
        );
        Ok(Self {
            spec,
            slots,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Fresh parameters: weights uniform in `±sqrt(6 / fan_in)`, biases and
    /// shifts zero, batch-norm scales one, running statistics (0, 1).
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for slot in &self.slots {
            let value = match slot.fan_in {
                Some(fan_in) => {
                    let bound = libm::sqrt(6.0 / fan_in as f64);
                    NdArray::from_fn(&slot.shape, |_| rng.random_range(-bound..bound))
                }
                None => NdArray::filled(&slot.shape, slot.fill),
            };
            store
                .insert(slot.name.clone(), value, slot.trainable)
                .expect("layout names are unique");
        }
        store
    }

    /// Overwrites the output layer's bias, e.g. with a mean training pose.
    pub fn set_output_bias(&self, params: &mut ParamStore, bias: &[f64]) -> Result<()> {
        let value = params.value_mut(self.fc2.1);
        if value.len() != bias.len() {
            return Err(Error::Shape {
                op: "output bias",
                expected: value.shape().to_vec(),
                actual: vec![bias.len()],
            });
        }
        value.data_mut().copy_from_slice(bias);
        Ok(())
    }

    /// Checks that `params` has exactly this network's layout, naming the
    /// first parameter that differs.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let mut actual = params.iter();
        for slot in &self.slots {
            let Some((_, p)) = actual.next() else {
                return Err(Error::ParamMismatch {
                    name: slot.name.clone(),
                    reason: String::from("missing from parameter set"),
                });
            };
            if p.name != slot.name {
                return Err(Error::ParamMismatch {
                    name: slot.name.clone(),
                    reason: format!("found `{}` in its place", p.name),
                });
            }
            if p.value.shape() != slot.shape.as_slice() {
                return Err(Error::ParamMismatch {
                    name: slot.name.clone(),
                    reason: format!("shape {:?}, expected {:?}", p.value.shape(), slot.shape),
                });
            }
        }
        if let Some((_, extra)) = actual.next() {
            return Err(Error::ParamMismatch {
                name: extra.name.clone(),
                reason: String::from("not part of this network"),
            });
        }
        Ok(())
    }

    fn conv_bn(&self, tape: &mut Tape, params: &ParamStore, x: NodeId, layer: &ConvBn, stride: usize, train: bool) -> Result<NodeId> {
        let c = tape.conv2d(params, x, layer.kernel, stride)?;
        tape.batch_norm(params, c, layer.bn, train, self.spec.batch_norm)
    }

    /// Records the network on `tape` for an `[n, 30, 20, 4]` input node.
    /// Train mode normalizes with batch statistics.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, input: NodeId, mode: Mode) -> Result<Forward> {
        let shape = tape.value(input).shape().to_vec();
        let [n, h, w, c] = tape.value(input).nhwc()?;
        if [h, w, c] != self.spec.input {
            return Err(Error::Shape {
                op: "network input",
                expected: self.spec.input.to_vec(),
                actual: shape,
            });
        }
        let train = mode == Mode::Train;
        let mut layers = Vec::with_capacity(self.blocks.len() + 2);
        let mut x = input;
        for (i, (spec, block)) in self.spec.blocks.iter().zip(&self.blocks).enumerate() {
            let a = self.conv_bn(tape, params, x, &block.reduce, 1, train)?;
            let a = tape.relu(a);
            let a = self.conv_bn(tape, params, a, &block.spatial, spec.stride, train)?;
            let a = tape.relu(a);
            let a = self.conv_bn(tape, params, a, &block.expand, 1, train)?;
            let skip = match &block.shortcut {
                None => x,
                Some((kernel, bn)) => {
                    let s = tape.conv2d(params, x, *kernel, spec.stride)?;
                    match bn {
                        Some(bn) => tape.batch_norm(params, s, *bn, train, self.spec.batch_norm)?,
                        None => s,
                    }
                }
            };
            let sum = tape.add(a, skip)?;
            x = tape.relu(sum);
            layers.push((format!("BLOCK{}", i + 1), x));
        }
        let flat_len = tape.value(x).len() / n;
        let flat = tape.reshape(x, &[n, flat_len])?;
        let mut hidden = tape.linear(params, flat, self.fc1.0, self.fc1.1)?;
        if self.spec.hidden_relu {
            hidden = tape.relu(hidden);
        }
        layers.push((String::from("FC1"), hidden));
        let output = tape.linear(params, hidden, self.fc2.0, self.fc2.1)?;
        layers.push((String::from("FC2"), output));
        Ok(Forward { output, layers })
    }

    /// Eval-mode predictions, batched internally.
    pub fn predict(&self, params: &ParamStore, images: &[CsiImage]) -> Result<Vec<SkeletonPose>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let mut tape = Tape::new();
            let input = tape.input(stack_images(chunk.iter())?);
            let fwd = self.forward(&mut tape, params, input, Mode::Eval)?;
            for row in tape.value(fwd.output).data().chunks_exact(POSE_SCALARS) {
                out.push(SkeletonPose::from_flat(row)?);
            }
        }
        Ok(out)
    }
}

/// Stacks images into one `[n, 30, 20, 4]` batch.
pub fn stack_images<'a>(images: impl ExactSizeIterator<Item = &'a CsiImage>) -> Result<NdArray> {
    let n = images.len();
    if n == 0 {
        return Err(Error::Empty { what: "image batch" });
    }
    let mut data = Vec::with_capacity(n * crate::image::IMAGE_LEN);
    for img in images {
        data.extend_from_slice(img.data());
    }
    NdArray::new(vec![n, IMAGE_SHAPE[0], IMAGE_SHAPE[1], IMAGE_SHAPE[2]], data)
}
