//! The three network roles of the pipeline: the frozen source classifier,
//! the reconstruction network that turns voxel grids into surrogate frames,
//! and the per-representation target classifiers. All share one dense
//! multilayer template; checkpointing lives here too.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{val, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::event_io::EventStream;
use crate::repr::VoxelGrid;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"EVDC";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("leaky integration needs a non-empty stream")]
    EmptyStream,
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense classifier shape. `feature_dim` is redundant with the last hidden
/// width but stored explicitly so checkpoints are self-describing; the two
/// must agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ClassifierConfig {
    /// Builds a config with `feature_dim` tied to the last hidden width.
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        let feature_dim = hidden_dims.last().copied().unwrap_or(0);
        ClassifierConfig { input_dim, hidden_dims, feature_dim, num_classes }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(ModelError::InvalidConfig("dims must be >= 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidConfig(
                "at least one hidden layer, all widths >= 1".into(),
            ));
        }
        if self.feature_dim != *self.hidden_dims.last().unwrap() {
            return Err(ModelError::InvalidConfig(format!(
                "feature_dim {} must equal last hidden width {}",
                self.feature_dim,
                self.hidden_dims.last().unwrap()
            )));
        }
        Ok(())
    }
}

/// One linear layer's parameter handles inside a store.
#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w: ParamId,
    b: ParamId,
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Registers a linear layer: weight uniform in the Glorot range, bias zero.
fn init_layer(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> LayerIds {
    let limit = glorot_limit(fan_in, fan_out);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    let w = store.register(format!("{prefix}.weight"), Tensor::from_vec(&[fan_in, fan_out], data));
    let b = store.register(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
    LayerIds { w, b }
}

/// How parameters enter a tape: as trainable leaves under a slot, or as
/// constants so no gradient reaches the store.
#[derive(Debug, Clone, Copy)]
pub enum ParamMode {
    Trainable { slot: usize },
    Frozen,
}

fn lift(tape: &mut Tape, store: &ParamStore, mode: ParamMode, id: ParamId) -> NodeId {
    match mode {
        ParamMode::Trainable { slot } => tape.param(slot, store, id),
        ParamMode::Frozen => tape.constant(store.value(id).clone()),
    }
}

/// Multilayer perceptron classifier: linear+relu stack and a linear head.
/// Features are the activations after the last hidden relu.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    store: ParamStore,
    hidden: Vec<LayerIds>,
    head: LayerIds,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut hidden = Vec::new();
        let mut fan_in = config.input_dim;
        for (i, &width) in config.hidden_dims.iter().enumerate() {
            hidden.push(init_layer(&mut store, &mut rng, &format!("layer{i}"), fan_in, width));
            fan_in = width;
        }
        let head = init_layer(&mut store, &mut rng, "head", fan_in, config.num_classes);
        Ok(Classifier { config, store, hidden, head })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Forward pass on a tape. Returns `(features, logits)` node handles;
    /// logits stay unnormalized so losses pick their own softmax.
    pub fn forward(
        &self,
        tape: &mut Tape,
        mode: ParamMode,
        x: NodeId,
    ) -> Result<(NodeId, NodeId), DiffError> {
        let mut h = x;
        for layer in &self.hidden {
            let w = lift(tape, &self.store, mode, layer.w);
            let b = lift(tape, &self.store, mode, layer.b);
            h = tape.linear(h, w, b)?;
            h = tape.relu(h);
        }
        let w = lift(tape, &self.store, mode, self.head.w);
        let b = lift(tape, &self.store, mode, self.head.b);
        let logits = tape.linear(h, w, b)?;
        Ok((h, logits))
    }

    /// Tape-free forward for evaluation. Same arithmetic as [`Self::forward`].
    pub fn forward_values(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut h = x.clone();
        for layer in &self.hidden {
            h = val::relu(&val::linear(&h, self.store.value(layer.w), self.store.value(layer.b)));
        }
        let logits = val::linear(&h, self.store.value(self.head.w), self.store.value(self.head.b));
        (h, logits)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            serde_json::to_string(&self.config).expect("config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let config: ClassifierConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| ModelError::CorruptFile(format!("classifier config: {e}")))?;
        let mut model = Classifier::new(config, 0)?;
        ckpt.fill_store(&mut model.store)?;
        Ok(model)
    }
}

/// Dense map from a flattened voxel grid to a grayscale frame in [0,1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub height: u16,
    pub width: u16,
    pub bins: usize,
    pub hidden_dims: Vec<usize>,
}

impl ReconstructionConfig {
    pub fn input_dim(&self) -> usize {
        self.height as usize * self.width as usize * self.bins
    }

    pub fn output_dim(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height == 0 || self.width == 0 || self.bins == 0 {
            return Err(ModelError::InvalidConfig("voxel dims must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionNet {
    config: ReconstructionConfig,
    store: ParamStore,
    hidden: Vec<LayerIds>,
    head: LayerIds,
}

impl ReconstructionNet {
    pub fn new(config: ReconstructionConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut hidden = Vec::new();
        let mut fan_in = config.input_dim();
        for (i, &width) in config.hidden_dims.iter().enumerate() {
            hidden.push(init_layer(&mut store, &mut rng, &format!("layer{i}"), fan_in, width));
            fan_in = width;
        }
        let head = init_layer(&mut store, &mut rng, "head", fan_in, config.output_dim());
        Ok(ReconstructionNet { config, store, hidden, head })
    }

    pub fn config(&self) -> &ReconstructionConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Forward on a tape; input rows are flattened voxel grids, output rows
    /// sigmoid-squashed frames in [0,1].
    pub fn forward(
        &self,
        tape: &mut Tape,
        mode: ParamMode,
        x: NodeId,
    ) -> Result<NodeId, DiffError> {
        let mut h = x;
        for layer in &self.hidden {
            let w = lift(tape, &self.store, mode, layer.w);
            let b = lift(tape, &self.store, mode, layer.b);
            h = tape.linear(h, w, b)?;
            h = tape.relu(h);
        }
        let w = lift(tape, &self.store, mode, self.head.w);
        let b = lift(tape, &self.store, mode, self.head.b);
        let pre = tape.linear(h, w, b)?;
        Ok(tape.sigmoid(pre))
    }

    pub fn forward_values(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for layer in &self.hidden {
            h = val::relu(&val::linear(&h, self.store.value(layer.w), self.store.value(layer.b)));
        }
        val::sigmoid(&val::linear(&h, self.store.value(self.head.w), self.store.value(self.head.b)))
    }

    /// Value-mode surrogate frame for one voxel grid, as a 1 x (H*W) row.
    pub fn reconstruct(&self, voxel: &VoxelGrid) -> Result<Tensor, ModelError> {
        if (voxel.height, voxel.width, voxel.bins)
            != (self.config.height, self.config.width, self.config.bins)
        {
            return Err(ModelError::InvalidConfig(format!(
                "voxel {}x{}x{} does not match net {}x{}x{}",
                voxel.height, voxel.width, voxel.bins,
                self.config.height, self.config.width, self.config.bins
            )));
        }
        Ok(self.forward_values(&Tensor::from_vec(&[1, voxel.data.len()], voxel.data.clone())))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            serde_json::to_string(&self.config).expect("config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let config: ReconstructionConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| ModelError::CorruptFile(format!("reconstruction config: {e}")))?;
        let mut net = ReconstructionNet::new(config, 0)?;
        ckpt.fill_store(&mut net.store)?;
        Ok(net)
    }
}

/// Per-pixel exponentially decayed signed event accumulation evaluated at
/// the stream's last timestamp, min-max normalized into [0,1]. Serves as the
/// self-supervised target for reconstruction pretraining. An event `tau`
/// microseconds before the end contributes `exp(-1)` of a fresh event.
pub fn leaky_integration_target(stream: &EventStream, tau_us: f64) -> Result<Tensor, ModelError> {
    let (_, t_max) = stream.time_bounds().ok_or(ModelError::EmptyStream)?;
    let w = stream.width as usize;
    let h = stream.height as usize;
    let mut acc = vec![0.0f64; w * h];
    for e in stream.events() {
        let age = (t_max - e.t) as f64;
        acc[e.y as usize * w + e.x as usize] += e.p as f64 * (-age / tau_us).exp();
    }
    let min = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span > 0.0 {
        for v in &mut acc {
            *v = (*v - min) / span;
        }
    } else {
        acc.fill(0.0);
    }
    Ok(Tensor::from_vec(&[1, w * h], acc))
}

/// Named parameter tensors plus the owning model's config JSON. The binary
/// layout is little-endian: magic, format version, config blob, name table
/// with shapes and raw 64-bit data, trailing CRC32 over everything before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_json: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(config_json: String, store: &ParamStore) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_json,
            tensors: store.params().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Copies tensor values into a freshly built store, matching by name and
    /// registration order.
    fn fill_store(&self, store: &mut ParamStore) -> Result<(), ModelError> {
        if self.tensors.len() != store.len() {
            return Err(ModelError::CorruptFile(format!(
                "{} tensors, model needs {}",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for ((name, value), id) in self.tensors.iter().zip(ids) {
            let param = store.get_mut(id);
            if &param.name != name {
                return Err(ModelError::CorruptFile(format!(
                    "tensor {name} where {} was expected",
                    param.name
                )));
            }
            if param.value.shape() != value.shape() {
                return Err(ModelError::CorruptFile(format!(
                    "tensor {name} has shape {:?}, model needs {:?}",
                    value.shape(),
                    param.value.shape()
                )));
            }
            param.value = value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::CorruptFile("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        if bytes.len() < 4 {
            return Err(ModelError::CorruptFile("missing checksum".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(ModelError::CorruptFile("checksum mismatch".into()));
        }

        let config_len = cur.u32()? as usize;
        let config_json = String::from_utf8(cur.take(config_len)?.to_vec())
            .map_err(|_| ModelError::CorruptFile("config is not UTF-8".into()))?;
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| ModelError::CorruptFile("tensor name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = cur.take(len * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)));
        }
        if cur.pos != body.len() {
            return Err(ModelError::CorruptFile("trailing bytes".into()));
        }
        Ok(Checkpoint { version, config_json, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        // The final 4 bytes are the checksum, never payload.
        if self.pos + n + 4 > self.bytes.len() {
            return Err(ModelError::CorruptFile("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
