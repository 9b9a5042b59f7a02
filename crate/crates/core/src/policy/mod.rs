//! Policies that map pilot observation histories to stage parameters.
//!
//! All policies share one output contract: polarization angles are produced
//! through a sigmoid scaled to `[0, pi/2]`, and beamformers are built from a
//! `2N` real block read as (real, imaginary) halves and divided by the norm
//! of the whole block. The protocol validates the contract on every emission
//! regardless of which policy produced the parameters.

pub mod gru;
pub mod nonadaptive;
pub mod perfect_csi;
pub mod transformer;

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CPair, Tape, Tensor, TensorId};
use crate::error::{Error, Result};

/// Which mapping a stage-parameter emission serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    PilotTransmit,
    PilotReceive,
    Downlink,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::PilotTransmit => "pilot-transmit",
            Role::PilotReceive => "pilot-receive",
            Role::Downlink => "downlink",
        }
    }

    pub const ALL: [Role; 3] = [Role::PilotTransmit, Role::PilotReceive, Role::Downlink];

    /// Parameter-name prefix for the role's head and stage-0 constants.
    fn prefix(self) -> &'static str {
        match self {
            Role::PilotTransmit => "pt",
            Role::PilotReceive => "pr",
            Role::Downlink => "dl",
        }
    }
}

/// Policy discriminator used in checkpoints and error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Transformer,
    Gru,
    NonAdaptive,
    PerfectCsi,
    Fixed,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Transformer => "transformer",
            PolicyKind::Gru => "gru",
            PolicyKind::NonAdaptive => "nonadaptive",
            PolicyKind::PerfectCsi => "perfect-csi",
            PolicyKind::Fixed => "fixed",
        }
    }
}

/// How the `2N` real output block becomes a beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerMode {
    /// First half is the real part, second half the imaginary part; the pair
    /// is normalized jointly. The only reading that yields a complex unit
    /// vector, and the default.
    ComplexPairing,
    /// Literal sum of the two halves as a real vector, normalized by the
    /// joint block norm. Kept for comparison; does not produce unit norm in
    /// general, so the protocol will reject its outputs.
    RealSum,
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub trainable: bool,
}

/// Named-tensor bundle for one policy side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>, trainable: bool) {
        assert_eq!(data.len(), rows * cols, "param tensor {name} has wrong length");
        assert!(!self.by_name.contains_key(name), "duplicate param tensor {name}");
        self.by_name.insert(name.to_string(), self.tensors.len());
        self.tensors.push(ParamTensor { name: name.to_string(), rows, cols, data, trainable });
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self.by_name.get(name).unwrap_or_else(|| panic!("unknown param tensor {name}"))
    }

    pub fn tensor(&self, name: &str) -> &ParamTensor {
        &self.tensors[self.index_of(name)]
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Rebuild from a tensor list (checkpoint load path).
    pub fn from_tensors(tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut s = ParamStore::new();
        for t in tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(Error::Integrity(format!(
                    "tensor {} declares {}x{} but holds {} values",
                    t.name,
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
            if s.by_name.contains_key(&t.name) {
                return Err(Error::Integrity(format!("duplicate tensor name {}", t.name)));
            }
            s.by_name.insert(t.name.clone(), s.tensors.len());
            s.tensors.push(t);
        }
        Ok(s)
    }
}

/// Tape bindings of a store's tensors, index-parallel to the store.
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    /// Load every tensor onto the tape; trainable tensors become gradient
    /// leaves, frozen ones constants.
    pub fn bind(store: &ParamStore, tape: &mut Tape) -> Binding {
        let ids = store
            .tensors()
            .iter()
            .map(|t| {
                let tensor = Tensor::new(t.rows, t.cols, t.data.clone());
                if t.trainable {
                    tape.leaf(tensor)
                } else {
                    tape.constant(tensor)
                }
            })
            .collect();
        Binding { ids }
    }

    pub fn id(&self, store: &ParamStore, name: &str) -> TensorId {
        self.ids[store.index_of(name)]
    }
}

/// Gradient accumulator, index-parallel to a store.
pub struct GradAccum {
    pub grads: Vec<Vec<f64>>,
}

impl GradAccum {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradAccum { grads: store.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    /// Add the tape's leaf gradients (where present) into the accumulator.
    pub fn accumulate(&mut self, store: &ParamStore, binding: &Binding, tape: &Tape) {
        for (i, t) in store.tensors().iter().enumerate() {
            if !t.trainable {
                continue;
            }
            if let Some(g) = tape.grad(binding.ids[i]) {
                for (a, b) in self.grads[i].iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
        }
    }

    pub fn add_from(&mut self, other: &GradAccum) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Graph handles for one emitted parameter set.
#[derive(Debug, Clone, Copy)]
pub struct StageParamIds {
    /// `(1, N)` angles in `[0, pi/2]`.
    pub angles: TensorId,
    /// `(1, N)` real part of the beamformer.
    pub w_re: TensorId,
    /// `(1, N)` imaginary part of the beamformer.
    pub w_im: TensorId,
}

/// Shared sigmoid/normalization layer: raw `(1, 3N)` head output to stage
/// parameters.
pub fn output_stage_params(tape: &mut Tape, o: TensorId, n: usize, mode: BeamformerMode) -> StageParamIds {
    assert_eq!(tape.value(o).cols, 3 * n, "output head width must be 3N");
    let logits = tape.slice_cols(o, 0, n);
    let sig = tape.sigmoid(logits);
    let angles = tape.scale(sig, std::f64::consts::FRAC_PI_2);
    let block = tape.slice_cols(o, n, 3 * n);
    let unit = tape.normalize_row(block);
    let (w_re, w_im) = match mode {
        BeamformerMode::ComplexPairing => (tape.slice_cols(unit, 0, n), tape.slice_cols(unit, n, 2 * n)),
        BeamformerMode::RealSum => {
            let a = tape.slice_cols(unit, 0, n);
            let b = tape.slice_cols(unit, n, 2 * n);
            let re = tape.add(a, b);
            let im = tape.constant(Tensor::zeros(1, n));
            (re, im)
        }
    };
    StageParamIds { angles, w_re, w_im }
}

/// Stage-0 path: trainable constants through the same sigmoid/normalization.
pub fn stage0_params(
    tape: &mut Tape,
    angle_logits: TensorId,
    w_block: TensorId,
    n: usize,
    mode: BeamformerMode,
) -> StageParamIds {
    let sig = tape.sigmoid(angle_logits);
    let angles = tape.scale(sig, std::f64::consts::FRAC_PI_2);
    let unit = tape.normalize_row(w_block);
    let (w_re, w_im) = match mode {
        BeamformerMode::ComplexPairing => (tape.slice_cols(unit, 0, n), tape.slice_cols(unit, n, 2 * n)),
        BeamformerMode::RealSum => {
            let a = tape.slice_cols(unit, 0, n);
            let b = tape.slice_cols(unit, n, 2 * n);
            let re = tape.add(a, b);
            let im = tape.constant(Tensor::zeros(1, n));
            (re, im)
        }
    };
    StageParamIds { angles, w_re, w_im }
}

/// Register the per-role stage-0 trainable constants.
pub fn register_stage0(store: &mut ParamStore, n: usize, rng: &mut ChaCha8Rng) {
    for role in Role::ALL {
        let p = role.prefix();
        store.add(&format!("{p}.s0.angles"), 1, n, normal_vec(rng, n, 1.0), true);
        store.add(&format!("{p}.s0.w"), 1, 2 * n, normal_vec(rng, 2 * n, 1.0), true);
    }
}

/// Emit stage-0 parameters for `role` from the store's trainable constants.
pub fn emit_stage0(
    tape: &mut Tape,
    store: &ParamStore,
    binding: &Binding,
    role: Role,
    n: usize,
    mode: BeamformerMode,
) -> StageParamIds {
    let p = role.prefix();
    let logits = binding.id(store, &format!("{p}.s0.angles"));
    let w = binding.id(store, &format!("{p}.s0.w"));
    stage0_params(tape, logits, w, n, mode)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub fn glorot_vec(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
}

/// A ReLU + layer-norm MLP with a linear output layer, registered under a
/// name prefix and evaluated on single-row inputs.
#[derive(Debug, Clone)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
}

impl Mlp {
    /// Handle for parameters that already exist in a store (checkpoint load).
    pub fn from_parts(prefix: &str, dims: &[usize]) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        Mlp { prefix: prefix.to_string(), dims: dims.to_vec() }
    }

    /// `dims` = [input, hidden..., output].
    pub fn register(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        for i in 0..dims.len() - 1 {
            let (din, dout) = (dims[i], dims[i + 1]);
            store.add(&format!("{prefix}.w{i}"), din, dout, glorot_vec(rng, din, dout), true);
            store.add(&format!("{prefix}.b{i}"), 1, dout, vec![0.0; dout], true);
            let hidden = i + 2 < dims.len();
            if hidden {
                store.add(&format!("{prefix}.ln{i}.g"), 1, dout, vec![1.0; dout], true);
                store.add(&format!("{prefix}.ln{i}.b"), 1, dout, vec![0.0; dout], true);
            }
        }
        Mlp { prefix: prefix.to_string(), dims: dims.to_vec() }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, binding: &Binding, x: TensorId) -> TensorId {
        let mut cur = x;
        for i in 0..self.dims.len() - 1 {
            let w = binding.id(store, &format!("{}.w{i}", self.prefix));
            let b = binding.id(store, &format!("{}.b{i}", self.prefix));
            let z = tape.matmul(cur, w);
            cur = tape.add_row_broadcast(z, b);
            if i + 2 < self.dims.len() {
                cur = tape.relu(cur);
                let g = binding.id(store, &format!("{}.ln{i}.g", self.prefix));
                let be = binding.id(store, &format!("{}.ln{i}.b", self.prefix));
                cur = tape.layer_norm_rows(cur, g, be);
            }
        }
        cur
    }
}

/// Attention score record of one transformer episode: per layer, per head,
/// one row per query position (row `k` holds `k+1` causal scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub n_layers: usize,
    pub n_heads: usize,
    /// `rows[layer][head][query]` = attention distribution over keys.
    pub rows: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionTrace {
    pub fn new(n_layers: usize, n_heads: usize) -> Self {
        AttentionTrace { n_layers, n_heads, rows: vec![vec![Vec::new(); n_heads]; n_layers] }
    }

    /// Sequence length covered by the trace.
    pub fn len(&self) -> usize {
        self.rows.first().and_then(|l| l.first()).map_or(0, |h| h.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense `l x l` score matrix for one layer/head, zero above the diagonal.
    pub fn dense(&self, layer: usize, head: usize) -> Vec<Vec<f64>> {
        let l = self.len();
        let mut m = vec![vec![0.0; l]; l];
        for (q, row) in self.rows[layer][head].iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                m[q][k] = *v;
            }
        }
        m
    }
}

/// A policy for one side of the link.
pub trait StagePolicy: Send + Sync {
    fn n_antennas(&self) -> usize;
    fn kind(&self) -> PolicyKind;
    /// Open per-episode state (binds parameters onto the tape).
    fn begin_episode<'p>(&'p self, tape: &mut Tape) -> Box<dyn PolicyEpisode + 'p>;
}

/// Mutable per-episode state of a policy on one tape.
pub trait PolicyEpisode {
    /// Record the next received pilot for this side.
    fn observe(&mut self, tape: &mut Tape, y: CPair);
    /// Emit stage parameters for `role` from the observations so far.
    fn emit(&mut self, tape: &mut Tape, role: Role) -> StageParamIds;
    /// Number of pilots observed so far.
    fn observed(&self) -> usize;
    /// Attention trace accumulated so far, when the policy records one.
    fn attention_trace(&self) -> Option<AttentionTrace> {
        None
    }
    /// After a backward pass, add this side's parameter gradients into
    /// `accum` (shaped like the policy's store). No-op for fixed policies.
    fn accumulate_grads(&self, _tape: &Tape, _accum: &mut GradAccum) {}
}

/// A Tx/Rx pair of trainable policies of one kind.
#[derive(Debug)]
pub enum PolicyPair {
    Transformer { tx: transformer::TransformerPolicy, rx: transformer::TransformerPolicy },
    Gru { tx: gru::GruPolicy, rx: gru::GruPolicy },
    NonAdaptive { tx: nonadaptive::NonAdaptivePolicy, rx: nonadaptive::NonAdaptivePolicy },
}

impl PolicyPair {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyPair::Transformer { .. } => PolicyKind::Transformer,
            PolicyPair::Gru { .. } => PolicyKind::Gru,
            PolicyPair::NonAdaptive { .. } => PolicyKind::NonAdaptive,
        }
    }

    pub fn tx(&self) -> &dyn StagePolicy {
        match self {
            PolicyPair::Transformer { tx, .. } => tx,
            PolicyPair::Gru { tx, .. } => tx,
            PolicyPair::NonAdaptive { tx, .. } => tx,
        }
    }

    pub fn rx(&self) -> &dyn StagePolicy {
        match self {
            PolicyPair::Transformer { rx, .. } => rx,
            PolicyPair::Gru { rx, .. } => rx,
            PolicyPair::NonAdaptive { rx, .. } => rx,
        }
    }

    pub fn stores(&self) -> (&ParamStore, &ParamStore) {
        match self {
            PolicyPair::Transformer { tx, rx } => (tx.params(), rx.params()),
            PolicyPair::Gru { tx, rx } => (tx.params(), rx.params()),
            PolicyPair::NonAdaptive { tx, rx } => (tx.params(), rx.params()),
        }
    }

    pub fn stores_mut(&mut self) -> (&mut ParamStore, &mut ParamStore) {
        match self {
            PolicyPair::Transformer { tx, rx } => (tx.params_mut(), rx.params_mut()),
            PolicyPair::Gru { tx, rx } => (tx.params_mut(), rx.params_mut()),
            PolicyPair::NonAdaptive { tx, rx } => (tx.params_mut(), rx.params_mut()),
        }
    }
}
