//! GRU baseline policy: a projected pilot feeds a standard gated recurrent
//! cell whose hidden state drives the same per-role output heads as the
//! transformer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CPair, Tape, Tensor, TensorId};
use crate::error::{Error, Result};

use super::{
    emit_stage0, glorot_vec, normal_vec, output_stage_params, register_stage0, BeamformerMode, Binding,
    Mlp, ParamStore, PolicyEpisode, PolicyKind, Role, StagePolicy, StageParamIds,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    /// Hidden state width.
    pub hidden: usize,
    /// Width of the ReLU input projection applied to the (re, im) pilot pair.
    pub input_proj: usize,
    /// Hidden width of the three output MLPs.
    pub mlp_hidden: usize,
    pub n_antennas: usize,
    pub beamformer_mode: BeamformerMode,
}

impl GruConfig {
    pub fn desk(n_antennas: usize) -> Self {
        GruConfig {
            hidden: 256,
            input_proj: 64,
            mlp_hidden: 128,
            n_antennas,
            beamformer_mode: BeamformerMode::ComplexPairing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input_proj == 0 || self.n_antennas == 0 {
            return Err(Error::invalid("gru dimensions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct GruPolicy {
    cfg: GruConfig,
    params: ParamStore,
    heads: [Mlp; 3],
}

fn head_dims(cfg: &GruConfig) -> Vec<usize> {
    vec![cfg.hidden, cfg.mlp_hidden, cfg.mlp_hidden, 3 * cfg.n_antennas]
}

impl GruPolicy {
    pub fn init(cfg: GruConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let (h, p) = (cfg.hidden, cfg.input_proj);
        params.add("proj.w", 2, p, glorot_vec(rng, 2, p), true);
        params.add("proj.b", 1, p, vec![0.0; p], true);
        for gate in ["z", "r", "h"] {
            params.add(&format!("gru.w{gate}"), h + p, h, glorot_vec(rng, h + p, h), true);
            params.add(&format!("gru.b{gate}"), 1, h, vec![0.0; h], true);
        }
        params.add("gru.h0", 1, h, normal_vec(rng, h, 0.1), true);
        let dims = head_dims(&cfg);
        let heads = [
            Mlp::register(&mut params, "pt", &dims, rng),
            Mlp::register(&mut params, "pr", &dims, rng),
            Mlp::register(&mut params, "dl", &dims, rng),
        ];
        register_stage0(&mut params, cfg.n_antennas, rng);
        Ok(GruPolicy { cfg, params, heads })
    }

    pub fn from_params(cfg: GruConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let fresh = GruPolicy::init(cfg.clone(), &mut crate::rng::stream(0, 0))?;
        if fresh.params.len() != params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, gru config implies {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for t in fresh.params.tensors() {
            let found = params
                .tensors()
                .iter()
                .find(|c| c.name == t.name)
                .ok_or_else(|| Error::Integrity(format!("checkpoint is missing tensor {}", t.name)))?;
            if (found.rows, found.cols) != (t.rows, t.cols) {
                return Err(Error::Integrity(format!(
                    "tensor {} has shape {}x{}, gru config implies {}x{}",
                    t.name, found.rows, found.cols, t.rows, t.cols
                )));
            }
        }
        let dims = head_dims(&cfg);
        let heads = [Mlp::from_parts("pt", &dims), Mlp::from_parts("pr", &dims), Mlp::from_parts("dl", &dims)];
        Ok(GruPolicy { cfg, params, heads })
    }

    pub fn config(&self) -> &GruConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// One cell update: `z = sig(Wz [h;x])`, `r = sig(Wr [h;x])`,
    /// `cand = tanh(Wh [r.h; x])`, `h' = (1-z).h + z.cand`.
    pub fn gru_step(&self, tape: &mut Tape, binding: &Binding, h: TensorId, x: TensorId) -> TensorId {
        let params = &self.params;
        let hx = tape.concat_cols(&[h, x]);
        let wz = binding.id(params, "gru.wz");
        let bz = binding.id(params, "gru.bz");
        let z_lin = tape.matmul(hx, wz);
        let z_lin = tape.add_row_broadcast(z_lin, bz);
        let z = tape.sigmoid(z_lin);
        let wr = binding.id(params, "gru.wr");
        let br = binding.id(params, "gru.br");
        let r_lin = tape.matmul(hx, wr);
        let r_lin = tape.add_row_broadcast(r_lin, br);
        let r = tape.sigmoid(r_lin);
        let rh = tape.mul(r, h);
        let rhx = tape.concat_cols(&[rh, x]);
        let wh = binding.id(params, "gru.wh");
        let bh = binding.id(params, "gru.bh");
        let c_lin = tape.matmul(rhx, wh);
        let c_lin = tape.add_row_broadcast(c_lin, bh);
        let cand = tape.tanh(c_lin);
        let ones = tape.constant(Tensor::row_vec(vec![1.0; self.cfg.hidden]));
        let omz = tape.sub(ones, z);
        let keep = tape.mul(omz, h);
        let take = tape.mul(z, cand);
        tape.add(keep, take)
    }

    fn project_pilot(&self, tape: &mut Tape, binding: &Binding, y: CPair) -> TensorId {
        let pair = tape.concat_cols(&[y.re, y.im]); // (1,2)
        let w = binding.id(&self.params, "proj.w");
        let b = binding.id(&self.params, "proj.b");
        let z = tape.matmul(pair, w);
        let z = tape.add_row_broadcast(z, b);
        tape.relu(z)
    }
}

pub struct GruEpisode<'p> {
    policy: &'p GruPolicy,
    binding: Binding,
    hidden: TensorId,
    count: usize,
}

impl StagePolicy for GruPolicy {
    fn n_antennas(&self) -> usize {
        self.cfg.n_antennas
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::Gru
    }

    fn begin_episode<'p>(&'p self, tape: &mut Tape) -> Box<dyn PolicyEpisode + 'p> {
        let binding = Binding::bind(&self.params, tape);
        let hidden = binding.id(&self.params, "gru.h0");
        Box::new(GruEpisode { policy: self, binding, hidden, count: 0 })
    }
}

impl PolicyEpisode for GruEpisode<'_> {
    fn observe(&mut self, tape: &mut Tape, y: CPair) {
        let x = self.policy.project_pilot(tape, &self.binding, y);
        self.hidden = self.policy.gru_step(tape, &self.binding, self.hidden, x);
        self.count += 1;
    }

    fn emit(&mut self, tape: &mut Tape, role: Role) -> StageParamIds {
        let cfg = &self.policy.cfg;
        if self.count == 0 {
            return emit_stage0(tape, &self.policy.params, &self.binding, role, cfg.n_antennas, cfg.beamformer_mode);
        }
        let head = match role {
            Role::PilotTransmit => &self.policy.heads[0],
            Role::PilotReceive => &self.policy.heads[1],
            Role::Downlink => &self.policy.heads[2],
        };
        let o = head.forward(tape, &self.policy.params, &self.binding, self.hidden);
        output_stage_params(tape, o, cfg.n_antennas, cfg.beamformer_mode)
    }

    fn observed(&self) -> usize {
        self.count
    }

    fn accumulate_grads(&self, tape: &Tape, accum: &mut super::GradAccum) {
        accum.accumulate(&self.policy.params, &self.binding, tape);
    }
}
