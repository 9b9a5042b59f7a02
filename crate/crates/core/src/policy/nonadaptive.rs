//! Non-adaptive baseline: pilot-stage parameters are frozen at
//! initialization and never react to observations; only the downlink mapping
//! is learned, from the concatenated pilot sequence.
//!
//! The downlink MLP takes the full `2L`-wide real input `[re0, im0, re1,
//! im1, ...]`. During an episode, downlink parameters are emitted at every
//! stage from the observations so far with the unseen tail zero-padded; at
//! the final stage the input is the complete, unpadded pilot sequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CPair, Tape, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::rng as rng_util;

use super::{
    output_stage_params, BeamformerMode, Binding, Mlp, ParamStore, PolicyEpisode,
    PolicyKind, Role, StagePolicy, StageParamIds,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonAdaptiveConfig {
    pub n_antennas: usize,
    /// Pilot stages the downlink MLP was sized for.
    pub n_stages: usize,
    pub mlp_hidden: usize,
    pub beamformer_mode: BeamformerMode,
}

impl NonAdaptiveConfig {
    pub fn desk(n_antennas: usize, n_stages: usize) -> Self {
        NonAdaptiveConfig { n_antennas, n_stages, mlp_hidden: 128, beamformer_mode: BeamformerMode::ComplexPairing }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_stages == 0 {
            return Err(Error::invalid("nonadaptive dimensions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct NonAdaptivePolicy {
    cfg: NonAdaptiveConfig,
    params: ParamStore,
    head: Mlp,
}

fn head_dims(cfg: &NonAdaptiveConfig) -> Vec<usize> {
    vec![2 * cfg.n_stages, cfg.mlp_hidden, cfg.mlp_hidden, 3 * cfg.n_antennas]
}

impl NonAdaptivePolicy {
    /// Freeze random pilot parameters and initialize the downlink MLP.
    pub fn init(cfg: NonAdaptiveConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let n = cfg.n_antennas;
        // Frozen pilot-stage parameters, drawn once: angles uniform in
        // [0, pi/2), beamformer a random unit complex vector stored as
        // [re..., im...].
        let angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::FRAC_PI_2)).collect();
        let w = rng_util::random_unit_complex(rng, n);
        let mut w_block: Vec<f64> = w.iter().map(|z| z.re).collect();
        w_block.extend(w.iter().map(|z| z.im));
        params.add("pilot.angles", 1, n, angles, false);
        params.add("pilot.w", 1, 2 * n, w_block, false);
        let head = Mlp::register(&mut params, "dl", &head_dims(&cfg), rng);
        Ok(NonAdaptivePolicy { cfg, params, head })
    }

    pub fn from_params(cfg: NonAdaptiveConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let fresh = NonAdaptivePolicy::init(cfg.clone(), &mut rng_util::stream(0, 0))?;
        if fresh.params.len() != params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, nonadaptive config implies {}",
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
                    "tensor {} has shape {}x{}, nonadaptive config implies {}x{}",
                    t.name, found.rows, found.cols, t.rows, t.cols
                )));
            }
        }
        let head = Mlp::from_parts("dl", &head_dims(&cfg));
        Ok(NonAdaptivePolicy { cfg, params, head })
    }

    pub fn config(&self) -> &NonAdaptiveConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// The frozen pilot-stage parameters (identical for every stage, episode,
    /// and pilot role).
    pub fn pilot_stage_params(&self, tape: &mut Tape, binding: &Binding) -> StageParamIds {
        let angles = binding.id(&self.params, "pilot.angles");
        let w = binding.id(&self.params, "pilot.w");
        let n = self.cfg.n_antennas;
        let unit = tape.normalize_row(w);
        let (w_re, w_im) = (tape.slice_cols(unit, 0, n), tape.slice_cols(unit, n, 2 * n));
        StageParamIds { angles, w_re, w_im }
    }

    /// Downlink mapping from exactly `n_stages` pilots (the strict op).
    pub fn downlink_from_pilots(&self, tape: &mut Tape, observations: &[(f64, f64)]) -> Result<StageParamIds> {
        if observations.len() != self.cfg.n_stages {
            return Err(Error::invalid(format!(
                "nonadaptive downlink needs exactly {} observations, got {}",
                self.cfg.n_stages,
                observations.len()
            )));
        }
        let binding = Binding::bind(&self.params, tape);
        Ok(self.downlink_padded(tape, &binding, observations))
    }

    fn downlink_padded(&self, tape: &mut Tape, binding: &Binding, observations: &[(f64, f64)]) -> StageParamIds {
        let mut input = vec![0.0; 2 * self.cfg.n_stages];
        for (i, (re, im)) in observations.iter().enumerate().take(self.cfg.n_stages) {
            input[2 * i] = *re;
            input[2 * i + 1] = *im;
        }
        let x = tape.constant(Tensor::row_vec(input));
        let o = self.head.forward(tape, &self.params, binding, x);
        output_stage_params(tape, o, self.cfg.n_antennas, self.cfg.beamformer_mode)
    }

    fn downlink_padded_nodes(&self, tape: &mut Tape, binding: &Binding, observed: &[CPair]) -> StageParamIds {
        // Build the 2L input row from observation nodes plus zero padding so
        // gradients flow back into the observed pilots.
        let mut parts: Vec<TensorId> = Vec::with_capacity(2 * self.cfg.n_stages);
        for y in observed.iter().take(self.cfg.n_stages) {
            parts.push(y.re);
            parts.push(y.im);
        }
        let missing = 2 * self.cfg.n_stages - parts.len();
        if missing > 0 {
            parts.push(tape.constant(Tensor::row_vec(vec![0.0; missing])));
        }
        let x = tape.concat_cols(&parts);
        let o = self.head.forward(tape, &self.params, binding, x);
        output_stage_params(tape, o, self.cfg.n_antennas, self.cfg.beamformer_mode)
    }
}

pub struct NonAdaptiveEpisode<'p> {
    policy: &'p NonAdaptivePolicy,
    binding: Binding,
    observed: Vec<CPair>,
}

impl StagePolicy for NonAdaptivePolicy {
    fn n_antennas(&self) -> usize {
        self.cfg.n_antennas
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::NonAdaptive
    }

    fn begin_episode<'p>(&'p self, tape: &mut Tape) -> Box<dyn PolicyEpisode + 'p> {
        let binding = Binding::bind(&self.params, tape);
        Box::new(NonAdaptiveEpisode { policy: self, binding, observed: Vec::new() })
    }
}

impl PolicyEpisode for NonAdaptiveEpisode<'_> {
    fn observe(&mut self, _tape: &mut Tape, y: CPair) {
        self.observed.push(y);
    }

    fn emit(&mut self, tape: &mut Tape, role: Role) -> StageParamIds {
        match role {
            Role::PilotTransmit | Role::PilotReceive => self.policy.pilot_stage_params(tape, &self.binding),
            Role::Downlink => self.policy.downlink_padded_nodes(tape, &self.binding, &self.observed),
        }
    }

    fn observed(&self) -> usize {
        self.observed.len()
    }

    fn accumulate_grads(&self, tape: &Tape, accum: &mut super::GradAccum) {
        accum.accumulate(&self.policy.params, &self.binding, tape);
    }
}
