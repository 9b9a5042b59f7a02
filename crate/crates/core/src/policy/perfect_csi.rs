//! Fixed-parameter policies: the perfect-CSI reference (IPO + SVD solution
//! held constant through the episode) and arbitrary frozen parameters for
//! protocol tests.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{CPair, Tape, Tensor};
use crate::channel::DepolarizedChannel;
use crate::error::{Error, Result};
use crate::polarization::{ipo_optimize, IpoOptions};
use crate::rng as rng_util;

use super::{PolicyEpisode, PolicyKind, Role, StagePolicy, StageParamIds};

/// Emits the same angles/beamformer for every role at every stage.
pub struct FixedParamsPolicy {
    kind: PolicyKind,
    angles: Vec<f64>,
    w: Vec<Complex64>,
}

impl FixedParamsPolicy {
    pub fn new(kind: PolicyKind, angles: Vec<f64>, w: Vec<Complex64>) -> Result<Self> {
        if angles.len() != w.len() {
            return Err(Error::invalid("angles and beamformer must have equal length"));
        }
        Ok(FixedParamsPolicy { kind, angles, w })
    }

    /// Random frozen parameters: angles uniform on [0, pi/2), unit beamformer.
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let angles = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::FRAC_PI_2)).collect();
        let w = rng_util::random_unit_complex(rng, n);
        FixedParamsPolicy { kind: PolicyKind::Fixed, angles, w }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn beamformer(&self) -> &[Complex64] {
        &self.w
    }
}

/// Both sides' perfect-CSI policies plus the gain they achieve.
pub struct PerfectCsiSolution {
    pub tx: FixedParamsPolicy,
    pub rx: FixedParamsPolicy,
    pub gain: f64,
}

/// Solve one channel with the perfect-CSI pipeline and wrap the solution as
/// stage policies ("cheating" baseline: the pilots are ignored).
pub fn perfect_csi_policies(channel: &DepolarizedChannel, opts: &IpoOptions) -> Result<PerfectCsiSolution> {
    let sol = ipo_optimize(channel, opts)?;
    Ok(PerfectCsiSolution {
        tx: FixedParamsPolicy {
            kind: PolicyKind::PerfectCsi,
            angles: sol.angles_tx.angles().to_vec(),
            w: sol.w_tx.values().to_vec(),
        },
        rx: FixedParamsPolicy {
            kind: PolicyKind::PerfectCsi,
            angles: sol.angles_rx.angles().to_vec(),
            w: sol.w_rx.values().to_vec(),
        },
        gain: sol.gain,
    })
}

struct FixedEpisode<'p> {
    policy: &'p FixedParamsPolicy,
    count: usize,
}

impl StagePolicy for FixedParamsPolicy {
    fn n_antennas(&self) -> usize {
        self.angles.len()
    }

    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn begin_episode<'p>(&'p self, _tape: &mut Tape) -> Box<dyn PolicyEpisode + 'p> {
        Box::new(FixedEpisode { policy: self, count: 0 })
    }
}

impl PolicyEpisode for FixedEpisode<'_> {
    fn observe(&mut self, _tape: &mut Tape, _y: CPair) {
        self.count += 1;
    }

    fn emit(&mut self, tape: &mut Tape, _role: Role) -> StageParamIds {
        let angles = tape.constant(Tensor::row_vec(self.policy.angles.clone()));
        let w_re = tape.constant(Tensor::row_vec(self.policy.w.iter().map(|z| z.re).collect()));
        let w_im = tape.constant(Tensor::row_vec(self.policy.w.iter().map(|z| z.im).collect()));
        StageParamIds { angles, w_re, w_im }
    }

    fn observed(&self) -> usize {
        self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, ChannelConfig};
    use crate::rng;

    #[test]
    fn fixed_policy_emits_its_parameters() {
        let mut r = rng::stream(1, 0);
        let p = FixedParamsPolicy::random(3, &mut r);
        let mut tape = Tape::new(false);
        let mut ep = p.begin_episode(&mut tape);
        let out = ep.emit(&mut tape, Role::Downlink);
        assert_eq!(tape.value(out.angles).data, p.angles);
        let norm: f64 =
            tape.value(out.w_re).data.iter().chain(&tape.value(out.w_im).data).map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_csi_policies_carry_ipo_solution() {
        let ch = sample_channel(&ChannelConfig::new(3, 2, 1), 42).unwrap();
        let sol = perfect_csi_policies(&ch, &IpoOptions::default()).unwrap();
        assert_eq!(sol.tx.n_antennas(), 3);
        assert_eq!(sol.rx.n_antennas(), 2);
        assert!(sol.gain > 0.0);
        assert_eq!(sol.tx.kind().as_str(), "perfect-csi");
    }
}
