//! Polarization matrices, the beamforming-gain objective, SVD beamformers,
//! and the perfect-CSI polarization optimizer.
//!
//! The perfect-CSI pipeline alternates per-antenna polarization-angle updates
//! (each an exact 1-D maximization on `[0, pi/2]`) with SVD beamformer
//! refreshes, which makes the objective non-decreasing by construction. A
//! grid-exhaustive oracle is provided for small arrays to bound how far the
//! alternating scheme lands from the global optimum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::DepolarizedChannel;
use crate::error::{Error, Result};
use crate::linalg::{cnorm, top_singular_triple, CMat};
use crate::rng;

use std::f64::consts::FRAC_PI_2;

/// Per-antenna polarization angles for one array side, each in `[0, pi/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationConfig {
    angles: Vec<f64>,
}

impl PolarizationConfig {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        for (k, th) in angles.iter().enumerate() {
            if !th.is_finite() || *th < -1e-12 || *th > FRAC_PI_2 + 1e-12 {
                return Err(Error::invalid(format!(
                    "polarization angle {k} = {th} outside [0, pi/2]"
                )));
            }
        }
        Ok(PolarizationConfig { angles })
    }

    pub fn uniform(n: usize, angle: f64) -> Result<Self> {
        PolarizationConfig::new(vec![angle; n])
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Block-diagonal polarization matrix (shape `2N x N`), stored by its angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationMatrix {
    angles: Vec<f64>,
}

impl PolarizationMatrix {
    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Materialize the dense `2N x N` matrix.
    pub fn to_dense(&self) -> CMat {
        let n = self.angles.len();
        let mut m = CMat::zeros(2 * n, n);
        for (k, th) in self.angles.iter().enumerate() {
            m[(2 * k, k)] = Complex64::new(th.cos(), 0.0);
            m[(2 * k + 1, k)] = Complex64::new(th.sin(), 0.0);
        }
        m
    }

    /// `P w`: expand a per-antenna vector onto polarization components.
    pub fn apply(&self, w: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(w.len(), self.angles.len(), "polarization apply shape mismatch");
        let mut out = Vec::with_capacity(2 * w.len());
        for (th, wk) in self.angles.iter().zip(w) {
            out.push(wk * th.cos());
            out.push(wk * th.sin());
        }
        out
    }

    /// `P^T z`: combine polarization components back per antenna.
    pub fn apply_transpose(&self, z: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(z.len(), 2 * self.angles.len(), "polarization apply_transpose shape mismatch");
        self.angles
            .iter()
            .enumerate()
            .map(|(k, th)| z[2 * k] * th.cos() + z[2 * k + 1] * th.sin())
            .collect()
    }
}

/// Build the block-diagonal polarization matrix from validated angles.
pub fn polarization_matrix(config: &PolarizationConfig) -> PolarizationMatrix {
    PolarizationMatrix { angles: config.angles().to_vec() }
}

/// Unit-norm complex beamforming vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beamformer {
    values: Vec<Complex64>,
}

const UNIT_NORM_TOL: f64 = 1e-6;

impl Beamformer {
    /// Wrap an already-normalized vector; rejects clear norm violations.
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("beamformer must not be empty"));
        }
        let norm = cnorm(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("beamformer norm {norm} is not 1")));
        }
        Ok(Beamformer { values })
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(values: Vec<Complex64>) -> Result<Self> {
        let norm = cnorm(&values);
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateInput("cannot normalize a (near-)zero beamformer".into()));
        }
        Ok(Beamformer { values: values.into_iter().map(|z| z / norm).collect() })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `P_rx^T H_dp P_tx`, computed blockwise.
pub fn effective_channel(h_dp: &CMat, p_rx: &PolarizationMatrix, p_tx: &PolarizationMatrix) -> Result<CMat> {
    let (n_rx, n_tx) = (p_rx.n(), p_tx.n());
    if h_dp.rows() != 2 * n_rx || h_dp.cols() != 2 * n_tx {
        return Err(Error::invalid(format!(
            "effective_channel shape mismatch: H is {}x{}, polarization sides are {n_rx}/{n_tx}",
            h_dp.rows(),
            h_dp.cols()
        )));
    }
    let (cr, sr): (Vec<f64>, Vec<f64>) =
        p_rx.angles().iter().map(|t| (t.cos(), t.sin())).unzip();
    let (ct, st): (Vec<f64>, Vec<f64>) =
        p_tx.angles().iter().map(|t| (t.cos(), t.sin())).unzip();
    Ok(CMat::from_fn(n_rx, n_tx, |i, j| {
        cr[i] * (h_dp[(2 * i, 2 * j)] * ct[j] + h_dp[(2 * i, 2 * j + 1)] * st[j])
            + sr[i] * (h_dp[(2 * i + 1, 2 * j)] * ct[j] + h_dp[(2 * i + 1, 2 * j + 1)] * st[j])
    }))
}

/// `|w_rx^H P_rx^T H_dp P_tx w_tx|^2`.
pub fn beamforming_gain(
    h_dp: &CMat,
    angles_tx: &PolarizationConfig,
    angles_rx: &PolarizationConfig,
    w_tx: &Beamformer,
    w_rx: &Beamformer,
) -> Result<f64> {
    if w_tx.len() != angles_tx.len() || w_rx.len() != angles_rx.len() {
        return Err(Error::invalid("beamformer length does not match its angle vector"));
    }
    for (name, w) in [("w_tx", w_tx), ("w_rx", w_rx)] {
        let norm = cnorm(w.values());
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("{name} norm {norm} is not 1")));
        }
    }
    let p_tx = PolarizationMatrix { angles: angles_tx.angles().to_vec() };
    let p_rx = PolarizationMatrix { angles: angles_rx.angles().to_vec() };
    let z_tx = p_tx.apply(w_tx.values());
    if h_dp.cols() != z_tx.len() || h_dp.rows() != 2 * p_rx.n() {
        return Err(Error::invalid("channel dimensions do not match angle vectors"));
    }
    let hz = h_dp.matvec(&z_tx);
    let u = p_rx.apply_transpose(&hz);
    let m: Complex64 = w_rx.values().iter().zip(&u).map(|(w, x)| w.conj() * x).sum();
    Ok(m.norm_sqr())
}

/// SVD beamformers for a fixed effective channel.
#[derive(Debug, Clone)]
pub struct SvdBeamformers {
    pub w_tx: Beamformer,
    pub w_rx: Beamformer,
    pub sigma_max: f64,
    /// Set when the two leading singular values coincide within 1e-9 relative.
    pub degenerate: bool,
}

/// Phase convention: rotate so the first entry with magnitude above 1e-12 is
/// real nonnegative. Keeps checkpointed results reproducible.
fn fix_phase(v: &mut [Complex64]) {
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-12) {
        let ph = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= ph;
        }
    }
}

/// Leading singular pair of `h_eff`: `w_tx` is the right singular vector,
/// `w_rx` the left, so `|w_rx^H H_eff w_tx|^2 = sigma_max^2`.
pub fn svd_beamformers(h_eff: &CMat) -> Result<SvdBeamformers> {
    let t = top_singular_triple(h_eff)?;
    let mut u = t.u;
    let mut v = t.v;
    fix_phase(&mut u);
    fix_phase(&mut v);
    Ok(SvdBeamformers {
        w_tx: Beamformer { values: v },
        w_rx: Beamformer { values: u },
        sigma_max: t.sigma,
        degenerate: t.degenerate,
    })
}

/// Exact maximizer of `|a cos(t) + b sin(t) + c|^2` on `[0, pi/2]`.
///
/// The derivative is a two-harmonic trig polynomial; interior roots are
/// bracketed on a fine scan and bisected, and the closed-form stationary
/// point of the `c`-free part is always included as a candidate.
fn maximize_cos_sin(a: Complex64, b: Complex64, c: Complex64) -> (f64, f64) {
    let aa = a.norm_sqr();
    let bb = b.norm_sqr();
    let d = 2.0 * (a * b.conj()).re;
    let e = 2.0 * (a * c.conj()).re;
    let f_lin = 2.0 * (b * c.conj()).re;
    let cc = c.norm_sqr();
    let f = |t: f64| {
        let (s, co) = t.sin_cos();
        aa * co * co + bb * s * s + d * s * co + e * co + f_lin * s + cc
    };
    let fp = |t: f64| {
        let (s2, c2) = (2.0 * t).sin_cos();
        let (s, co) = t.sin_cos();
        (bb - aa) * s2 + d * c2 - e * s + f_lin * co
    };

    let mut candidates: Vec<f64> = vec![0.0, FRAC_PI_2];
    // Stationary point of the c-free quadratic form, on the [0, pi/2] branch.
    let star = 0.5 * f64::atan2(d, aa - bb);
    for cand in [star, star + FRAC_PI_2, star - FRAC_PI_2] {
        if (0.0..=FRAC_PI_2).contains(&cand) {
            candidates.push(cand);
        }
    }
    const SCAN: usize = 96;
    let mut prev_t = 0.0;
    let mut prev_fp = fp(0.0);
    for k in 1..=SCAN {
        let t = FRAC_PI_2 * k as f64 / SCAN as f64;
        let cur = fp(t);
        if prev_fp == 0.0 {
            candidates.push(prev_t);
        } else if prev_fp * cur < 0.0 {
            let (mut lo, mut hi) = (prev_t, t);
            let mut flo = prev_fp;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = fp(mid);
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            candidates.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_fp = cur;
    }
    candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut best = (0.0, f(0.0));
    for t in candidates {
        let val = f(t);
        if val > best.1 {
            best = (t, val);
        }
    }
    best
}

/// How the alternating optimizer is initialized.
#[derive(Debug, Clone)]
pub enum IpoInit {
    /// Every angle on both sides set to the same value.
    UniformAngle(f64),
    /// Explicit per-side starting angles.
    Given(Vec<f64>, Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct IpoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub init: IpoInit,
    /// Additional random restarts; the best run wins.
    pub extra_starts: usize,
    /// Seed for the random restarts.
    pub restart_seed: u64,
}

impl Default for IpoOptions {
    fn default() -> Self {
        IpoOptions {
            tol: 1e-10,
            max_sweeps: 200,
            init: IpoInit::UniformAngle(std::f64::consts::FRAC_PI_4),
            extra_starts: 2,
            restart_seed: 0x1b0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpoResult {
    pub angles_tx: PolarizationConfig,
    pub angles_rx: PolarizationConfig,
    pub w_tx: Beamformer,
    pub w_rx: Beamformer,
    pub gain: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    /// Objective after the initial SVD and after each sweep (of the winning start).
    pub objective_trace: Vec<f64>,
}

fn ipo_single_start(
    h: &CMat,
    mut th_tx: Vec<f64>,
    mut th_rx: Vec<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<IpoResult> {
    let n_tx = th_tx.len();
    let n_rx = th_rx.len();
    let refresh = |tx: &[f64], rx: &[f64]| -> Result<SvdBeamformers> {
        let p_tx = PolarizationMatrix { angles: tx.to_vec() };
        let p_rx = PolarizationMatrix { angles: rx.to_vec() };
        svd_beamformers(&effective_channel(h, &p_rx, &p_tx)?)
    };
    let mut bf = refresh(&th_tx, &th_rx)?;
    let mut obj = bf.sigma_max * bf.sigma_max;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut sweeps_used = 0;

    for sweep in 0..max_sweeps {
        sweeps_used = sweep + 1;
        // Tx sweep: hold the Rx side and both beamformers, update each Tx angle.
        {
            let p_rx = PolarizationMatrix { angles: th_rx.clone() };
            let z_rx = p_rx.apply(bf.w_rx.values());
            let u = h.adjoint_matvec(&z_rx); // m = u^H z_tx
            let w = bf.w_tx.values();
            let term = |j: usize, th: f64| -> Complex64 {
                (u[2 * j].conj() * th.cos() + u[2 * j + 1].conj() * th.sin()) * w[j]
            };
            let mut m: Complex64 = (0..n_tx).map(|j| term(j, th_tx[j])).sum();
            for j in 0..n_tx {
                let a = u[2 * j].conj() * w[j];
                let b = u[2 * j + 1].conj() * w[j];
                let rest = m - term(j, th_tx[j]);
                let (best_t, best_v) = maximize_cos_sin(a, b, rest);
                let current = (a * th_tx[j].cos() + b * th_tx[j].sin() + rest).norm_sqr();
                if best_v > current {
                    th_tx[j] = best_t;
                }
                m = rest + term(j, th_tx[j]);
            }
        }
        // Rx sweep, symmetric.
        {
            let p_tx = PolarizationMatrix { angles: th_tx.clone() };
            let z_tx = p_tx.apply(bf.w_tx.values());
            let v = h.matvec(&z_tx); // m = z_rx^H v
            let w = bf.w_rx.values();
            let term = |i: usize, th: f64| -> Complex64 {
                w[i].conj() * (v[2 * i] * th.cos() + v[2 * i + 1] * th.sin())
            };
            let mut m: Complex64 = (0..n_rx).map(|i| term(i, th_rx[i])).sum();
            for i in 0..n_rx {
                let a = w[i].conj() * v[2 * i];
                let b = w[i].conj() * v[2 * i + 1];
                let rest = m - term(i, th_rx[i]);
                let (best_t, best_v) = maximize_cos_sin(a, b, rest);
                let current = (a * th_rx[i].cos() + b * th_rx[i].sin() + rest).norm_sqr();
                if best_v > current {
                    th_rx[i] = best_t;
                }
                m = rest + term(i, th_rx[i]);
            }
        }
        bf = refresh(&th_tx, &th_rx)?;
        let new_obj = bf.sigma_max * bf.sigma_max;
        trace.push(new_obj);
        let improvement = new_obj - obj;
        obj = new_obj;
        if improvement.abs() <= tol * obj.max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(IpoResult {
        angles_tx: PolarizationConfig::new(th_tx)?,
        angles_rx: PolarizationConfig::new(th_rx)?,
        w_tx: bf.w_tx,
        w_rx: bf.w_rx,
        gain: obj,
        converged,
        sweeps_used,
        objective_trace: trace,
    })
}

/// Alternating polarization optimization under perfect CSI.
///
/// Returns the best over the configured starts; `converged = false` means the
/// winning start ran out of sweeps and the result is best-so-far.
pub fn ipo_optimize(channel: &DepolarizedChannel, opts: &IpoOptions) -> Result<IpoResult> {
    if opts.tol <= 0.0 {
        return Err(Error::invalid("ipo tolerance must be positive"));
    }
    let h = &channel.matrix;
    let (n_tx, n_rx) = (channel.n_tx(), channel.n_rx());
    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    match &opts.init {
        IpoInit::UniformAngle(a) => starts.push((vec![*a; n_tx], vec![*a; n_rx])),
        IpoInit::Given(tx, rx) => {
            if tx.len() != n_tx || rx.len() != n_rx {
                return Err(Error::invalid("ipo init angles do not match channel dimensions"));
            }
            starts.push((tx.clone(), rx.clone()));
        }
    }
    let mut r = rng::stream(opts.restart_seed, 0x1905);
    for _ in 0..opts.extra_starts {
        use rand::Rng;
        let tx: Vec<f64> = (0..n_tx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect();
        let rx: Vec<f64> = (0..n_rx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect();
        starts.push((tx, rx));
    }
    let mut best: Option<IpoResult> = None;
    for (tx, rx) in starts {
        let run = ipo_single_start(h, tx, rx, opts.tol, opts.max_sweeps)?;
        if best.as_ref().map_or(true, |b| run.gain > b.gain) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

const MAX_BRUTE_FORCE_EVALS: u128 = 20_000_000;

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub angles_tx: PolarizationConfig,
    pub angles_rx: PolarizationConfig,
    pub gain: f64,
    pub evaluations: u64,
}

/// Largest squared singular value of a small effective channel.
fn sigma_max_sqr_small(h: &CMat) -> f64 {
    let (m, n) = (h.rows(), h.cols());
    if m == 1 || n == 1 {
        return h.data().iter().map(|z| z.norm_sqr()).sum();
    }
    if m == 2 && n == 2 {
        // Gram matrix of a 2x2: closed-form top eigenvalue.
        let g00 = h[(0, 0)].norm_sqr() + h[(1, 0)].norm_sqr();
        let g11 = h[(0, 1)].norm_sqr() + h[(1, 1)].norm_sqr();
        let g01 = h[(0, 0)].conj() * h[(0, 1)] + h[(1, 0)].conj() * h[(1, 1)];
        let t = g00 + g11;
        let det = g00 * g11 - g01.norm_sqr();
        return 0.5 * (t + (t * t - 4.0 * det).max(0.0).sqrt());
    }
    let t = top_singular_triple(h).expect("nonzero matrix");
    t.sigma * t.sigma
}

/// Exhaustive search over a uniform angle grid on both sides, with SVD
/// beamformers at every grid point. Practical only for tiny arrays.
pub fn brute_force_polarization_oracle(
    channel: &DepolarizedChannel,
    grid_points: usize,
) -> Result<BruteForceResult> {
    if grid_points < 2 {
        return Err(Error::invalid("grid must have at least 2 points"));
    }
    let (n_tx, n_rx) = (channel.n_tx(), channel.n_rx());
    let total: u128 = (grid_points as u128)
        .checked_pow((n_tx + n_rx) as u32)
        .ok_or_else(|| Error::BudgetExceeded("grid size overflows".into()))?;
    if total > MAX_BRUTE_FORCE_EVALS {
        return Err(Error::BudgetExceeded(format!(
            "{grid_points}^{} = {total} evaluations exceeds the {MAX_BRUTE_FORCE_EVALS} cap",
            n_tx + n_rx
        )));
    }
    let h = &channel.matrix;
    let grid: Vec<f64> =
        (0..grid_points).map(|k| FRAC_PI_2 * k as f64 / (grid_points - 1) as f64).collect();

    // Precompute the per-antenna-pair bilinear forms over the grid:
    // table[i][j][g_rx][g_tx] = p(g_rx)^T H_block(i,j) p(g_tx).
    let (cs, sn): (Vec<f64>, Vec<f64>) = grid.iter().map(|t| (t.cos(), t.sin())).unzip();
    let g = grid_points;
    let mut table = vec![Complex64::ZERO; n_rx * n_tx * g * g];
    for i in 0..n_rx {
        for j in 0..n_tx {
            let b00 = h[(2 * i, 2 * j)];
            let b01 = h[(2 * i, 2 * j + 1)];
            let b10 = h[(2 * i + 1, 2 * j)];
            let b11 = h[(2 * i + 1, 2 * j + 1)];
            for gr in 0..g {
                let (cr, sr) = (cs[gr], sn[gr]);
                let left0 = b00 * cr + b10 * sr;
                let left1 = b01 * cr + b11 * sr;
                for gt in 0..g {
                    table[((i * n_tx + j) * g + gr) * g + gt] = left0 * cs[gt] + left1 * sn[gt];
                }
            }
        }
    }

    let mut idx_rx = vec![0usize; n_rx];
    let mut idx_tx = vec![0usize; n_tx];
    let mut best_gain = -1.0f64;
    let mut best_rx = idx_rx.clone();
    let mut best_tx = idx_tx.clone();
    let mut evaluations = 0u64;
    let mut h_eff = CMat::zeros(n_rx, n_tx);
    loop {
        loop {
            for i in 0..n_rx {
                for j in 0..n_tx {
                    h_eff[(i, j)] = table[((i * n_tx + j) * g + idx_rx[i]) * g + idx_tx[j]];
                }
            }
            evaluations += 1;
            let gain = sigma_max_sqr_small(&h_eff);
            if gain > best_gain {
                best_gain = gain;
                best_rx.copy_from_slice(&idx_rx);
                best_tx.copy_from_slice(&idx_tx);
            }
            // Increment the Tx odometer.
            let mut d = 0;
            loop {
                if d == n_tx {
                    break;
                }
                idx_tx[d] += 1;
                if idx_tx[d] < g {
                    break;
                }
                idx_tx[d] = 0;
                d += 1;
            }
            if d == n_tx {
                break;
            }
        }
        // Increment the Rx odometer.
        let mut d = 0;
        loop {
            if d == n_rx {
                break;
            }
            idx_rx[d] += 1;
            if idx_rx[d] < g {
                break;
            }
            idx_rx[d] = 0;
            d += 1;
        }
        if d == n_rx {
            break;
        }
    }

    Ok(BruteForceResult {
        angles_tx: PolarizationConfig::new(best_tx.iter().map(|&k| grid[k]).collect())?,
        angles_rx: PolarizationConfig::new(best_rx.iter().map(|&k| grid[k]).collect())?,
        gain: best_gain,
        evaluations,
    })
}

/// Exportable record of a perfect-CSI solve, for regression baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRecord {
    pub channel_seed: u64,
    pub angles_tx: Vec<f64>,
    pub angles_rx: Vec<f64>,
    pub gain_db: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, ChannelConfig, PsiMode};
    use crate::oracles;
    use proptest::prelude::*;

    #[test]
    fn polarization_matrix_trivia() {
        let p = polarization_matrix(&PolarizationConfig::new(vec![0.0]).unwrap());
        let d = p.to_dense();
        assert!((d[(0, 0)].re - 1.0).abs() < 1e-15 && d[(1, 0)].norm() < 1e-15);

        let p = polarization_matrix(&PolarizationConfig::new(vec![FRAC_PI_2, 0.0]).unwrap());
        let d = p.to_dense();
        assert!(d[(0, 0)].norm() < 1e-15 && (d[(1, 0)].re - 1.0).abs() < 1e-15);
        assert!((d[(2, 1)].re - 1.0).abs() < 1e-15 && d[(3, 1)].norm() < 1e-15);
        assert!(d[(2, 0)].norm() == 0.0 && d[(0, 1)].norm() == 0.0);

        let p = polarization_matrix(&PolarizationConfig::new(vec![std::f64::consts::FRAC_PI_4]).unwrap());
        let d = p.to_dense();
        let half_sqrt2 = std::f64::consts::SQRT_2 / 2.0;
        assert!((d[(0, 0)].re - half_sqrt2).abs() < 1e-15);
        assert!((d[(1, 0)].re - half_sqrt2).abs() < 1e-15);
    }

    #[test]
    fn polarization_angle_range_enforced() {
        assert!(PolarizationConfig::new(vec![-0.2]).is_err());
        assert!(PolarizationConfig::new(vec![FRAC_PI_2 + 0.2]).is_err());
    }

    proptest! {
        #[test]
        fn polarization_columns_unit_norm(angles in proptest::collection::vec(0.0f64..FRAC_PI_2, 1..6)) {
            let p = polarization_matrix(&PolarizationConfig::new(angles).unwrap());
            let d = p.to_dense();
            for j in 0..d.cols() {
                let norm: f64 = (0..d.rows()).map(|i| d[(i, j)].norm_sqr()).sum();
                prop_assert!((norm - 1.0).abs() < 1e-12);
                let nonzero = (0..d.rows()).filter(|&i| d[(i, j)].norm() > 0.0).count();
                prop_assert!(nonzero <= 2);
            }
        }
    }

    fn identity2_channel() -> CMat {
        CMat::identity(2)
    }

    #[test]
    fn effective_channel_trivia() {
        let h = identity2_channel();
        let zero = polarization_matrix(&PolarizationConfig::new(vec![0.0]).unwrap());
        let ninety = polarization_matrix(&PolarizationConfig::new(vec![FRAC_PI_2]).unwrap());
        let eff = effective_channel(&h, &zero, &zero).unwrap();
        assert!((eff[(0, 0)].re - 1.0).abs() < 1e-15);
        let eff = effective_channel(&h, &ninety, &zero).unwrap();
        assert!(eff[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn effective_channel_matches_naive_oracle() {
        use rand::Rng;
        let mut r = rng::stream(31, 0);
        for _ in 0..20 {
            let n_tx = r.random_range(1..=3usize);
            let n_rx = r.random_range(1..=3usize);
            let ch = sample_channel(&ChannelConfig::new(n_tx, n_rx, 2), r.random()).unwrap();
            let tx: Vec<f64> = (0..n_tx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect();
            let rx: Vec<f64> = (0..n_rx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect();
            let fast = effective_channel(
                &ch.matrix,
                &polarization_matrix(&PolarizationConfig::new(rx.clone()).unwrap()),
                &polarization_matrix(&PolarizationConfig::new(tx.clone()).unwrap()),
            )
            .unwrap();
            let naive = oracles::naive_effective_channel(&ch.matrix, &rx, &tx);
            for (a, b) in fast.data().iter().zip(naive.data()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_channel_dimension_mismatch() {
        let h = identity2_channel();
        let two = polarization_matrix(&PolarizationConfig::new(vec![0.0, 0.0]).unwrap());
        let one = polarization_matrix(&PolarizationConfig::new(vec![0.0]).unwrap());
        assert!(effective_channel(&h, &two, &one).is_err());
    }

    #[test]
    fn gain_trivia() {
        let h = identity2_channel();
        let zero = PolarizationConfig::new(vec![0.0]).unwrap();
        let w = Beamformer::new(vec![Complex64::ONE]).unwrap();
        let gain = beamforming_gain(&h, &zero, &zero, &w, &w).unwrap();
        assert!((gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gain_scales_quadratically() {
        let ch = sample_channel(&ChannelConfig::new(3, 2, 2), 77).unwrap();
        let mut r = rng::stream(78, 0);
        let tx = PolarizationConfig::uniform(3, 0.4).unwrap();
        let rx = PolarizationConfig::uniform(2, 0.9).unwrap();
        let w_tx = Beamformer::normalized(rng::random_unit_complex(&mut r, 3)).unwrap();
        let w_rx = Beamformer::normalized(rng::random_unit_complex(&mut r, 2)).unwrap();
        let g1 = beamforming_gain(&ch.matrix, &tx, &rx, &w_tx, &w_rx).unwrap();
        let scaled = ch.matrix.scale(Complex64::new(0.0, 2.0));
        let g2 = beamforming_gain(&scaled, &tx, &rx, &w_tx, &w_rx).unwrap();
        assert!((g2 - 4.0 * g1).abs() < 1e-9 * g1.max(1.0));
    }

    #[test]
    fn gain_rejects_non_unit_beamformer() {
        let h = identity2_channel();
        let zero = PolarizationConfig::new(vec![0.0]).unwrap();
        let w = Beamformer { values: vec![Complex64::new(2.0, 0.0)] };
        let ok = Beamformer::new(vec![Complex64::ONE]).unwrap();
        assert!(beamforming_gain(&h, &zero, &zero, &w, &ok).is_err());
    }

    #[test]
    fn svd_beamformers_diagonal() {
        let mut h = CMat::zeros(2, 2);
        h[(0, 0)] = Complex64::new(2.0, 0.0);
        h[(1, 1)] = Complex64::new(1.0, 0.0);
        let bf = svd_beamformers(&h).unwrap();
        assert!((bf.sigma_max - 2.0).abs() < 1e-12);
        assert!((bf.w_tx.values()[0].re - 1.0).abs() < 1e-12);
        assert!(bf.w_tx.values()[1].norm() < 1e-12);
        assert!((bf.w_rx.values()[0].re - 1.0).abs() < 1e-12);
        let tx = PolarizationConfig::new(vec![0.0]).unwrap();
        let _ = tx;
    }

    #[test]
    fn svd_beamformers_rank_one() {
        let mut r = rng::stream(80, 0);
        let u = rng::random_unit_complex(&mut r, 3);
        let v = rng::random_unit_complex(&mut r, 2);
        let h = CMat::from_fn(3, 2, |i, j| u[i] * v[j].conj());
        let bf = svd_beamformers(&h).unwrap();
        assert!((bf.sigma_max - 1.0).abs() < 1e-10);
        let align = crate::linalg::cdot(bf.w_tx.values(), &v).norm();
        assert!((align - 1.0).abs() < 1e-10);
        let align_u = crate::linalg::cdot(bf.w_rx.values(), &u).norm();
        assert!((align_u - 1.0).abs() < 1e-10);
    }

    #[test]
    fn svd_phase_convention() {
        let ch = sample_channel(&ChannelConfig::new(4, 3, 2), 5).unwrap();
        let p_tx = polarization_matrix(&PolarizationConfig::uniform(4, 0.7).unwrap());
        let p_rx = polarization_matrix(&PolarizationConfig::uniform(3, 0.2).unwrap());
        let eff = effective_channel(&ch.matrix, &p_rx, &p_tx).unwrap();
        let bf = svd_beamformers(&eff).unwrap();
        for w in [&bf.w_tx, &bf.w_rx] {
            let first = w.values().iter().find(|z| z.norm() > 1e-12).unwrap();
            assert!(first.im.abs() < 1e-12 && first.re >= 0.0);
        }
    }

    #[test]
    fn gain_with_svd_beamformers_equals_sigma_sqr() {
        use rand::Rng;
        let mut r = rng::stream(82, 0);
        for _ in 0..50 {
            let n_tx = r.random_range(1..=5usize);
            let n_rx = r.random_range(1..=5usize);
            let ch = sample_channel(&ChannelConfig::new(n_tx, n_rx, 2), r.random()).unwrap();
            let tx = PolarizationConfig::new((0..n_tx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect()).unwrap();
            let rx = PolarizationConfig::new((0..n_rx).map(|_| r.random_range(0.0..FRAC_PI_2)).collect()).unwrap();
            let eff = effective_channel(
                &ch.matrix,
                &polarization_matrix(&rx),
                &polarization_matrix(&tx),
            )
            .unwrap();
            let bf = svd_beamformers(&eff).unwrap();
            let gain = beamforming_gain(&ch.matrix, &tx, &rx, &bf.w_tx, &bf.w_rx).unwrap();
            let rel = (gain - bf.sigma_max * bf.sigma_max).abs() / (bf.sigma_max * bf.sigma_max);
            assert!(rel < 1e-9, "gain/sigma^2 relative error {rel}");
            // No unit-norm pair can beat sigma_max^2.
            let w_tx = Beamformer::normalized(rng::random_unit_complex(&mut r, n_tx)).unwrap();
            let w_rx = Beamformer::normalized(rng::random_unit_complex(&mut r, n_rx)).unwrap();
            let g = beamforming_gain(&ch.matrix, &tx, &rx, &w_tx, &w_rx).unwrap();
            assert!(g <= bf.sigma_max * bf.sigma_max + 1e-9);
        }
    }

    #[test]
    fn maximize_cos_sin_against_dense_scan() {
        use rand::Rng;
        let mut r = rng::stream(83, 0);
        for _ in 0..200 {
            let a = rng::complex_gaussian(&mut r, 1.0);
            let b = rng::complex_gaussian(&mut r, 1.0);
            let c_var = 2.0 * r.random::<f64>();
            let c = rng::complex_gaussian(&mut r, c_var);
            let (_, best) = maximize_cos_sin(a, b, c);
            let mut scan_best = f64::NEG_INFINITY;
            for k in 0..=4000 {
                let t = FRAC_PI_2 * k as f64 / 4000.0;
                let v = (a * t.cos() + b * t.sin() + c).norm_sqr();
                scan_best = scan_best.max(v);
            }
            assert!(best >= scan_best - 1e-7, "1-D maximizer missed: {best} < {scan_best}");
        }
    }

    #[test]
    fn ipo_objective_nondecreasing() {
        use rand::Rng;
        let mut r = rng::stream(84, 0);
        for _ in 0..100 {
            let n_tx = r.random_range(1..=4usize);
            let n_rx = r.random_range(1..=3usize);
            let p = r.random_range(1..=3usize);
            let ch = sample_channel(&ChannelConfig::new(n_tx, n_rx, p), r.random()).unwrap();
            let opts = IpoOptions { extra_starts: 0, max_sweeps: 60, ..Default::default() };
            let res = ipo_optimize(&ch, &opts).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-12 * w[0].max(1.0),
                    "objective decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn ipo_beats_fixed_quarter_pi() {
        let mut cfg = ChannelConfig::new(1, 1, 1);
        cfg.chi = 0.0;
        cfg.psi_mode = PsiMode::Fixed(0.3);
        let ch = sample_channel(&cfg, 9).unwrap();
        let res = ipo_optimize(&ch, &IpoOptions::default()).unwrap();
        let quarter = std::f64::consts::FRAC_PI_4;
        let tx = PolarizationConfig::uniform(1, quarter).unwrap();
        let rx = PolarizationConfig::uniform(1, quarter).unwrap();
        let eff = effective_channel(&ch.matrix, &polarization_matrix(&rx), &polarization_matrix(&tx)).unwrap();
        let bf = svd_beamformers(&eff).unwrap();
        assert!(res.gain >= bf.sigma_max * bf.sigma_max - 1e-12);
    }

    #[test]
    fn ipo_angles_invariant_under_channel_scaling() {
        let ch = sample_channel(&ChannelConfig::new(3, 2, 2), 123).unwrap();
        let opts = IpoOptions { extra_starts: 0, ..Default::default() };
        let base = ipo_optimize(&ch, &opts).unwrap();
        for c in [Complex64::new(2.0, 0.0), Complex64::new(0.0, -3.0)] {
            let scaled = DepolarizedChannel {
                matrix: ch.matrix.scale(c),
                paths: ch.paths.clone(),
                config: ch.config.clone(),
                seed: ch.seed,
            };
            let res = ipo_optimize(&scaled, &opts).unwrap();
            for (a, b) in base.angles_tx.angles().iter().zip(res.angles_tx.angles()) {
                assert!((a - b).abs() < 1e-6, "tx angle moved under scaling: {a} vs {b}");
            }
            for (a, b) in base.angles_rx.angles().iter().zip(res.angles_rx.angles()) {
                assert!((a - b).abs() < 1e-6, "rx angle moved under scaling: {a} vs {b}");
            }
            let expected = base.gain * c.norm_sqr();
            assert!((res.gain - expected).abs() < 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn brute_force_minimal_grid() {
        let ch = sample_channel(&ChannelConfig::new(1, 1, 1), 55).unwrap();
        let res = brute_force_polarization_oracle(&ch, 2).unwrap();
        assert_eq!(res.evaluations, 4);
        // Manual enumeration of the four corner combinations.
        let mut manual = f64::NEG_INFINITY;
        for &t_tx in &[0.0, FRAC_PI_2] {
            for &t_rx in &[0.0, FRAC_PI_2] {
                let tx = PolarizationConfig::new(vec![t_tx]).unwrap();
                let rx = PolarizationConfig::new(vec![t_rx]).unwrap();
                let eff = effective_channel(&ch.matrix, &polarization_matrix(&rx), &polarization_matrix(&tx)).unwrap();
                if let Ok(bf) = svd_beamformers(&eff) {
                    manual = manual.max(bf.sigma_max * bf.sigma_max);
                }
            }
        }
        assert!((res.gain - manual).abs() < 1e-12 * manual.max(1.0));
    }

    #[test]
    fn brute_force_budget_enforced() {
        let ch = sample_channel(&ChannelConfig::new(2, 2, 1), 56).unwrap();
        assert!(matches!(
            brute_force_polarization_oracle(&ch, 100),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn brute_force_gain_order_invariant() {
        // Evaluating the same grid through a shuffled enumeration must land on
        // the same max gain.
        let ch = sample_channel(&ChannelConfig::new(2, 1, 2), 57).unwrap();
        let res = brute_force_polarization_oracle(&ch, 5).unwrap();
        let grid: Vec<f64> = (0..5).map(|k| FRAC_PI_2 * k as f64 / 4.0).collect();
        let mut shuffled = f64::NEG_INFINITY;
        for &a in grid.iter().rev() {
            for &b in grid.iter().rev() {
                for &c in grid.iter() {
                    let tx = PolarizationConfig::new(vec![a, b]).unwrap();
                    let rx = PolarizationConfig::new(vec![c]).unwrap();
                    let eff =
                        effective_channel(&ch.matrix, &polarization_matrix(&rx), &polarization_matrix(&tx)).unwrap();
                    if let Ok(bf) = svd_beamformers(&eff) {
                        shuffled = shuffled.max(bf.sigma_max * bf.sigma_max);
                    }
                }
            }
        }
        assert!((res.gain - shuffled).abs() < 1e-9 * shuffled.max(1.0));
    }

    #[test]
    fn ipo_near_brute_force_small() {
        use rand::Rng;
        let mut r = rng::stream(85, 0);
        for _ in 0..5 {
            let ch = sample_channel(&ChannelConfig::new(2, 2, 2), r.random()).unwrap();
            let ipo = ipo_optimize(&ch, &IpoOptions::default()).unwrap();
            let oracle = brute_force_polarization_oracle(&ch, 32).unwrap();
            assert!(
                ipo.gain >= 0.995 * oracle.gain,
                "IPO {} vs oracle {}",
                ipo.gain,
                oracle.gain
            );
            // Containment: the oracle over a grid that includes the snapped IPO
            // angles can only do better than the snapped IPO point itself.
            let snap = |th: f64| (th / (FRAC_PI_2 / 31.0)).round() * (FRAC_PI_2 / 31.0);
            let tx = PolarizationConfig::new(ipo.angles_tx.angles().iter().map(|&t| snap(t).min(FRAC_PI_2)).collect()).unwrap();
            let rx = PolarizationConfig::new(ipo.angles_rx.angles().iter().map(|&t| snap(t).min(FRAC_PI_2)).collect()).unwrap();
            let eff = effective_channel(&ch.matrix, &polarization_matrix(&rx), &polarization_matrix(&tx)).unwrap();
            let snapped_gain = svd_beamformers(&eff).map(|b| b.sigma_max * b.sigma_max).unwrap_or(0.0);
            assert!(oracle.gain >= snapped_gain - 1e-9);
        }
    }
}
