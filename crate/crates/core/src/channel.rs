//! Depolarized PR-MIMO channel generation.
//!
//! A channel realization is a sum over propagation paths. Each path couples
//! the transmit and receive uniform linear arrays through a rank-one angular
//! term, a polarization rotation, a depolarization matrix, and per-antenna
//! polarization gain matrices. The assembled matrix has shape
//! `2*n_rx x 2*n_tx`: two polarization components per antenna on each side.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng;

/// How the polarization-coordinate rotation angle is chosen per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsiMode {
    /// Fixed rotation angle in radians.
    Fixed(f64),
    /// Uniform over `[0, pi/2)`, drawn once per channel.
    Uniform,
}

/// Whether path gains are left as `CN(0,1)` or scaled by `1/sqrt(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathGainNorm {
    None,
    DivideBySqrtPaths,
}

/// Sign pattern of the per-antenna polarization gain matrix.
///
/// `Printed` follows the source material literally: the lower-right entry is
/// `-G_X`. That placement is suspicious (one would expect `G_C` for a
/// symmetric gain pattern), so the symmetric alternative is selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AntennaGainForm {
    Printed,
    Symmetric,
}

/// Static description of the channel ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_paths: usize,
    /// Inverse XPD of the depolarization matrix.
    pub chi: f64,
    /// Inverse XPD of the antennas.
    pub chi_ant: f64,
    pub psi_mode: PsiMode,
    pub path_gain_normalization: PathGainNorm,
    pub antenna_gain_form: AntennaGainForm,
}

impl ChannelConfig {
    pub fn new(n_tx: usize, n_rx: usize, n_paths: usize) -> Self {
        ChannelConfig {
            n_tx,
            n_rx,
            n_paths,
            chi: 0.2,
            chi_ant: 0.3,
            psi_mode: PsiMode::Uniform,
            path_gain_normalization: PathGainNorm::None,
            antenna_gain_form: AntennaGainForm::Printed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::invalid("antenna counts must be at least 1"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("path count must be at least 1"));
        }
        if self.chi < 0.0 || !self.chi.is_finite() {
            return Err(Error::invalid(format!("chi must be nonnegative, got {}", self.chi)));
        }
        if self.chi_ant < 0.0 || !self.chi_ant.is_finite() {
            return Err(Error::invalid(format!("chi_ant must be nonnegative, got {}", self.chi_ant)));
        }
        if let PsiMode::Fixed(v) = self.psi_mode {
            if !v.is_finite() {
                return Err(Error::invalid("fixed psi must be finite"));
            }
        }
        Ok(())
    }
}

/// Parameters of one propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Complex path gain.
    pub beta: Complex64,
    /// Angle of arrival at the receive array, radians.
    pub aoa: f64,
    /// Angle of departure from the transmit array, radians.
    pub aod: f64,
    /// Depolarization phases, in `[0, pi)`: HH, HV, VH, VV.
    pub alpha_hh: f64,
    pub alpha_hv: f64,
    pub alpha_vh: f64,
    pub alpha_vv: f64,
    /// Rotation angle between local polarization coordinates.
    pub psi: f64,
}

/// A fully assembled channel realization.
#[derive(Debug, Clone)]
pub struct DepolarizedChannel {
    pub matrix: CMat,
    pub paths: Vec<PathParams>,
    pub config: ChannelConfig,
    /// Seed this realization was sampled from, when it came from `sample_channel`.
    pub seed: Option<u64>,
}

impl DepolarizedChannel {
    pub fn n_tx(&self) -> usize {
        self.config.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.config.n_rx
    }

    /// Conjugate-transposed matrix, i.e. the reverse-link channel under reciprocity.
    pub fn reverse_matrix(&self) -> CMat {
        self.matrix.adjoint()
    }
}

/// ULA steering vector with half-wavelength spacing: entry `k` is
/// `exp(-j*pi*k*sin(phi))`.
pub fn steering_vector(n: usize, phi: f64) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::invalid("steering vector needs at least one antenna"));
    }
    Ok((0..n).map(|k| Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 * phi.sin())).collect())
}

/// 2x2 rotation matrix `[[cos, -sin], [sin, cos]]`.
pub fn rotation_matrix(psi: f64) -> [[f64; 2]; 2] {
    let (s, c) = psi.sin_cos();
    [[c, -s], [s, c]]
}

/// Depolarization matrix with inverse XPD `chi` and phases `[hh, hv, vh, vv]`.
pub fn depolarization_matrix(chi: f64, alphas: [f64; 4]) -> Result<CMat> {
    if chi < 0.0 || !chi.is_finite() {
        return Err(Error::invalid(format!("chi must be nonnegative, got {chi}")));
    }
    let scale = (1.0 / (1.0 + chi)).sqrt();
    let cross = chi.sqrt();
    let mut x = CMat::zeros(2, 2);
    x[(0, 0)] = Complex64::from_polar(scale, alphas[0]);
    x[(0, 1)] = Complex64::from_polar(scale * cross, alphas[1]);
    x[(1, 0)] = Complex64::from_polar(scale * cross, alphas[2]);
    x[(1, 1)] = Complex64::from_polar(scale, alphas[3]);
    Ok(x)
}

/// Single-antenna 2x2 polarization gain matrix.
pub fn antenna_gain_matrix(chi_ant: f64, form: AntennaGainForm) -> [[f64; 2]; 2] {
    let gc = 1.0 / (1.0 + chi_ant);
    let gx = chi_ant / (1.0 + chi_ant);
    match form {
        AntennaGainForm::Printed => [[gc, gx], [gx, -gx]],
        AntennaGainForm::Symmetric => [[gc, gx], [gx, gc]],
    }
}

/// Block-diagonal antenna gain matrix for an `n`-element array (shape `2n x 2n`).
pub fn antenna_gain_blockdiag(n: usize, chi_ant: f64, form: AntennaGainForm) -> Result<CMat> {
    if n == 0 {
        return Err(Error::invalid("antenna gain matrix needs at least one antenna"));
    }
    if chi_ant < 0.0 || !chi_ant.is_finite() {
        return Err(Error::invalid(format!("chi_ant must be nonnegative, got {chi_ant}")));
    }
    let j = antenna_gain_matrix(chi_ant, form);
    let mut m = CMat::zeros(2 * n, 2 * n);
    for k in 0..n {
        for a in 0..2 {
            for b in 0..2 {
                m[(2 * k + a, 2 * k + b)] = Complex64::new(j[a][b], 0.0);
            }
        }
    }
    Ok(m)
}

/// Sample the per-path parameters for one channel realization.
///
/// Draw order (fixed for reproducibility): psi first when `psi_mode` is
/// `Uniform`, then per path beta (re, im), aoa, aod, and the four alphas.
pub fn sample_paths(config: &ChannelConfig, rng: &mut ChaCha8Rng) -> Result<Vec<PathParams>> {
    config.validate()?;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let psi = match config.psi_mode {
        PsiMode::Fixed(v) => v,
        PsiMode::Uniform => rng.random_range(0.0..half_pi),
    };
    let beta_scale = match config.path_gain_normalization {
        PathGainNorm::None => 1.0,
        PathGainNorm::DivideBySqrtPaths => 1.0 / (config.n_paths as f64).sqrt(),
    };
    Ok((0..config.n_paths)
        .map(|_| PathParams {
            beta: rng::complex_gaussian(rng, 1.0) * beta_scale,
            aoa: rng.random_range(-half_pi..=half_pi),
            aod: rng.random_range(-half_pi..=half_pi),
            alpha_hh: rng.random_range(0.0..pi),
            alpha_hv: rng.random_range(0.0..pi),
            alpha_vh: rng.random_range(0.0..pi),
            alpha_vv: rng.random_range(0.0..pi),
            psi,
        })
        .collect())
}

/// Assemble the depolarized channel matrix from path parameters.
pub fn assemble_channel(paths: &[PathParams], config: &ChannelConfig) -> Result<DepolarizedChannel> {
    config.validate()?;
    if paths.is_empty() {
        return Err(Error::invalid("assemble_channel needs at least one path"));
    }
    let (n_tx, n_rx) = (config.n_tx, config.n_rx);
    let j = antenna_gain_matrix(config.chi_ant, config.antenna_gain_form);
    let mut h = CMat::zeros(2 * n_rx, 2 * n_tx);
    for path in paths {
        let q = rotation_matrix(path.psi);
        let x = depolarization_matrix(config.chi, [path.alpha_hh, path.alpha_hv, path.alpha_vh, path.alpha_vv])?;
        // m = Q * X, then b = J_r^T * m * J_t (all 2x2; J is real).
        let mut m = [[Complex64::ZERO; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                m[a][b] = Complex64::new(q[a][0], 0.0) * x[(0, b)] + Complex64::new(q[a][1], 0.0) * x[(1, b)];
            }
        }
        let mut blk = [[Complex64::ZERO; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = Complex64::ZERO;
                for r in 0..2 {
                    for c in 0..2 {
                        acc += j[r][a] * m[r][c] * j[c][b];
                    }
                }
                blk[a][b] = acc;
            }
        }
        let a_r = steering_vector(n_rx, path.aoa)?;
        let a_t = steering_vector(n_tx, path.aod)?;
        for i in 0..n_rx {
            for jj in 0..n_tx {
                let w = path.beta * a_r[i] * a_t[jj];
                for a in 0..2 {
                    for b in 0..2 {
                        h[(2 * i + a, 2 * jj + b)] += w * blk[a][b];
                    }
                }
            }
        }
    }
    if h.rows() != 2 * n_rx || h.cols() != 2 * n_tx {
        return Err(Error::Integrity("assembled channel has wrong dimensions".into()));
    }
    if !h.is_finite() {
        return Err(Error::NumericFault { context: "assemble_channel".into() });
    }
    Ok(DepolarizedChannel { matrix: h, paths: paths.to_vec(), config: config.clone(), seed: None })
}

/// Sample a full channel realization from a seed.
pub fn sample_channel(config: &ChannelConfig, seed: u64) -> Result<DepolarizedChannel> {
    let mut r = rng::stream(seed, rng::tags::CHANNEL);
    let paths = sample_paths(config, &mut r)?;
    let mut ch = assemble_channel(&paths, config)?;
    ch.seed = Some(seed);
    Ok(ch)
}

pub const CORPUS_SCHEMA: &str = "prba.channel-corpus.v1";

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    schema: String,
    config: ChannelConfig,
    base_seed: u64,
    count: usize,
    include_matrix: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    index: usize,
    seed: u64,
    paths: Vec<PathParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<MatrixJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl MatrixJson {
    fn from_cmat(m: &CMat) -> Self {
        MatrixJson {
            rows: m.rows(),
            cols: m.cols(),
            re: m.data().iter().map(|z| z.re).collect(),
            im: m.data().iter().map(|z| z.im).collect(),
        }
    }

    fn to_cmat(&self) -> Result<CMat> {
        if self.re.len() != self.rows * self.cols || self.im.len() != self.rows * self.cols {
            return Err(Error::Integrity("matrix data length does not match declared shape".into()));
        }
        let mut m = CMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = i * self.cols + j;
                m[(i, j)] = Complex64::new(self.re[k], self.im[k]);
            }
        }
        Ok(m)
    }
}

/// Write a corpus of channel realizations as JSON lines: a schema-tagged
/// header, then one record per channel.
pub fn write_channel_corpus(
    w: &mut impl Write,
    config: &ChannelConfig,
    base_seed: u64,
    count: usize,
    include_matrix: bool,
) -> Result<()> {
    config.validate()?;
    let header = CorpusHeader {
        schema: CORPUS_SCHEMA.to_string(),
        config: config.clone(),
        base_seed,
        count,
        include_matrix,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for index in 0..count {
        let seed = rng::derive_seed(base_seed, index as u64);
        let ch = sample_channel(config, seed)?;
        let rec = CorpusRecord {
            index,
            seed,
            paths: ch.paths.clone(),
            matrix: include_matrix.then(|| MatrixJson::from_cmat(&ch.matrix)),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read back a channel corpus, re-assembling matrices from the stored paths
/// and verifying any stored matrices against the re-assembly.
pub fn read_channel_corpus(r: &mut impl BufRead) -> Result<Vec<DepolarizedChannel>> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Integrity("empty corpus file".into()))??;
    let header: CorpusHeader = serde_json::from_str(&header_line)?;
    if header.schema != CORPUS_SCHEMA {
        return Err(Error::UnsupportedVersion { found: header.schema, expected: CORPUS_SCHEMA.into() });
    }
    let mut out = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)?;
        let mut ch = assemble_channel(&rec.paths, &header.config)?;
        ch.seed = Some(rec.seed);
        if let Some(stored) = &rec.matrix {
            let stored = stored.to_cmat()?;
            if stored.rows() != ch.matrix.rows() || stored.cols() != ch.matrix.cols() {
                return Err(Error::Integrity(format!("record {}: stored matrix shape mismatch", rec.index)));
            }
        }
        out.push(ch);
    }
    if out.len() != header.count {
        return Err(Error::Integrity(format!(
            "corpus declares {} records but contains {}",
            header.count,
            out.len()
        )));
    }
    Ok(out)
}
