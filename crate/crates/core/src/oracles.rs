//! Independent reference implementations used by the test suites.
//!
//! Everything here recomputes a quantity through a deliberately different
//! route than the production code (dense materialization, literal loops),
//! so the two can be compared entrywise. Nothing in this module is used by
//! the production paths.

use num_complex::Complex64;

use crate::channel::{
    antenna_gain_blockdiag, depolarization_matrix, rotation_matrix, steering_vector, ChannelConfig,
    PathParams,
};
use crate::linalg::CMat;

fn naive_matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.cols(), b.rows());
    let mut out = CMat::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = Complex64::ZERO;
            for k in 0..a.cols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

fn naive_transpose(a: &CMat) -> CMat {
    CMat::from_fn(a.cols(), a.rows(), |i, j| a[(j, i)])
}

/// Channel assembly by dense materialization of every factor:
/// `sum_p Jr^T ((beta_p a_r a_t^T) kron (Q X_p)) Jt`.
pub fn naive_assemble_channel(paths: &[PathParams], config: &ChannelConfig) -> CMat {
    let (n_tx, n_rx) = (config.n_tx, config.n_rx);
    let jt = antenna_gain_blockdiag(n_tx, config.chi_ant, config.antenna_gain_form).unwrap();
    let jr = antenna_gain_blockdiag(n_rx, config.chi_ant, config.antenna_gain_form).unwrap();
    let jr_t = naive_transpose(&jr);
    let mut h = CMat::zeros(2 * n_rx, 2 * n_tx);
    for p in paths {
        let q = rotation_matrix(p.psi);
        let x = depolarization_matrix(config.chi, [p.alpha_hh, p.alpha_hv, p.alpha_vh, p.alpha_vv]).unwrap();
        let qm = CMat::from_fn(2, 2, |i, j| Complex64::new(q[i][j], 0.0));
        let qx = naive_matmul(&qm, &x);
        let a_r = steering_vector(n_rx, p.aoa).unwrap();
        let a_t = steering_vector(n_tx, p.aod).unwrap();
        // Outer product, then Kronecker with qx.
        let mut kron = CMat::zeros(2 * n_rx, 2 * n_tx);
        for i in 0..n_rx {
            for j in 0..n_tx {
                let w = p.beta * a_r[i] * a_t[j];
                for a in 0..2 {
                    for b in 0..2 {
                        kron[(2 * i + a, 2 * j + b)] = w * qx[(a, b)];
                    }
                }
            }
        }
        let term = naive_matmul(&naive_matmul(&jr_t, &kron), &jt);
        for i in 0..2 * n_rx {
            for j in 0..2 * n_tx {
                h[(i, j)] += term[(i, j)];
            }
        }
    }
    h
}

/// Effective channel by dense polarization matrices and literal triple loops.
pub fn naive_effective_channel(h_dp: &CMat, angles_rx: &[f64], angles_tx: &[f64]) -> CMat {
    let n_rx = angles_rx.len();
    let n_tx = angles_tx.len();
    assert_eq!(h_dp.rows(), 2 * n_rx);
    assert_eq!(h_dp.cols(), 2 * n_tx);
    let dense_p = |angles: &[f64]| {
        let n = angles.len();
        let mut p = CMat::zeros(2 * n, n);
        for (k, th) in angles.iter().enumerate() {
            p[(2 * k, k)] = Complex64::new(th.cos(), 0.0);
            p[(2 * k + 1, k)] = Complex64::new(th.sin(), 0.0);
        }
        p
    };
    let p_rx = dense_p(angles_rx);
    let p_tx = dense_p(angles_tx);
    let prx_t = naive_transpose(&p_rx);
    naive_matmul(&naive_matmul(&prx_t, h_dp), &p_tx)
}

/// Entrywise expansion of the net array response, one antenna at a time.
///
/// Row `k` of the net response is the steering phase (conjugated, so that a
/// channel-matched beamformer peaks at its matched direction) times the
/// 2-vector `J p_k`.
pub fn naive_array_net_response(
    angles: &[f64],
    chi_ant: f64,
    form: crate::channel::AntennaGainForm,
    theta: f64,
) -> Vec<[Complex64; 2]> {
    let j = crate::channel::antenna_gain_matrix(chi_ant, form);
    let a = steering_vector(angles.len(), theta).unwrap();
    angles
        .iter()
        .enumerate()
        .map(|(k, th)| {
            let p = [th.cos(), th.sin()];
            let jp = [j[0][0] * p[0] + j[0][1] * p[1], j[1][0] * p[0] + j[1][1] * p[1]];
            [a[k].conj() * jp[0], a[k].conj() * jp[1]]
        })
        .collect()
}
