//! Closed-form induced regularizers on the end-to-end matrix and the
//! factorizations that attain them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, pinv, psd_sqrt, random_orthonormal, singular_values, svd, Mat};
use crate::measurements::MeasurementSet;
use crate::network::{end_to_end, reg_r, trace_hessian, DeepNet};
use crate::rng::seeded;

/// Relative Frobenius error allowed between `E(net)` and the target.
const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FactorizationResult {
    pub net: DeepNet,
    /// Objective evaluated on `net`.
    pub achieved_value: f64,
    /// Closed-form value of the induced regularizer at the target.
    pub formula_value: f64,
}

fn check_depth(depth: usize) -> Result<()> {
    if depth < 2 {
        return Err(Error::Domain(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    Ok(())
}

fn check_dims(m: &Mat, dims: &[usize]) -> Result<usize> {
    let depth = dims.len().saturating_sub(1);
    check_depth(depth)?;
    if (dims[depth], dims[0]) != m.shape() {
        return Err(Error::Shape {
            expected: format!("{}x{} target", dims[depth], dims[0]),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(depth)
}

fn relative_error(e: &Mat, m: &Mat) -> f64 {
    (e - m).frobenius() / m.frobenius().max(f64::MIN_POSITIVE)
}

/// Minimum of `R(W)` over `E(W) = m`:
/// `L (d_0 d_L)^{1/L} ||m||_*^{2(L-1)/L}`.
pub fn induced_f_prime(m: &Mat, depth: usize, d_in: usize, d_out: usize) -> Result<f64> {
    check_depth(depth)?;
    let l = depth as f64;
    let nuc = nuclear_norm(m)?;
    Ok(l * ((d_in * d_out) as f64).powf(1.0 / l) * nuc.powf(2.0 * (l - 1.0) / l))
}

/// Builds a network with `E(W) = m` whose `R(W)` equals [`induced_f_prime`].
///
/// With `m = U Λ Vᵀ` (rank `k`) and orthonormal frames `Q_i` (`d_i x k`):
/// `W_L = a' a^{-(L-2)/2} U Λ^{1/2} Q_{L-1}ᵀ`, `W_i = a Q_i Q_{i-1}ᵀ`,
/// `W_1 = a'^{-1} a^{-(L-2)/2} Q_1 Λ^{1/2} Vᵀ`, where
/// `a' = (d_L/d_0)^{1/4}` and `a = (||m||_* / sqrt(d_0 d_L))^{1/L}` make every
/// AM-GM term of `R` equal.
pub fn factorize_min_r(m: &Mat, dims: &[usize], seed: u64) -> Result<FactorizationResult> {
    let depth = check_dims(m, dims)?;
    let (d_in, d_out) = (dims[0], dims[depth]);
    let formula_value = induced_f_prime(m, depth, d_in, d_out)?;

    let s = svd(m)?;
    let k = s.rank();
    if k == 0 {
        let net = DeepNet::zeros(dims)?;
        return Ok(FactorizationResult {
            achieved_value: reg_r(&net),
            net,
            formula_value,
        });
    }
    if let Some((j, &d)) = dims[1..depth].iter().enumerate().find(|(_, &d)| d < k) {
        return Err(Error::Infeasible(format!(
            "hidden width d_{} = {d} is below rank {k}",
            j + 1
        )));
    }

    let nuc: f64 = s.sigma[..k].iter().sum();
    let l = depth as f64;
    let outer = ((d_out as f64) / (d_in as f64)).powf(0.25);
    let alpha = (nuc / ((d_in * d_out) as f64).sqrt()).powf(1.0 / l);
    let edge = alpha.powf(-(l - 2.0) / 2.0);

    let root: Vec<f64> = s.sigma[..k].iter().map(|x| x.sqrt()).collect();
    let u_root = scale_cols(&s.u.leading_cols(k), &root);
    let root_vt = scale_rows(&s.vt.leading_rows(k), &root);

    let mut rng = seeded(seed, 3);
    let frames = dims[1..depth]
        .iter()
        .map(|&d| random_orthonormal(d, k, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::with_capacity(depth);
    layers.push(frames[0].matmul(&root_vt).scale(edge / outer));
    for pair in frames.windows(2) {
        layers.push(pair[1].matmul_t(&pair[0]).scale(alpha));
    }
    layers.push(u_root.matmul_t(&frames[depth - 2]).scale(outer * edge));
    let net = DeepNet::new(layers)?;

    let rel = relative_error(&end_to_end(&net), m);
    if rel > RECONSTRUCTION_TOL {
        return Err(Error::Numerical(format!(
            "factorization reconstructs target with relative error {rel:e}"
        )));
    }
    Ok(FactorizationResult {
        achieved_value: reg_r(&net),
        net,
        formula_value,
    })
}

fn scale_cols(m: &Mat, s: &[f64]) -> Mat {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * s[j])
}

fn scale_rows(m: &Mat, s: &[f64]) -> Mat {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * s[i])
}

/// `(B_1, B_2) = (((1/n) sum A_i A_iᵀ)^{1/2}, ((1/n) sum A_iᵀ A_i)^{1/2})`.
pub fn gram_roots(ms: &MeasurementSet) -> Result<(Mat, Mat)> {
    let n = ms.len() as f64;
    let mut left = Mat::zeros(ms.d_out(), ms.d_out());
    let mut right = Mat::zeros(ms.d_in(), ms.d_in());
    for a in ms.mats() {
        left.axpy(1.0 / n, &a.matmul_t(a));
        right.axpy(1.0 / n, &a.t_matmul(a));
    }
    Ok((psd_sqrt(&left)?, psd_sqrt(&right)?))
}

/// Depth-2 induced regularizer `2 ||B_1 m B_2||_*`.
pub fn induced_f_depth2(m: &Mat, ms: &MeasurementSet) -> Result<f64> {
    if m.shape() != (ms.d_out(), ms.d_in()) {
        return Err(Error::Shape {
            expected: format!("{}x{} target", ms.d_out(), ms.d_in()),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let (b1, b2) = gram_roots(ms)?;
    Ok(2.0 * nuclear_norm(&b1.matmul(m).matmul(&b2))?)
}

/// Depth-2 network minimising `paper_trace` over `W_2 W_1 = m`:
/// `W_2 = B_1^+ U Λ^{1/2}`, `W_1 = Λ^{1/2} Vᵀ B_2^+` from the SVD of
/// `B_1 m B_2`, zero-padded to the hidden width.
///
/// Pseudoinverses cover singular Gram roots; the result is rejected with
/// [`Error::Range`] when it no longer reproduces `m`.
pub fn factorize_min_trace_depth2(
    m: &Mat,
    ms: &MeasurementSet,
    dims: &[usize],
) -> Result<FactorizationResult> {
    if dims.len() != 3 {
        return Err(Error::Domain(format!(
            "depth-2 factorization needs 3 dims, got {}",
            dims.len()
        )));
    }
    check_dims(m, dims)?;
    let formula_value = induced_f_depth2(m, ms)?;
    let (b1, b2) = gram_roots(ms)?;
    let s = svd(&b1.matmul(m).matmul(&b2))?;
    let k = s.rank();
    let hidden = dims[1];
    if hidden < k {
        return Err(Error::Infeasible(format!(
            "hidden width {hidden} is below rank {k} of B1 M B2"
        )));
    }
    let root: Vec<f64> = s.sigma[..k].iter().map(|x| x.sqrt()).collect();
    let w2 = pinv(&b1)?.matmul(&scale_cols(&s.u.leading_cols(k), &root));
    let w1 = scale_rows(&s.vt.leading_rows(k), &root).matmul(&pinv(&b2)?);
    let net = DeepNet::new(vec![
        w1.resized(hidden, dims[0]),
        w2.resized(dims[2], hidden),
    ])?;

    let e = end_to_end(&net);
    let err = (&e - m).frobenius();
    if err > RECONSTRUCTION_TOL * m.frobenius().max(1e-300) && err > 0.0 {
        return Err(Error::Range {
            rel_err: relative_error(&e, m),
        });
    }
    Ok(FactorizationResult {
        achieved_value: trace_hessian(&net, ms)?.paper_trace,
        net,
        formula_value,
    })
}

/// Single-measurement induced regularizer
/// `L ||(Aᵀ m)^{L-1} Aᵀ||_{S_{2/L}}^{2/L}`.
pub fn induced_f_single(a: &Mat, m: &Mat, depth: usize) -> Result<f64> {
    check_depth(depth)?;
    if a.shape() != m.shape() {
        return Err(Error::Shape {
            expected: format!("{}x{}", a.rows(), a.cols()),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let at = a.transpose();
    let core = at.matmul(m).pow(depth as u32 - 1).matmul(&at);
    let p = 2.0 / depth as f64;
    let sum: f64 = singular_values(&core)?.iter().map(|s| s.powf(p)).sum();
    Ok(depth as f64 * sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub ok: bool,
}

/// `(1 - delta) reference <= value <= (1 + delta) reference`.
pub fn sandwich(value: f64, reference: f64, delta: f64) -> SandwichCheck {
    let lower = (1.0 - delta) * reference;
    let upper = (1.0 + delta) * reference;
    SandwichCheck {
        lower,
        value,
        upper,
        ok: lower <= value && value <= upper,
    }
}
