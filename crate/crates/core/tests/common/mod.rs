//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the code paths it is used to check: Hessian
//! traces come from finite differences of the loss, regularizer values from
//! explicit partial products, and minima from a generic quasi-Newton solver.

#![allow(dead_code)]

use dlms_core::linalg::Mat;
use dlms_core::measurements::MeasurementSet;
use dlms_core::network::DeepNet;
use rand::Rng;

/// Mean squared residual computed from scratch (no shared helpers).
pub fn loss_direct(layers: &[Mat], ms: &MeasurementSet) -> f64 {
    let e = product(layers.iter().rev());
    let n = ms.len() as f64;
    ms.mats()
        .iter()
        .zip(ms.labels())
        .map(|(a, b)| {
            let mut s = 0.0;
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    s += a[(i, j)] * e[(i, j)];
                }
            }
            (s - b).powi(2)
        })
        .sum::<f64>()
        / n
}

/// Ordered product of the given factors, left to right.
pub fn product<'a>(mut factors: impl Iterator<Item = &'a Mat>) -> Mat {
    let first = factors.next().expect("at least one factor").clone();
    factors.fold(first, |acc, f| acc.matmul(f))
}

/// Trace of the full finite-difference Hessian of the loss (every second
/// partial is formed; the trace reads the diagonal).
pub fn fd_hessian_trace(net: &DeepNet, ms: &MeasurementSet, h: f64) -> f64 {
    let base = net.params();
    let p = base.len();
    let mut scratch = net.clone();
    let mut eval = |x: &[f64]| {
        scratch.set_params(x);
        loss_direct(scratch.layers(), ms)
    };
    let f0 = eval(&base);
    let mut hess = vec![vec![0.0; p]; p];
    let mut x = base.clone();
    for i in 0..p {
        for j in i..p {
            let value = if i == j {
                x[i] = base[i] + h;
                let fp = eval(&x);
                x[i] = base[i] - h;
                let fm = eval(&x);
                x[i] = base[i];
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let mut corner = |si: f64, sj: f64| {
                    x[i] = base[i] + si * h;
                    x[j] = base[j] + sj * h;
                    let v = eval(&x);
                    x[i] = base[i];
                    x[j] = base[j];
                    v
                };
                let (pp, pm, mp, mm) = (
                    corner(1.0, 1.0),
                    corner(1.0, -1.0),
                    corner(-1.0, 1.0),
                    corner(-1.0, -1.0),
                );
                (pp - pm - mp + mm) / (4.0 * h * h)
            };
            hess[i][j] = value;
            hess[j][i] = value;
        }
    }
    (0..p).map(|i| hess[i][i]).sum()
}

/// `R(W)` from explicit partial products with identity boundaries.
pub fn reg_r_direct(layers: &[Mat]) -> f64 {
    let depth = layers.len();
    let d_in = layers[0].cols() as f64;
    let d_out = layers[depth - 1].rows() as f64;
    let mut total = 0.0;
    for j in 0..depth {
        let left = if j == 0 {
            d_in
        } else {
            product(layers[..j].iter().rev()).frobenius_sq()
        };
        let right = if j == depth - 1 {
            d_out
        } else {
            product(layers[j + 1..].iter().rev()).frobenius_sq()
        };
        total += left * right;
    }
    total
}

/// `sum_j ||W_{j-1}..W_1 Aᵀ W_L..W_{j+1}||_F^2` for a single measurement,
/// with its gradient with respect to every layer.
pub fn single_trace_and_grad(layers: &[Mat], a_t: &Mat) -> (f64, Vec<Mat>) {
    let depth = layers.len();
    let mut value = 0.0;
    let mut grads: Vec<Mat> = layers
        .iter()
        .map(|w| Mat::zeros(w.rows(), w.cols()))
        .collect();
    for j in 0..depth {
        // Chain: W_{j-1} .. W_1 (as layer indices j-1..0), Aᵀ, W_L .. W_{j+1}.
        let mut chain: Vec<(Option<usize>, &Mat)> = Vec::new();
        for k in (0..j).rev() {
            chain.push((Some(k), &layers[k]));
        }
        chain.push((None, a_t));
        for k in (j + 1..depth).rev() {
            chain.push((Some(k), &layers[k]));
        }
        let (v, g) = chain_norm_sq_grad(&chain);
        value += v;
        for (slot, grad) in chain.iter().zip(g) {
            if let Some(k) = slot.0 {
                grads[k].axpy(1.0, &grad);
            }
        }
    }
    (value, grads)
}

/// `||X_1 X_2 .. X_k||_F^2` and its gradient with respect to each factor,
/// `2 (X_1..X_{t-1})ᵀ C (X_{t+1}..X_k)ᵀ`.
pub fn chain_norm_sq_grad(chain: &[(Option<usize>, &Mat)]) -> (f64, Vec<Mat>) {
    let k = chain.len();
    let mut prefix = vec![Mat::identity(chain[0].1.rows())];
    for (_, f) in chain {
        let next = prefix.last().unwrap().matmul(f);
        prefix.push(next);
    }
    let mut suffix = vec![Mat::identity(chain[k - 1].1.cols()); k + 1];
    for t in (0..k).rev() {
        suffix[t] = chain[t].1.matmul(&suffix[t + 1]);
    }
    let c = &prefix[k];
    let grads = (0..k)
        .map(|t| {
            prefix[t]
                .transpose()
                .matmul(c)
                .matmul(&suffix[t + 1].transpose())
                .scale(2.0)
        })
        .collect();
    (c.frobenius_sq(), grads)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(m: &Mat) -> Option<Mat> {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Mat::identity(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))?;
        if a[(pivot, col)].abs() < 1e-14 {
            return None;
        }
        for j in 0..n {
            let (x, y) = (a[(col, j)], a[(pivot, j)]);
            a[(col, j)] = y;
            a[(pivot, j)] = x;
            let (x, y) = (inv[(col, j)], inv[(pivot, j)]);
            inv[(col, j)] = y;
            inv[(pivot, j)] = x;
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(i, j)] -= f * a[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Random invertible `d x d` matrix near the identity.
pub fn random_gauge<R: Rng>(d: usize, spread: f64, rng: &mut R) -> Mat {
    loop {
        let g = &Mat::identity(d) + &Mat::gaussian(d, d, spread, rng);
        if inverse(&g).is_some() {
            return g;
        }
    }
}

/// A factorization of `m` over `dims` that is not tuned to any regularizer:
/// a balanced split `Q_j Σ^{1/L} Q_{j-1}ᵀ` followed by random invertible
/// gauges `W_j <- G_j W_j G_{j-1}^{-1}` on the hidden layers and random
/// positive layer scalings with unit product.
pub fn random_factorization<R: Rng>(m: &Mat, dims: &[usize], rng: &mut R) -> Vec<Mat> {
    let depth = dims.len() - 1;
    let s = dlms_core::linalg::svd(m).unwrap();
    let k = s.rank();
    let root: Vec<f64> = s.sigma[..k]
        .iter()
        .map(|x| x.powf(1.0 / depth as f64))
        .collect();
    let diag = Mat::diag(&root);
    let mut frames = vec![s.vt.leading_rows(k).transpose()];
    for &d in &dims[1..depth] {
        frames.push(dlms_core::linalg::random_orthonormal(d, k, rng).unwrap());
    }
    frames.push(s.u.leading_cols(k));
    let mut layers: Vec<Mat> = (1..=depth)
        .map(|j| frames[j].matmul(&diag).matmul_t(&frames[j - 1]))
        .collect();

    let gauges: Vec<Mat> = dims[1..depth]
        .iter()
        .map(|&d| random_gauge(d, 0.4, rng))
        .collect();
    for j in 0..depth {
        if j < depth - 1 {
            layers[j] = gauges[j].matmul(&layers[j]);
        }
        if j > 0 {
            layers[j] = layers[j].matmul(&inverse(&gauges[j - 1]).unwrap());
        }
    }
    let logs: Vec<f64> = (0..depth).map(|_| rng.random_range(-0.7..0.7)).collect();
    let mean = logs.iter().sum::<f64>() / depth as f64;
    for (w, l) in layers.iter_mut().zip(&logs) {
        *w = w.scale((l - mean).exp());
    }
    layers
}

pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Limited-memory BFGS with Armijo backtracking.
pub fn lbfgs(
    f: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    max_iter: usize,
    gtol: f64,
) -> LbfgsOutcome {
    const MEMORY: usize = 10;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut iterations = 0;
    let mut stall = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < gtol {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if (fx - f_new).abs() <= 1e-15 * fx.abs().max(1e-300) {
            stall += 1;
            if stall > 20 {
                x = x_new;
                fx = f_new;
                break;
            }
        } else {
            stall = 0;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    LbfgsOutcome {
        x,
        value: fx,
        iterations,
    }
}

/// Splits a flat parameter vector into matrices of the given shapes.
pub fn unflatten(x: &[f64], shapes: &[(usize, usize)]) -> Vec<Mat> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Mat::from_vec(r, c, x[offset..offset + r * c].to_vec()).unwrap();
            offset += r * c;
            m
        })
        .collect()
}

pub fn flatten(ms: &[Mat]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Minimum of the single-measurement trace over `W_L..W_1 = m`, found by a
/// quadratic-penalty continuation `mu = 1e3, 1e4, .., 1e8` with restarts, each
/// started from an exact random factorization of `m`.
/// Returns the best constraint-respecting trace found.
pub fn penalty_min_single_trace<R: Rng>(
    a: &Mat,
    m: &Mat,
    dims: &[usize],
    restarts: usize,
    rng: &mut R,
) -> f64 {
    let a_t = a.transpose();
    let shapes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[1], w[0])).collect();
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let init = random_factorization(m, dims, rng);
        let mut x = flatten(&init);
        let mut mu = 1e3;
        while mu <= 1e8 * 1.000001 {
            let mut objective = |p: &[f64]| {
                let layers = unflatten(p, &shapes);
                let (trace, mut grads) = single_trace_and_grad(&layers, &a_t);
                // Penalty mu ||E - m||^2 and its layer gradients.
                let depth = layers.len();
                let e = product(layers.iter().rev());
                let diff = &e - m;
                for j in 0..depth {
                    let left = if j == 0 {
                        Mat::identity(layers[0].cols())
                    } else {
                        product(layers[..j].iter().rev())
                    };
                    let right = if j == depth - 1 {
                        Mat::identity(layers[depth - 1].rows())
                    } else {
                        product(layers[j + 1..].iter().rev())
                    };
                    let g = right.t_matmul(&diff).matmul_t(&left).scale(2.0 * mu);
                    grads[j].axpy(1.0, &g);
                }
                (trace + mu * diff.frobenius_sq(), flatten(&grads))
            };
            x = lbfgs(&mut objective, &x, 3000, 1e-10).x;
            mu *= 10.0;
        }
        let layers = unflatten(&x, &shapes);
        let e = product(layers.iter().rev());
        let rel = (&e - m).frobenius() / m.frobenius();
        if rel < 1e-4 {
            let (trace, _) = single_trace_and_grad(&layers, &a_t);
            best = best.min(trace);
        }
    }
    best
}

/// Minimum over `W_2 W_1 = m` (square invertible `W_1`) of
/// `(1/n) sum ||A_iᵀ W_2||^2 + ||W_1 A_iᵀ||^2`, eliminating `W_2 = m W_1^{-1}`.
pub fn eliminated_depth2_min<R: Rng>(
    m: &Mat,
    ms: &MeasurementSet,
    restarts: usize,
    rng: &mut R,
) -> f64 {
    let n = ms.len() as f64;
    let d = m.cols();
    assert_eq!(m.rows(), d, "square target expected");
    let mut left = Mat::zeros(d, d);
    let mut right = Mat::zeros(d, d);
    for a in ms.mats() {
        left.axpy(1.0 / n, &a.matmul(&a.transpose()));
        right.axpy(1.0 / n, &a.transpose().matmul(a));
    }
    let k = m.transpose().matmul(&left).matmul(m);
    let mut objective = |p: &[f64]| {
        let w1 = Mat::from_vec(d, d, p.to_vec()).unwrap();
        let Some(x) = inverse(&w1) else {
            return (f64::INFINITY, vec![0.0; d * d]);
        };
        let kx = k.matmul(&x);
        let first = x.transpose().matmul(&kx).trace();
        let second = w1.matmul(&right).matmul(&w1.transpose()).trace();
        let g1 = x.transpose().matmul(&kx).matmul(&x.transpose()).scale(-2.0);
        let g2 = w1.matmul(&right).scale(2.0);
        (first + second, (&g1 + &g2).into_data())
    };
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let x0 = Mat::gaussian(d, d, 1.0, rng).into_data();
        let out = lbfgs(&mut objective, &x0, 5000, 1e-11);
        best = best.min(out.value);
    }
    best
}
