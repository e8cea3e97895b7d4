//! Deep linear networks `E(W) = W_L ... W_1` trained on linear measurements.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::measurements::{read_array, read_f64s, read_u64, write_f64s, MeasurementSet};

const MAGIC: &[u8; 8] = b"DLMSNET\0";
const FORMAT_VERSION: u32 = 1;

/// Layers `W_1..W_L`, `W_j` of shape `d_j x d_{j-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepNet {
    layers: Vec<Mat>,
}

impl DeepNet {
    /// Requires at least two layers with chaining shapes.
    pub fn new(layers: Vec<Mat>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Domain(format!(
                "a deep network needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::Shape {
                    expected: format!("layer {} with {} columns", j + 2, pair[0].rows()),
                    got: format!("{}x{}", pair[1].rows(), pair[1].cols()),
                });
            }
        }
        Ok(DeepNet { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        DeepNet::new(dims.windows(2).map(|w| Mat::zeros(w[1], w[0])).collect())
    }

    /// `d_0..d_L`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].cols())
            .chain(self.layers.iter().map(Mat::rows))
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Every hidden width is at least `min(d_0, d_L)`, so any
    /// `d_L x d_0` matrix is representable.
    pub fn is_expressive(&self) -> bool {
        let floor = self.d_in().min(self.d_out());
        let dims = self.dims();
        dims[1..dims.len() - 1].iter().all(|&d| d >= floor)
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    /// Mutable access for in-place updates; shapes must be preserved.
    pub fn layers_mut(&mut self) -> &mut [Mat] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|w| w.data().len()).sum()
    }

    /// All entries, layer by layer, row-major.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|w| w.data().iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter count mismatch");
        let mut offset = 0;
        for w in &mut self.layers {
            let len = w.data().len();
            w.data_mut().copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Mat::is_finite)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let dims = self.dims();
        w.write_all(&(self.depth() as u64).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for layer in &self.layers {
            write_f64s(&mut w, layer.data())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let depth = read_u64(&mut r)? as usize;
        let dims = (0..=depth)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let layers = dims
            .windows(2)
            .map(|w| Mat::from_vec(w[1], w[0], read_f64s(&mut r, w[0] * w[1])?))
            .collect::<Result<Vec<_>>>()?;
        DeepNet::new(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DeepNet::read_from(BufReader::new(File::open(path)?))
    }
}

/// Cached partial products of a network.
///
/// `prefix[k] = W_k ... W_1` (`prefix[0] = I_{d_0}`) and
/// `suffix[k] = W_L ... W_{k+1}` (`suffix[L] = I_{d_L}`).
struct Partials {
    prefix: Vec<Mat>,
    suffix: Vec<Mat>,
}

impl Partials {
    fn new(net: &DeepNet) -> Self {
        let layers = &net.layers;
        let depth = layers.len();
        let mut prefix = Vec::with_capacity(depth + 1);
        prefix.push(Mat::identity(net.d_in()));
        for w in layers {
            let next = w.matmul(prefix.last().expect("nonempty"));
            prefix.push(next);
        }
        let mut suffix = vec![Mat::identity(net.d_out()); depth + 1];
        for k in (0..depth).rev() {
            suffix[k] = suffix[k + 1].matmul(&layers[k]);
        }
        Partials { prefix, suffix }
    }

    fn end_to_end(&self) -> &Mat {
        self.prefix.last().expect("nonempty")
    }

    /// Gradient wrt `W_j` (1-based `j`) of `<g, E(W)>`: `suffix[j]ᵀ g prefix[j-1]ᵀ`.
    fn layer_grad(&self, j: usize, g: &Mat) -> Mat {
        self.suffix[j].t_matmul(g).matmul_t(&self.prefix[j - 1])
    }
}

fn check_shapes(net: &DeepNet, ms: &MeasurementSet) -> Result<()> {
    if (net.d_out(), net.d_in()) != (ms.d_out(), ms.d_in()) {
        return Err(Error::Shape {
            expected: format!("measurements of shape {}x{}", net.d_out(), net.d_in()),
            got: format!("{}x{}", ms.d_out(), ms.d_in()),
        });
    }
    Ok(())
}

/// `W_L W_{L-1} ... W_1`.
pub fn end_to_end(net: &DeepNet) -> Mat {
    let mut e = net.layers[0].clone();
    for w in &net.layers[1..] {
        e = w.matmul(&e);
    }
    e
}

/// Mean squared residual `(1/n) sum (<A_i, E(W)> - b_i)^2`.
pub fn loss(net: &DeepNet, ms: &MeasurementSet) -> Result<f64> {
    check_shapes(net, ms)?;
    Ok(loss_of_end_to_end(&end_to_end(net), ms))
}

pub(crate) fn loss_of_end_to_end(e: &Mat, ms: &MeasurementSet) -> f64 {
    let sum: f64 = ms
        .mats()
        .iter()
        .zip(ms.labels())
        .map(|(a, b)| (a.inner(e) - b).powi(2))
        .sum();
    sum / ms.len() as f64
}

/// Layer gradients of the batch loss
/// `(1/B) sum_{i in batch} (<A_i, E(W)> - b_i + xi_i)^2`.
///
/// `label_offsets`, when given, carries one `xi` per batch entry;
/// `None` means `xi = 0`. Repeated indices count with multiplicity.
pub fn grad(
    net: &DeepNet,
    ms: &MeasurementSet,
    batch: &[usize],
    label_offsets: Option<&[f64]>,
) -> Result<Vec<Mat>> {
    check_shapes(net, ms)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= ms.len()) {
        return Err(Error::Domain(format!(
            "batch index {bad} out of range for {} measurements",
            ms.len()
        )));
    }
    if let Some(xi) = label_offsets {
        if xi.len() != batch.len() {
            return Err(Error::Shape {
                expected: format!("{} label offsets", batch.len()),
                got: format!("{}", xi.len()),
            });
        }
    }
    let partials = Partials::new(net);
    let g = residual_weighted_sum(partials.end_to_end(), ms, batch, label_offsets);
    Ok((1..=net.depth())
        .map(|j| partials.layer_grad(j, &g))
        .collect())
}

/// `(2/B) sum_b r_b A_{i_b}`, the loss gradient with respect to `E(W)`.
fn residual_weighted_sum(
    e: &Mat,
    ms: &MeasurementSet,
    batch: &[usize],
    label_offsets: Option<&[f64]>,
) -> Mat {
    let scale = 2.0 / batch.len() as f64;
    let mut g = Mat::zeros(e.rows(), e.cols());
    for (k, &i) in batch.iter().enumerate() {
        let a = &ms.mats()[i];
        let mut residual = a.inner(e) - ms.labels()[i];
        if let Some(xi) = label_offsets {
            residual += xi[k];
        }
        g.axpy(scale * residual, a);
    }
    g
}

/// Trace-of-Hessian summary at a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    /// `(1/n) sum_i sum_j ||W_{j-1}..W_1 A_iᵀ W_L..W_{j+1}||_F^2`, the
    /// normalisation used by the closed-form regularizers.
    pub paper_trace: f64,
    /// The actual Hessian trace of the mean-squared loss, `2 * paper_trace`.
    pub true_trace: f64,
    /// Contribution of each layer to `paper_trace`.
    pub per_layer: Vec<f64>,
}

/// Hessian trace of the loss through the Jacobian of the measurements.
///
/// The value equals the Hessian trace only where the loss is zero. Off
/// the interpolation manifold the residual-curvature term is dropped and
/// the result is the Gauss-Newton trace. Labels are not read.
pub fn trace_hessian(net: &DeepNet, ms: &MeasurementSet) -> Result<TraceReport> {
    check_shapes(net, ms)?;
    let partials = Partials::new(net);
    let n = ms.len() as f64;
    let per_layer: Vec<f64> = (1..=net.depth())
        .map(|j| {
            let left = &partials.prefix[j - 1];
            let right = &partials.suffix[j];
            // ||P Aᵀ S||_F^2 = <S Sᵀ A, A PᵀP>
            let left_gram = left.t_matmul(left);
            let right_gram = right.matmul_t(right);
            let sum: f64 = ms
                .mats()
                .iter()
                .map(|a| right_gram.matmul(a).inner(&a.matmul(&left_gram)))
                .sum();
            sum / n
        })
        .collect();
    let paper_trace = per_layer.iter().sum::<f64>();
    Ok(TraceReport {
        paper_trace,
        true_trace: 2.0 * paper_trace,
        per_layer,
    })
}

/// Expected `paper_trace` over isotropic Gaussian measurements:
/// `d_0 ||W_L..W_2||^2 + sum_{j=2}^{L-1} ||W_L..W_{j+1}||^2 ||W_{j-1}..W_1||^2
///  + d_L ||W_{L-1}..W_1||^2`.
pub fn reg_r(net: &DeepNet) -> f64 {
    let partials = Partials::new(net);
    (1..=net.depth())
        .map(|j| partials.suffix[j].frobenius_sq() * partials.prefix[j - 1].frobenius_sq())
        .sum()
}
