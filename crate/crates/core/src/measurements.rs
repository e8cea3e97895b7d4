//! Measurement ensembles, ground truths, labels and empirical RIP estimates.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::seeded;

const MAGIC: &[u8; 8] = b"DLMSMEAS";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Every entry i.i.d. standard normal.
    GaussianIid,
    /// Every entry ±1 with equal probability.
    Bernoulli,
    /// `A_i = x_i y_iᵀ` with standard normal `x_i`, `y_i`.
    RankOneGaussian,
    /// Caller-supplied matrices.
    Custom,
}

impl Ensemble {
    fn code(self) -> u8 {
        match self {
            Ensemble::GaussianIid => 0,
            Ensemble::Bernoulli => 1,
            Ensemble::RankOneGaussian => 2,
            Ensemble::Custom => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Ensemble::GaussianIid,
            1 => Ensemble::Bernoulli,
            2 => Ensemble::RankOneGaussian,
            3 => Ensemble::Custom,
            other => return Err(Error::Format(format!("unknown ensemble code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Ensemble::GaussianIid => "gaussian_iid",
            Ensemble::Bernoulli => "bernoulli",
            Ensemble::RankOneGaussian => "rank_one_gaussian",
            Ensemble::Custom => "custom",
        }
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_iid" | "gaussian" => Ok(Ensemble::GaussianIid),
            "bernoulli" => Ok(Ensemble::Bernoulli),
            "rank_one_gaussian" | "rank_one" => Ok(Ensemble::RankOneGaussian),
            "custom" => Ok(Ensemble::Custom),
            other => Err(Error::Domain(format!("unknown ensemble '{other}'"))),
        }
    }
}

/// Linear measurements `b_i = <A_i, M*>` of a `d_out x d_in` target.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    mats: Vec<Mat>,
    labels: Vec<f64>,
    ground_truth: Option<Mat>,
    ensemble: Ensemble,
    seed: u64,
}

impl MeasurementSet {
    /// Validates shapes and, when a ground truth is given, that every label
    /// matches `<A_i, M*>` to 1e-12 (relative to the label scale).
    pub fn new(
        mats: Vec<Mat>,
        labels: Vec<f64>,
        ground_truth: Option<Mat>,
        ensemble: Ensemble,
        seed: u64,
    ) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Domain("measurement set must be nonempty".into()))?;
        let shape = first.shape();
        if let Some(bad) = mats.iter().find(|a| a.shape() != shape) {
            return Err(shape_error(shape, bad.shape()));
        }
        if labels.len() != mats.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", mats.len()),
                got: format!("{} labels", labels.len()),
            });
        }
        if let Some(gt) = &ground_truth {
            if gt.shape() != shape {
                return Err(shape_error(shape, gt.shape()));
            }
            for (i, (a, &b)) in mats.iter().zip(&labels).enumerate() {
                let expect = a.inner(gt);
                if (expect - b).abs() > 1e-12 * expect.abs().max(1.0) {
                    return Err(Error::Format(format!(
                        "label {i} is {b} but <A_{i}, M*> = {expect}"
                    )));
                }
            }
        }
        Ok(MeasurementSet {
            mats,
            labels,
            ground_truth,
            ensemble,
            seed,
        })
    }

    /// Labels computed from `ground_truth`.
    pub fn from_ground_truth(mats: Vec<Mat>, ground_truth: Mat) -> Result<Self> {
        if let Some(bad) = mats.iter().find(|a| a.shape() != ground_truth.shape()) {
            return Err(shape_error(ground_truth.shape(), bad.shape()));
        }
        let labels = mats.iter().map(|a| a.inner(&ground_truth)).collect();
        MeasurementSet::new(mats, labels, Some(ground_truth), Ensemble::Custom, 0)
    }

    /// The `d_in * d_out` scaled coordinate basis `sqrt(d_in d_out) E_kl`,
    /// an exact isometry: `(1/n) sum <A_i, X>^2 = ||X||_F^2` for every `X`.
    pub fn orthonormal_basis(ground_truth: Mat) -> Result<Self> {
        let (rows, cols) = ground_truth.shape();
        let scale = ((rows * cols) as f64).sqrt();
        let mats = (0..rows * cols)
            .map(|idx| {
                let mut e = Mat::zeros(rows, cols);
                e.data_mut()[idx] = scale;
                e
            })
            .collect();
        MeasurementSet::from_ground_truth(mats, ground_truth)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn mats(&self) -> &[Mat] {
        &self.mats
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ground_truth(&self) -> Option<&Mat> {
        self.ground_truth.as_ref()
    }

    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `d_L`, the row count of every `A_i`.
    pub fn d_out(&self) -> usize {
        self.mats[0].rows()
    }

    /// `d_0`, the column count of every `A_i`.
    pub fn d_in(&self) -> usize {
        self.mats[0].cols()
    }

    /// The measurement operator `X -> (<A_i, X>)_i`.
    pub fn apply(&self, x: &Mat) -> Vec<f64> {
        self.mats.iter().map(|a| a.inner(x)).collect()
    }

    /// The adjoint `y -> sum_i y_i A_i`.
    pub fn adjoint(&self, y: &[f64]) -> Mat {
        assert_eq!(y.len(), self.len(), "adjoint: coefficient length mismatch");
        let mut out = Mat::zeros(self.d_out(), self.d_in());
        for (a, &c) in self.mats.iter().zip(y) {
            if c != 0.0 {
                out.axpy(c, a);
            }
        }
        out
    }

    /// `G_ij = <A_i, A_j>`.
    pub fn gram(&self) -> Mat {
        let n = self.len();
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.mats[i].inner(&self.mats[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `(1/n) sum_i <A_i, X>^2 / ||X||_F^2`.
    pub fn isometry_ratio(&self, x: &Mat) -> f64 {
        let quad: f64 = self.apply(x).iter().map(|v| v * v).sum::<f64>() / self.len() as f64;
        quad / x.frobenius_sq()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.len(), self.d_out(), self.d_in()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[self.ensemble.code()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[u8::from(self.ground_truth.is_some())])?;
        for a in &self.mats {
            write_f64s(&mut w, a.data())?;
        }
        write_f64s(&mut w, &self.labels)?;
        if let Some(gt) = &self.ground_truth {
            write_f64s(&mut w, gt.data())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a measurement container".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let [code] = read_array::<_, 1>(&mut r)?;
        let ensemble = Ensemble::from_code(code)?;
        let seed = read_u64(&mut r)?;
        let [has_gt] = read_array::<_, 1>(&mut r)?;
        let mats = (0..n)
            .map(|_| Mat::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?))
            .collect::<Result<Vec<_>>>()?;
        let labels = read_f64s(&mut r, n)?;
        let ground_truth = match has_gt {
            0 => None,
            1 => Some(Mat::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?),
            other => return Err(Error::Format(format!("bad ground-truth flag {other}"))),
        };
        MeasurementSet::new(mats, labels, ground_truth, ensemble, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MeasurementSet::read_from(BufReader::new(File::open(path)?))
    }
}

fn shape_error(expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape {
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    (0..count)
        .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
        .collect()
}

/// `M* = M1 M2 / d` with `M1: d x r`, `M2: r x d` standard normal.
pub fn gen_ground_truth(d: usize, r: usize, seed: u64) -> Result<Mat> {
    if r == 0 || d == 0 || r > d {
        return Err(Error::Domain(format!(
            "ground-truth rank {r} must lie in 1..={d}"
        )));
    }
    let mut rng = seeded(seed, 0);
    let m1 = Mat::gaussian(d, r, 1.0, &mut rng);
    let m2 = Mat::gaussian(r, d, 1.0, &mut rng);
    Ok(m1.matmul(&m2).scale(1.0 / d as f64))
}

/// Draws one measurement matrix of shape `d_out x d_in`.
pub fn sample_measurement<R: Rng + ?Sized>(
    ensemble: Ensemble,
    d_out: usize,
    d_in: usize,
    rng: &mut R,
) -> Result<Mat> {
    match ensemble {
        Ensemble::GaussianIid => Ok(Mat::gaussian(d_out, d_in, 1.0, rng)),
        Ensemble::Bernoulli => Ok(Mat::from_fn(d_out, d_in, |_, _| {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        })),
        Ensemble::RankOneGaussian => {
            let x: Vec<f64> = (0..d_out).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
            Ok(Mat::from_fn(d_out, d_in, |i, j| x[i] * y[j]))
        }
        Ensemble::Custom => Err(Error::Domain("the custom ensemble has no sampler".into())),
    }
}

/// Draws `n` matrices from `ensemble` and labels them against `ground_truth`
/// (shape `d_out x d_in`).
pub fn gen_measurements(
    ensemble: Ensemble,
    n: usize,
    d_in: usize,
    d_out: usize,
    ground_truth: &Mat,
    seed: u64,
) -> Result<MeasurementSet> {
    if n == 0 {
        return Err(Error::Domain("need at least one measurement".into()));
    }
    if ground_truth.shape() != (d_out, d_in) {
        return Err(shape_error((d_out, d_in), ground_truth.shape()));
    }
    let mut rng = seeded(seed, 1);
    let mats = (0..n)
        .map(|_| sample_measurement(ensemble, d_out, d_in, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let labels = mats.iter().map(|a| a.inner(ground_truth)).collect();
    Ok(MeasurementSet {
        mats,
        labels,
        ground_truth: Some(ground_truth.clone()),
        ensemble,
        seed,
    })
}

/// Monte-Carlo lower estimate of the `(rank, delta)`-RIP constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub rank: usize,
    pub delta_hat: f64,
    pub probes: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub seed: u64,
}

/// Probes the isometry ratio with `probes` random unit-Frobenius rank-`rank`
/// matrices `U Vᵀ / ||U Vᵀ||_F`. The result only lower-bounds the true
/// constant. Probe `k` is the same for every `probes > k`, so `delta_hat`
/// is monotone in the probe count.
pub fn estimate_rip(
    ms: &MeasurementSet,
    rank: usize,
    probes: usize,
    seed: u64,
) -> Result<RipEstimate> {
    let (d_out, d_in) = (ms.d_out(), ms.d_in());
    if rank == 0 || rank > d_out.min(d_in) {
        return Err(Error::Domain(format!(
            "probe rank {rank} must lie in 1..={}",
            d_out.min(d_in)
        )));
    }
    if probes == 0 {
        return Err(Error::Domain("need at least one probe".into()));
    }
    let mut rng = seeded(seed, 2);
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..probes {
        let u = Mat::gaussian(d_out, rank, 1.0, &mut rng);
        let v = Mat::gaussian(d_in, rank, 1.0, &mut rng);
        let ratio = ms.isometry_ratio(&u.matmul_t(&v));
        max_ratio = max_ratio.max(ratio);
        min_ratio = min_ratio.min(ratio);
    }
    Ok(RipEstimate {
        rank,
        delta_hat: (max_ratio - 1.0).max(1.0 - min_ratio),
        probes,
        max_ratio,
        min_ratio,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipRelaxCheck {
    pub lhs: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Checks `|(1/n) sum <A_i, M>^2 - ||M||_F^2| <= 2 delta ||M||_*^2`.
pub fn rip_relax_check(ms: &MeasurementSet, m: &Mat, delta: f64) -> Result<RipRelaxCheck> {
    if m.shape() != (ms.d_out(), ms.d_in()) {
        return Err(shape_error((ms.d_out(), ms.d_in()), m.shape()));
    }
    let quad: f64 = ms.apply(m).iter().map(|v| v * v).sum::<f64>() / ms.len() as f64;
    let lhs = (quad - m.frobenius_sq()).abs();
    let nuc = crate::linalg::nuclear_norm(m)?;
    let bound = 2.0 * delta * nuc * nuc;
    Ok(RipRelaxCheck {
        lhs,
        bound,
        ok: lhs <= bound,
    })
}
