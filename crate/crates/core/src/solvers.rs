//! Mini-batch and label-noise SGD on deep linear networks, plus the convex
//! interpolation baselines (minimum nuclear norm and minimum Frobenius norm).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, svt, Cholesky, Mat};
use crate::measurements::MeasurementSet;
use crate::network::{end_to_end, grad, loss_of_end_to_end, trace_hessian, DeepNet};
use crate::rng::seeded;

/// Training aborts once the full training loss passes this value.
pub const DIVERGENCE_LOSS: f64 = 1e12;

pub const CSV_HEADER: &str = "step,train_loss,test_loss,nuclear_norm,paper_trace";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub noise_std: f64,
    pub init_std: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200_000,
            batch: 50,
            lr: 0.01,
            noise_std: 1.0,
            init_std: 0.3,
            log_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch == 0 || self.batch > n {
            return Err(Error::Domain(format!(
                "batch size {} must lie in 1..={n}",
                self.batch
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Domain(format!(
                "noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Domain("log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    LabelNoise,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::LabelNoise => "labelnoise",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "labelnoise" | "label_noise" => Ok(Mode::LabelNoise),
            other => Err(Error::Domain(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub train_loss: f64,
    /// `||E(W) - M*||_F^2`, NaN when the ground truth is unknown.
    pub test_loss: f64,
    pub nuclear_norm: f64,
    pub paper_trace: f64,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub records: Vec<Record>,
    pub config: TrainConfig,
    pub mode: Mode,
    pub final_net: DeepNet,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records_csv(&self.records, w)
    }

    pub fn last(&self) -> &Record {
        self.records
            .last()
            .expect("a run log always holds the step-0 record")
    }
}

pub fn write_records_csv<W: Write>(records: &[Record], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step, r.train_loss, r.test_loss, r.nuclear_norm, r.paper_trace
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV written by [`RunLog::write_csv`]. Errors name the
/// offending 1-based line.
pub fn parse_records_csv(text: &str) -> Result<Vec<Record>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Format(format!(
                "line 1: unexpected header '{header}'"
            )))
        }
        None => return Err(Error::Format("line 1: missing header".into())),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "line {lineno}: expected 5 fields, found {}",
                fields.len()
            )));
        }
        let step = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("line {lineno}: step: {e}")))?;
        let mut values = [0.0; 4];
        for (slot, (field, name)) in values.iter_mut().zip(fields[1..].iter().zip([
            "train_loss",
            "test_loss",
            "nuclear_norm",
            "paper_trace",
        ])) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {lineno}: {name}: {e}")))?;
        }
        records.push(Record {
            step,
            train_loss: values[0],
            test_loss: values[1],
            nuclear_norm: values[2],
            paper_trace: values[3],
        });
    }
    Ok(records)
}

/// Network with i.i.d. `N(0, init_std^2)` entries.
pub fn init_net(dims: &[usize], init_std: f64, seed: u64) -> Result<DeepNet> {
    if dims.contains(&0) {
        return Err(Error::Domain(format!("zero width in {dims:?}")));
    }
    let mut rng = seeded(seed, 4);
    DeepNet::new(
        dims.windows(2)
            .map(|w| Mat::gaussian(w[1], w[0], init_std, &mut rng))
            .collect(),
    )
}

fn snapshot(net: &DeepNet, ms: &MeasurementSet, step: usize, train_loss: f64) -> Result<Record> {
    let e = end_to_end(net);
    let test_loss = ms
        .ground_truth()
        .map_or(f64::NAN, |gt| (&e - gt).frobenius_sq());
    Ok(Record {
        step,
        train_loss,
        test_loss,
        nuclear_norm: nuclear_norm(&e)?,
        paper_trace: trace_hessian(net, ms)?.paper_trace,
    })
}

/// Runs exactly `cfg.steps` SGD updates `W <- W - lr * grad`.
///
/// Each step samples `cfg.batch` indices uniformly with replacement. In
/// [`Mode::LabelNoise`] every sampled example gets a fresh offset
/// `xi ~ N(0, noise_std^2)` on its residual. Batch indices and label noise
/// come from separate streams of `cfg.seed`, so a zero-noise label-noise run
/// reproduces the vanilla run bit for bit.
pub fn train(
    mut net: DeepNet,
    ms: &MeasurementSet,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<RunLog> {
    cfg.validate(ms.len())?;
    if (net.d_out(), net.d_in()) != (ms.d_out(), ms.d_in()) {
        return Err(Error::Shape {
            expected: format!("measurements of shape {}x{}", net.d_out(), net.d_in()),
            got: format!("{}x{}", ms.d_out(), ms.d_in()),
        });
    }
    let mut batch_rng = seeded(cfg.seed, 10);
    let mut noise_rng = seeded(cfg.seed, 11);
    let n = ms.len();

    let mut records = vec![snapshot(
        &net,
        ms,
        0,
        loss_of_end_to_end(&end_to_end(&net), ms),
    )?];
    let mut batch = vec![0usize; cfg.batch];
    let mut offsets = vec![0.0f64; cfg.batch];

    for step in 1..=cfg.steps {
        for slot in batch.iter_mut() {
            *slot = batch_rng.random_range(0..n);
        }
        let noise = match mode {
            Mode::Vanilla => None,
            Mode::LabelNoise => {
                for xi in offsets.iter_mut() {
                    *xi = cfg.noise_std * noise_rng.sample::<f64, _>(StandardNormal);
                }
                Some(offsets.as_slice())
            }
        };
        let grads = grad(&net, ms, &batch, noise)?;
        for (w, g) in net.layers_mut().iter_mut().zip(&grads) {
            w.axpy(-cfg.lr, g);
        }

        let train_loss = loss_of_end_to_end(&end_to_end(&net), ms);
        if !train_loss.is_finite() || train_loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                step,
                loss: train_loss,
            });
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            records.push(snapshot(&net, ms, step, train_loss)?);
        }
    }
    Ok(RunLog {
        records,
        config: cfg.clone(),
        mode,
        final_net: net,
    })
}

/// Projection onto `{X : <A_i, X> = b_i}` through a cached Gram factor.
struct AffineProjector<'a> {
    ms: &'a MeasurementSet,
    gram: Cholesky,
}

impl<'a> AffineProjector<'a> {
    fn new(ms: &'a MeasurementSet) -> Result<Self> {
        Ok(AffineProjector {
            ms,
            gram: Cholesky::factor(&ms.gram())?,
        })
    }

    fn project(&self, x: &Mat) -> Mat {
        let residual: Vec<f64> = self
            .ms
            .apply(x)
            .iter()
            .zip(self.ms.labels())
            .map(|(ax, b)| ax - b)
            .collect();
        let lambda = self.gram.solve(&residual);
        let mut out = x.clone();
        out.axpy(-1.0, &self.ms.adjoint(&lambda));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            tol: 1e-8,
            max_iter: 50_000,
            rho: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdmmReport {
    /// Feasible iterate (exact affine projection).
    pub solution: Mat,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// `min ||M||_* s.t. <A_i, M> = b_i` by ADMM on the splitting `M = Z`:
/// `M <- Proj(Z - U)`, `Z <- svt(M + U, 1/rho)`, `U <- U + M - Z`.
pub fn admm_min_nuclear(ms: &MeasurementSet, opts: &AdmmOptions) -> Result<AdmmReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be > 0, got {}",
            opts.tol
        )));
    }
    if !(opts.rho > 0.0) {
        return Err(Error::Domain(format!("rho must be > 0, got {}", opts.rho)));
    }
    let projector = AffineProjector::new(ms)?;
    let (rows, cols) = (ms.d_out(), ms.d_in());
    let mut z = Mat::zeros(rows, cols);
    let mut u = Mat::zeros(rows, cols);
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);

    for iter in 1..=opts.max_iter {
        let m = projector.project(&(&z - &u));
        let z_next = svt(&(&m + &u), 1.0 / opts.rho)?;
        let gap = &m - &z_next;
        u.axpy(1.0, &gap);
        primal = gap.frobenius();
        dual = opts.rho * (&z_next - &z).frobenius();
        z = z_next;
        if primal < opts.tol && dual < opts.tol {
            return Ok(AdmmReport {
                objective: nuclear_norm(&m)?,
                solution: m,
                iterations: iter,
                primal_residual: primal,
                dual_residual: dual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        primal,
        dual,
    })
}

pub fn solve_min_nuclear(ms: &MeasurementSet, tol: f64, max_iter: usize) -> Result<Mat> {
    let opts = AdmmOptions {
        tol,
        max_iter,
        ..AdmmOptions::default()
    };
    admm_min_nuclear(ms, &opts).map(|r| r.solution)
}

/// Minimum-Frobenius interpolant `sum_i A_i [G^{-1} b]_i`.
pub fn solve_min_frobenius(ms: &MeasurementSet) -> Result<Mat> {
    let lambda = Cholesky::factor(&ms.gram())?.solve(ms.labels());
    Ok(ms.adjoint(&lambda))
}
