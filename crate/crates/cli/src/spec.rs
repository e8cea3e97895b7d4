use std::path::{Path, PathBuf};

use dlms_core::linalg::Mat;
use dlms_core::measurements::{gen_ground_truth, gen_measurements, Ensemble, MeasurementSet};
use dlms_core::solvers::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Measurement ensembles selectable from an experiment file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecEnsemble {
    GaussianIid,
    Bernoulli,
    RankOneGaussian,
    /// The `d_0 d_L` scaled unit matrices `sqrt(d_0 d_L) E_kl`; needs
    /// `n = d_0 d_L`.
    OrthonormalBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainModes {
    pub vanilla: TrainConfig,
    pub labelnoise: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    pub nuclear: bool,
    pub frobenius: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RipSpec {
    pub ranks: Vec<usize>,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub depth: usize,
    pub dims: Vec<usize>,
    pub n: usize,
    pub rank: usize,
    pub ensemble: SpecEnsemble,
    pub train: TrainModes,
    pub baselines: Baselines,
    pub rip: RipSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::scaled(20, 120, 2)
    }
}

impl ExperimentSpec {
    fn scaled(d: usize, n: usize, rank: usize) -> Self {
        let depth = 3;
        let vanilla = TrainConfig::default();
        ExperimentSpec {
            depth,
            dims: vec![d; depth + 1],
            n,
            rank,
            ensemble: SpecEnsemble::GaussianIid,
            train: TrainModes {
                labelnoise: vanilla.clone(),
                vanilla,
            },
            baselines: Baselines {
                nuclear: true,
                frobenius: true,
            },
            rip: RipSpec {
                ranks: vec![1, 2],
                probes: 200,
            },
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }

    /// `d = 60`, `n = 600`, `r = 3`, other settings unchanged.
    pub fn paper_scale() -> Self {
        Self::scaled(60, 600, 3)
    }

    /// Applies `--paper-scale` to a loaded spec.
    pub fn apply_paper_scale(&mut self) {
        let big = Self::paper_scale();
        self.dims = vec![60; self.depth + 1];
        self.n = big.n;
        self.rank = big.rank;
    }

    /// Replaces the experiment seed and both training seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.vanilla.seed = seed;
        self.train.labelnoise.seed = seed;
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        self.dims[self.depth]
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.depth < 2 {
            return bad(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.dims.len() != self.depth + 1 {
            return bad(format!(
                "dims must list {} widths for depth {}, got {}",
                self.depth + 1,
                self.depth,
                self.dims.len()
            ));
        }
        if self.dims.contains(&0) {
            return bad("every width must be positive".into());
        }
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if d_in != d_out {
            return bad(format!(
                "ground truth is square: d_0 = {d_in} must equal d_L = {d_out}"
            ));
        }
        let floor = d_in.min(d_out);
        if let Some(d) = self.dims[1..self.depth].iter().find(|&&d| d < floor) {
            return bad(format!(
                "hidden width {d} is below min(d_0, d_L) = {floor}; the network cannot express every target"
            ));
        }
        if self.rank == 0 || self.rank > floor {
            return bad(format!("rank must lie in 1..={floor}, got {}", self.rank));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.ensemble == SpecEnsemble::OrthonormalBasis && self.n != d_in * d_out {
            return bad(format!(
                "orthonormal_basis needs n = d_0 d_L = {}, got {}",
                d_in * d_out,
                self.n
            ));
        }
        for (name, cfg) in [
            ("vanilla", &self.train.vanilla),
            ("labelnoise", &self.train.labelnoise),
        ] {
            cfg.validate(self.n)
                .map_err(|e| CliError::Usage(format!("train.{name}: {e}")))?;
        }
        if self.rip.probes == 0 {
            return bad("rip.probes must be positive".into());
        }
        if let Some(r) = self.rip.ranks.iter().find(|&&r| r == 0 || r > floor) {
            return bad(format!("rip rank {r} must lie in 1..={floor}"));
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> CliResult<Mat> {
        Ok(gen_ground_truth(self.d_in(), self.rank, self.seed)?)
    }

    pub fn measurements(&self, ground_truth: &Mat) -> CliResult<MeasurementSet> {
        let ensemble = match self.ensemble {
            SpecEnsemble::GaussianIid => Ensemble::GaussianIid,
            SpecEnsemble::Bernoulli => Ensemble::Bernoulli,
            SpecEnsemble::RankOneGaussian => Ensemble::RankOneGaussian,
            SpecEnsemble::OrthonormalBasis => {
                return Ok(MeasurementSet::orthonormal_basis(ground_truth.clone())?);
            }
        };
        Ok(gen_measurements(
            ensemble,
            self.n,
            self.d_in(),
            self.d_out(),
            ground_truth,
            self.seed,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let spec = ExperimentSpec::default();
        let back = ExperimentSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        spec.validate().unwrap();
        assert_eq!(spec.dims, vec![20; 4]);
        assert_eq!((spec.n, spec.rank), (120, 2));
    }

    #[test]
    fn paper_scale_is_valid() {
        let spec = ExperimentSpec::paper_scale();
        spec.validate().unwrap();
        assert_eq!((spec.d_in(), spec.n, spec.rank), (60, 600, 3));
        let mut scaled = ExperimentSpec::default();
        scaled.apply_paper_scale();
        assert_eq!(scaled, spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&ExperimentSpec::default().to_json()).unwrap();
        value["detph"] = serde_json::json!(3);
        assert!(ExperimentSpec::from_json(&value.to_string()).is_err());
        let mut value: serde_json::Value =
            serde_json::from_str(&ExperimentSpec::default().to_json()).unwrap();
        value["train"]["vanilla"]["learning_rate"] = serde_json::json!(0.1);
        assert!(ExperimentSpec::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let base = ExperimentSpec::default();
        let cases: Vec<Box<dyn Fn(&mut ExperimentSpec)>> = vec![
            Box::new(|s| s.depth = 1),
            Box::new(|s| s.dims.pop().map(|_| ()).unwrap()),
            Box::new(|s| s.dims[1] = 5),
            Box::new(|s| s.dims[3] = 21),
            Box::new(|s| s.rank = 0),
            Box::new(|s| s.rank = 21),
            Box::new(|s| s.n = 0),
            Box::new(|s| s.train.vanilla.batch = 121),
            Box::new(|s| s.train.labelnoise.lr = 0.0),
            Box::new(|s| s.rip.probes = 0),
            Box::new(|s| s.rip.ranks = vec![30]),
            Box::new(|s| s.ensemble = SpecEnsemble::OrthonormalBasis),
        ];
        for (k, mutate) in cases.iter().enumerate() {
            let mut spec = base.clone();
            mutate(&mut spec);
            let err = spec.validate().expect_err(&format!("case {k} should fail"));
            assert_eq!(err.exit_code(), 1);
        }
    }

    #[test]
    fn orthonormal_basis_spec() {
        let mut spec = ExperimentSpec::default();
        spec.dims = vec![3, 3, 3];
        spec.depth = 2;
        spec.n = 9;
        spec.rank = 1;
        spec.train.vanilla.batch = 9;
        spec.train.labelnoise.batch = 9;
        spec.ensemble = SpecEnsemble::OrthonormalBasis;
        spec.validate().unwrap();
        let gt = spec.ground_truth().unwrap();
        let ms = spec.measurements(&gt).unwrap();
        assert_eq!(ms.len(), 9);
    }
}
