use std::fs;
use std::path::{Path, PathBuf};

use dlms_core::linalg::{nuclear_norm, Mat};
use dlms_core::measurements::{estimate_rip, MeasurementSet, RipEstimate};
use dlms_core::metrics::{population_loss, EvalReport};
use dlms_core::solvers::{
    admm_min_nuclear, init_net, parse_records_csv, solve_min_frobenius, train, AdmmOptions, Mode,
    Record, RunLog, TrainConfig,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::plot::{self, Series};
use crate::spec::ExperimentSpec;
use crate::verify::{self, VerifyReport, DELTA_MARGIN};

pub const MEASUREMENTS_FILE: &str = "measurements.bin";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SPEC_FILE: &str = "spec.json";
pub const RUN_FILE: &str = "run.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const FIGURE_FILE: &str = "figure.svg";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Serialize)]
pub struct GenerateSummary {
    pub dims: Vec<usize>,
    pub n: usize,
    pub nuclear_norm: f64,
    pub frobenius_norm: f64,
}

pub fn generate(spec: &ExperimentSpec, out: &Path) -> CliResult<GenerateSummary> {
    prepare_dir(out)?;
    let m_star = spec.ground_truth()?;
    let ms = spec.measurements(&m_star)?;
    let path = out.join(MEASUREMENTS_FILE);
    ms.save(&path).map_err(|e| match e {
        dlms_core::Error::Io(io) => CliError::io(&path, io),
        other => other.into(),
    })?;
    write(&out.join(GROUND_TRUTH_FILE), to_json(&m_star))?;
    write(&out.join(SPEC_FILE), spec.to_json() + "\n")?;
    Ok(GenerateSummary {
        dims: spec.dims.clone(),
        n: ms.len(),
        nuclear_norm: nuclear_norm(&m_star)?,
        frobenius_norm: m_star.frobenius(),
    })
}

/// Loads the measurement container from `out` when it matches the spec,
/// otherwise generates it.
fn measurements_for(spec: &ExperimentSpec, out: &Path) -> CliResult<(MeasurementSet, Mat)> {
    let m_star = spec.ground_truth()?;
    let path = out.join(MEASUREMENTS_FILE);
    if path.exists() {
        let ms = MeasurementSet::load(&path)?;
        let matches = ms.len() == spec.n
            && ms.d_in() == spec.d_in()
            && ms.d_out() == spec.d_out()
            && ms.ground_truth() == Some(&m_star);
        if matches {
            return Ok((ms, m_star));
        }
    }
    generate(spec, out)?;
    Ok((MeasurementSet::load(&path)?, m_star))
}

#[derive(Debug, Serialize)]
pub struct NuclearBaseline {
    pub objective: f64,
    pub iterations: usize,
    pub population_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct Baselines {
    pub min_nuclear: Option<NuclearBaseline>,
    pub min_frobenius_population_loss: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ModeSummary {
    pub csv: PathBuf,
    pub last: Record,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub spec: ExperimentSpec,
    pub rip: Vec<RipEstimate>,
    pub eval_delta: f64,
    pub baselines: Baselines,
    pub vanilla: ModeSummary,
    pub labelnoise: ModeSummary,
}

fn run_mode(
    spec: &ExperimentSpec,
    ms: &MeasurementSet,
    cfg: &TrainConfig,
    mode: Mode,
) -> CliResult<RunLog> {
    let net = init_net(&spec.dims, cfg.init_std, cfg.seed)?;
    Ok(train(net, ms, cfg, mode)?)
}

fn summarize(
    log: &RunLog,
    out: &Path,
    m_star: &Mat,
    delta: f64,
    nuclear: Option<f64>,
    n: usize,
) -> CliResult<ModeSummary> {
    let name = log.mode.name();
    let csv = out.join(format!("{name}.csv"));
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write(&csv, buf)?;
    let net_path = out.join(format!("{name}_net.bin"));
    log.final_net.save(&net_path)?;
    let eval = if delta < 1.0 {
        let e = dlms_core::network::end_to_end(&log.final_net);
        Some(EvalReport::new(&e, m_star, delta, nuclear, n)?)
    } else {
        None
    };
    Ok(ModeSummary {
        csv,
        last: *log.last(),
        eval,
    })
}

pub fn run(spec: &ExperimentSpec, out: &Path) -> CliResult<RunReport> {
    prepare_dir(out)?;
    let (ms, m_star) = measurements_for(spec, out)?;

    let mut rip = Vec::new();
    for &rank in &spec.rip.ranks {
        rip.push(estimate_rip(&ms, rank, spec.rip.probes, spec.seed)?);
    }
    let eval_rank = 2.min(spec.d_in());
    let eval_delta = match rip.iter().find(|r| r.rank == eval_rank) {
        Some(r) => r.delta_hat,
        None => estimate_rip(&ms, eval_rank, spec.rip.probes, spec.seed)?.delta_hat,
    } + DELTA_MARGIN;

    let (admm, vanilla, noisy) = std::thread::scope(|scope| {
        let admm = scope.spawn(|| {
            let determined = ms.len() > ms.d_in() * ms.d_out();
            (spec.baselines.nuclear && !determined)
                .then(|| admm_min_nuclear(&ms, &AdmmOptions::default()))
                .transpose()
        });
        let vanilla = scope.spawn(|| run_mode(spec, &ms, &spec.train.vanilla, Mode::Vanilla));
        let noisy = run_mode(spec, &ms, &spec.train.labelnoise, Mode::LabelNoise);
        (
            admm.join().expect("baseline thread"),
            vanilla.join().expect("training thread"),
            noisy,
        )
    });
    let admm = admm?;
    let (vanilla, noisy) = (vanilla?, noisy?);

    let min_nuclear = match admm {
        Some(report) => Some(NuclearBaseline {
            population_loss: population_loss(&report.solution, &m_star)?,
            objective: report.objective,
            iterations: report.iterations,
        }),
        None => None,
    };
    let min_frobenius_population_loss =
        if spec.baselines.frobenius && ms.len() <= ms.d_in() * ms.d_out() {
            Some(population_loss(&solve_min_frobenius(&ms)?, &m_star)?)
        } else {
            None
        };
    let nuclear = min_nuclear.as_ref().map(|b| b.objective);

    let report = RunReport {
        rip,
        eval_delta,
        baselines: Baselines {
            min_nuclear,
            min_frobenius_population_loss,
        },
        vanilla: summarize(&vanilla, out, &m_star, eval_delta, nuclear, ms.len())?,
        labelnoise: summarize(&noisy, out, &m_star, eval_delta, nuclear, ms.len())?,
        spec: spec.clone(),
    };
    write(&out.join(RUN_FILE), to_json(&report))?;
    Ok(report)
}

/// Renders the given CSVs (or the run outputs found in `out`) to
/// `out/figure.svg`.
pub fn plot(csvs: &[PathBuf], out: &Path) -> CliResult<PathBuf> {
    let paths: Vec<PathBuf> = if csvs.is_empty() {
        [Mode::Vanilla, Mode::LabelNoise]
            .iter()
            .map(|m| out.join(format!("{}.csv", m.name())))
            .filter(|p| p.exists())
            .collect()
    } else {
        csvs.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no CSV files given and none found in {}",
            out.display()
        )));
    }
    let mut series = Vec::new();
    for path in &paths {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let records = parse_records_csv(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push(Series { label, records });
    }
    prepare_dir(out)?;
    let target = out.join(FIGURE_FILE);
    write(&target, plot::render(&series))?;
    Ok(target)
}

pub fn verify(spec: &ExperimentSpec, out: &Path) -> CliResult<VerifyReport> {
    let report = verify::verify(spec)?;
    prepare_dir(out)?;
    write(&out.join(VERIFY_FILE), to_json(&report))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(steps: usize) -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.depth = 2;
        spec.dims = vec![4, 4, 4];
        spec.n = 12;
        spec.rank = 1;
        for cfg in [&mut spec.train.vanilla, &mut spec.train.labelnoise] {
            cfg.steps = steps;
            cfg.batch = 10;
            cfg.log_every = 50;
            cfg.lr = 0.01;
        }
        spec.rip.probes = 20;
        spec
    }

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dlms-cli-unit-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = tiny_spec(0);
        let (a, b) = (scratch("gen-a"), scratch("gen-b"));
        let summary = generate(&spec, &a).unwrap();
        generate(&spec, &b).unwrap();
        assert_eq!(summary.n, 12);
        assert!(summary.nuclear_norm >= summary.frobenius_norm);
        let bytes = |d: &Path| fs::read(d.join(MEASUREMENTS_FILE)).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let ms = MeasurementSet::load(a.join(MEASUREMENTS_FILE)).unwrap();
        let gt = ms.ground_truth().unwrap();
        for (mat, label) in ms.mats().iter().zip(ms.labels()) {
            assert!((mat.inner(gt) - label).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_logs_only_the_start() {
        let out = scratch("zero");
        let report = run(&tiny_spec(0), &out).unwrap();
        assert_eq!(report.labelnoise.last.step, 0);
        let text = fs::read_to_string(out.join("labelnoise.csv")).unwrap();
        assert_eq!(parse_records_csv(&text).unwrap().len(), 1);
        assert!(out.join(RUN_FILE).exists());
    }

    #[test]
    fn plot_reports_bad_csv_line() {
        let out = scratch("plot");
        fs::create_dir_all(&out).unwrap();
        let bad = out.join("bad.csv");
        fs::write(
            &bad,
            format!("{}\n0,1,2,3\n", dlms_core::solvers::CSV_HEADER),
        )
        .unwrap();
        let err = plot(&[bad], &out).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}
