//! Run specifications and the command-line driver.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! mode = "compare"          # esd | montecarlo | compare
//!
//! [problem.diag]            # or a [covariance] table, never both
//! gamma = 0.5
//! k = 2
//! m = 100
//!
//! [solver]                  # any SolverConfig key, all optional
//! epsilon = 1e-5
//!
//! [montecarlo]
//! trials = 20
//! seed = 1
//!
//! [output]
//! density = "density.csv"
//! eigenvalues = "eigenvalues.txt"
//! ```
//!
//! An explicit `[covariance]` table lists `gamma`, `weights` and one
//! `{ re = "...", im = "..." }` entry per population. Each entry names dense
//! CSV files (no header) holding the real and optional imaginary parts,
//! resolved relative to the spec file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{CMatrix, PopulationMixture, TestProblem};
use crate::montecarlo::{self, EmpiricalSpectrum};
use crate::pipeline::{self, DensityEstimate};
use crate::solver::SolverConfig;
use crate::Complex64;

/// Header of the density table.
pub const DENSITY_HEADER: [&str; 5] = ["x", "f", "re_m", "im_m", "converged"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Esd,
    Montecarlo,
    Compare,
}

/// Wire form of the built-in test problems, one sub-table per kind:
/// `mp`, `two_delta`, `comb`, `diag` or `corr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Mp {
        gamma: f64,
        #[serde(default = "default_dim")]
        m: usize,
    },
    TwoDelta {
        gamma: f64,
        lambdas: [f64; 2],
        weights: [f64; 2],
        #[serde(default = "default_dim")]
        m: usize,
    },
    Comb {
        gamma: f64,
        count: usize,
        lo: f64,
        hi: f64,
        #[serde(default = "default_dim")]
        m: usize,
    },
    Diag {
        gamma: f64,
        k: usize,
        #[serde(default = "default_dim")]
        m: usize,
    },
    Corr {
        gamma: f64,
        k: usize,
        rho: f64,
        l: f64,
        #[serde(default = "default_dim")]
        m: usize,
    },
}

fn default_dim() -> usize {
    100
}

impl ProblemSpec {
    pub fn to_test_problem(&self) -> TestProblem {
        match *self {
            ProblemSpec::Mp { gamma, m } => TestProblem::mp(gamma, m),
            ProblemSpec::TwoDelta { gamma, lambdas, weights, m } => TestProblem::two_delta(gamma, lambdas, weights, m),
            ProblemSpec::Comb { gamma, count, lo, hi, m } => TestProblem::comb(gamma, count, lo, hi, m),
            ProblemSpec::Diag { gamma, k, m } => TestProblem::diag(gamma, k, m),
            ProblemSpec::Corr { gamma, k, rho, l, m } => TestProblem::corr(gamma, k, m, rho, l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFiles {
    pub re: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub gamma: f64,
    pub weights: Vec<f64>,
    pub populations: Vec<MatrixFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSpec {
    /// Rows per trial; defaults to `round(M / γ)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self { n: None, trials: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub density: PathBuf,
    pub eigenvalues: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { density: "density.csv".into(), eigenvalues: "eigenvalues.txt".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunSpec {
    pub fn from_problem(mode: Mode, problem: ProblemSpec) -> Self {
        Self {
            mode,
            problem: Some(problem),
            covariance: None,
            solver: SolverConfig::default(),
            montecarlo: MonteCarloSpec::default(),
            output: OutputSpec::default(),
        }
    }

    /// Parses and validates a spec. Parse errors carry the line and key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| Error::Spec(format!("spec parse error: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(format!("spec serialization error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Spec(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.problem, &self.covariance) {
            (None, None) => {
                return Err(Error::Spec("missing key `problem` (or `covariance`): no problem source given".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Spec("keys `problem` and `covariance` are mutually exclusive".into()))
            }
            _ => {}
        }
        if let Some(c) = &self.covariance {
            if c.populations.len() != c.weights.len() {
                return Err(Error::Spec(format!(
                    "covariance.weights has {} entries but covariance.populations has {}",
                    c.weights.len(),
                    c.populations.len()
                )));
            }
        }
        self.solver.validate()
    }

    /// Builds the mixture, resolving covariance files against `base_dir`.
    pub fn build_mixture(&self, base_dir: &Path) -> Result<PopulationMixture> {
        if let Some(p) = &self.problem {
            return p.to_test_problem().build();
        }
        let c = self.covariance.as_ref().expect("validated spec has a problem source");
        let pops = c
            .populations
            .iter()
            .map(|files| {
                let re = read_matrix_csv(&base_dir.join(&files.re))?;
                let im = match &files.im {
                    Some(p) => read_matrix_csv(&base_dir.join(p))?,
                    None => nalgebra::DMatrix::zeros(re.nrows(), re.ncols()),
                };
                if re.shape() != im.shape() {
                    return Err(Error::Spec(format!(
                        "{}: real part is {:?} but imaginary part is {:?}",
                        files.re.display(),
                        re.shape(),
                        im.shape()
                    )));
                }
                Ok(CMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)])))
            })
            .collect::<Result<Vec<_>>>()?;
        PopulationMixture::new(pops, c.weights.clone(), c.gamma)
    }
}

/// Reads a dense real matrix stored as headerless CSV.
pub fn read_matrix_csv(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::Spec(format!("cannot open {}: {e}", path.display())))?;
    parse_matrix_csv(file).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
}

pub fn parse_matrix_csv<R: Read>(input: R) -> Result<nalgebra::DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Spec(format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Spec(format!("row {}: {e}: {v:?}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Spec("matrix must be non-empty and rectangular".into()));
    }
    Ok(nalgebra::DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

/// Writes the density table with 17 significant digits per value.
pub fn write_density_csv<W: Write>(out: W, estimate: &DensityEstimate) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Spec(format!("csv write error: {e}"));
    w.write_record(DENSITY_HEADER).map_err(err)?;
    for (i, s) in estimate.solutions.iter().enumerate() {
        w.write_record([
            format!("{:.16e}", s.x),
            format!("{:.16e}", estimate.density[i]),
            format!("{:.16e}", s.m.re),
            format!("{:.16e}", s.m.im),
            s.converged.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a density table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRow {
    pub x: f64,
    pub f: f64,
    pub m: Complex64,
    pub converged: bool,
}

pub fn read_density_csv<R: Read>(input: R) -> Result<Vec<DensityRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| Error::Spec(format!("csv header: {e}")))?;
    if header.iter().ne(DENSITY_HEADER) {
        return Err(Error::Spec(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Spec(format!("row {}: {e}", i + 1)))?;
        let num = |j: usize| -> Result<f64> {
            record[j]
                .parse()
                .map_err(|e| Error::Spec(format!("row {} column {}: {e}", i + 1, DENSITY_HEADER[j])))
        };
        let converged = record[4]
            .parse()
            .map_err(|e| Error::Spec(format!("row {} column converged: {e}", i + 1)))?;
        rows.push(DensityRow { x: num(0)?, f: num(1)?, m: Complex64::new(num(2)?, num(3)?), converged });
    }
    Ok(rows)
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct Report {
    pub estimate: Option<DensityEstimate>,
    pub spectrum: Option<EmpiricalSpectrum>,
    pub ks_distance: Option<f64>,
}

impl Report {
    /// Summary lines for standard output.
    pub fn summary(&self) -> Vec<String> {
        let mut lines = Vec::new();
        if let Some(est) = &self.estimate {
            lines.push(format!(
                "points={} mass={} nonconverged={} iterations={}",
                est.len(),
                est.mass,
                est.diagnostics.nonconverged.len(),
                est.diagnostics.total_iterations
            ));
            if est.diagnostics.mass_warning {
                lines.push(format!(
                    "warning: mass {} falls short of the expected {} (possible missed support)",
                    est.mass, est.diagnostics.expected_mass
                ));
            }
        }
        if let Some(s) = &self.spectrum {
            lines.push(format!("eigenvalues={} trials={} n={} seed={}", s.eigenvalues.len(), s.trials, s.n, s.seed));
        }
        if let (Some(ks), Some(est)) = (self.ks_distance, &self.estimate) {
            lines.push(format!("ks_distance={ks} mass={}", est.mass));
        }
        lines
    }
}

/// Executes `spec`, writing the outputs it names. Relative covariance paths
/// resolve against `base_dir`.
pub fn run(spec: &RunSpec, base_dir: &Path, exec: Execution, strict: bool) -> Result<Report> {
    spec.validate()?;
    let mixture = spec.build_mixture(base_dir)?;
    let mut report = Report { estimate: None, spectrum: None, ks_distance: None };

    if matches!(spec.mode, Mode::Esd | Mode::Compare) {
        let est = pipeline::compute_esd_with(&mixture, &spec.solver, exec)?;
        write_density_csv(BufWriter::new(create(&spec.output.density)?), &est)?;
        let failed = est.diagnostics.nonconverged.len();
        report.estimate = Some(est);
        if strict && failed > 0 {
            return Err(Error::NotConverged(failed));
        }
    }
    if matches!(spec.mode, Mode::Montecarlo | Mode::Compare) {
        let mc = &spec.montecarlo;
        let n = mc.n.unwrap_or_else(|| montecarlo::natural_sample_size(&mixture));
        let sample = montecarlo::sample_spectrum_with(&mixture, n, mc.trials, mc.seed, exec)?;
        montecarlo::write_eigenvalues(BufWriter::new(create(&spec.output.eigenvalues)?), &sample)?;
        report.spectrum = Some(sample);
    }
    if let (Some(est), Some(sample)) = (&report.estimate, &report.spectrum) {
        report.ks_distance = Some(montecarlo::ks_distance(sample, est));
    }
    Ok(report)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Spec(format!("cannot write {}: {e}", path.display())))
}

/// Command-line arguments. Flags override the corresponding spec keys.
#[derive(Debug, Parser)]
#[command(name = "esdmix", version, about = "Spectral density of sample covariance matrices under population mixtures")]
pub struct Args {
    /// Run specification (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Output file: the density table, or the eigenvalue dump in montecarlo mode.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Regridding rounds.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail when any grid point does not converge.
    #[arg(long)]
    pub strict: bool,
}

impl Args {
    pub fn apply(&self, spec: &mut RunSpec) {
        if let Some(m) = self.mode {
            spec.mode = m;
        }
        if let Some(out) = &self.out {
            match spec.mode {
                Mode::Montecarlo => spec.output.eigenvalues = out.clone(),
                _ => spec.output.density = out.clone(),
            }
        }
        if let Some(e) = self.epsilon {
            spec.solver.epsilon = e;
        }
        if let Some(l) = self.levels {
            spec.solver.levels = l;
        }
        if let Some(s) = self.seed {
            spec.montecarlo.seed = s;
        }
    }
}

/// Chooses the execution mode for a worker count, sizing the global pool
/// when the parallel backend is compiled in.
pub fn configure_workers(workers: Option<usize>) -> Result<Execution> {
    match workers {
        Some(0) => Err(Error::InvalidConfig("workers must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(w) => {
            // A second configuration attempt in the same process keeps the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::default()),
    }
}

/// Full driver behind the binary; returns the lines to print.
pub fn execute(args: &Args) -> Result<Vec<String>> {
    let mut spec = RunSpec::load(&args.spec)?;
    args.apply(&mut spec);
    let exec = configure_workers(args.workers)?;
    let base = args.spec.parent().unwrap_or(Path::new("."));
    let report = run(&spec, base, exec, args.strict)?;
    Ok(report.summary())
}

/// Reads a density table written by [`write_density_csv`].
pub fn load_density_table(path: &Path) -> Result<Vec<DensityRow>> {
    let file = File::open(path).map_err(|e| Error::Spec(format!("cannot open {}: {e}", path.display())))?;
    read_density_csv(BufReader::new(file))
}
