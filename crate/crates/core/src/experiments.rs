//! Seeded experiment grids: the success-rate phase diagram over `(d, n)`,
//! the sample-complexity sweep over the mixture mean, and convergence traces
//! over the mean scale. Every trial draws its teacher, data and
//! initializations from seeds derived with [`seed_for`], so any single row
//! can be reproduced in isolation.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{ensemble_agreement, is_success, perm_distance};
use crate::gmm::GmmParams;
use crate::network::{generate_dataset, Weights};
use crate::tensor_init::{initialize, InitConfig};
use crate::training::{gradient_descent, step_size, GdConfig, LineFit, StopReason, TrainTrace};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Success rate a sample size must reach to count toward `n*`.
pub const SWEEP_SUCCESS_RATE: f64 = 0.8;

/// Fraction of the trace (from the end) used for the log-error slope.
pub const CONVERGENCE_FIT_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PhaseDiagram,
    MeanSweep,
    Convergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Entries `N(0, 1/d)`.
    Random,
    /// Moment-based initialization.
    Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!(
                "scale must be `paper` or `desk`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

/// Mean of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSpec {
    /// `c · 𝟙`.
    Constant(f64),
    /// An explicit vector; its length must equal every `d` of the grid.
    Vector(Vec<f64>),
    /// `(factor · s) · 𝟙` where `s` is the current sweep value.
    Swept(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: MeanSpec,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub scale: Scale,
    pub dims: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    /// Hidden neurons `K`.
    pub neurons: usize,
    pub mixture: Vec<ComponentSpec>,
    /// Mean magnitudes `μ` (mean sweep) or scales `C` (convergence).
    pub sweep: Vec<f64>,
    /// Initializations `M` per trial.
    pub restarts: usize,
    pub trials: usize,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub threshold: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub init: InitKind,
}

/// Config file contents. Missing grid fields come from the scale preset.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kind: ExperimentKind,
    scale: Option<Scale>,
    dims: Option<Vec<usize>>,
    sample_sizes: Option<Vec<usize>>,
    neurons: Option<usize>,
    mixture: Option<Vec<ComponentSpec>>,
    sweep: Option<Vec<f64>>,
    restarts: Option<usize>,
    trials: Option<usize>,
    max_steps: Option<usize>,
    grad_tol: Option<f64>,
    threshold: Option<f64>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    init: Option<InitKind>,
}

/// `count` integers spaced geometrically from `lo` to `hi`, rounded to the
/// nearest multiple of 50.
pub fn geometric_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![lo];
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / (count - 1) as f64);
    (0..count)
        .map(|i| {
            let v = lo as f64 * ratio.powi(i as i32);
            ((v / 50.0).round() as usize * 50).max(1)
        })
        .collect()
}

fn symmetric_pair_spec(c: MeanSpec, neg: MeanSpec) -> Vec<ComponentSpec> {
    vec![
        ComponentSpec { weight: 0.5, mean: c },
        ComponentSpec { weight: 0.5, mean: neg },
    ]
}

impl ExperimentConfig {
    /// Built-in grid for an experiment kind at the given scale.
    pub fn preset(kind: ExperimentKind, scale: Scale) -> Self {
        let base = |dims, sample_sizes, mixture, sweep, restarts, trials, init| Self {
            kind,
            scale,
            dims,
            sample_sizes,
            neurons: 3,
            mixture,
            sweep,
            restarts,
            trials,
            max_steps: 10_000,
            grad_tol: 1e-10,
            threshold: crate::evaluation::SUCCESS_THRESHOLD,
            seed: 0,
            output: PathBuf::from("results"),
            init,
        };
        let pair = || symmetric_pair_spec(MeanSpec::Constant(0.5), MeanSpec::Constant(-0.5));
        let lopsided = || {
            vec![
                ComponentSpec { weight: 0.4, mean: MeanSpec::Swept(1.0) },
                ComponentSpec { weight: 0.6, mean: MeanSpec::Constant(0.0) },
            ]
        };
        let scaled_pair = || symmetric_pair_spec(MeanSpec::Swept(1.0), MeanSpec::Swept(-1.0));
        match (kind, scale) {
            (ExperimentKind::PhaseDiagram, Scale::Paper) => base(
                (12..=50).step_by(2).collect(),
                geometric_grid(2_000, 30_000, 8),
                pair(),
                vec![],
                20,
                20,
                InitKind::Random,
            ),
            (ExperimentKind::PhaseDiagram, Scale::Desk) => Self {
                max_steps: 20_000,
                grad_tol: 1e-7,
                ..base(
                    vec![8, 12, 16],
                    vec![1_250, 2_500, 5_000, 10_000],
                    pair(),
                    vec![],
                    5,
                    10,
                    InitKind::Random,
                )
            },
            (ExperimentKind::MeanSweep, Scale::Paper) => base(
                vec![10],
                geometric_grid(2_000, 30_000, 8),
                lopsided(),
                (0..=8).map(|i| i as f64 * 0.25).collect(),
                20,
                20,
                InitKind::Random,
            ),
            (ExperimentKind::MeanSweep, Scale::Desk) => Self {
                max_steps: 20_000,
                grad_tol: 1e-7,
                ..base(
                    vec![6],
                    vec![1_000, 2_000, 4_000, 8_000],
                    lopsided(),
                    vec![0.0, 1.0, 2.0],
                    3,
                    5,
                    InitKind::Random,
                )
            },
            (ExperimentKind::Convergence, Scale::Paper) => base(
                vec![5],
                vec![10_000],
                scaled_pair(),
                vec![0.0, 0.5, 1.0],
                1,
                1,
                InitKind::Tensor,
            ),
            (ExperimentKind::Convergence, Scale::Desk) => Self {
                max_steps: 60_000,
                ..base(
                    vec![5],
                    vec![10_000],
                    scaled_pair(),
                    vec![0.0, 0.5, 1.0],
                    1,
                    5,
                    InitKind::Tensor,
                )
            },
        }
    }

    /// Parses a TOML document. `scale_override` wins over the file's `scale`.
    pub fn from_toml_str(text: &str, scale_override: Option<Scale>) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let scale = scale_override.or(file.scale).unwrap_or(Scale::Desk);
        let p = Self::preset(file.kind, scale);
        let cfg = Self {
            kind: file.kind,
            scale,
            dims: file.dims.unwrap_or(p.dims),
            sample_sizes: file.sample_sizes.unwrap_or(p.sample_sizes),
            neurons: file.neurons.unwrap_or(p.neurons),
            mixture: file.mixture.unwrap_or(p.mixture),
            sweep: file.sweep.unwrap_or(p.sweep),
            restarts: file.restarts.unwrap_or(p.restarts),
            trials: file.trials.unwrap_or(p.trials),
            max_steps: file.max_steps.unwrap_or(p.max_steps),
            grad_tol: file.grad_tol.unwrap_or(p.grad_tol),
            threshold: file.threshold.unwrap_or(p.threshold),
            seed: file.seed.unwrap_or(p.seed),
            output: file.output.unwrap_or(p.output),
            init: file.init.unwrap_or(p.init),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML form accepted by [`ExperimentConfig::from_toml_str`].
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path, scale_override: Option<Scale>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, scale_override)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("field `{name}`: {msg}")));
        if self.dims.is_empty() {
            return field("dims", "must be nonempty");
        }
        if self.dims.contains(&0) {
            return field("dims", "every d must be at least 1");
        }
        if self.sample_sizes.is_empty() {
            return field("sample_sizes", "must be nonempty");
        }
        if self.mixture.is_empty() {
            return field("mixture", "must have at least one component");
        }
        if self.neurons == 0 {
            return field("neurons", "must be at least 1");
        }
        if self.trials == 0 {
            return field("trials", "must be at least 1");
        }
        if self.max_steps == 0 {
            return field("max_steps", "must be at least 1");
        }
        if !(self.grad_tol >= 0.0 && self.grad_tol.is_finite()) {
            return field("grad_tol", "must be a finite nonnegative number");
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return field("threshold", "must be a finite positive number");
        }
        let weights: Vec<f64> = self.mixture.iter().map(|c| c.weight).collect();
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return field("mixture", "component weights must be in [0, 1] and sum to 1");
        }
        for (l, c) in self.mixture.iter().enumerate() {
            match &c.mean {
                MeanSpec::Vector(v) => {
                    if let Some(&d) = self.dims.iter().find(|&&d| d != v.len()) {
                        return field(
                            "mixture",
                            &format!("component {l} mean has length {} but d = {d}", v.len()),
                        );
                    }
                }
                MeanSpec::Swept(_) if self.kind == ExperimentKind::PhaseDiagram => {
                    return field("mixture", "swept means need a mean_sweep or convergence run");
                }
                _ => {}
            }
        }
        match self.kind {
            ExperimentKind::PhaseDiagram | ExperimentKind::MeanSweep => {
                if self.restarts < 2 {
                    return field("restarts", "agreement needs at least 2 restarts");
                }
            }
            ExperimentKind::Convergence => {
                if self.dims.len() != 1 || self.sample_sizes.len() != 1 {
                    return field("dims", "convergence runs take exactly one d and one n");
                }
            }
        }
        if self.kind != ExperimentKind::PhaseDiagram && self.sweep.is_empty() {
            return field("sweep", "must be nonempty");
        }
        if self.kind == ExperimentKind::MeanSweep
            && self.sample_sizes.windows(2).any(|w| w[0] >= w[1])
        {
            return field("sample_sizes", "must be sorted strictly ascending");
        }
        let min_d = *self.dims.iter().min().expect("nonempty");
        if self.init == InitKind::Tensor && self.neurons > min_d {
            return field("neurons", "tensor initialization needs K <= d");
        }
        let min_n = *self.sample_sizes.iter().min().expect("nonempty");
        if min_n < 3 * self.neurons {
            return field("sample_sizes", "every n must be at least 3K");
        }
        Ok(())
    }

    /// Mixture at dimension `d` for sweep value `s`.
    pub fn params(&self, d: usize, s: f64) -> Result<GmmParams> {
        let means = self
            .mixture
            .iter()
            .map(|c| match &c.mean {
                MeanSpec::Constant(v) => DVector::from_element(d, *v),
                MeanSpec::Swept(f) => DVector::from_element(d, f * s),
                MeanSpec::Vector(v) => DVector::from_column_slice(v),
            })
            .collect();
        GmmParams::new(self.mixture.iter().map(|c| c.weight).collect(), means)
    }

    fn gd(&self, params: &GmmParams) -> GdConfig {
        GdConfig::new(step_size(params))
            .max_steps(self.max_steps)
            .grad_tol(self.grad_tol)
    }
}

/// Grid coordinates of a trial. `param` is `μ` or `C`, and `0` in the phase
/// diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub d: usize,
    pub n: usize,
    pub param: f64,
}

/// Random stream within a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Teacher weights and samples.
    Data,
    /// Initialization `m`.
    Restart(usize),
}

/// Seed for `(base_seed, cell, trial, stream)`: the first eight bytes of a
/// SHA-256 digest of the tuple's fixed-width encoding.
pub fn seed_for(base_seed: u64, cell: &Cell, trial: usize, stream: Stream) -> u64 {
    let stream_id = match stream {
        Stream::Data => 0,
        Stream::Restart(m) => m as u64 + 1,
    };
    let mut h = Sha256::new();
    h.update(b"mixlearn/seed/v1");
    h.update(base_seed.to_le_bytes());
    h.update((cell.d as u64).to_le_bytes());
    h.update((cell.n as u64).to_le_bytes());
    h.update(cell.param.to_bits().to_le_bytes());
    h.update((trial as u64).to_le_bytes());
    h.update(stream_id.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Outcome of one trial: a teacher, its data, `M` trained restarts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub cell: Cell,
    pub trial: usize,
    /// Seed of the data stream.
    pub seed: u64,
    pub success: bool,
    pub e_value: f64,
    pub init: InitKind,
    /// Steps run by each restart.
    pub steps: Vec<usize>,
    /// Largest step count, when every restart stopped on the gradient
    /// tolerance.
    pub steps_to_tolerance: Option<usize>,
    /// Distance from the first restart's final weights to the teacher.
    pub final_distance: f64,
}

impl TrialRecord {
    /// `a,b,trial,seed,success,e_value` with the two leading coordinates
    /// chosen by the caller.
    fn csv_row(&self, lead: &str) -> String {
        format!(
            "{lead},{},{},{},{:e}",
            self.trial,
            self.seed,
            u8::from(self.success),
            self.e_value
        )
    }
}

fn init_weights(
    cfg: &ExperimentConfig,
    params: &GmmParams,
    data: &crate::network::Dataset,
    cell: &Cell,
    trial: usize,
    m: usize,
) -> Result<Weights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, cell, trial, Stream::Restart(m)));
    match cfg.init {
        InitKind::Random => Ok(Weights::random(
            cell.d,
            cfg.neurons,
            1.0 / (cell.d as f64).sqrt(),
            &mut rng,
        )),
        InitKind::Tensor => initialize(data, params, cfg.neurons, &mut rng, &InitConfig::default())
            .map(|r| r.w0)
            .map_err(|e| e.at("initialization")),
    }
}

/// Draws the trial's teacher and data.
fn trial_problem(
    cfg: &ExperimentConfig,
    cell: &Cell,
    trial: usize,
) -> Result<(GmmParams, Weights, crate::network::Dataset, u64)> {
    let params = cfg.params(cell.d, cell.param).map_err(|e| e.at("mixture"))?;
    let seed = seed_for(cfg.seed, cell, trial, Stream::Data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wstar = Weights::random(cell.d, cfg.neurons, 1.0, &mut rng);
    let data = generate_dataset(&params, &wstar, cell.n, &mut rng).map_err(|e| e.at("data"))?;
    Ok((params, wstar, data, seed))
}

/// Runs one trial of the phase diagram or the mean sweep.
pub fn run_trial(cfg: &ExperimentConfig, cell: &Cell, trial: usize) -> Result<TrialRecord> {
    let (params, wstar, data, seed) = trial_problem(cfg, cell, trial)?;
    let gd = cfg.gd(&params);
    let mut finals = Vec::with_capacity(cfg.restarts);
    let mut steps = Vec::with_capacity(cfg.restarts);
    let mut all_converged = true;
    for m in 0..cfg.restarts {
        let w0 = init_weights(cfg, &params, &data, cell, trial, m)?;
        let trace = gradient_descent(&w0, &data, &gd).map_err(|e| e.at("training"))?;
        all_converged &= trace.stop == StopReason::GradientTolerance;
        steps.push(trace.steps_run);
        finals.push(trace.final_weights);
    }
    let e_value = ensemble_agreement(&finals).map_err(|e| e.at("evaluation"))?;
    let final_distance = perm_distance(&finals[0], &wstar).map_err(|e| e.at("evaluation"))?;
    Ok(TrialRecord {
        cell: *cell,
        trial,
        seed,
        success: is_success(e_value, cfg.threshold),
        e_value,
        init: cfg.init,
        steps_to_tolerance: all_converged.then(|| *steps.iter().max().expect("M >= 1")),
        steps,
        final_distance,
    })
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn run_trials(cfg: &ExperimentConfig, items: &[(Cell, usize)]) -> Result<Vec<TrialRecord>> {
    items
        .par_iter()
        .map(|(cell, trial)| run_trial(cfg, cell, *trial))
        .collect()
}

/// Success count over the trials of one `(d, n)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub n: usize,
    pub successes: usize,
    pub trials: usize,
}

impl CellSummary {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone)]
pub struct PhaseResult {
    /// In `(d, n, trial)` order.
    pub records: Vec<TrialRecord>,
    /// In `(d, n)` order.
    pub summary: Vec<CellSummary>,
}

impl PhaseResult {
    /// Header `d,n,trial,seed,success,e_value`.
    pub fn write_trials_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "d,n,trial,seed,success,e_value")?;
        for r in &self.records {
            writeln!(out, "{}", r.csv_row(&format!("{},{}", r.cell.d, r.cell.n)))?;
        }
        Ok(())
    }

    /// Header `d,n,success_rate,trials`.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "d,n,success_rate,trials")?;
        for s in &self.summary {
            writeln!(out, "{},{},{},{}", s.d, s.n, s.rate(), s.trials)?;
        }
        Ok(())
    }
}

fn require_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "field `kind`: expected {kind:?}, got {:?}",
            cfg.kind
        )));
    }
    cfg.validate()
}

/// Success rates over the `(d, n)` grid with random initializations.
pub fn run_phase_diagram(cfg: &ExperimentConfig, workers: usize) -> Result<PhaseResult> {
    require_kind(cfg, ExperimentKind::PhaseDiagram)?;
    let mut items = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.sample_sizes {
            for t in 0..cfg.trials {
                items.push((Cell { d, n, param: 0.0 }, t));
            }
        }
    }
    let records = with_pool(workers, || run_trials(cfg, &items))??;
    let summary = records
        .chunks(cfg.trials)
        .map(|chunk| CellSummary {
            d: chunk[0].cell.d,
            n: chunk[0].cell.n,
            successes: chunk.iter().filter(|r| r.success).count(),
            trials: chunk.len(),
        })
        .collect();
    Ok(PhaseResult { records, summary })
}

/// Smallest index whose rate reaches `target`, found by bisection under the
/// assumption that the rate is nondecreasing along `0..len`. Returns the
/// index (or `None`) together with the rate there (or at the last index).
pub fn bisect_threshold(
    len: usize,
    target: f64,
    mut rate_at: impl FnMut(usize) -> Result<f64>,
) -> Result<(Option<usize>, f64)> {
    if len == 0 {
        return Err(Error::InvalidInput("empty sample-size grid".into()));
    }
    let mut cache: Vec<Option<f64>> = vec![None; len];
    let mut eval = |i: usize, cache: &mut Vec<Option<f64>>| -> Result<f64> {
        if let Some(r) = cache[i] {
            return Ok(r);
        }
        let r = rate_at(i)?;
        cache[i] = Some(r);
        Ok(r)
    };
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if eval(mid, &mut cache)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo == len {
        Ok((None, eval(len - 1, &mut cache)?))
    } else {
        Ok((Some(lo), eval(lo, &mut cache)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub mu: f64,
    /// `None` when no grid size reaches the target rate.
    pub n_star: Option<usize>,
    pub rate_at_n_star: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Every evaluated trial, in `(μ, n, trial)` order.
    pub records: Vec<TrialRecord>,
}

impl SweepResult {
    /// Header `mu,n_star,rate_at_n_star,trials_per_point`; `n_star` is `inf`
    /// when no grid size suffices.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mu,n_star,rate_at_n_star,trials_per_point")?;
        for p in &self.points {
            let n = p.n_star.map_or_else(|| "inf".to_string(), |n| n.to_string());
            writeln!(out, "{},{n},{},{}", p.mu, p.rate_at_n_star, p.trials)?;
        }
        Ok(())
    }

    /// Header `mu,n,trial,seed,success,e_value`.
    pub fn write_trials_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mu,n,trial,seed,success,e_value")?;
        for r in &self.records {
            writeln!(out, "{}", r.csv_row(&format!("{},{}", r.cell.param, r.cell.n)))?;
        }
        Ok(())
    }
}

/// Estimated sample complexity `n*(μ)` for every sweep value.
pub fn run_mean_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    require_kind(cfg, ExperimentKind::MeanSweep)?;
    let d = cfg.dims[0];
    let per_mu = with_pool(workers, || {
        cfg.sweep
            .par_iter()
            .map(|&mu| {
                let mut records = Vec::new();
                let (idx, rate) = bisect_threshold(cfg.sample_sizes.len(), SWEEP_SUCCESS_RATE, |i| {
                    let cell = Cell { d, n: cfg.sample_sizes[i], param: mu };
                    let items: Vec<(Cell, usize)> = (0..cfg.trials).map(|t| (cell, t)).collect();
                    let batch = run_trials(cfg, &items)?;
                    let ok = batch.iter().filter(|r| r.success).count();
                    records.extend(batch);
                    Ok(ok as f64 / cfg.trials as f64)
                })?;
                records.sort_by_key(|r| (r.cell.n, r.trial));
                Ok((
                    SweepPoint {
                        mu,
                        n_star: idx.map(|i| cfg.sample_sizes[i]),
                        rate_at_n_star: rate,
                        trials: cfg.trials,
                    },
                    records,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut points = Vec::new();
    let mut records = Vec::new();
    for (p, r) in per_mu {
        points.push(p);
        records.extend(r);
    }
    Ok(SweepResult { points, records })
}

/// One initialized-then-trained run of the convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub c: f64,
    pub trial: usize,
    pub seed: u64,
    pub trace: TrainTrace,
    /// Fit of `log rel_error` against the step over the last 80% of steps.
    pub fit: Option<LineFit>,
    pub init_distance: f64,
    pub final_distance: f64,
}

impl ConvergenceRun {
    /// Fitted per-step error ratio `exp(slope)`.
    pub fn error_ratio(&self) -> Option<f64> {
        self.fit.map(|f| f.slope.exp())
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceResult {
    /// In `(C, trial)` order.
    pub runs: Vec<ConvergenceRun>,
}

impl ConvergenceResult {
    /// Mean fitted slope per `C`, over the trials that produced a fit.
    pub fn log_rates(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < self.runs.len() {
            let c = self.runs[i].c;
            let group: Vec<f64> = self.runs[i..]
                .iter()
                .take_while(|r| r.c == c)
                .filter_map(|r| r.fit.map(|f| f.slope))
                .collect();
            let len = self.runs[i..].iter().take_while(|r| r.c == c).count();
            let mean = if group.is_empty() {
                f64::NAN
            } else {
                group.iter().sum::<f64>() / group.len() as f64
            };
            out.push((c, mean));
            i += len;
        }
        out
    }

    /// Header `C,step,rel_error,risk`; the first trial of every `C`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "C,step,rel_error,risk")?;
        for run in self.runs.iter().filter(|r| r.trial == 0) {
            for (t, (e, f)) in run.trace.rel_error.iter().zip(&run.trace.risk).enumerate() {
                writeln!(out, "{},{t},{e:e},{f:e}", run.c)?;
            }
        }
        Ok(())
    }

    /// Header `C,log_rate`.
    pub fn write_slopes_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "C,log_rate")?;
        for (c, rate) in self.log_rates() {
            writeln!(out, "{c},{rate:e}")?;
        }
        Ok(())
    }
}

/// Runs one convergence trial for mean scale `c`.
pub fn run_convergence_trial(cfg: &ExperimentConfig, c: f64, trial: usize) -> Result<ConvergenceRun> {
    let cell = Cell {
        d: cfg.dims[0],
        n: cfg.sample_sizes[0],
        param: c,
    };
    let (params, wstar, data, seed) = trial_problem(cfg, &cell, trial)?;
    let w0 = init_weights(cfg, &params, &data, &cell, trial, 0)?;
    let trace = gradient_descent(&w0, &data, &cfg.gd(&params)).map_err(|e| e.at("training"))?;
    Ok(ConvergenceRun {
        c,
        trial,
        seed,
        fit: trace.log_error_fit(CONVERGENCE_FIT_FRACTION),
        init_distance: perm_distance(&w0, &wstar).map_err(|e| e.at("evaluation"))?,
        final_distance: perm_distance(&trace.final_weights, &wstar)
            .map_err(|e| e.at("evaluation"))?,
        trace,
    })
}

/// Initialization followed by gradient descent for every mean scale `C`.
pub fn run_convergence(cfg: &ExperimentConfig, workers: usize) -> Result<ConvergenceResult> {
    require_kind(cfg, ExperimentKind::Convergence)?;
    let items: Vec<(f64, usize)> = cfg
        .sweep
        .iter()
        .flat_map(|&c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let runs = with_pool(workers, || {
        items
            .par_iter()
            .map(|&(c, t)| run_convergence_trial(cfg, c, t))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(ConvergenceResult { runs })
}

/// Assumptions written next to every output file.
pub const ASSUMPTIONS: &[&str] = &[
    "mixture components have identity covariance",
    "the step-size mean norm uses the component means as given",
    "labels are encoded as 0/1",
    "agreement is the RMS over entries of the population (divide by M) standard deviation after column matching to the first run",
    "success means agreement strictly below the threshold",
    "n* is the smallest grid size with success rate >= 0.8, found by bisection assuming monotone rates",
    "random initializations draw entries from N(0, 1/d); teacher entries from N(0, 1)",
];

#[derive(Serialize)]
struct Metadata<'a> {
    artifact: &'static str,
    version: &'static str,
    file: String,
    config: &'a ExperimentConfig,
    sample_size_grid: &'static str,
    step_sizes: Vec<StepSizeNote>,
    assumptions: &'static [&'static str],
}

#[derive(Serialize)]
struct StepSizeNote {
    d: usize,
    param: f64,
    step_size: f64,
}

fn is_geometric(sizes: &[usize]) -> bool {
    if sizes.len() < 3 {
        return true;
    }
    let ratios: Vec<f64> = sizes.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    ratios.iter().all(|r| (r / ratios[0] - 1.0).abs() < 0.05)
}

fn write_with_metadata(
    cfg: &ExperimentConfig,
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut out = BufWriter::new(fs::File::create(&path)?);
    body(&mut out)?;
    out.flush()?;

    let params: Vec<f64> = if cfg.kind == ExperimentKind::PhaseDiagram {
        vec![0.0]
    } else {
        cfg.sweep.clone()
    };
    let mut step_sizes = Vec::new();
    for &d in &cfg.dims {
        for &s in &params {
            step_sizes.push(StepSizeNote {
                d,
                param: s,
                step_size: step_size(&cfg.params(d, s)?),
            });
        }
    }
    let meta = Metadata {
        artifact: "mixlearn",
        version: ARTIFACT_VERSION,
        file: name.to_string(),
        config: cfg,
        sample_size_grid: if is_geometric(&cfg.sample_sizes) {
            "geometric"
        } else {
            "explicit"
        },
        step_sizes,
        assumptions: ASSUMPTIONS,
    };
    let meta_path = dir.join(format!("{name}.meta.json"));
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&meta_path, text + "\n")?;
    Ok(path)
}

fn write_jsonl<W: Write>(records: &[TrialRecord], out: &mut W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Runs the configured experiment and writes its CSV files (each with a
/// `.meta.json` sibling) into `cfg.output`. Returns the written data files.
pub fn run_and_write(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at("output"))?;
    let out = |r: Result<PathBuf>| r.map_err(|e| e.at("output"));
    let mut written = Vec::new();
    match cfg.kind {
        ExperimentKind::PhaseDiagram => {
            let res = run_phase_diagram(cfg, workers)?;
            written.push(out(write_with_metadata(cfg, dir, "phase_trials.csv", |w| {
                res.write_trials_csv(w)
            }))?);
            written.push(out(write_with_metadata(cfg, dir, "phase_summary.csv", |w| {
                res.write_summary_csv(w)
            }))?);
            written.push(out(write_with_metadata(cfg, dir, "phase_records.jsonl", |w| {
                write_jsonl(&res.records, w)
            }))?);
        }
        ExperimentKind::MeanSweep => {
            let res = run_mean_sweep(cfg, workers)?;
            written.push(out(write_with_metadata(cfg, dir, "mean_sweep.csv", |w| {
                res.write_csv(w)
            }))?);
            written.push(out(write_with_metadata(cfg, dir, "mean_sweep_trials.csv", |w| {
                res.write_trials_csv(w)
            }))?);
            written.push(out(write_with_metadata(cfg, dir, "mean_sweep_records.jsonl", |w| {
                write_jsonl(&res.records, w)
            }))?);
        }
        ExperimentKind::Convergence => {
            let res = run_convergence(cfg, workers)?;
            written.push(out(write_with_metadata(cfg, dir, "convergence.csv", |w| {
                res.write_csv(w)
            }))?);
            written.push(out(write_with_metadata(cfg, dir, "convergence_slopes.csv", |w| {
                res.write_slopes_csv(w)
            }))?);
        }
    }
    Ok(written)
}
