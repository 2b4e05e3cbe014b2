//! Subcommand implementations shared by the binary and its integration tests.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use deli_core::als::{masked_als, AlsConfig};
use deli_core::cp::factor_match_error;
use deli_core::oracle::{cp_oracle, dense_oracle, EntryOracle, NoiseSpec};
use deli_core::pipeline::{complete, truth_mu0, DeliConfig, SamplingVariant};
use deli_core::synth::generate_synthetic;
use deli_core::{CpDecomposition, DeliError, DenseTensor};
use serde::Deserialize;

/// Fixed CSV schema shared by `sweep` output and `report` input.
pub const CSV_HEADER: &str = "variant,n,d,r,alpha,snr_db,gamma,delta_oversample,s,m,seed,\
rel_error,factor_error,samples_total,samples_fraction,runtime_ms,success";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Completion(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Completion(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Completion(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DeliError> for CliError {
    fn from(e: DeliError) -> Self {
        match e {
            DeliError::Parse { .. } | DeliError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Completion(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Deterministic per-trial seed stream (splitmix64 over a tagged base).
fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate(
    n: usize,
    d: usize,
    r: usize,
    alpha: f64,
    seed: u64,
    out: &Path,
    factors_dir: Option<&Path>,
) -> Result<()> {
    let truth = generate_synthetic(n, d, r, alpha, seed)?;
    let dense = truth.materialize()?;
    dense.save_text(out)?;
    if let Some(dir) = factors_dir {
        fs::create_dir_all(dir)?;
        truth.save_csv_dir(dir)?;
    }
    Ok(())
}

pub struct CompleteArgs {
    pub rank: usize,
    pub mu0: f64,
    pub nonadaptive: bool,
    pub seed: u64,
    pub s: Option<usize>,
    pub m: Option<usize>,
    pub gamma: Option<f64>,
    pub delta_oversample: Option<f64>,
    pub snr_db: Option<f64>,
    pub als_iters: usize,
}

fn dense_rel_error(truth: &DenseTensor, est: &CpDecomposition) -> Result<f64> {
    let approx = est.materialize()?;
    let num: f64 = truth
        .values()
        .iter()
        .zip(approx.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = truth.frobenius_norm();
    if den == 0.0 {
        return Err(CliError::Usage("input tensor is identically zero".into()));
    }
    Ok(num / den)
}

pub fn complete_file(tensor_path: &Path, args: CompleteArgs, out_dir: &Path) -> Result<()> {
    let tensor = DenseTensor::load_text(tensor_path)?;
    let total_entries = tensor.len() as f64;
    let noise = match args.snr_db {
        Some(db) => NoiseSpec::with_snr(db, mix_seed(args.seed, 1)),
        None => NoiseSpec::noise_free(mix_seed(args.seed, 1)),
    };
    let oracle = dense_oracle(tensor.clone(), noise)?;
    let mut cfg = DeliConfig::new(args.rank, args.mu0, args.seed);
    if args.nonadaptive {
        cfg.variant = SamplingVariant::Nonadaptive;
    }
    if let Some(s) = args.s {
        cfg.s = s;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if args.gamma.is_some() {
        cfg.gamma = args.gamma;
    }
    if args.delta_oversample.is_some() {
        cfg.delta_oversample = args.delta_oversample;
    }

    let start = Instant::now();
    let mut report = complete(&oracle, &cfg)?;
    if args.als_iters > 0 {
        let als_cfg = AlsConfig { iterations: args.als_iters, ..AlsConfig::default() };
        let refined = masked_als(&oracle.observed(), &report.decomposition, &als_cfg)?;
        report.decomposition = refined.decomposition;
    }
    let runtime_ms = start.elapsed().as_millis();

    let rel = dense_rel_error(&tensor, &report.decomposition)?;
    fs::create_dir_all(out_dir)?;
    report.save(out_dir)?;
    let summary = serde_json::json!({
        "success": report.success,
        "rel_error": rel,
        "samples_total": report.ledger.total,
        "samples_fraction": report.ledger.total as f64 / total_entries,
        "runtime_ms": runtime_ms as u64,
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))? + "\n",
    )?;
    if !report.success {
        return Err(CliError::Completion(
            "pipeline finished without full recovery (see report.json)".into(),
        ));
    }
    Ok(())
}

fn default_trials() -> usize {
    1
}
fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
fn default_timing() -> bool {
    true
}
fn default_delta_oversample() -> Option<f64> {
    Some(8.0)
}

/// JSON schema for `sweep`; unknown keys are rejected to catch typos.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "SweepConfig::default_variant")]
    pub variant: SamplingVariant,
    pub n: usize,
    pub d: usize,
    /// Target ranks; the sweep runs the full (rank x gamma) grid.
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Per-slice budget fractions; `null` entries mean "no budget cap".
    #[serde(default = "SweepConfig::default_gammas")]
    pub gammas: Vec<Option<f64>>,
    #[serde(default = "default_delta_oversample")]
    pub delta_oversample: Option<f64>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    /// Coherence handed to the pipeline; omitted means "measure from the truth".
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub als_iters: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// With `"timing": false` the runtime column is written as 0 so repeated
    /// runs produce byte-identical CSVs.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

impl SweepConfig {
    fn default_variant() -> SamplingVariant {
        SamplingVariant::Adaptive
    }
    fn default_gammas() -> Vec<Option<f64>> {
        vec![None]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: SweepConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if cfg.trials < 1 {
            return Err(CliError::Usage("trials must be >= 1".into()));
        }
        if cfg.ranks.is_empty() {
            return Err(CliError::Usage("ranks must be non-empty".into()));
        }
        if cfg.workers < 1 {
            return Err(CliError::Usage("workers must be >= 1".into()));
        }
        Ok(cfg)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct TrialRow {
    r: usize,
    gamma: Option<f64>,
    seed: u64,
    rel_error: Option<f64>,
    factor_error: Option<f64>,
    samples_total: usize,
    samples_fraction: f64,
    runtime_ms: u64,
    success: bool,
}

fn run_trial(cfg: &SweepConfig, r: usize, gamma: Option<f64>, seed: u64) -> TrialRow {
    let start = Instant::now();
    let mut row = TrialRow {
        r,
        gamma,
        seed,
        rel_error: None,
        factor_error: None,
        samples_total: 0,
        samples_fraction: 0.0,
        runtime_ms: 0,
        success: false,
    };
    let total_entries = (cfg.n as f64).powi(cfg.d as i32);
    let outcome = (|| -> std::result::Result<(), DeliError> {
        let truth = generate_synthetic(cfg.n, cfg.d, r, cfg.alpha, mix_seed(seed, 11))?;
        let mu0 = match cfg.mu0 {
            Some(v) => v,
            None => truth_mu0(&truth)?,
        };
        let noise = match cfg.snr_db {
            Some(db) => NoiseSpec::with_snr(db, mix_seed(seed, 12)),
            None => NoiseSpec::noise_free(mix_seed(seed, 12)),
        };
        let oracle = cp_oracle(truth.clone(), noise)?;
        let mut dc = DeliConfig::new(r, mu0, mix_seed(seed, 13));
        dc.variant = cfg.variant;
        dc.gamma = gamma;
        dc.delta_oversample = cfg.delta_oversample;
        if let Some(s) = cfg.s {
            dc.s = s;
        }
        if let Some(m) = cfg.m {
            dc.m = m;
        }
        let report = complete(&oracle, &dc)?;
        let mut est = report.decomposition;
        if cfg.als_iters > 0 {
            let als_cfg = AlsConfig { iterations: cfg.als_iters, ..AlsConfig::default() };
            est = masked_als(&oracle.observed(), &est, &als_cfg)?.decomposition;
        }
        row.rel_error = Some(CpDecomposition::rel_error(&truth, &est)?);
        row.factor_error = factor_match_error(&truth, &est).ok();
        row.samples_total = oracle.ledger().total;
        row.samples_fraction = row.samples_total as f64 / total_entries;
        row.success = report.success;
        Ok(())
    })();
    if outcome.is_err() {
        row.success = false;
    }
    if cfg.timing {
        row.runtime_ms = start.elapsed().as_millis() as u64;
    }
    row
}

pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<()> {
    // Enumerate the full grid up front so output order and per-trial seeds are
    // independent of scheduling.
    let mut jobs = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        for (ri, &r) in cfg.ranks.iter().enumerate() {
            for trial in 0..cfg.trials {
                let tag = ((gi as u64) << 40) | ((ri as u64) << 20) | trial as u64;
                jobs.push((r, gamma, mix_seed(cfg.seed_base, tag)));
            }
        }
    }

    let rows: Mutex<Vec<Option<TrialRow>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(r, gamma, seed)) = jobs.get(i) else { break };
                let row = run_trial(cfg, r, gamma, seed);
                rows.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let rows = rows.into_inner().unwrap();

    let mut file = fs::File::create(out)?;
    writeln!(file, "{CSV_HEADER}")?;
    for row in rows.into_iter().flatten() {
        let variant = match cfg.variant {
            SamplingVariant::Adaptive => "adaptive",
            SamplingVariant::Nonadaptive => "nonadaptive",
        };
        writeln!(
            file,
            "{variant},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.n,
            cfg.d,
            row.r,
            cfg.alpha,
            fmt_opt(cfg.snr_db),
            fmt_opt(row.gamma),
            fmt_opt(cfg.delta_oversample),
            cfg.s.map(|v| v.to_string()).unwrap_or_default(),
            cfg.m.map(|v| v.to_string()).unwrap_or_default(),
            row.seed,
            fmt_opt(row.rel_error),
            fmt_opt(row.factor_error),
            row.samples_total,
            row.samples_fraction,
            row.runtime_ms,
            row.success,
        )?;
    }
    Ok(())
}

/// Aggregate sweep CSVs: one row per distinct configuration, in first-seen order.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one input CSV".into()));
    }
    // Key = the configuration columns; values = per-trial measurements.
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(Option<f64>, Option<f64>, f64, f64, f64, bool)>> =
        HashMap::new();
    for path in inputs {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            other => {
                return Err(CliError::Io(format!(
                    "{}: malformed header {:?} (expected the sweep CSV schema)",
                    path.display(),
                    other.unwrap_or("")
                )))
            }
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 17 {
                return Err(CliError::Io(format!(
                    "{}:{}: expected 17 columns, got {}",
                    path.display(),
                    lineno + 2,
                    cols.len()
                )));
            }
            let bad = |field: &str| {
                CliError::Io(format!("{}:{}: bad {field} value", path.display(), lineno + 2))
            };
            let opt_f = |s: &str, field: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| bad(field))
                }
            };
            let key = cols[..10].join(",");
            let rel = opt_f(cols[11], "rel_error")?;
            let fac = opt_f(cols[12], "factor_error")?;
            let total: f64 = cols[13].parse().map_err(|_| bad("samples_total"))?;
            let fraction: f64 = cols[14].parse().map_err(|_| bad("samples_fraction"))?;
            let runtime: f64 = cols[15].parse().map_err(|_| bad("runtime_ms"))?;
            let success: bool = cols[16].parse().map_err(|_| bad("success"))?;
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push((rel, fac, total, fraction, runtime, success));
        }
    }

    let median = |v: &mut Vec<f64>| -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
    };
    let mean = |v: &[f64]| -> f64 { v.iter().sum::<f64>() / v.len() as f64 };

    let mut file = fs::File::create(out)?;
    writeln!(
        file,
        "variant,n,d,r,alpha,snr_db,gamma,delta_oversample,s,m,trials,successes,\
median_rel_error,mean_rel_error,median_factor_error,mean_samples_total,\
mean_samples_fraction,mean_runtime_ms"
    )?;
    for key in order {
        let rows = &groups[&key];
        let mut rels: Vec<f64> = rows.iter().filter_map(|r| r.0).collect();
        let mut facs: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
        let totals: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let fractions: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let runtimes: Vec<f64> = rows.iter().map(|r| r.4).collect();
        let successes = rows.iter().filter(|r| r.5).count();
        let mean_rels = rels.clone();
        writeln!(
            file,
            "{key},{},{},{},{},{},{},{},{}",
            rows.len(),
            successes,
            fmt_opt(median(&mut rels)),
            if mean_rels.is_empty() { String::new() } else { mean(&mean_rels).to_string() },
            fmt_opt(median(&mut facs)),
            mean(&totals),
            mean(&fractions),
            mean(&runtimes),
        )?;
    }
    Ok(())
}
