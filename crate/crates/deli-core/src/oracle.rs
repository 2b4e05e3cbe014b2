//! Entry oracles: the only channel to ground-truth tensor entries.
//!
//! Every oracle counts distinct revealed indices per pipeline phase
//! (first-access counting: re-reading a revealed entry is free) and can replay
//! everything it has revealed, which is what the masked-ALS refinement and the
//! nonadaptivity audit consume.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::cp::CpDecomposition;
use crate::tensor::{index_iter, DenseTensor};
use crate::Result;

/// Tensors at or below this entry count get an exact noise-norm correction;
/// larger ones use the analytic `sigma * sqrt(prod n_k)` expectation.
pub const EXACT_NOISE_LIMIT: u128 = 1_000_000;

/// Pipeline phase labels for sample accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum SamplePhase {
    SliceCompletion,
    JennrichRegion,
    CensoredLs,
    Als,
}

impl SamplePhase {
    pub const ALL: [SamplePhase; 4] = [
        SamplePhase::SliceCompletion,
        SamplePhase::JennrichRegion,
        SamplePhase::CensoredLs,
        SamplePhase::Als,
    ];
}

/// Snapshot of an oracle's sample accounting.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SampleLedger {
    /// Distinct indices first revealed during each phase.
    pub per_phase: std::collections::BTreeMap<SamplePhase, usize>,
    /// Cardinality of the union of all revealed index sets.
    pub total: usize,
}

impl SampleLedger {
    pub fn phase(&self, p: SamplePhase) -> usize {
        self.per_phase.get(&p).copied().unwrap_or(0)
    }
}

/// Gaussian noise specification: target SNR in dB (`None` = noise-free) and
/// the seed making the noise field a deterministic function of the index.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noise_free(seed: u64) -> Self {
        NoiseSpec { snr_db: None, seed }
    }

    pub fn with_snr(snr_db: f64, seed: u64) -> Self {
        NoiseSpec { snr_db: Some(snr_db), seed }
    }
}

/// The gateway to tensor entries. Querying reveals (and counts) an entry;
/// repeated queries return the identical value and are counted once.
pub trait EntryOracle: Sync {
    fn shape(&self) -> &[usize];

    fn query(&self, idx: &[usize], phase: SamplePhase) -> Result<f64>;

    fn ledger(&self) -> SampleLedger;

    /// All revealed entries with their values, in sorted index order.
    fn observed(&self) -> Vec<(Vec<usize>, f64)>;

    /// Per-entry noise standard deviation, when the oracle is noisy.
    fn noise_sigma(&self) -> Option<f64>;
}

#[derive(Default)]
struct LedgerState {
    per_phase: std::collections::BTreeMap<SamplePhase, usize>,
    seen: HashMap<Vec<usize>, f64>,
}

/// Deterministic standard normal attached to (seed, index).
fn hashed_normal(seed: u64, idx: &[usize]) -> f64 {
    // splitmix64 over the seed and coordinates.
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &i in idx {
        h ^= i as u64;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h);
    StandardNormal.sample(&mut rng)
}

struct NoiseField {
    spec: NoiseSpec,
    /// Multiplies the raw hashed normal; includes the SNR scaling and, for
    /// materializable tensors, the exact-norm correction.
    scale: f64,
}

impl NoiseField {
    fn new(spec: NoiseSpec, shape: &[usize], signal_norm: f64) -> Self {
        let scale = match spec.snr_db {
            None => 0.0,
            Some(snr) => {
                let target_norm = signal_norm / 10f64.powf(snr / 20.0);
                let entries: u128 = shape.iter().map(|&n| n as u128).product();
                if entries <= EXACT_NOISE_LIMIT {
                    let raw_norm: f64 = index_iter(shape)
                        .map(|idx| {
                            let g = hashed_normal(spec.seed, &idx);
                            g * g
                        })
                        .sum::<f64>()
                        .sqrt();
                    if raw_norm > 0.0 {
                        target_norm / raw_norm
                    } else {
                        0.0
                    }
                } else {
                    target_norm / (entries as f64).sqrt()
                }
            }
        };
        NoiseField { spec, scale }
    }

    fn sample(&self, idx: &[usize]) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.scale * hashed_normal(self.spec.seed, idx)
        }
    }
}

enum Truth {
    Cp(CpDecomposition),
    Dense(DenseTensor),
}

/// Counting oracle over a lazy CP ground truth or a stored dense tensor, with
/// optional per-entry Gaussian noise at a prescribed SNR.
pub struct TensorOracle {
    truth: Truth,
    shape: Vec<usize>,
    noise: NoiseField,
    state: Mutex<LedgerState>,
}

/// Lazy CP-backed oracle; never materializes the tensor.
pub fn cp_oracle(truth: CpDecomposition, noise: NoiseSpec) -> Result<TensorOracle> {
    let shape = truth.shape();
    let signal_norm = truth.frobenius_norm()?;
    Ok(TensorOracle {
        noise: NoiseField::new(noise, &shape, signal_norm),
        truth: Truth::Cp(truth),
        shape,
        state: Mutex::new(LedgerState::default()),
    })
}

/// Dense-backed oracle for tensors loaded from file.
pub fn dense_oracle(t: DenseTensor, noise: NoiseSpec) -> Result<TensorOracle> {
    let shape = t.shape().to_vec();
    let signal_norm = t.frobenius_norm();
    Ok(TensorOracle {
        noise: NoiseField::new(noise, &shape, signal_norm),
        truth: Truth::Dense(t),
        shape,
        state: Mutex::new(LedgerState::default()),
    })
}

impl TensorOracle {
    fn value(&self, idx: &[usize]) -> Result<f64> {
        let clean = match &self.truth {
            Truth::Cp(dec) => dec.entry(idx)?,
            Truth::Dense(t) => t.get(idx)?,
        };
        Ok(clean + self.noise.sample(idx))
    }
}

impl EntryOracle for TensorOracle {
    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn query(&self, idx: &[usize], phase: SamplePhase) -> Result<f64> {
        let v = self.value(idx)?;
        let mut state = self.state.lock().unwrap();
        if !state.seen.contains_key(idx) {
            state.seen.insert(idx.to_vec(), v);
            *state.per_phase.entry(phase).or_insert(0) += 1;
        }
        Ok(v)
    }

    fn ledger(&self) -> SampleLedger {
        let state = self.state.lock().unwrap();
        SampleLedger {
            per_phase: state.per_phase.clone(),
            total: state.seen.len(),
        }
    }

    fn observed(&self) -> Vec<(Vec<usize>, f64)> {
        let state = self.state.lock().unwrap();
        let mut out: Vec<_> = state.seen.iter().map(|(k, &v)| (k.clone(), v)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn noise_sigma(&self) -> Option<f64> {
        if self.noise.scale == 0.0 {
            None
        } else {
            Some(self.noise.scale)
        }
    }
}

/// A 2-D view into an oracle with all but two modes pinned; what the
/// slice-completion solvers consume.
pub struct MatrixSliceView<'a> {
    oracle: &'a dyn EntryOracle,
    /// Full-order index template; the two free modes are overwritten per query.
    template: Vec<usize>,
    row_mode: usize,
    col_mode: usize,
    phase: SamplePhase,
}

impl<'a> MatrixSliceView<'a> {
    pub fn new(
        oracle: &'a dyn EntryOracle,
        template: Vec<usize>,
        row_mode: usize,
        col_mode: usize,
        phase: SamplePhase,
    ) -> Self {
        MatrixSliceView { oracle, template, row_mode, col_mode, phase }
    }

    pub fn nrows(&self) -> usize {
        self.oracle.shape()[self.row_mode]
    }

    pub fn ncols(&self) -> usize {
        self.oracle.shape()[self.col_mode]
    }

    pub fn query(&self, i: usize, j: usize) -> Result<f64> {
        let mut idx = self.template.clone();
        idx[self.row_mode] = i;
        idx[self.col_mode] = j;
        self.oracle.query(&idx, self.phase)
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.oracle.noise_sigma()
    }
}
