//! Analytic cost model and wall-clock benchmark for naive self-attention
//! versus complex self-attention, plus whole-model accounting against the
//! published parameter/FLOP table.
//!
//! Counting conventions (printed in every report header):
//!   * 1 multiply-accumulate (MAC) = 2 FLOPs in the full kernel model
//!   * one radix-2 FFT butterfly = 10 real FLOPs, so a length-n transform
//!     costs 5 n log2 n
//!   * normalizer = 6 FLOPs per map entry, fusion = 4 per entry
//!   * the published whole-model table scales exactly with pixel count,
//!     which rules out every token-quadratic attention term; its cells are
//!     therefore compared against a "module-counter" tally of the
//!     token-linear parameterized layers only (stem, LayerNorms, MLPs,
//!     transitions, head), in MAC units as module profilers report them.
//!     The full kernel-level count is reported alongside.

use std::time::Instant;

use crate::attention::{csa_forward, naive_sa, CsaParams, Normalizer};
use crate::error::{FctError, Result};
use crate::model::{count_params, FctConfig};
use crate::rng::Rng;
use crate::spectral::half_len;
use crate::tensor::RealTensor;

pub const MAC_FLOPS: f64 = 2.0;
pub const FFT_BUTTERFLY_FLOPS: f64 = 10.0;
pub const NORMALIZER_FLOPS_PER_ENTRY: f64 = 6.0;
pub const FUSION_FLOPS_PER_ENTRY: f64 = 4.0;

/// One line summarising the conventions above, for report headers.
pub fn conventions_header() -> String {
    format!(
        "# conventions: mac={MAC_FLOPS} flops, fft_butterfly={FFT_BUTTERFLY_FLOPS} flops \
         (5n*log2(n) per transform), normalizer={NORMALIZER_FLOPS_PER_ENTRY}/entry, \
         fusion={FUSION_FLOPS_PER_ENTRY}/entry; table-2 cells compared in module-counter \
         MACs over token-linear parameterized layers"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Sa,
    Csa,
}

impl Mechanism {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(Self::Sa),
            "csa" => Ok(Self::Csa),
            other => Err(FctError::Config(format!("unknown mechanism `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sa => "sa",
            Self::Csa => "csa",
        }
    }
}

fn log2f(n: usize) -> f64 {
    (n as f64).log2()
}

/// Attention-map-level cost in the paper's abstract units: SA pays n^2 for
/// its map; CSA pays two half-length maps plus forward/inverse transforms,
/// (n/2)^2/2 * 2 = n^2/2 and 2 n log2 n.
pub fn map_level_cost(mech: Mechanism, n: usize) -> f64 {
    let nf = n as f64;
    match mech {
        Mechanism::Sa => nf * nf,
        Mechanism::Csa => 0.5 * nf * nf + 2.0 * nf * log2f(n),
    }
}

fn fft_flops(n: usize) -> f64 {
    // (n/2) log2 n butterflies at FFT_BUTTERFLY_FLOPS each
    0.5 * n as f64 * log2f(n) * FFT_BUTTERFLY_FLOPS
}

/// Full kernel-level forward cost of one attention call on n tokens of c
/// channels (the shapes `run_bench` actually executes).
pub fn analytic_cost(mech: Mechanism, n: usize, c: usize) -> f64 {
    let (nf, cf) = (n as f64, c as f64);
    match mech {
        Mechanism::Sa => {
            // projections + logits + softmax + weighted sum
            let proj = 3.0 * nf * cf * cf * MAC_FLOPS;
            let logits = nf * nf * cf * MAC_FLOPS;
            let norm = NORMALIZER_FLOPS_PER_ENTRY * nf * nf;
            let value = nf * nf * cf * MAC_FLOPS;
            proj + logits + norm + value
        }
        Mechanism::Csa => {
            let l = half_len(n) as f64;
            let transforms = 2.0 * cf * fft_flops(n); // DFT + IDFT, c rows each
            let proj = 6.0 * cf * cf * l * MAC_FLOPS;
            let maps = 2.0 * l * l * cf * MAC_FLOPS;
            let norm = 2.0 * NORMALIZER_FLOPS_PER_ENTRY * l * l;
            let fusion = 2.0 * FUSION_FLOPS_PER_ENTRY * l * l;
            let value = 2.0 * l * l * cf * MAC_FLOPS;
            transforms + proj + maps + norm + fusion + value
        }
    }
}

/// Rough peak-allocation estimate in bytes, used for the memory-budget gate.
pub fn bytes_estimate(mech: Mechanism, n: usize, c: usize) -> u64 {
    let f = 8u64; // f64
    let (n64, c64) = (n as u64, c as u64);
    match mech {
        // input + q/k/v + two map-sized buffers
        Mechanism::Sa => f * (4 * n64 * c64 + 2 * n64 * n64),
        Mechanism::Csa => {
            let l = half_len(n) as u64;
            f * (2 * n64 * c64 + 8 * c64 * l + 6 * l * l)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub mechanism: String,
    pub n: usize,
    pub c: usize,
    pub analytic_flops: f64,
    pub measured_ns: u128,
    pub bytes_peak: u64,
    pub trials: usize,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str = "mechanism,n,c,analytic_flops,measured_ns,bytes_peak,trials";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.0},{},{},{}",
            self.mechanism, self.n, self.c, self.analytic_flops, self.measured_ns,
            self.bytes_peak, self.trials
        )
    }
}

#[derive(Debug, Clone)]
pub struct SkippedSize {
    pub mechanism: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedSize>,
    /// Smallest tested n at which CSA's measured time drops below SA's.
    pub crossover_n: Option<usize>,
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// One prepared mechanism instance whose forward can be timed repeatedly.
enum Prepared {
    Sa {
        x: RealTensor,
        wq: RealTensor,
        wk: RealTensor,
        wv: RealTensor,
    },
    Csa {
        x: RealTensor,
        params: CsaParams,
    },
}

impl Prepared {
    fn new(mech: Mechanism, n: usize, c: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        match mech {
            Mechanism::Sa => Prepared::Sa {
                x: RealTensor::from_fn(&[n, c], |_| rng.normal()),
                wq: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
                wk: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
                wv: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
            },
            Mechanism::Csa => Prepared::Csa {
                x: RealTensor::from_fn(&[c, n], |_| rng.normal()),
                params: CsaParams {
                    wq: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
                    wk: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
                    wv: RealTensor::from_fn(&[c, c], |_| rng.normal() * 0.2),
                    alpha: RealTensor::full(&[half_len(n)], 0.5),
                    normalizer: Normalizer::Logmax,
                },
            },
        }
    }

    fn run_once(&self) -> Result<u128> {
        let t0 = Instant::now();
        let y = match self {
            Prepared::Sa { x, wq, wk, wv } => naive_sa(x, wq, wk, wv)?,
            Prepared::Csa { x, params } => csa_forward(x, params, None)?,
        };
        let dt = t0.elapsed().as_nanos();
        std::hint::black_box(&y);
        Ok(dt.max(1))
    }
}

/// Time all mechanisms at one size with their trials interleaved round-robin,
/// so environmental drift (shared-core contention, frequency changes) biases
/// every mechanism equally instead of whichever ran in the noisy window.
fn time_size(
    mechanisms: &[Mechanism],
    n: usize,
    c: usize,
    trials: usize,
    warmups: usize,
    seed: u64,
) -> Result<Vec<(Mechanism, u128)>> {
    let prepared: Vec<(Mechanism, Prepared)> = mechanisms
        .iter()
        .map(|&m| (m, Prepared::new(m, n, c, seed)))
        .collect();
    let mut samples: Vec<Vec<u128>> = vec![Vec::with_capacity(trials); prepared.len()];
    for round in 0..warmups + trials {
        for (i, (_, p)) in prepared.iter().enumerate() {
            let dt = p.run_once()?;
            if round >= warmups {
                samples[i].push(dt);
            }
        }
    }
    Ok(prepared
        .iter()
        .zip(samples)
        .map(|((m, _), s)| (*m, median(s)))
        .collect())
}

/// Timed comparison over the given sizes. Single-threaded by contract:
/// refuses to run under a wider thread pool. Sizes whose estimated peak
/// allocation exceeds the budget are skipped with a recorded reason.
#[allow(clippy::too_many_arguments)]
pub fn run_bench(
    mechanisms: &[Mechanism],
    sizes: &[usize],
    c: usize,
    trials: usize,
    warmups: usize,
    seed: u64,
    threads: usize,
    budget_bytes: u64,
) -> Result<BenchReport> {
    if threads > 1 {
        return Err(FctError::Config(format!(
            "bench is single-threaded by contract; FCT_THREADS={threads} refused"
        )));
    }
    if trials == 0 || c == 0 {
        return Err(FctError::Config("trials and c must be positive".into()));
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &n in sizes {
        if !n.is_power_of_two() {
            skipped.push(SkippedSize {
                mechanism: "*".into(),
                n,
                reason: "not a power of two".into(),
            });
            continue;
        }
        let mut runnable = Vec::new();
        for &mech in mechanisms {
            let est = bytes_estimate(mech, n, c);
            if est > budget_bytes {
                skipped.push(SkippedSize {
                    mechanism: mech.name().into(),
                    n,
                    reason: format!("estimated {est} bytes over budget {budget_bytes}"),
                });
            } else {
                runnable.push(mech);
            }
        }
        for (mech, measured_ns) in time_size(&runnable, n, c, trials, warmups, seed)? {
            records.push(BenchRecord {
                mechanism: mech.name().into(),
                n,
                c,
                analytic_flops: analytic_cost(mech, n, c),
                measured_ns,
                bytes_peak: bytes_estimate(mech, n, c),
                trials,
            });
        }
    }
    let crossover_n = crossover(&records);
    Ok(BenchReport {
        records,
        skipped,
        crossover_n,
    })
}

/// Smallest n with both mechanisms measured where CSA beat SA.
pub fn crossover(records: &[BenchRecord]) -> Option<usize> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    for n in ns {
        let get = |m: &str| {
            records
                .iter()
                .find(|r| r.n == n && r.mechanism == m)
                .map(|r| r.measured_ns)
        };
        if let (Some(sa), Some(csa)) = (get("sa"), get("csa")) {
            if csa < sa {
                return Some(n);
            }
        }
    }
    None
}

/// Cost of one named model component under both counting conventions.
#[derive(Debug, Clone)]
pub struct ComponentCost {
    pub name: String,
    /// Full kernel-level forward FLOPs (everything executed).
    pub full_flops: f64,
    /// Module-counter MACs over token-linear parameterized layers only.
    pub table2_macs: f64,
}

/// Whole-model forward cost at the config's input size, broken down per
/// component. Summing the parts reproduces the totals exactly.
#[derive(Debug, Clone)]
pub struct ModelCost {
    pub components: Vec<ComponentCost>,
    pub full_flops: f64,
    pub table2_macs: f64,
}

fn block_cost(config: &FctConfig, stage: usize, name: &str) -> ComponentCost {
    let n = config.stage_tokens(stage) as f64;
    let c = config.stage_channels(stage) as f64;
    let hidden = c * config.mlp_ratio as f64;
    let axis = config.csa_axis(stage);
    let d = config.csa_dim(stage) as f64;
    let l = half_len(axis) as f64;

    let ln_full = 2.0 * 8.0 * n * c;
    let transforms = 2.0 * d * fft_flops(axis);
    let proj = 6.0 * d * d * l * MAC_FLOPS;
    let maps = 2.0 * l * l * d * MAC_FLOPS;
    let norm = 2.0 * NORMALIZER_FLOPS_PER_ENTRY * l * l;
    let fusion = 2.0 * FUSION_FLOPS_PER_ENTRY * l * l;
    let value = 2.0 * l * l * d * MAC_FLOPS;
    let residuals = 2.0 * n * c;
    let mlp_full = 2.0 * n * c * hidden * MAC_FLOPS + 12.0 * n * hidden;
    let full_flops =
        ln_full + transforms + proj + maps + norm + fusion + value + residuals + mlp_full;

    // token-linear parameterized layers: the two LayerNorms and the MLP
    let table2_macs = 2.0 * n * c + 2.0 * n * c * hidden;
    ComponentCost {
        name: name.to_string(),
        full_flops,
        table2_macs,
    }
}

pub fn model_cost(config: &FctConfig) -> Result<ModelCost> {
    config.validate()?;
    let mut components = Vec::new();
    let n1 = config.stage_tokens(0) as f64;
    let patch_in = (16 * config.in_channels) as f64;
    let stem_macs = n1 * patch_in * config.c1 as f64;
    components.push(ComponentCost {
        name: "stem".into(),
        full_flops: stem_macs * MAC_FLOPS,
        table2_macs: stem_macs,
    });
    let last = config.last_active_stage();
    for s in 0..4 {
        for b in 0..config.depths[s] {
            components.push(block_cost(config, s, &format!("stage{}.block{b}", s + 1)));
        }
        if let Some(last) = last {
            if s + 1 <= last {
                let out_tokens = (config.stage_tokens(s) / 4) as f64;
                let c = config.stage_channels(s) as f64;
                let macs = out_tokens * 4.0 * c * 2.0 * c;
                components.push(ComponentCost {
                    name: format!("transition{}", s + 1),
                    full_flops: macs * MAC_FLOPS,
                    table2_macs: macs,
                });
            }
        }
    }
    let hc = config.head_channels() as f64;
    let head_tokens = match last {
        Some(s) => config.stage_tokens(s) as f64,
        None => n1,
    };
    let head_macs = hc + hc * config.num_classes as f64; // final LN + affine
    components.push(ComponentCost {
        name: "head".into(),
        full_flops: head_tokens * hc + head_macs * MAC_FLOPS, // pooling + LN + affine
        table2_macs: head_macs,
    });
    let full_flops = components.iter().map(|p| p.full_flops).sum();
    let table2_macs = components.iter().map(|p| p.table2_macs).sum();
    Ok(ModelCost {
        components,
        full_flops,
        table2_macs,
    })
}

/// Published whole-model table: (config name, resolution, params in M,
/// FLOPs in G).
pub const PAPER_TABLE2: [(&str, usize, f64, f64); 8] = [
    ("fct-t", 224, 27.4, 4.9),
    ("fct-s", 224, 52.6, 8.9),
    ("fct-b", 224, 74.0, 15.3),
    ("fct-l", 224, 179.0, 38.0),
    ("fct-t", 512, 28.2, 25.7),
    ("fct-s", 512, 54.8, 42.4),
    ("fct-b", 512, 78.2, 69.8),
    ("fct-l", 512, 174.5, 169.2),
];

#[derive(Debug, Clone)]
pub struct Table2Cell {
    pub config: String,
    pub resolution: usize,
    pub our_params: usize,
    pub paper_params_m: Option<f64>,
    pub params_rel_dev: Option<f64>,
    pub our_table2_gmacs: f64,
    pub our_full_gflops: f64,
    pub paper_gflops: Option<f64>,
    pub flops_rel_dev: Option<f64>,
}

/// Compare a preset against the published cells at the given resolutions.
pub fn table2_report(config: &FctConfig, resolutions: &[usize]) -> Result<Vec<Table2Cell>> {
    let mut out = Vec::new();
    for &res in resolutions {
        let mut cfg = config.clone();
        cfg.input_size = res;
        cfg.validate()?;
        let params = count_params(&cfg);
        let cost = model_cost(&cfg)?;
        let cell = PAPER_TABLE2
            .iter()
            .find(|(name, r, _, _)| *name == config.name && *r == res);
        let our_table2_gmacs = cost.table2_macs / 1e9;
        let (paper_params_m, params_rel_dev, paper_gflops, flops_rel_dev) = match cell {
            Some((_, _, pm, pf)) => (
                Some(*pm),
                Some((params as f64 / 1e6 - pm) / pm),
                Some(*pf),
                Some((our_table2_gmacs - pf) / pf),
            ),
            None => (None, None, None, None),
        };
        out.push(Table2Cell {
            config: config.name.clone(),
            resolution: res,
            our_params: params,
            paper_params_m,
            params_rel_dev,
            our_table2_gmacs,
            our_full_gflops: cost.full_flops / 1e9,
            paper_gflops,
            flops_rel_dev,
        });
    }
    Ok(out)
}

/// Whole-model analytic cost ratio between two input resolutions under the
/// table-2 counting convention.
pub fn resolution_flop_ratio(config: &FctConfig, hi: usize, lo: usize) -> Result<f64> {
    let mut a = config.clone();
    a.input_size = hi;
    let mut b = config.clone();
    b.input_size = lo;
    Ok(model_cost(&a)?.table2_macs / model_cost(&b)?.table2_macs)
}
