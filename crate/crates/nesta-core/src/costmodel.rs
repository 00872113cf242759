//! Parameterized area/power/delay arithmetic: cycle counts, runtime and
//! energy, crossover analysis against conventional MAC designs, and the
//! register-sizing rule that guarantees the accumulator never overflows.
//!
//! All PPA numbers live in a parameter table (see `data/ppa_default.toml`)
//! so users can rerun every comparison with their own synthesis results.

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("failed to parse PPA parameter file: {0}")]
    Parse(String),
    #[error("PPA parameters must be positive ({name}: {field})")]
    NonPositive { name: String, field: &'static str },
    #[error("no PE named {0} in the parameter table")]
    UnknownPe(String),
    #[error("area budget {budget} um^2 is smaller than one {name} ({area} um^2)")]
    BudgetTooSmall {
        budget: f64,
        area: f64,
        name: String,
    },
}

/// How a processing element consumes work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeClass {
    /// Compression engine: batches of ops per cycle plus one deferred
    /// final-addition cycle per accumulation.
    DeferredAdd,
    /// Nine-multiplier unit with an adder tree: batches per cycle, the sum
    /// is complete every cycle.
    Batch,
    /// Plain two-input multiply-accumulate: one op per cycle.
    Scalar,
}

/// One row of the PPA table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeParams {
    pub name: String,
    pub area_um2: f64,
    pub power_uw: f64,
    pub delay_ns: f64,
    pub ops_per_cycle: u32,
}

impl PeParams {
    /// Engine-style PEs are recognised by name prefix; the table schema
    /// carries no separate class column.
    pub fn class(&self) -> PeClass {
        if self.name.starts_with("NESTA") {
            PeClass::DeferredAdd
        } else if self.ops_per_cycle > 1 {
            PeClass::Batch
        } else {
            PeClass::Scalar
        }
    }

    /// Power-delay product per cycle, in femtojoules.
    pub fn pdp_fj(&self) -> f64 {
        self.power_uw * self.delay_ns
    }

    fn validate(&self) -> Result<(), CostModelError> {
        for (field, v) in [
            ("area_um2", self.area_um2),
            ("power_uw", self.power_uw),
            ("delay_ns", self.delay_ns),
            ("ops_per_cycle", self.ops_per_cycle as f64),
        ] {
            if v <= 0.0 {
                return Err(CostModelError::NonPositive {
                    name: self.name.clone(),
                    field,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PpaFile {
    pe: Vec<PeParams>,
}

/// Ordered PPA table; iteration order is file order.
#[derive(Debug, Clone)]
pub struct PpaTable {
    entries: Vec<PeParams>,
    source_hash: u64,
}

pub const DEFAULT_PPA_TOML: &str = include_str!("../data/ppa_default.toml");

impl PpaTable {
    pub fn parse(text: &str) -> Result<Self, CostModelError> {
        let file: PpaFile =
            toml::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?;
        for pe in &file.pe {
            pe.validate()?;
        }
        Ok(Self {
            entries: file.pe,
            source_hash: fnv1a64(text.as_bytes()),
        })
    }

    /// The table shipped with the crate: published 32nm post-layout numbers
    /// for the MAC flavors and the engine, plus clearly-labelled calibration
    /// estimates for the nine-input MAC competitors.
    pub fn bundled_default() -> Self {
        Self::parse(DEFAULT_PPA_TOML).expect("bundled PPA table parses")
    }

    pub fn entries(&self) -> &[PeParams] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&PeParams, CostModelError> {
        self.entries
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CostModelError::UnknownPe(name.to_string()))
    }

    pub fn source_hash(&self) -> u64 {
        self.source_hash
    }
}

/// Cycles for one output accumulated over a `kernel^2 x channels` window:
/// batch engines take `ceil(R^2*C / ops)` cycles, deferred-add engines one
/// more for the final addition, scalar MACs one cycle per product.
pub fn cycles(pe: &PeParams, kernel: usize, channels: usize) -> u64 {
    let ops = (kernel * kernel * channels) as u64;
    let batches = ops.div_ceil(pe.ops_per_cycle as u64);
    match pe.class() {
        PeClass::DeferredAdd => batches + 1,
        PeClass::Batch | PeClass::Scalar => batches,
    }
}

/// Time/energy breakdown of a workload measured in nine-op batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub cycles: u64,
    pub time_ns: f64,
    pub energy_fj: f64,
    pub pdp_per_op_fj: f64,
}

/// Costs `batches` nine-op groups on `pe`. A deferred-add engine pays its
/// finalization cycle even on an empty workload; others idle for free.
pub fn runtime_energy(pe: &PeParams, batches: u64) -> CostBreakdown {
    let ops = 9 * batches;
    let work_cycles = ops.div_ceil(pe.ops_per_cycle as u64);
    let cycles = match pe.class() {
        PeClass::DeferredAdd => work_cycles + 1,
        PeClass::Batch | PeClass::Scalar => work_cycles,
    };
    let time_ns = cycles as f64 * pe.delay_ns;
    let energy_fj = time_ns * pe.power_uw;
    CostBreakdown {
        cycles,
        time_ns,
        energy_fj,
        pdp_per_op_fj: energy_fj / ops.max(1) as f64,
    }
}

/// Smallest batch count at which a deferred-add engine beats a competitor
/// that needs no finalization cycle: the least `B` with
/// `(B+1) * engine_delay < B * competitor_delay`. `None` when the
/// competitor is at least as fast per cycle, because the extra cycle then
/// never amortizes.
pub fn crossover_batches(engine_delay_ns: f64, competitor_delay_ns: f64) -> Option<u64> {
    if competitor_delay_ns <= engine_delay_ns {
        return None;
    }
    Some((engine_delay_ns / (competitor_delay_ns - engine_delay_ns)).floor() as u64 + 1)
}

/// Smallest channel count at which the engine wins a `kernel x kernel`
/// convolution against a batch competitor: the first channel count whose
/// batch count `ceil(kernel^2 * C / 9)` reaches the batch crossover.
/// `None` when the competitor never loses.
pub fn first_winning_channels(
    engine_delay_ns: f64,
    competitor_delay_ns: f64,
    kernel: usize,
) -> Option<u64> {
    let b = crossover_batches(engine_delay_ns, competitor_delay_ns)?;
    let window = (kernel * kernel) as u64;
    Some(9 * (b - 1) / window + 1)
}

/// Ceiling of log2, the bit cost of a count.
pub fn clog2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    64 - (x - 1).leading_zeros().min(64)
}

/// Register-sizing rule inputs: accumulating `window`-sized products over
/// `n_ch` channels with the given operand widths must fit `reg_size` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizingRule {
    pub reg_size: u32,
    pub n_ch: u32,
    pub window: u32,
    pub w_weight: u32,
    pub w_data: u32,
}

/// Outcome of the sizing rule; a violation is a value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizingCheck {
    Ok,
    Violation { required_bits: u32, reg_size: u32 },
}

impl SizingCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, SizingCheck::Ok)
    }
}

/// Operand register width paired with an accumulator size: 8-bit inputs
/// feed the 20-bit accumulator, 16-bit inputs the 36-bit one. Other
/// register sizes leave the operands uncapped beyond the rule itself.
pub fn input_register_width(reg_size: u32) -> u32 {
    match reg_size {
        20 => 8,
        36 => 16,
        other => other,
    }
}

/// `clog2(n_ch) + clog2(window) + w_weight + w_data <= reg_size`, with both
/// operand widths no wider than the input registers.
pub fn check_bitwidths(rule: &SizingRule) -> SizingCheck {
    let cap = input_register_width(rule.reg_size);
    let required = clog2(rule.n_ch.max(1) as u64)
        + clog2(rule.window.max(1) as u64)
        + rule.w_weight
        + rule.w_data;
    if rule.w_weight <= cap && rule.w_data <= cap && required <= rule.reg_size {
        SizingCheck::Ok
    } else {
        SizingCheck::Violation {
            required_bits: required,
            reg_size: rule.reg_size,
        }
    }
}

/// All maximal `(w_weight, w_data)` pairs admitted by the sizing rule,
/// widest weight first. Maximal means no bit of either width can be added
/// without breaking the rule or the input-register cap.
pub fn valid_width_pairs(reg_size: u32, n_ch: u32, window: u32) -> Vec<(u32, u32)> {
    let cap = input_register_width(reg_size);
    let overhead = clog2(n_ch.max(1) as u64) + clog2(window.max(1) as u64);
    if overhead + 2 > reg_size {
        return Vec::new();
    }
    let budget = (reg_size - overhead).min(2 * cap);
    if budget < 2 {
        return Vec::new();
    }
    let hi = cap.min(budget - 1);
    let lo = 1.max(budget.saturating_sub(cap));
    (lo..=hi)
        .rev()
        .map(|w_weight| (w_weight, budget - w_weight))
        .collect()
}

/// One comparison row: how an accelerator built from `units` copies of a
/// conventional PE compares against packing the same silicon with engines.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub name: String,
    pub units: u64,
    /// Throughput gain of the engine, area-normalized: `1 - (mac ops per
    /// area-time) / (engine ops per area-time)`, percent.
    pub throughput_pct: f64,
    /// Energy-per-useful-op gain at the given window size, percent.
    pub energy_pct: f64,
}

fn throughput_density(pe: &PeParams) -> f64 {
    pe.ops_per_cycle as f64 / (pe.delay_ns * pe.area_um2)
}

/// Energy per useful multiply at window `kernel^2` on one channel; batch
/// engines pay for their padded slots.
fn energy_per_op(pe: &PeParams, kernel: usize) -> f64 {
    let ops = (kernel * kernel) as u64;
    let work_cycles = ops.div_ceil(pe.ops_per_cycle as u64);
    work_cycles as f64 * pe.pdp_fj() / ops as f64
}

/// Relative throughput and energy improvement of the engine over every
/// other PE in the table, at a fixed silicon budget. Unit counts are
/// quantized to the budget; the percentages are area-normalized ratios and
/// therefore invariant under scaling the budget.
pub fn throughput_energy_improvement(
    table: &PpaTable,
    engine_name: &str,
    area_budget_um2: f64,
    kernel: usize,
    _convolutions: u64,
) -> Result<Vec<ImprovementRow>, CostModelError> {
    let engine = table.get(engine_name)?;
    if area_budget_um2 < engine.area_um2 {
        return Err(CostModelError::BudgetTooSmall {
            budget: area_budget_um2,
            area: engine.area_um2,
            name: engine.name.clone(),
        });
    }
    let engine_density = throughput_density(engine);
    let engine_energy = energy_per_op(engine, kernel);
    Ok(table
        .entries()
        .iter()
        .filter(|pe| pe.name != engine_name)
        .map(|pe| ImprovementRow {
            name: pe.name.clone(),
            units: (area_budget_um2 / pe.area_um2) as u64,
            throughput_pct: (1.0 - throughput_density(pe) / engine_density) * 100.0,
            energy_pct: (1.0 - engine_energy / energy_per_op(pe, kernel)) * 100.0,
        })
        .collect())
}

/// FNV-1a, used to stamp analysis records with their input identities.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
