//! Loop-nest schedules over the seven convolution dimensions, the five
//! operand-reuse dataflow classes, engine-backed convolution execution,
//! and the global-buffer transaction model.
//!
//! A convolution is seven nested loops (batch, filter, channel, the two
//! output coordinates, the two kernel coordinates) and any permutation of
//! them computes the same output. The permutation decides which
//! operand stays resident in a processing element, which is what the
//! NLR/WS/IS/OS/RS taxonomy names. Engine-backed runs map one engine to
//! one output neuron across all of its channels, so partial sums never
//! leave the engine regardless of the dataflow.

use thiserror::Error;

use crate::costmodel::{check_bitwidths, SizingRule};
use crate::engine::{BatchSchedule, Engine, EngineConfig, EngineError};
use crate::oracle::{LayerShape, OracleError, Tensor4};
use crate::par;
use crate::ppgen::OperandPair;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataflowError {
    #[error("loop order must be a permutation of all seven loops")]
    InvalidLoopOrder,
    #[error(
        "operand widths ({w_weight}, {w_data}) with {channels} channels and window {window} \
         need {required} bits, exceeding the {reg_size}-bit accumulator"
    )]
    SizingViolation {
        w_weight: u32,
        w_data: u32,
        channels: usize,
        window: usize,
        required: u32,
        reg_size: u32,
    },
    #[error(transparent)]
    Shape(#[from] OracleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The seven convolution loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopId {
    /// b: image in the batch
    Batch,
    /// u: output filter
    Filter,
    /// c: input channel
    Channel,
    /// h: output row
    OutRow,
    /// w: output column
    OutCol,
    /// i: kernel row
    KRow,
    /// j: kernel column
    KCol,
}

pub const ALL_LOOPS: [LoopId; 7] = [
    LoopId::Batch,
    LoopId::Filter,
    LoopId::Channel,
    LoopId::OutRow,
    LoopId::OutCol,
    LoopId::KRow,
    LoopId::KCol,
];

/// A validated permutation of the seven loops, outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopOrder {
    loops: [LoopId; 7],
}

impl LoopOrder {
    pub fn new(loops: [LoopId; 7]) -> Result<Self, DataflowError> {
        for id in ALL_LOOPS {
            if !loops.contains(&id) {
                return Err(DataflowError::InvalidLoopOrder);
            }
        }
        Ok(Self { loops })
    }

    /// b-u-c-h-w-i-j, the order shared by NLR, WS and RS.
    pub fn standard() -> Self {
        Self { loops: ALL_LOOPS }
    }

    /// b-u-h-w-c-i-j, the order of the output- and input-stationary flows.
    pub fn output_stationary() -> Self {
        Self {
            loops: [
                LoopId::Batch,
                LoopId::Filter,
                LoopId::OutRow,
                LoopId::OutCol,
                LoopId::Channel,
                LoopId::KRow,
                LoopId::KCol,
            ],
        }
    }

    pub fn loops(&self) -> &[LoopId; 7] {
        &self.loops
    }

    /// The relative order in which (channel, kernel row, kernel column)
    /// advance: the per-output operand stream order.
    fn window_suborder(&self) -> [LoopId; 3] {
        let mut out = [LoopId::Channel; 3];
        let mut k = 0;
        for id in self.loops {
            if matches!(id, LoopId::Channel | LoopId::KRow | LoopId::KCol) {
                out[k] = id;
                k += 1;
            }
        }
        out
    }
}

/// One point of the seven-deep nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulePoint {
    pub batch: usize,
    pub filter: usize,
    pub channel: usize,
    pub out_row: usize,
    pub out_col: usize,
    pub k_row: usize,
    pub k_col: usize,
}

fn extent(shape: &LayerShape, id: LoopId) -> usize {
    match id {
        LoopId::Batch => shape.batch,
        LoopId::Filter => shape.filters,
        LoopId::Channel => shape.channels,
        LoopId::OutRow | LoopId::OutCol => shape.output_size(),
        LoopId::KRow | LoopId::KCol => shape.kernel,
    }
}

/// Streams every (b, u, c, h, w, i, j) tuple exactly once, nested in the
/// order given, outermost loop first.
pub fn enumerate_schedule(
    shape: &LayerShape,
    order: &LoopOrder,
) -> impl Iterator<Item = SchedulePoint> {
    let loops = *order.loops();
    let extents: [usize; 7] = std::array::from_fn(|i| extent(shape, loops[i]));
    let total: u64 = extents.iter().map(|&e| e as u64).product();
    let mut odometer = [0usize; 7];
    let mut emitted = 0u64;
    std::iter::from_fn(move || {
        if emitted >= total {
            return None;
        }
        let mut point = SchedulePoint {
            batch: 0,
            filter: 0,
            channel: 0,
            out_row: 0,
            out_col: 0,
            k_row: 0,
            k_col: 0,
        };
        for (id, &v) in loops.iter().zip(&odometer) {
            match id {
                LoopId::Batch => point.batch = v,
                LoopId::Filter => point.filter = v,
                LoopId::Channel => point.channel = v,
                LoopId::OutRow => point.out_row = v,
                LoopId::OutCol => point.out_col = v,
                LoopId::KRow => point.k_row = v,
                LoopId::KCol => point.k_col = v,
            }
        }
        emitted += 1;
        for i in (0..7).rev() {
            odometer[i] += 1;
            if odometer[i] < extents[i] {
                break;
            }
            odometer[i] = 0;
        }
        Some(point)
    })
}

/// The five operand-reuse strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataflowKind {
    /// No local reuse: every operand crosses the global buffer every time.
    Nlr,
    /// Weight stationary: each filter weight is fetched once and stays in
    /// its engine for its whole reuse window.
    Ws,
    /// Input stationary: each input value is fetched once.
    Is,
    /// Output stationary: partial sums stay put until done.
    Os,
    /// Row stationary: weights shared across engine groups, partially
    /// overlapping input rows streamed per group. Combines WS and OS.
    Rs { engine_groups: usize },
}

impl DataflowKind {
    pub const RS_DEFAULT_GROUPS: usize = 3;

    pub fn rs() -> Self {
        DataflowKind::Rs {
            engine_groups: Self::RS_DEFAULT_GROUPS,
        }
    }

    pub fn loop_order(&self) -> LoopOrder {
        match self {
            DataflowKind::Nlr | DataflowKind::Ws | DataflowKind::Rs { .. } => LoopOrder::standard(),
            DataflowKind::Is | DataflowKind::Os => LoopOrder::output_stationary(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DataflowKind::Nlr => "NLR",
            DataflowKind::Ws => "WS",
            DataflowKind::Is => "IS",
            DataflowKind::Os => "OS",
            DataflowKind::Rs { .. } => "RS",
        }
    }
}

/// Global-buffer transaction counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessStats {
    pub ifmap_fetches: u64,
    pub weight_fetches: u64,
    pub psum_writes: u64,
    pub batches_consumed: u64,
}

impl AccessStats {
    /// Total global-buffer transactions.
    pub fn total(&self) -> u64 {
        self.ifmap_fetches + self.weight_fetches + self.psum_writes
    }
}

/// Transaction counts under the residency model: the stationary operand
/// class is fetched once per resident value; everything else is fetched
/// per use; partial sums are written back per batch when nothing holds
/// them (NLR) and once per output otherwise. Padding slots fetch nothing.
pub fn access_counts(shape: &LayerShape, flow: DataflowKind) -> AccessStats {
    let e = shape.output_size() as u64;
    let uses = shape.mac_count();
    let outputs = shape.batch as u64 * shape.filters as u64 * e * e;
    let window = shape.kernel as u64 * shape.kernel as u64;
    let batches_per_output = (window * shape.channels as u64).div_ceil(9);
    let batches = outputs * batches_per_output;
    let weights_once = shape.filters as u64 * shape.channels as u64 * window;
    let ifmap_once =
        shape.batch as u64 * shape.channels as u64 * (shape.input_size as u64).pow(2);

    let (ifmap_fetches, weight_fetches, psum_writes) = match flow {
        DataflowKind::Nlr => (uses, uses, batches),
        DataflowKind::Ws => (uses, weights_once, outputs),
        DataflowKind::Is => (ifmap_once, uses, outputs),
        DataflowKind::Os => (uses, uses, outputs),
        DataflowKind::Rs { .. } => (ifmap_once, weights_once, outputs),
    };
    AccessStats {
        ifmap_fetches,
        weight_fetches,
        psum_writes,
        batches_consumed: batches,
    }
}

fn width_of(v: i64, signed: bool) -> u32 {
    if signed {
        let mag = if v >= 0 { v } else { -(v + 1) };
        64 - (mag as u64).leading_zeros() + 1
    } else {
        debug_assert!(v >= 0);
        (64 - (v as u64).leading_zeros()).max(1)
    }
}

fn max_width(t: &Tensor4, signed: bool) -> u32 {
    t.data()
        .iter()
        .map(|&v| width_of(v, signed))
        .max()
        .unwrap_or(1)
}

/// Runs the convolution on engines, one engine per output neuron across
/// all of its channels, streaming each neuron's operands in the order the
/// loop permutation induces. The result is bit-for-bit the exact
/// convolution for every loop order.
pub fn run_conv_with_order(
    shape: &LayerShape,
    order: &LoopOrder,
    config: &EngineConfig,
    ifmap: &Tensor4,
    filters: &Tensor4,
    bias: &[i64],
) -> Result<(Tensor4, u64), DataflowError> {
    if ifmap.dims() != shape.ifmap_dims() {
        return Err(OracleError::ShapeMismatch {
            expected: shape.ifmap_dims(),
            got: ifmap.dims(),
        }
        .into());
    }
    if filters.dims() != shape.filter_dims() {
        return Err(OracleError::ShapeMismatch {
            expected: shape.filter_dims(),
            got: filters.dims(),
        }
        .into());
    }
    if bias.len() != shape.filters {
        return Err(OracleError::BiasLength {
            filters: shape.filters,
            got: bias.len(),
        }
        .into());
    }

    // Sizing gate: the actual operand widths must satisfy the overflow
    // rule for this accumulator before any engine runs.
    let window = shape.kernel * shape.kernel;
    let w_weight = max_width(filters, config.signed);
    let w_data = max_width(ifmap, config.signed);
    let rule = SizingRule {
        reg_size: config.accumulator_width(),
        n_ch: shape.channels as u32,
        window: window as u32,
        w_weight,
        w_data,
    };
    if let crate::costmodel::SizingCheck::Violation { required_bits, reg_size } =
        check_bitwidths(&rule)
    {
        return Err(DataflowError::SizingViolation {
            w_weight,
            w_data,
            channels: shape.channels,
            window,
            required: required_bits,
            reg_size,
        });
    }

    let engine = Engine::new(*config);
    let e = shape.output_size();
    let n_outputs = shape.batch * shape.filters * e * e;
    let suborder = order.window_suborder();

    let results = par::map_indexed(n_outputs, |idx| -> Result<(i64, u64), DataflowError> {
        let y = idx % e;
        let x = (idx / e) % e;
        let u = (idx / (e * e)) % shape.filters;
        let z = idx / (e * e * shape.filters);

        let mut pairs = Vec::with_capacity(window * shape.channels);
        let ext = |id: LoopId| match id {
            LoopId::Channel => shape.channels,
            _ => shape.kernel,
        };
        for a in 0..ext(suborder[0]) {
            for b in 0..ext(suborder[1]) {
                for c in 0..ext(suborder[2]) {
                    let mut point = [0usize; 3]; // c, i, j
                    for (id, v) in suborder.iter().zip([a, b, c]) {
                        match id {
                            LoopId::Channel => point[0] = v,
                            LoopId::KRow => point[1] = v,
                            LoopId::KCol => point[2] = v,
                            _ => unreachable!(),
                        }
                    }
                    let (k, i, j) = (point[0], point[1], point[2]);
                    pairs.push(OperandPair::new(
                        filters.get(u, k, i, j),
                        ifmap.get(z, k, shape.stride * x + i, shape.stride * y + j),
                    ));
                }
            }
        }
        let schedule = BatchSchedule::build(shape.kernel, shape.channels, &pairs)?;
        let run = engine.run(bias[u], &schedule)?;
        Ok((run.sum, run.batches))
    });

    let mut ofmap = Tensor4::zeros(shape.ofmap_dims());
    let mut total_batches = 0;
    for (idx, r) in results.into_iter().enumerate() {
        let (sum, batches) = r?;
        let y = idx % e;
        let x = (idx / e) % e;
        let u = (idx / (e * e)) % shape.filters;
        let z = idx / (e * e * shape.filters);
        ofmap.set(z, u, x, y, sum);
        total_batches += batches;
    }
    Ok((ofmap, total_batches))
}

/// Engine-backed convolution under a named dataflow. The output frame map
/// equals the exact convolution; the stats follow the residency model,
/// except that partial sums are engine-resident by construction, so
/// `psum_writes` is one finalization per output.
pub fn run_conv_with_engines(
    shape: &LayerShape,
    flow: DataflowKind,
    config: &EngineConfig,
    ifmap: &Tensor4,
    filters: &Tensor4,
    bias: &[i64],
) -> Result<(Tensor4, AccessStats), DataflowError> {
    let order = flow.loop_order();
    let (ofmap, batches) = run_conv_with_order(shape, &order, config, ifmap, filters, bias)?;
    let e = shape.output_size() as u64;
    let outputs = shape.batch as u64 * shape.filters as u64 * e * e;
    let mut stats = access_counts(shape, flow);
    stats.psum_writes = outputs;
    stats.batches_consumed = batches;
    Ok((ofmap, stats))
}
