//! The cycle-stepped accumulation engine.
//!
//! Each cycle consumes nine operand pairs: the reshaped partial products,
//! the previous cycle's accumulator bits S and deferred carry bits CB are
//! compressed together to at most two bits per column, and only the first
//! adder level runs: per column `i` the engine keeps `s[i] = a XOR b` and
//! banks `cb[i] = a AND b` as a *temporal* carry consumed one significance
//! higher on the next cycle. At every point `S + 2*CB` equals the exact
//! running sum modulo the accumulator width; finalization runs the full
//! carry-propagate addition once, costing one extra cycle, and produces
//! the exact accumulated value.

use thiserror::Error;

use crate::bits::BitMatrix;
use crate::hwc::{build_cel_network_bounded, CelNetwork, CelVariant, HwcError};
use crate::ppgen::{generate_partial_products, OperandPair, OperandWidth, PpgenError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine already finalized")]
    AlreadyFinalized,
    #[error("bias {bias} does not fit the {bits}-bit accumulator")]
    BiasOutOfRange { bias: i64, bits: u32 },
    #[error("accumulated value {value} overflows the {bits}-bit accumulator")]
    AccumulatorOverflow { value: i128, bits: u32 },
    #[error("pair stream length {got} does not match kernel^2 * channels = {expected}")]
    StreamLength { expected: usize, got: usize },
    #[error(transparent)]
    Operand(#[from] PpgenError),
    #[error(transparent)]
    Compression(#[from] HwcError),
}

/// Engine configuration. The accumulator width follows the operand width:
/// 20 bits for 8-bit operands, 36 bits for 16-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub operand_width: OperandWidth,
    pub cel_variant: CelVariant,
    pub signed: bool,
}

impl EngineConfig {
    pub fn new(operand_width: OperandWidth, cel_variant: CelVariant, signed: bool) -> Self {
        Self {
            operand_width,
            cel_variant,
            signed,
        }
    }

    pub fn accumulator_width(&self) -> u32 {
        self.operand_width.accumulator_bits()
    }
}

/// Register-file snapshot between cycles. Values are immutable; every
/// transition returns a fresh state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineState {
    s_bits: u64,
    cb_bits: u64,
    cycle: u64,
    finalized: bool,
    // Shadow of the exact running sum, used only to flag accumulator
    // overflow; observable values always come from s_bits/cb_bits.
    exact: i128,
}

impl EngineState {
    pub fn s_bits(&self) -> u64 {
        self.s_bits
    }

    pub fn cb_bits(&self) -> u64 {
        self.cb_bits
    }

    /// Batches consumed so far.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Fault-injection hook for verification drivers: the same state with
    /// its lowest sum bit flipped. Not part of the engine semantics.
    #[doc(hidden)]
    pub fn with_flipped_sum_bit(mut self) -> Self {
        self.s_bits ^= 1;
        self
    }
}

/// Result of running the final full addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finalized {
    pub sum: i64,
    pub state: EngineState,
    /// The final addition is a multi-cycle path: one extra cycle.
    pub extra_cycles: u64,
}

/// Outcome of driving a whole schedule through the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub sum: i64,
    pub batches: u64,
    /// Batch cycles plus the finalization cycle.
    pub cycles: u64,
}

/// A stream of nine-pair batches covering one output across all channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    pub batches: Vec<[OperandPair; 9]>,
    pub kernel: usize,
    pub channels: usize,
    pub pad_count: usize,
}

impl BatchSchedule {
    /// Chunks a `kernel^2 * channels` pair stream into ceil(len/9) batches,
    /// zero-padding the last one. 1x1 kernels batch nine channels at a
    /// time; fully-connected layers arrive as 1x1 streams.
    pub fn build(
        kernel: usize,
        channels: usize,
        pairs: &[OperandPair],
    ) -> Result<Self, EngineError> {
        let expected = kernel * kernel * channels;
        if pairs.len() != expected {
            return Err(EngineError::StreamLength {
                expected,
                got: pairs.len(),
            });
        }
        let n_batches = expected.div_ceil(9);
        let mut batches = Vec::with_capacity(n_batches);
        for chunk in pairs.chunks(9) {
            let mut b = [OperandPair::ZERO; 9];
            b[..chunk.len()].copy_from_slice(chunk);
            batches.push(b);
        }
        Ok(Self {
            batches,
            kernel,
            channels,
            pad_count: n_batches * 9 - expected,
        })
    }

    pub fn batch_count(&self) -> u64 {
        self.batches.len() as u64
    }
}

/// The engine: a fixed compression network plus the cycle semantics.
/// Immutable once built; share it freely across threads and keep one
/// [`EngineState`] per in-flight output.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    net: CelNetwork,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let b = config.operand_width.bits() as usize;
        let w = config.accumulator_width() as usize;

        // Worst-case partial-product stack per column: nine pairs, b x b
        // bit grids, plus one correction row per pair in signed mode.
        let mut heights = vec![0usize; w];
        for (c, h) in heights.iter_mut().enumerate() {
            if c <= 2 * b - 2 {
                *h = 9 * (b - c.abs_diff(b - 1));
            }
            if config.signed && c >= b - 1 {
                *h += 9;
            }
        }
        // One S slot per column, plus one CB slot everywhere a previous
        // column exists to carry out of.
        let mut feedback = vec![2usize; w];
        feedback[0] = 1;

        // Compressor outputs past the accumulator edge carry weight 2^w
        // and are ignored, exactly like the discarded sign-extension bits.
        let net = build_cel_network_bounded(&heights, config.cel_variant, &feedback, Some(w))
            .expect("engine column heights are never all zero");
        Self { config, net }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn network(&self) -> &CelNetwork {
        &self.net
    }

    fn width(&self) -> u32 {
        self.config.accumulator_width()
    }

    fn mask(&self) -> u64 {
        (1u64 << self.width()) - 1
    }

    fn in_accumulator_range(&self, value: i128) -> bool {
        let w = self.width();
        if self.config.signed {
            value >= -(1i128 << (w - 1)) && value < (1i128 << (w - 1))
        } else {
            value >= 0 && value < (1i128 << w)
        }
    }

    fn interpret(&self, raw: u64) -> i64 {
        let w = self.width();
        let v = raw & self.mask();
        if self.config.signed && (v >> (w - 1)) & 1 == 1 {
            v as i64 - (1i64 << w)
        } else {
            v as i64
        }
    }

    /// Fresh state with the bias preloaded into the S register.
    pub fn reset(&self, bias: i64) -> Result<EngineState, EngineError> {
        if !self.in_accumulator_range(bias as i128) {
            return Err(EngineError::BiasOutOfRange {
                bias,
                bits: self.width(),
            });
        }
        Ok(EngineState {
            s_bits: (bias as u64) & self.mask(),
            cb_bits: 0,
            cycle: 0,
            finalized: false,
            exact: bias as i128,
        })
    }

    /// One engine cycle: reshape nine pairs, compress them together with
    /// the fed-back S and CB bits, and split the two-row result into the
    /// new S (half-sum) and CB (deferred carry) registers.
    pub fn consume_batch(
        &self,
        state: &EngineState,
        pairs: &[OperandPair; 9],
    ) -> Result<EngineState, EngineError> {
        if state.finalized {
            return Err(EngineError::AlreadyFinalized);
        }
        let w = self.width() as usize;

        let ppm = generate_partial_products(pairs, self.config.operand_width, self.config.signed)?;
        let mut matrix = ppm.sign_extended();

        // Feedback injection: S bit i at column i, CB bit i consumed at
        // column i+1. The carry out of the top column leaves the
        // accumulator range and is dropped.
        for i in 0..w {
            let bit = (state.s_bits >> i) & 1 == 1;
            self.inject(&mut matrix, i, 0, bit);
        }
        for i in 0..w - 1 {
            let bit = (state.cb_bits >> i) & 1 == 1;
            self.inject(&mut matrix, i + 1, 1, bit);
        }

        let reduced = self.net.evaluate(&matrix)?;
        let mut s_bits = 0u64;
        let mut cb_bits = 0u64;
        for c in 0..w {
            let a = reduced.bit(c, 0);
            let b = reduced.bit(c, 1);
            if a ^ b {
                s_bits |= 1 << c;
            }
            if a && b {
                cb_bits |= 1 << c;
            }
        }
        // Top carry is weighted 2^w: gone modulo the accumulator.
        cb_bits &= self.mask() >> 1;

        let exact = state.exact + pairs.iter().map(|p| p.product()).sum::<i128>();
        if !self.in_accumulator_range(exact) {
            return Err(EngineError::AccumulatorOverflow {
                value: exact,
                bits: self.width(),
            });
        }

        let next = EngineState {
            s_bits,
            cb_bits,
            cycle: state.cycle + 1,
            finalized: false,
            exact,
        };
        debug_assert_eq!(self.partial_value(&next), i64::try_from(exact).unwrap());
        Ok(next)
    }

    fn inject(&self, matrix: &mut BitMatrix, column: usize, slot: usize, bit: bool) {
        let route = self
            .net
            .feedback_route(column, slot)
            .expect("engine networks reserve every feedback slot");
        for _ in 0..route.copies {
            matrix.push_bit(route.target_column, bit);
        }
    }

    /// Signed interpretation of `S + 2*CB` modulo the accumulator width:
    /// the exact running sum at any cycle.
    pub fn partial_value(&self, state: &EngineState) -> i64 {
        let raw = state.s_bits.wrapping_add(state.cb_bits << 1);
        self.interpret(raw)
    }

    /// Runs the deferred full addition, emptying the carry buffer. Costs
    /// one extra cycle; the sum is exact.
    pub fn finalize(&self, state: &EngineState) -> Result<Finalized, EngineError> {
        if state.finalized {
            return Err(EngineError::AlreadyFinalized);
        }
        let sum = self.partial_value(state);
        Ok(Finalized {
            sum,
            state: EngineState {
                s_bits: (sum as u64) & self.mask(),
                cb_bits: 0,
                cycle: state.cycle,
                finalized: true,
                exact: state.exact,
            },
            extra_cycles: 1,
        })
    }

    /// Convenience driver: reset with `bias`, consume the whole schedule,
    /// finalize.
    pub fn run(&self, bias: i64, schedule: &BatchSchedule) -> Result<RunOutcome, EngineError> {
        let mut state = self.reset(bias)?;
        for batch in &schedule.batches {
            state = self.consume_batch(&state, batch)?;
        }
        let fin = self.finalize(&state)?;
        Ok(RunOutcome {
            sum: fin.sum,
            batches: schedule.batch_count(),
            cycles: schedule.batch_count() + fin.extra_cycles,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dot9;
    use proptest::prelude::*;

    fn engine(signed: bool) -> Engine {
        Engine::new(EngineConfig::new(
            OperandWidth::W8,
            CelVariant::Standard,
            signed,
        ))
    }

    fn ones_batch() -> [OperandPair; 9] {
        [OperandPair::new(1, 1); 9]
    }

    #[test]
    fn reset_encodes_bias() {
        let eng = engine(true);
        assert_eq!(eng.reset(0).unwrap().s_bits(), 0);
        assert_eq!(eng.reset(5).unwrap().s_bits(), 0b101);
        assert_eq!(eng.reset(-1).unwrap().s_bits(), (1 << 20) - 1);
        assert!(eng.reset(1 << 19).is_err());
        assert!(eng.reset(-(1 << 19)).is_ok());
    }

    #[test]
    fn single_batch_of_ones() {
        let eng = engine(true);
        let state = eng.reset(0).unwrap();
        let state = eng.consume_batch(&state, &ones_batch()).unwrap();
        assert_eq!(eng.partial_value(&state), 9);
        assert_eq!(state.cycle(), 1);
        let state = eng.consume_batch(&state, &ones_batch()).unwrap();
        assert_eq!(eng.partial_value(&state), 18);
    }

    #[test]
    fn zero_batch_is_identity() {
        let eng = engine(true);
        let state = eng.reset(7).unwrap();
        assert_eq!(eng.partial_value(&state), 7);
        let state = eng.consume_batch(&state, &[OperandPair::ZERO; 9]).unwrap();
        assert_eq!(eng.partial_value(&state), 7);
    }

    #[test]
    fn finalize_zero_state() {
        let eng = engine(true);
        let state = eng.reset(0).unwrap();
        let fin = eng.finalize(&state).unwrap();
        assert_eq!(fin.sum, 0);
        assert_eq!(fin.extra_cycles, 1);
        assert!(fin.state.is_finalized());
        assert_eq!(fin.state.cb_bits(), 0);
        assert!(eng.finalize(&fin.state).is_err());
        assert!(eng.consume_batch(&fin.state, &ones_batch()).is_err());
    }

    #[test]
    fn eleven_by_eleven_across_ten_channels() {
        // 11x11 kernel over 10 channels of all-ones: 1210 products in 135
        // batches, exact sum out of the final addition.
        let pairs = vec![OperandPair::new(1, 1); 11 * 11 * 10];
        let schedule = BatchSchedule::build(11, 10, &pairs).unwrap();
        assert_eq!(schedule.batch_count(), 135);
        let eng = Engine::new(EngineConfig::new(
            OperandWidth::W16,
            CelVariant::Standard,
            true,
        ));
        let run = eng.run(0, &schedule).unwrap();
        assert_eq!(run.sum, 1210);
        assert_eq!(run.cycles, 136);
    }

    #[test]
    fn schedule_shapes() {
        let pairs = vec![OperandPair::ZERO; 9];
        let s = BatchSchedule::build(3, 1, &pairs).unwrap();
        assert_eq!((s.batch_count(), s.pad_count), (1, 0));

        let pairs = vec![OperandPair::ZERO; 25];
        let s = BatchSchedule::build(5, 1, &pairs).unwrap();
        assert_eq!((s.batch_count(), s.pad_count), (3, 2));

        assert!(BatchSchedule::build(3, 2, &pairs).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let eng = engine(true);
        let hot = [OperandPair::new(-128, -128); 9];
        let mut state = eng.reset(0).unwrap();
        // 9 * 16384 = 147456 per batch; the 20-bit signed range ends at
        // 524287, so the fourth batch must trip the overflow gate.
        for _ in 0..3 {
            state = eng.consume_batch(&state, &hot).unwrap();
        }
        match eng.consume_batch(&state, &hot) {
            Err(EngineError::AccumulatorOverflow { value, bits: 20 }) => {
                assert_eq!(value, 4 * 9 * 16384);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn star_variant_matches_standard() {
        let std = Engine::new(EngineConfig::new(OperandWidth::W8, CelVariant::Standard, true));
        let star = Engine::new(EngineConfig::new(OperandWidth::W8, CelVariant::Star, true));
        let pairs: Vec<OperandPair> = (0..27)
            .map(|i| OperandPair::new(((i * 37) % 251) as i64 - 125, ((i * 91) % 251) as i64 - 125))
            .collect();
        let schedule = BatchSchedule::build(3, 3, &pairs).unwrap();
        let a = std.run(0, &schedule).unwrap();
        let b = star.run(0, &schedule).unwrap();
        assert_eq!(a.sum, b.sum);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn partial_value_tracks_oracle(
            batches in proptest::collection::vec(
                proptest::collection::vec((-16i64..16, -16i64..16), 9),
                1..12,
            ),
            bias in -1000i64..1000,
            signed in any::<bool>(),
            star in any::<bool>(),
        ) {
            let variant = if star { CelVariant::Star } else { CelVariant::Standard };
            let eng = Engine::new(EngineConfig::new(OperandWidth::W8, variant, signed));
            let mut state = eng.reset(if signed { bias } else { bias.abs() }).unwrap();
            let mut acc = if signed { bias } else { bias.abs() } as i128;
            for raw in &batches {
                let mut pairs = [OperandPair::ZERO; 9];
                for (slot, &(w, i)) in pairs.iter_mut().zip(raw) {
                    *slot = if signed {
                        OperandPair::new(w, i)
                    } else {
                        OperandPair::new(w.abs(), i.abs())
                    };
                }
                state = eng.consume_batch(&state, &pairs).unwrap();
                acc += dot9(&pairs);
                prop_assert_eq!(eng.partial_value(&state) as i128, acc);
            }
            let fin = eng.finalize(&state).unwrap();
            prop_assert_eq!(fin.sum as i128, acc);
            prop_assert_eq!(fin.sum, eng.partial_value(&state));
        }
    }
}
