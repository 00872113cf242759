//! Hamming-weight compressors and the layered compression-and-expansion
//! (CEL) networks built from them.
//!
//! A compressor `C(m:n)` replaces `m` bits of one significance with the
//! `n`-bit binary hamming weight of that stack, `n = floor(log2 m) + 1`.
//! A compressor is *complete* when `m = 2^n - 1`; complete compressors
//! waste no capacity. Stacking layers of compressors, each layer fanning
//! its output bits out across neighbouring significances, reduces any bit
//! matrix to at most two bits per column, at which point one ordinary
//! addition finishes the sum.
//!
//! Networks come in two flavours:
//!
//! * `Standard` puts one compressor over each column, as large as the
//!   column is tall.
//! * `Star` restricts the first layer to complete sizes (3, 7, 15, 31) and
//!   defers the leftover bits (at most two per column) to the next layer,
//!   trading a slightly taller layer two for a shorter first-layer critical
//!   path.
//!
//! Engine-mode networks additionally reserve per-column feedback slots for
//! the accumulator and carry-buffer bits that re-enter the array each cycle.

use thiserror::Error;

use crate::bits::{BitColumn, BitMatrix, MAX_COLUMN_BITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HwcError {
    #[error("a compressor needs at least one input bit")]
    EmptyInput,
    #[error("cannot build a compression network over all-zero column heights")]
    EmptyNetwork,
    #[error("column {column} needs {requested} bits, more than the supported {max}")]
    ColumnTooTall {
        column: usize,
        requested: usize,
        max: usize,
    },
    #[error("column {column} carries {height} bits but the network accepts at most {capacity}")]
    CapacityExceeded {
        column: usize,
        height: usize,
        capacity: usize,
    },
    #[error("compression did not settle after {0} layers")]
    NoConvergence(usize),
}

/// Output width of a hamming-weight compressor over `m` input bits:
/// `floor(log2 m) + 1`.
pub fn output_width(m: usize) -> Result<u32, HwcError> {
    if m == 0 {
        return Err(HwcError::EmptyInput);
    }
    Ok(usize::BITS - m.leading_zeros())
}

/// True when a compressor over `m` inputs is complete, `m = 2^n - 1`.
pub fn is_complete(m: usize) -> Result<bool, HwcError> {
    let n = output_width(m)?;
    Ok(m == (1usize << n) - 1)
}

/// Binary hamming weight of a bit stack, least-significant bit first,
/// exactly `output_width(len)` bits wide.
pub fn compress_column(bits: &BitColumn) -> Result<Vec<bool>, HwcError> {
    let n = output_width(bits.len())?;
    let ones = bits.ones();
    Ok((0..n).map(|i| (ones >> i) & 1 == 1).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CelVariant {
    Standard,
    Star,
}

/// One placed compressor: `inputs` bits consumed from `column` at `layer`
/// (1-based), hamming weight fanned out to `column..column + output_bits()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Compressor {
    pub layer: usize,
    pub column: usize,
    pub inputs: usize,
}

impl Compressor {
    pub fn output_bits(&self) -> u32 {
        output_width(self.inputs).expect("compressor has inputs")
    }

    pub fn is_complete(&self) -> bool {
        is_complete(self.inputs).expect("compressor has inputs")
    }
}

/// One compression stage. Compressors are ordered by column and consume
/// their column's bits in plan order; bits past the planned compressor
/// inputs pass through to the same column of the next stage.
#[derive(Debug, Clone)]
pub struct CelLayer {
    index: usize,
    compressors: Vec<Compressor>,
    capacity: Vec<usize>,
}

impl CelLayer {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn compressors(&self) -> &[Compressor] {
        &self.compressors
    }

    /// Planned input height per column for this stage.
    pub fn capacity(&self) -> &[usize] {
        &self.capacity
    }

    /// Critical path through this stage, modelled as the widest compressor
    /// output: a `C(m:n)` costs `n` logic levels.
    pub fn depth(&self) -> u32 {
        self.compressors
            .iter()
            .map(|c| c.output_bits())
            .max()
            .unwrap_or(0)
    }

    pub fn max_compressor_inputs(&self) -> usize {
        self.compressors.iter().map(|c| c.inputs).max().unwrap_or(0)
    }
}

/// Where one reserved feedback bit enters the first layer. `copies` is 1
/// for a slot absorbed at its own column and 2 when the bit is demoted to
/// the previous column (two bits there carry the same weight).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackRoute {
    pub source_column: usize,
    pub slot: usize,
    pub target_column: usize,
    pub copies: usize,
}

/// Per-layer logic-level estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthReport {
    pub per_layer: Vec<u32>,
    pub total: u32,
}

/// A fully planned compression network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CelNetwork {
    variant: CelVariant,
    layers: Vec<CelLayer>,
    input_capacity: Vec<usize>,
    layer0_capacity: Vec<usize>,
    feedback: Vec<FeedbackRoute>,
    /// `Some(w)`: compressor outputs at significance `w` and above are
    /// discarded (engine mode; the accumulator ends there). Layer values
    /// are then conserved modulo `2^w` instead of exactly.
    drop_above: Option<usize>,
}

const MAX_LAYERS: usize = 64;
/// Complete compressor sizes admitted in the first layer of a star network.
const STAR_SIZES: [usize; 4] = [31, 15, 7, 3];

fn plan_column(variant: CelVariant, first_layer: bool, height: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    if variant == CelVariant::Star && first_layer {
        let mut remaining = height;
        while remaining >= 3 {
            let s = STAR_SIZES
                .iter()
                .copied()
                .find(|&s| s <= remaining)
                .expect("smallest star size is 3");
            sizes.push(s);
            remaining -= s;
        }
    } else if height >= 3 {
        sizes.push(height);
    }
    sizes
}

/// Builds a network that reduces any matrix within `input_heights` (plus
/// filled feedback slots) to at most two bits per column.
///
/// The first layer is planned greedily per column, largest compressor
/// first. Feedback slots are then placed: into the least-full first-layer
/// compressor of their column when one has spare capacity, by widening a
/// complete compressor when none has, as two bits into the previous
/// column's compressor when the column has no compressor at all, and in
/// star networks by deferring the bit with the column's leftovers so every
/// first-layer compressor stays complete.
pub fn build_cel_network(
    input_heights: &[usize],
    variant: CelVariant,
    feedback_slots: &[usize],
) -> Result<CelNetwork, HwcError> {
    build_cel_network_bounded(input_heights, variant, feedback_slots, None)
}

/// [`build_cel_network`] with an optional significance bound: bits that a
/// compressor would emit at column `drop_above` or higher are discarded
/// instead of compressed further. Used for engine-mode networks, where
/// everything past the accumulator width is ignored by construction and
/// values are tracked modulo `2^drop_above`.
pub fn build_cel_network_bounded(
    input_heights: &[usize],
    variant: CelVariant,
    feedback_slots: &[usize],
    drop_above: Option<usize>,
) -> Result<CelNetwork, HwcError> {
    let width = input_heights.len().max(feedback_slots.len());
    let height_at = |c: usize| input_heights.get(c).copied().unwrap_or(0);
    let fb_at = |c: usize| feedback_slots.get(c).copied().unwrap_or(0);
    if (0..width).all(|c| height_at(c) == 0 && fb_at(c) == 0) {
        return Err(HwcError::EmptyNetwork);
    }
    for c in 0..width {
        let total = height_at(c) + fb_at(c);
        if total > MAX_COLUMN_BITS {
            return Err(HwcError::ColumnTooTall {
                column: c,
                requested: total,
                max: MAX_COLUMN_BITS,
            });
        }
    }

    // First layer: plan over declared input heights only.
    let mut sizes: Vec<Vec<usize>> = (0..width)
        .map(|c| plan_column(variant, true, height_at(c)))
        .collect();
    let mut leftover: Vec<usize> = (0..width)
        .map(|c| height_at(c) - sizes[c].iter().sum::<usize>())
        .collect();
    let mut layer0_capacity: Vec<usize> = (0..width).map(height_at).collect();

    // Feedback placement.
    let mut feedback = Vec::new();
    for c in 0..width {
        for slot in 0..fb_at(c) {
            let (target, copies) = place_feedback(
                variant,
                c,
                &mut sizes,
                &mut leftover,
                &mut layer0_capacity,
            );
            feedback.push(FeedbackRoute {
                source_column: c,
                slot,
                target_column: target,
                copies,
            });
        }
    }

    let mut layers = Vec::new();
    let mut capacity = layer0_capacity.clone();
    let mut first = true;
    loop {
        let planned: Vec<Vec<usize>> = if first {
            sizes.clone()
        } else {
            capacity
                .iter()
                .map(|&h| plan_column(variant, false, h))
                .collect()
        };
        let layer_index = layers.len() + 1;
        let compressors: Vec<Compressor> = planned
            .iter()
            .enumerate()
            .flat_map(|(column, ms)| {
                ms.iter().map(move |&inputs| Compressor {
                    layer: layer_index,
                    column,
                    inputs,
                })
            })
            .collect();
        if compressors.is_empty() {
            break;
        }

        // Worst-case heights flowing into the next stage: every compressor
        // always emits its full output width; unconsumed bits stay put.
        let mut next = vec![0usize; capacity.len()];
        for comp in &compressors {
            for j in 0..comp.output_bits() as usize {
                let col = comp.column + j;
                if drop_above.is_some_and(|d| col >= d) {
                    continue;
                }
                if col >= next.len() {
                    next.resize(col + 1, 0);
                }
                next[col] += 1;
            }
        }
        for (c, &cap) in capacity.iter().enumerate() {
            let consumed: usize = planned[c].iter().sum();
            next[c] += cap - consumed.min(cap);
        }

        layers.push(CelLayer {
            index: layers.len() + 1,
            compressors,
            capacity: capacity.clone(),
        });
        capacity = next;
        first = false;

        if capacity.iter().all(|&h| h <= 2) {
            break;
        }
        if layers.len() >= MAX_LAYERS {
            return Err(HwcError::NoConvergence(MAX_LAYERS));
        }
    }

    let net = CelNetwork {
        variant,
        layers,
        input_capacity: (0..width).map(height_at).collect(),
        layer0_capacity,
        feedback,
        drop_above,
    };
    debug_assert!(
        variant != CelVariant::Star
            || net
                .layers
                .first()
                .map(|l| l.compressors.iter().all(|c| c.is_complete()))
                .unwrap_or(true),
        "star first layer must be all-complete"
    );
    Ok(net)
}

fn place_feedback(
    variant: CelVariant,
    column: usize,
    sizes: &mut [Vec<usize>],
    leftover: &mut [usize],
    capacity: &mut [usize],
) -> (usize, usize) {
    if variant == CelVariant::Star {
        // Keep every first-layer compressor complete: the bit rides along
        // with the column's deferred leftovers into the next stage.
        leftover[column] += 1;
        capacity[column] += 1;
        return (column, 1);
    }

    let spare = |m: usize| (1usize << output_width(m).expect("m >= 1")) - 1 - m;
    if !sizes[column].is_empty() {
        // Least-full compressor with spare capacity, else widen the
        // smallest complete one by a single input.
        let pick = (0..sizes[column].len())
            .filter(|&i| spare(sizes[column][i]) > 0)
            .max_by_key(|&i| spare(sizes[column][i]))
            .unwrap_or_else(|| {
                (0..sizes[column].len())
                    .min_by_key(|&i| sizes[column][i])
                    .expect("non-empty")
            });
        sizes[column][pick] += 1;
        capacity[column] += 1;
        return (column, 1);
    }
    if leftover[column] < 2 {
        // Fewer than two resident bits: the slot can pass through untouched.
        leftover[column] += 1;
        capacity[column] += 1;
        return (column, 1);
    }
    if column > 0 && !sizes[column - 1].is_empty() {
        // No compressor here: demote the bit to the previous column as two
        // bits of half the weight and absorb them there.
        let prev = column - 1;
        let pick = (0..sizes[prev].len())
            .filter(|&i| spare(sizes[prev][i]) >= 2)
            .max_by_key(|&i| spare(sizes[prev][i]))
            .unwrap_or_else(|| {
                (0..sizes[prev].len())
                    .min_by_key(|&i| sizes[prev][i])
                    .expect("non-empty")
            });
        sizes[prev][pick] += 2;
        capacity[prev] += 2;
        return (prev, 2);
    }
    // Nowhere to route: open a compressor over this column's stack.
    let m = leftover[column] + 1;
    sizes[column].push(m);
    leftover[column] = 0;
    capacity[column] += 1;
    (column, 1)
}

impl CelNetwork {
    pub fn variant(&self) -> CelVariant {
        self.variant
    }

    pub fn layers(&self) -> &[CelLayer] {
        &self.layers
    }

    /// Declared non-feedback input heights.
    pub fn input_capacity(&self) -> &[usize] {
        &self.input_capacity
    }

    /// Total bits per column accepted at the network input, feedback and
    /// rerouted slots included.
    pub fn capacity(&self) -> &[usize] {
        &self.layer0_capacity
    }

    /// Where the feedback bit `(column, slot)` enters the first layer.
    pub fn feedback_route(&self, column: usize, slot: usize) -> Option<&FeedbackRoute> {
        self.feedback
            .iter()
            .find(|r| r.source_column == column && r.slot == slot)
    }

    pub fn feedback_routes(&self) -> &[FeedbackRoute] {
        &self.feedback
    }

    /// Largest compressor in the first layer, if any.
    pub fn max_first_layer_inputs(&self) -> usize {
        self.layers
            .first()
            .map(|l| l.max_compressor_inputs())
            .unwrap_or(0)
    }

    /// Per-layer and total logic-level estimate: a `C(m:n)` costs `n`
    /// levels, a layer costs its widest compressor.
    pub fn logic_levels(&self) -> DepthReport {
        let per_layer: Vec<u32> = self.layers.iter().map(|l| l.depth()).collect();
        let total = per_layer.iter().sum();
        DepthReport { per_layer, total }
    }

    /// Runs the matrix through every stage, returning the snapshot after
    /// each layer. The weighted bit sum is identical across all snapshots.
    pub fn evaluate_layers(&self, input: &BitMatrix) -> Result<Vec<BitMatrix>, HwcError> {
        for (c, &h) in input.heights().iter().enumerate() {
            let cap = self.layer0_capacity.get(c).copied().unwrap_or(0);
            if h > cap {
                return Err(HwcError::CapacityExceeded {
                    column: c,
                    height: h,
                    capacity: cap,
                });
            }
        }

        let mut trace = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut next = BitMatrix::new(layer.capacity.len());
            let mut comp_idx = 0;
            for c in 0..layer.capacity.len() {
                let empty = BitColumn::new();
                let col = current.column(c).unwrap_or(&empty);
                let mut cursor = 0usize;
                while comp_idx < layer.compressors.len()
                    && layer.compressors[comp_idx].column == c
                {
                    let comp = &layer.compressors[comp_idx];
                    let ones = col.ones_in_range(cursor, comp.inputs);
                    for j in 0..comp.output_bits() {
                        let out_col = c + j as usize;
                        if self.drop_above.is_some_and(|d| out_col >= d) {
                            continue;
                        }
                        next.push_bit(out_col, (ones >> j) & 1 == 1);
                    }
                    cursor += comp.inputs;
                    comp_idx += 1;
                }
                for i in cursor..col.len() {
                    next.push_bit(c, col.get(i));
                }
            }
            debug_assert_eq!(
                match self.drop_above {
                    Some(d) => next.value() & ((1u128 << d) - 1),
                    None => next.value(),
                },
                match self.drop_above {
                    Some(d) => current.value() & ((1u128 << d) - 1),
                    None => current.value(),
                },
                "layer must conserve value (modulo the drop bound)"
            );
            current = next;
            trace.push(current.clone());
        }
        Ok(trace)
    }

    /// Full evaluation: at most two bits per column, value preserved.
    pub fn evaluate(&self, input: &BitMatrix) -> Result<BitMatrix, HwcError> {
        let trace = self.evaluate_layers(input)?;
        let out = trace.into_iter().last().unwrap_or_else(|| input.clone());
        debug_assert!(out.is_reduced(), "network output must be <= 2 bits/column");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column_from(s: &str) -> BitColumn {
        // Convenience: string is written most-significant-looking first but a
        // column is just an unordered stack, only the popcount matters.
        let mut col = BitColumn::new();
        for ch in s.chars() {
            col.push(ch == '1');
        }
        col
    }

    fn bools_to_value(bits: &[bool]) -> u32 {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| (b as u32) << i)
            .sum()
    }

    #[test]
    fn output_width_examples() {
        assert_eq!(output_width(9).unwrap(), 4);
        assert_eq!(output_width(1).unwrap(), 1);
        assert_eq!(output_width(7).unwrap(), 3);
        assert_eq!(output_width(0), Err(HwcError::EmptyInput));
    }

    #[test]
    fn completeness_examples() {
        assert!(is_complete(15).unwrap());
        assert!(!is_complete(9).unwrap());
        assert!(is_complete(3).unwrap());
        assert_eq!(is_complete(0), Err(HwcError::EmptyInput));
    }

    #[test]
    fn compress_column_examples() {
        // All three 6-bit stacks with three ones compress to value 3.
        for s in ["011010", "111000", "000111"] {
            let out = compress_column(&column_from(s)).unwrap();
            assert_eq!(out.len(), 3);
            assert_eq!(bools_to_value(&out), 3);
        }
        let zeros = compress_column(&column_from("000000000")).unwrap();
        assert_eq!(zeros.len(), 4);
        assert_eq!(bools_to_value(&zeros), 0);
        let ones = compress_column(&column_from("111111111")).unwrap();
        assert_eq!(bools_to_value(&ones), 9);
        assert!(compress_column(&BitColumn::new()).is_err());
    }

    #[test]
    fn nine_input_adder_standard_shape() {
        let net = build_cel_network(&[9; 16], CelVariant::Standard, &[]).unwrap();
        assert_eq!(net.layers().len(), 3, "three compression stages");
        assert!(net.layers()[0]
            .compressors()
            .iter()
            .all(|c| c.inputs == 9 && c.output_bits() == 4));
        assert_eq!(net.max_first_layer_inputs(), 9);
    }

    #[test]
    fn nine_input_adder_star_shape() {
        let net = build_cel_network(&[9; 16], CelVariant::Star, &[]).unwrap();
        assert_eq!(net.max_first_layer_inputs(), 7);
        assert!(net.layers()[0].compressors().iter().all(|c| c.is_complete()));
        // Two deferred bits per column ride into the second stage.
        let std = build_cel_network(&[9; 16], CelVariant::Standard, &[]).unwrap();
        assert!(net.layers()[0].depth() < std.layers()[0].depth());
        assert_eq!(net.layers()[0].depth(), 3);
        assert_eq!(std.layers()[0].depth(), 4);
    }

    #[test]
    fn short_columns_need_no_network() {
        let net = build_cel_network(&[1; 4], CelVariant::Standard, &[]).unwrap();
        assert!(net.layers().is_empty());
        let m = BitMatrix::from_rows(4, &[0b1010]);
        let out = net.evaluate(&m).unwrap();
        assert_eq!(out.value(), m.value());
    }

    #[test]
    fn empty_heights_rejected() {
        assert!(matches!(
            build_cel_network(&[0, 0, 0], CelVariant::Standard, &[]),
            Err(HwcError::EmptyNetwork)
        ));
    }

    #[test]
    fn evaluate_reduces_and_conserves() {
        let net = build_cel_network(&[9], CelVariant::Standard, &[]).unwrap();
        let mut m = BitMatrix::new(1);
        for _ in 0..9 {
            m.push_bit(0, true);
        }
        let out = net.evaluate(&m).unwrap();
        assert!(out.is_reduced());
        assert_eq!(out.value(), 9);

        let zero = net.evaluate(&BitMatrix::new(1)).unwrap();
        assert_eq!(zero.value(), 0);
    }

    #[test]
    fn evaluate_sums_random_rows() {
        let rows: Vec<u128> = (0..9).map(|i| (i * 2654435761u128) & 0x7fff).collect();
        let net = build_cel_network(&[9; 15], CelVariant::Standard, &[]).unwrap();
        let m = BitMatrix::from_rows(15, &rows);
        let out = net.evaluate(&m).unwrap();
        assert_eq!(out.value(), rows.iter().sum::<u128>());
        assert!(out.is_reduced());
    }

    #[test]
    fn overfull_column_is_reported() {
        let net = build_cel_network(&[3, 3], CelVariant::Standard, &[]).unwrap();
        let mut m = BitMatrix::new(2);
        for _ in 0..4 {
            m.push_bit(1, true);
        }
        match net.evaluate(&m) {
            Err(HwcError::CapacityExceeded { column: 1, height: 4, capacity: 3 }) => {}
            other => panic!("expected capacity error on column 1, got {other:?}"),
        }
    }

    #[test]
    fn logic_level_model() {
        let std = build_cel_network(&[9; 16], CelVariant::Standard, &[]).unwrap();
        let star = build_cel_network(&[9; 16], CelVariant::Star, &[]).unwrap();
        assert!(star.logic_levels().per_layer[0] < std.logic_levels().per_layer[0]);

        let empty = build_cel_network(&[2, 2], CelVariant::Standard, &[]).unwrap();
        assert_eq!(empty.logic_levels().total, 0);

        let c32 = build_cel_network(&[3], CelVariant::Standard, &[]).unwrap();
        assert_eq!(c32.logic_levels().per_layer, vec![2]);
    }

    #[test]
    fn feedback_widens_incomplete_compressor() {
        let net = build_cel_network(&[9], CelVariant::Standard, &[2]).unwrap();
        // Both slots fold into the lone compressor: C(9:4) -> C(11:4).
        assert_eq!(net.layers()[0].compressors()[0].inputs, 11);
        assert_eq!(net.capacity()[0], 11);
        let r = net.feedback_route(0, 0).unwrap();
        assert_eq!((r.target_column, r.copies), (0, 1));
    }

    #[test]
    fn feedback_widens_complete_compressor() {
        let net = build_cel_network(&[15], CelVariant::Standard, &[1]).unwrap();
        assert_eq!(net.layers()[0].compressors()[0].inputs, 16);
        assert_eq!(net.layers()[0].compressors()[0].output_bits(), 5);
    }

    #[test]
    fn feedback_demotes_to_previous_column_as_two_bits() {
        // Column 1 holds two resident bits and no compressor; its feedback
        // slot lands in column 0 as two half-weight bits.
        let net = build_cel_network(&[9, 2], CelVariant::Standard, &[0, 1]).unwrap();
        let r = net.feedback_route(1, 0).unwrap();
        assert_eq!((r.target_column, r.copies), (0, 2));
        assert_eq!(net.layers()[0].compressors()[0].inputs, 11);
        assert_eq!(net.capacity(), &[11, 2]);

        // Value check: feed 9 ones in column 0, 2 ones in column 1, and the
        // feedback bit (worth 2) as two bits in column 0.
        let mut m = BitMatrix::new(2);
        for _ in 0..9 {
            m.push_bit(0, true);
        }
        for _ in 0..2 {
            m.push_bit(1, true);
        }
        m.push_bit(0, true);
        m.push_bit(0, true);
        let out = net.evaluate(&m).unwrap();
        assert_eq!(out.value(), 9 + 4 + 2);
        assert!(out.is_reduced());
    }

    #[test]
    fn star_feedback_defers_and_stays_complete() {
        let net = build_cel_network(&[9; 4], CelVariant::Star, &[2; 4]).unwrap();
        assert!(net.layers()[0].compressors().iter().all(|c| c.is_complete()));
        assert!(net
            .feedback_routes()
            .iter()
            .all(|r| r.copies == 1 && r.target_column == r.source_column));
        // Deferred feedback occupies input capacity beyond the compressors.
        assert_eq!(net.capacity()[0], 11);
    }

    proptest! {
        #[test]
        fn width_is_monotone(m in 1usize..4096) {
            prop_assert!(output_width(m).unwrap() <= output_width(m + 1).unwrap());
            if is_complete(m).unwrap() {
                prop_assert_eq!(output_width(m + 1).unwrap(), output_width(m).unwrap() + 1);
            }
        }

        #[test]
        fn conservation_layer_by_layer(
            heights in proptest::collection::vec(0usize..40, 1..12),
            variant in prop_oneof![Just(CelVariant::Standard), Just(CelVariant::Star)],
            seed in any::<u64>(),
        ) {
            prop_assume!(heights.iter().any(|&h| h > 0));
            let net = build_cel_network(&heights, variant, &[]).unwrap();
            let mut m = BitMatrix::new(heights.len());
            let mut state = seed | 1;
            for (c, &h) in heights.iter().enumerate() {
                for _ in 0..h {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    m.push_bit(c, state >> 63 == 1);
                }
            }
            let trace = net.evaluate_layers(&m).unwrap();
            let mut prev = m.value();
            for step in &trace {
                prop_assert_eq!(step.value(), prev);
                prev = step.value();
            }
            if let Some(last) = trace.last() {
                prop_assert!(last.is_reduced());
            }
        }
    }
}
