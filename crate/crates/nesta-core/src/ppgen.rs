//! Partial-product generation and sign handling.
//!
//! Nine (weight, input) pairs at a time are reshaped into a bit matrix
//! whose weighted bit sum equals `sum(w_i * i_i)`: each multiplication
//! becomes the multiplier's bits ANDed with the multiplicand, shifted into
//! place. Signed operands are normalised so that the negative operand of a
//! mixed-sign pair is the multiplier; its sign-bit term `-2^(b-1) * a` is
//! carried as a two's-complement correction row over the accumulator
//! width, so the compression stages downstream consume nothing but plain
//! bit rows.

use thiserror::Error;

use crate::bits::BitMatrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PpgenError {
    #[error("operand {value} does not fit a {bits}-bit {signedness} register")]
    OperandOutOfRange {
        value: i64,
        bits: u32,
        signedness: &'static str,
    },
}

/// Operand register width of the engine, with the matching accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandWidth {
    W8,
    W16,
}

impl OperandWidth {
    pub fn bits(self) -> u32 {
        match self {
            OperandWidth::W8 => 8,
            OperandWidth::W16 => 16,
        }
    }

    /// Accumulator register width sized for nine products across deep
    /// channels: 20 bits for 8-bit operands, 36 for 16-bit.
    pub fn accumulator_bits(self) -> u32 {
        match self {
            OperandWidth::W8 => 20,
            OperandWidth::W16 => 36,
        }
    }
}

/// One weight/input pair consumed by the engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OperandPair {
    pub weight: i64,
    pub input: i64,
}

impl OperandPair {
    pub const ZERO: OperandPair = OperandPair { weight: 0, input: 0 };

    pub fn new(weight: i64, input: i64) -> Self {
        Self { weight, input }
    }

    pub fn product(&self) -> i128 {
        self.weight as i128 * self.input as i128
    }
}

/// Outcome of sign normalisation: the multiplicand is never negative and a
/// mixed-sign pair always multiplies by the negative operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalized {
    pub multiplicand: i64,
    pub multiplier: i64,
    pub swapped: bool,
}

/// Rearranges a pair so the multiplicand is non-negative. A lone negative
/// operand becomes the multiplier; two negatives cancel by negating both.
/// The product is unchanged and `swapped` is set only when the roles of a
/// mixed-sign pair had to be exchanged.
pub fn normalize_signs(pair: OperandPair) -> Normalized {
    let OperandPair { weight, input } = pair;
    match (weight < 0, input < 0) {
        (true, true) => Normalized {
            multiplicand: -weight,
            multiplier: -input,
            swapped: false,
        },
        (true, false) => Normalized {
            multiplicand: input,
            multiplier: weight,
            swapped: true,
        },
        _ => Normalized {
            multiplicand: weight,
            multiplier: input,
            swapped: false,
        },
    }
}

/// Bit-aligned partial products for one batch of nine pairs, plus the
/// signed correction terms still owed by negative multipliers.
#[derive(Debug, Clone)]
pub struct PartialProductMatrix {
    matrix: BitMatrix,
    corrections: Vec<i128>,
    width: OperandWidth,
    signed: bool,
}

impl PartialProductMatrix {
    pub fn matrix(&self) -> &BitMatrix {
        &self.matrix
    }

    /// Correction addends (one per pair in signed mode, zero when the
    /// multiplier was non-negative), carried as true signed values.
    pub fn corrections(&self) -> &[i128] {
        &self.corrections
    }

    pub fn width(&self) -> OperandWidth {
        self.width
    }

    /// Exact batch value: matrix bits plus corrections.
    pub fn value(&self) -> i128 {
        self.matrix.value() as i128 + self.corrections.iter().sum::<i128>()
    }

    /// Folds the corrections in as two's-complement rows over the
    /// accumulator width. The result evaluates to the exact batch sum
    /// modulo `2^accumulator_bits`; anything past that width is dropped.
    pub fn sign_extended(&self) -> BitMatrix {
        sign_extension_bits(self, self.width.accumulator_bits())
    }
}

fn check_range(value: i64, bits: u32, signed: bool) -> Result<(), PpgenError> {
    let ok = if signed {
        value >= -(1i64 << (bits - 1)) && value < (1i64 << (bits - 1))
    } else {
        value >= 0 && value < (1i64 << bits)
    };
    if ok {
        Ok(())
    } else {
        Err(PpgenError::OperandOutOfRange {
            value,
            bits,
            signedness: if signed { "signed" } else { "unsigned" },
        })
    }
}

/// Reshapes nine pairs into bit-aligned partial products. The matrix value
/// plus the correction values equals `sum(w_i * i_i)` exactly. Zero pairs
/// contribute only zero bits, so padded batches are harmless.
pub fn generate_partial_products(
    pairs: &[OperandPair; 9],
    width: OperandWidth,
    signed: bool,
) -> Result<PartialProductMatrix, PpgenError> {
    let b = width.bits();
    let product_width = (2 * b - 1) as usize;
    let mut matrix = BitMatrix::new(product_width);
    let mut corrections = Vec::new();

    for pair in pairs {
        check_range(pair.weight, b, signed)?;
        check_range(pair.input, b, signed)?;

        let (multiplicand, multiplier) = if signed {
            let n = normalize_signs(*pair);
            (n.multiplicand, n.multiplier)
        } else {
            (pair.weight, pair.input)
        };

        // Multiplier bit rows: for a negative multiplier only the low b-1
        // two's-complement bits multiply in; the sign-bit term becomes the
        // correction row. Row slots are emitted zeros included, so the
        // column fill is identical every batch.
        let row_bits = if multiplier >= 0 {
            multiplier as u64
        } else {
            (multiplier + (1i64 << (b - 1))) as u64
        };
        let a = multiplicand as u64;
        for j in 0..b {
            let mbit = (row_bits >> j) & 1 == 1;
            for k in 0..b {
                let abit = (a >> k) & 1 == 1;
                matrix.push_bit((j + k) as usize, mbit && abit);
            }
        }
        if signed {
            let correction = if multiplier < 0 {
                -((1i128 << (b - 1)) * multiplicand as i128)
            } else {
                0
            };
            corrections.push(correction);
        }
    }

    Ok(PartialProductMatrix {
        matrix,
        corrections,
        width,
        signed,
    })
}

/// Extends the partial products with the sign-correction rows encoded as
/// two's complement over `accumulator_width` bits. Evaluating the result
/// modulo `2^accumulator_width` and interpreting it as signed gives the
/// exact batch sum; overflow bits beyond that width are dropped.
pub fn sign_extension_bits(ppm: &PartialProductMatrix, accumulator_width: u32) -> BitMatrix {
    assert_eq!(
        accumulator_width,
        ppm.width.accumulator_bits(),
        "accumulator width must match the operand width"
    );
    let mut out = ppm.matrix.clone();
    if !ppm.signed {
        return out;
    }
    let b = ppm.width.bits();
    let w = accumulator_width;
    let mask: u128 = (1u128 << w) - 1;
    for &corr in &ppm.corrections {
        // corr is a multiple of 2^(b-1); its two's-complement row spans
        // columns b-1 .. w-1 and is emitted zeros included.
        let row = (corr.rem_euclid(1i128 << w)) as u128 & mask;
        debug_assert_eq!(row & ((1 << (b - 1)) - 1), 0);
        for c in (b - 1)..w {
            out.push_bit(c as usize, (row >> c) & 1 == 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(pairs: &[(i64, i64)]) -> [OperandPair; 9] {
        let mut out = [OperandPair::ZERO; 9];
        for (slot, &(w, i)) in out.iter_mut().zip(pairs) {
            *slot = OperandPair::new(w, i);
        }
        out
    }

    fn signed_interp(v: u128, bits: u32) -> i128 {
        let v = v & ((1u128 << bits) - 1);
        if (v >> (bits - 1)) & 1 == 1 {
            v as i128 - (1i128 << bits)
        } else {
            v as i128
        }
    }

    #[test]
    fn normalize_rules() {
        let n = normalize_signs(OperandPair::new(-2, 3));
        assert_eq!((n.multiplicand, n.multiplier, n.swapped), (3, -2, true));

        let n = normalize_signs(OperandPair::new(3, 5));
        assert_eq!((n.multiplicand, n.multiplier, n.swapped), (3, 5, false));

        let n = normalize_signs(OperandPair::new(-4, -7));
        assert_eq!((n.multiplicand, n.multiplier, n.swapped), (4, 7, false));

        let n = normalize_signs(OperandPair::new(3, -5));
        assert_eq!((n.multiplicand, n.multiplier, n.swapped), (3, -5, false));
    }

    #[test]
    fn ones_batch_value() {
        let pairs = batch(&[(1, 1); 9]);
        let ppm = generate_partial_products(&pairs, OperandWidth::W8, true).unwrap();
        assert_eq!(ppm.value(), 9);
    }

    #[test]
    fn zero_weights_are_zero() {
        let pairs = batch(&[(0, 17), (0, -5), (0, 127), (0, 0)]);
        let ppm = generate_partial_products(&pairs, OperandWidth::W8, true).unwrap();
        assert_eq!(ppm.value(), 0);
        assert_eq!(ppm.matrix().value(), 0);
    }

    #[test]
    fn negative_one_times_one() {
        let pairs = batch(&[(-1, 1)]);
        let ppm = generate_partial_products(&pairs, OperandWidth::W8, true).unwrap();
        assert_eq!(ppm.value(), -1);
        // Extended matrix holds the 20-bit two's complement of 1.
        let ext = ppm.sign_extended();
        assert_eq!(ext.value() % (1 << 20), (1u128 << 20) - 1);
        assert_eq!(signed_interp(ext.value(), 20), -1);
    }

    #[test]
    fn all_positive_has_zero_corrections() {
        let pairs = batch(&[(3, 4), (5, 6), (127, 127)]);
        let ppm = generate_partial_products(&pairs, OperandWidth::W8, true).unwrap();
        assert!(ppm.corrections().iter().all(|&c| c == 0));
        let ext = ppm.sign_extended();
        assert_eq!(ext.value(), ppm.matrix().value());
    }

    #[test]
    fn extreme_batch_fits_accumulator() {
        let pairs = batch(&[(-128, 127); 9]);
        let ppm = generate_partial_products(&pairs, OperandWidth::W8, true).unwrap();
        assert_eq!(ppm.value(), 9 * (-128 * 127));
        assert_eq!(ppm.value(), -146304);
        let ext = ppm.sign_extended();
        assert_eq!(signed_interp(ext.value(), 20), -146304);
    }

    #[test]
    fn out_of_range_rejected() {
        let pairs = batch(&[(128, 0)]);
        assert!(generate_partial_products(&pairs, OperandWidth::W8, true).is_err());
        let pairs = batch(&[(-1, 0)]);
        assert!(generate_partial_products(&pairs, OperandWidth::W8, false).is_err());
        let pairs = batch(&[(255, 255)]);
        assert!(generate_partial_products(&pairs, OperandWidth::W8, false).is_ok());
    }

    #[test]
    fn ten_thousand_random_batches_are_exact_mod_accumulator() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for trial in 0..10_000 {
            let width = if trial % 2 == 0 { OperandWidth::W8 } else { OperandWidth::W16 };
            let b = width.bits();
            let half = 1i64 << (b - 1);
            let mut pairs = [OperandPair::ZERO; 9];
            for p in &mut pairs {
                *p = OperandPair::new(
                    (next() % (2 * half) as u64) as i64 - half,
                    (next() % (2 * half) as u64) as i64 - half,
                );
            }
            let exact: i128 = pairs.iter().map(|p| p.product()).sum();
            let ppm = generate_partial_products(&pairs, width, true).unwrap();
            assert_eq!(ppm.value(), exact, "trial {trial}");
            let bits = width.accumulator_bits();
            assert_eq!(
                signed_interp(ppm.sign_extended().value(), bits),
                exact,
                "trial {trial}"
            );
        }
    }

    proptest! {
        #[test]
        fn normalization_preserves_product(w in -128i64..128, i in -128i64..128) {
            let n = normalize_signs(OperandPair::new(w, i));
            prop_assert_eq!(
                n.multiplicand as i128 * n.multiplier as i128,
                w as i128 * i as i128
            );
            prop_assert!(n.multiplicand >= 0);
            if n.swapped {
                prop_assert!((w < 0) != (i < 0));
            }
        }

        #[test]
        fn signed_batches_are_exact_mod_accumulator(
            raw in proptest::collection::vec((-128i64..128, -128i64..128), 9),
            wide in any::<bool>(),
        ) {
            let width = if wide { OperandWidth::W16 } else { OperandWidth::W8 };
            let scale = if wide { 167 } else { 1 };
            let pairs: Vec<(i64, i64)> =
                raw.iter().map(|&(w, i)| (w * scale, i * scale)).collect();
            let pairs = batch(&pairs);
            let exact: i128 = pairs.iter().map(|p| p.product()).sum();

            let ppm = generate_partial_products(&pairs, width, true).unwrap();
            prop_assert_eq!(ppm.value(), exact);

            let bits = width.accumulator_bits();
            let ext = ppm.sign_extended();
            prop_assert_eq!(signed_interp(ext.value(), bits), exact);
        }

        #[test]
        fn unsigned_batches_are_exact(
            raw in proptest::collection::vec((0i64..256, 0i64..256), 9),
        ) {
            let pairs = batch(&raw);
            let exact: i128 = pairs.iter().map(|p| p.product()).sum();
            let ppm = generate_partial_products(&pairs, OperandWidth::W8, false).unwrap();
            prop_assert_eq!(ppm.value(), exact);
            prop_assert_eq!(ppm.sign_extended().value() as i128, exact);
        }
    }
}
