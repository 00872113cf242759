//! Bit columns and bit matrices, the currency of hamming-weight compression.
//!
//! A [`BitColumn`] stacks bits that share one significance value. A
//! [`BitMatrix`] lines columns up so that column `i` carries weight `2^i`;
//! its [`value`](BitMatrix::value) is `sum(2^i * ones(column i))` and every
//! compression step is required to preserve it.

use std::fmt;

/// Most bits a single column can hold.
pub const MAX_COLUMN_BITS: usize = 256;

/// Most columns a matrix can carry while `value()` still fits in `u128`
/// with room to spare for any column population.
pub const MAX_MATRIX_WIDTH: usize = 96;

const WORDS: usize = MAX_COLUMN_BITS / 64;

/// A stack of bits of equal significance, in push order.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitColumn {
    words: [u64; WORDS],
    len: u16,
}

impl BitColumn {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one bit. Panics if the column is at [`MAX_COLUMN_BITS`];
    /// planned networks never get near the cap and callers validate heights.
    pub fn push(&mut self, bit: bool) {
        let idx = self.len as usize;
        assert!(idx < MAX_COLUMN_BITS, "bit column capacity exceeded");
        if bit {
            self.words[idx / 64] |= 1u64 << (idx % 64);
        }
        self.len += 1;
    }

    /// Bit at stack position `idx`; out-of-range positions read as 0.
    pub fn get(&self, idx: usize) -> bool {
        if idx >= self.len as usize {
            return false;
        }
        (self.words[idx / 64] >> (idx % 64)) & 1 == 1
    }

    /// Population count of the whole column.
    pub fn ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Population count of stack positions `[start, start + count)`,
    /// clamped to the column length.
    pub fn ones_in_range(&self, start: usize, count: usize) -> u32 {
        let end = (start + count).min(self.len as usize);
        if start >= end {
            return 0;
        }
        let mut total = 0;
        for w in start / 64..=(end - 1) / 64 {
            let lo = w * 64;
            let mut word = self.words[w];
            if start > lo {
                word &= !0u64 << (start - lo);
            }
            if end < lo + 64 {
                word &= !0u64 >> (lo + 64 - end);
            }
            total += word.count_ones();
        }
        total
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len as usize).map(move |i| self.get(i))
    }
}

impl fmt::Debug for BitColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitColumn[")?;
        for bit in self.iter() {
            write!(f, "{}", if bit { '1' } else { '0' })?;
        }
        write!(f, "]")
    }
}

/// Columns of bits indexed by significance; column `i` has weight `2^i`.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitMatrix {
    columns: Vec<BitColumn>,
}

impl BitMatrix {
    pub fn new(width: usize) -> Self {
        assert!(width <= MAX_MATRIX_WIDTH, "bit matrix too wide");
        Self {
            columns: vec![BitColumn::new(); width],
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Appends a bit to `column`, growing the matrix if needed.
    pub fn push_bit(&mut self, column: usize, bit: bool) {
        assert!(column < MAX_MATRIX_WIDTH, "bit matrix too wide");
        if column >= self.columns.len() {
            self.columns.resize(column + 1, BitColumn::new());
        }
        self.columns[column].push(bit);
    }

    /// Pushes `width` bits of `row` starting at significance `shift`,
    /// zeros included, so column fill stays slot-aligned.
    pub fn push_row(&mut self, row: u128, shift: usize, width: usize) {
        for i in 0..width {
            self.push_bit(shift + i, (row >> i) & 1 == 1);
        }
    }

    pub fn column(&self, column: usize) -> Option<&BitColumn> {
        self.columns.get(column)
    }

    /// Bit at `(column, position)`; absent cells read as 0.
    pub fn bit(&self, column: usize, position: usize) -> bool {
        self.columns
            .get(column)
            .map(|c| c.get(position))
            .unwrap_or(false)
    }

    pub fn heights(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.len()).collect()
    }

    pub fn max_height(&self) -> usize {
        self.columns.iter().map(|c| c.len()).max().unwrap_or(0)
    }

    /// Weighted bit sum, the quantity conserved by compression.
    pub fn value(&self) -> u128 {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.ones() as u128) << i)
            .sum()
    }

    /// True once every column holds at most two bits.
    pub fn is_reduced(&self) -> bool {
        self.columns.iter().all(|c| c.len() <= 2)
    }

    /// Test/helper constructor: each row contributes all `width` of its low
    /// bits at shift 0.
    pub fn from_rows(width: usize, rows: &[u128]) -> Self {
        let mut m = Self::new(width);
        for &row in rows {
            m.push_row(row, 0, width);
        }
        m
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix(width={}, value={})", self.width(), self.value())?;
        for (i, col) in self.columns.iter().enumerate() {
            writeln!(f, "  col {i:2}: {col:?}")?;
        }
        Ok(())
    }
}
