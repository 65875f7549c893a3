//! Mixed-radix encoding of product spaces.
//!
//! Tuples are flattened with the first coordinate most significant, so the
//! encoding of `(x_0, ..., x_{k-1})` over radices `(r_0, ..., r_{k-1})` is
//! `((x_0 * r_1 + x_1) * r_2 + x_2) ...`. Neighborhood tuples are always
//! listed in ascending agent order. Checkpoint files depend on this layout.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedRadix {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl MixedRadix {
    /// The product size saturates at `usize::MAX` so that caps reject it.
    pub fn new(radices: Vec<usize>) -> Self {
        let mut strides = vec![1usize; radices.len()];
        let mut size = 1usize;
        for k in (0..radices.len()).rev() {
            strides[k] = size;
            size = size.saturating_mul(radices[k]);
        }
        Self { radices, strides, size }
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.radices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radices.is_empty()
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.radices.len());
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    /// Encodes the coordinates `coords` of a full tuple `values`.
    pub fn encode_sub(&self, coords: &[usize], values: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.radices.len());
        coords.iter().zip(&self.strides).map(|(&c, s)| values[c] * s).sum()
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for k in (0..self.radices.len()).rev() {
            out[k] = index % self.radices[k];
            index /= self.radices[k];
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        out
    }
}
