/// Mixed-radix indexing of joint profiles. Agent 0 is the most significant
/// digit, so joint indices enumerate profiles in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Radix {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Radix {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut strides = vec![1; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let len = sizes.iter().product();
        Self { sizes, strides, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, n: usize) -> usize {
        self.sizes[n]
    }

    pub fn stride(&self, n: usize) -> usize {
        self.strides[n]
    }

    #[inline]
    pub fn digit(&self, index: usize, n: usize) -> usize {
        (index / self.strides[n]) % self.sizes[n]
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        (0..self.sizes.len()).map(|n| self.digit(index, n)).collect()
    }

    pub fn decode_into(&self, index: usize, out: &mut [usize]) {
        for (n, o) in out.iter_mut().enumerate() {
            *o = self.digit(index, n);
        }
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    /// Replace digit `n` of `index` by `value`.
    #[inline]
    pub fn with_digit(&self, index: usize, n: usize, value: usize) -> usize {
        index - self.digit(index, n) * self.strides[n] + value * self.strides[n]
    }

    /// Index of the same profile with the digits of agents `i` and `j` exchanged.
    pub fn swap(&self, index: usize, i: usize, j: usize) -> usize {
        let di = self.digit(index, i);
        let dj = self.digit(index, j);
        let tmp = self.with_digit(index, i, dj);
        self.with_digit(tmp, j, di)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_round_trip() {
        let r = Radix::new(vec![2, 3, 2]);
        assert_eq!(r.len(), 12);
        for i in 0..r.len() {
            assert_eq!(r.encode(&r.decode(i)), i);
        }
        assert_eq!(r.decode(7), vec![1, 0, 1]);
        assert_eq!(r.with_digit(7, 1, 2), r.encode(&[1, 2, 1]));
    }

    #[test]
    fn swap_exchanges_digits() {
        let r = Radix::new(vec![2, 2]);
        assert_eq!(r.swap(r.encode(&[1, 0]), 0, 1), r.encode(&[0, 1]));
    }
}
