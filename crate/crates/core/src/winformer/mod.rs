//! Pre-norm Transformer blocks with sliding-window attention and a
//! ring-buffer cache for frame-by-frame streaming.

mod attention;
mod block;
mod stream;

pub use attention::{rope, windowed_attention};
pub use block::{block_forward, init_stack, stack_forward, BlockWeights, StackConfig};
pub use stream::{StreamCache, StreamingStack};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention span: `left` frames including the query itself, plus `right`
/// frames of lookahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub left: usize,
    pub right: usize,
}

impl WindowSpec {
    pub fn new(left: usize, right: usize) -> Result<Self> {
        let w = WindowSpec { left, right };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.left == 0 {
            return Err(Error::Config("window left must be >= 1".into()));
        }
        Ok(())
    }

    /// Inclusive range of keys visible to query `t` in a sequence of `total`.
    pub fn span(&self, t: usize, total: usize) -> (usize, usize) {
        let lo = (t + 1).saturating_sub(self.left);
        let hi = (t + self.right).min(total - 1);
        (lo, hi)
    }

    pub fn allows(&self, t: usize, u: usize, total: usize) -> bool {
        let (lo, hi) = self.span(t, total);
        lo <= u && u <= hi
    }
}

/// `mask[t][u]` is true when query `t` may attend to key `u`.
pub fn window_mask(total: usize, w: WindowSpec) -> Result<Vec<Vec<bool>>> {
    if total == 0 {
        return Err(Error::Contract("window_mask needs at least one frame".into()));
    }
    w.validate()?;
    Ok((0..total)
        .map(|t| (0..total).map(|u| w.allows(t, u, total)).collect())
        .collect())
}

/// `batch` independent sequences of `len` frames stacked as `batch·len` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub len: usize,
}

impl SeqLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attended(mask: &[Vec<bool>], t: usize) -> Vec<usize> {
        (0..mask.len()).filter(|&u| mask[t][u]).collect()
    }

    #[test]
    fn mask_examples() {
        let m = window_mask(6, WindowSpec::new(2, 0).unwrap()).unwrap();
        assert_eq!(attended(&m, 3), vec![2, 3]);

        let m = window_mask(6, WindowSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(attended(&m, 1), vec![0, 1, 2, 3]);

        let t = 7;
        let m = window_mask(t, WindowSpec::new(t, 0).unwrap()).unwrap();
        for q in 0..t {
            assert_eq!(attended(&m, q), (0..=q).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_left_is_rejected() {
        assert!(WindowSpec::new(0, 1).is_err());
        assert!(window_mask(0, WindowSpec::new(1, 0).unwrap()).is_err());
    }
}
