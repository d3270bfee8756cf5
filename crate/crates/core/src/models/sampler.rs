use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Class-balanced batches for the binary discriminator.
///
/// The larger class is walked through a shuffled permutation that is
/// reshuffled whenever it is exhausted; the smaller class is drawn uniformly
/// with replacement. Every batch holds exactly `batch_size / 2` of each.
/// Items are `(pool index, label)` with label 0 for `negatives` and 1 for
/// `positives`.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    negatives: Vec<usize>,
    positives: Vec<usize>,
    batch_size: usize,
    /// Label of the class walked by permutation.
    majority: u8,
    order: Vec<usize>,
    cursor: usize,
}

impl BalancedSampler {
    pub fn new(negatives: Vec<usize>, positives: Vec<usize>, batch_size: usize) -> Result<Self> {
        if negatives.is_empty() || positives.is_empty() {
            return Err(Error::CannotBalance(format!(
                "{} negatives and {} positives; both classes must be nonempty",
                negatives.len(),
                positives.len()
            )));
        }
        if batch_size < 2 || batch_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!("balanced batch size must be even, got {batch_size}")));
        }
        let majority = u8::from(positives.len() > negatives.len());
        Ok(Self {
            negatives,
            positives,
            batch_size,
            majority,
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn class(&self, label: u8) -> &[usize] {
        if label == 0 {
            &self.negatives
        } else {
            &self.positives
        }
    }

    /// Batches needed to visit the larger class once.
    pub fn batches_per_epoch(&self) -> usize {
        self.class(self.majority).len().div_ceil(self.batch_size / 2)
    }

    pub fn next_batch(&mut self, rng: &mut impl Rng) -> Vec<(usize, u8)> {
        let half = self.batch_size / 2;
        let minority = 1 - self.majority;
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..half {
            if self.cursor == self.order.len() {
                self.order = self.class(self.majority).to_vec();
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            batch.push((self.order[self.cursor], self.majority));
            self.cursor += 1;
        }
        let pool = self.class(minority);
        for _ in 0..half {
            batch.push((pool[rng.random_range(0..pool.len())], minority));
        }
        batch.sort_by_key(|&(_, label)| label);
        batch
    }
}
