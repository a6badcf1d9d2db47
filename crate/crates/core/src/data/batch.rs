use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Split;
use crate::adaptation::DomainLabelVector;
use crate::detector::GroundTruthBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Endless index sequence over `0..len`. Without a seed it cycles in
/// order; with one, every pass is a fresh permutation.
#[derive(Clone, Debug)]
pub struct SceneCursor {
    order: Vec<usize>,
    pos: usize,
    rng: Option<ChaCha8Rng>,
}

impl SceneCursor {
    pub fn new(len: usize, shuffle_seed: Option<u64>) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot stream from an empty split".into()));
        }
        let mut cursor = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: shuffle_seed.map(ChaCha8Rng::seed_from_u64),
        };
        cursor.reshuffle();
        Ok(cursor)
    }

    fn reshuffle(&mut self) {
        if let Some(rng) = &mut self.rng {
            self.order.sort_unstable();
            self.order.shuffle(rng);
        }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.pos = 0;
            self.reshuffle();
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// A split paired with its cursor.
#[derive(Clone, Debug)]
pub struct DomainStream<'a> {
    pub split: &'a Split,
    cursor: SceneCursor,
}

impl<'a> DomainStream<'a> {
    pub fn new(split: &'a Split, shuffle_seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            split,
            cursor: SceneCursor::new(split.len(), shuffle_seed)?,
        })
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.cursor.next_index()).collect()
    }
}

/// `B/2` labeled source images followed by `B/2` unlabeled target images.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    /// `[B, 3, H, W]`, pixels in `[0, 1]`.
    pub images: Tensor,
    /// Annotations of the source half only.
    pub boxes: Vec<Vec<GroundTruthBox>>,
    pub labels: DomainLabelVector,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

impl DomainBatch {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn source_images(&self) -> Tensor {
        self.images.slice_outer(0, self.boxes.len())
    }
}

pub fn check_batch_size(batch_size: usize) -> Result<()> {
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::Config(format!("batch size must be a positive even number, got {batch_size}")));
    }
    Ok(())
}

pub fn compose_batch(source: &mut DomainStream, target: &mut DomainStream, batch_size: usize) -> Result<DomainBatch> {
    check_batch_size(batch_size)?;
    let half = batch_size / 2;
    let source_indices = source.take(half);
    let target_indices = target.take(half);
    let mut parts = source.split.images_tensor(&source_indices);
    parts.extend(target.split.images_tensor(&target_indices));
    Ok(DomainBatch {
        images: Tensor::stack_outer(&parts)?,
        boxes: source_indices.iter().map(|&i| source.split.boxes[i].clone()).collect(),
        labels: DomainLabelVector::split(half, half),
        source_indices,
        target_indices,
    })
}
