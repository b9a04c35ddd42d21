use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::seed;

/// Clips for one optimizer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedBatch {
    /// Clip indices; the first `quota_len` come from the per-class quota,
    /// the rest fill leftover slots.
    pub clips: Vec<usize>,
    pub quota_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<PlannedBatch>,
    /// Clips per class per batch in balanced mode, 0 otherwise.
    pub quota: usize,
    pub num_classes: usize,
    pub balanced: bool,
}

/// Endless reshuffled passes over a fixed item list.
struct Epochs {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Epochs {
    fn new(items: Vec<usize>, rng: ChaCha8Rng) -> Self {
        Self {
            order: Vec::new(),
            pos: 0,
            items,
            rng,
        }
    }

    fn reshuffle(&mut self) {
        self.order.clone_from(&self.items);
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.reshuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    /// `n` items from one pass; starts a new pass if fewer than `n` remain.
    fn take_within_epoch(&mut self, n: usize) -> Vec<usize> {
        if self.order.len() - self.pos < n {
            self.reshuffle();
        }
        self.pos += n;
        self.order[self.pos - n..self.pos].to_vec()
    }
}

/// Plan `config.steps` batches of `config.batch_size` clips.
///
/// Unbalanced: each epoch is a fresh permutation of all clips cut into
/// batches; a tail shorter than a batch is dropped so no clip appears
/// twice in one batch. Balanced: every class gives `floor(M / C)` clips
/// per batch from its own reshuffled stream (small classes repeat), and
/// the `M mod C` leftover slots go to distinct classes taken in turn from
/// a fixed seeded rotation.
pub fn plan_batches(labels: &[usize], num_classes: usize, config: &TrainConfig) -> Result<BatchPlan> {
    let m = config.batch_size;
    if labels.is_empty() {
        return Err(Error::EmptyDataset("cannot plan batches over zero clips".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Parameter(format!("label {bad} out of range for {num_classes} classes")));
    }
    if m < 2 {
        return Err(Error::config(format!("train.batch_size must be >= 2, got {m}")));
    }
    let seed = config.seed;
    if !config.balanced {
        if labels.len() < m {
            return Err(Error::config(format!(
                "train.batch_size {m} exceeds the {} available clips",
                labels.len()
            )));
        }
        let mut stream = Epochs::new((0..labels.len()).collect(), seed::rng(seed, seed::SAMPLER, &[0]));
        let batches = (0..config.steps)
            .map(|_| PlannedBatch {
                clips: stream.take_within_epoch(m),
                quota_len: m,
            })
            .collect();
        return Ok(BatchPlan {
            batches,
            quota: 0,
            num_classes,
            balanced: false,
        });
    }
    if m < num_classes {
        return Err(Error::config(format!(
            "balanced sampling needs train.batch_size >= number of classes ({m} < {num_classes})"
        )));
    }
    let mut streams = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::EmptyDataset(format!("class {c} has no clips to sample")));
        }
        streams.push(Epochs::new(members, seed::rng(seed, seed::SAMPLER, &[1, c as u64])));
    }
    let quota = m / num_classes;
    let leftover = m % num_classes;
    let mut rotation: Vec<usize> = (0..num_classes).collect();
    rotation.shuffle(&mut seed::rng(seed, seed::SAMPLER, &[2]));
    let mut cursor = 0;
    let batches = (0..config.steps)
        .map(|_| {
            let mut clips = Vec::with_capacity(m);
            for s in streams.iter_mut() {
                clips.extend((0..quota).map(|_| s.next()));
            }
            for _ in 0..leftover {
                clips.push(streams[rotation[cursor]].next());
                cursor = (cursor + 1) % num_classes;
            }
            PlannedBatch {
                clips,
                quota_len: quota * num_classes,
            }
        })
        .collect();
    Ok(BatchPlan {
        batches,
        quota,
        num_classes,
        balanced: true,
    })
}
