//! Batched streaming: per-epoch seeded shuffle, decode + augment +
//! normalize, a decoded-image cache keyed by path, and an optional bounded
//! prefetch thread. The delivered batch sequence is fully determined by
//! (seed, epoch), independent of prefetch timing.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use crate::data::imageops::{augment, decode_resize, AugmentConfig, ByteImage, CHANNELS, IMG_SIZE};
use crate::data::{DatasetIndex, STREAM_AUGMENT, STREAM_EPOCH};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256PlusPlus;
use crate::tensor::{Shape, Tensor};

/// Decoded 256x256 images by path, shared across epochs.
#[derive(Default)]
pub struct ImageCache {
    map: Mutex<HashMap<PathBuf, Arc<ByteImage>>>,
}

impl ImageCache {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn get_or_decode(&self, path: &PathBuf) -> Result<Arc<ByteImage>> {
        if let Some(img) = self.map.lock().unwrap().get(path) {
            return Ok(img.clone());
        }
        let img = Arc::new(decode_resize(path)?);
        self.map
            .lock()
            .unwrap()
            .insert(path.clone(), img.clone());
        Ok(img)
    }
}

/// A normalized, optionally augmented slice of the dataset.
pub struct Batch {
    pub x: Tensor<f32>,
    pub y: Vec<usize>,
    pub epoch: usize,
    pub index_in_epoch: usize,
}

struct Plan {
    entries: Vec<(PathBuf, usize)>,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    augment: Option<AugmentConfig>,
    cache: Option<Arc<ImageCache>>,
}

impl Plan {
    /// Shuffled positions for this epoch.
    fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        let mut rng =
            Xoshiro256PlusPlus::for_stream(self.seed, STREAM_EPOCH | self.epoch as u64);
        rng.shuffle(&mut order);
        order
    }

    fn batch_count(&self) -> usize {
        self.entries.len().div_ceil(self.batch_size)
    }

    fn load(&self, position: usize, entry_idx: usize) -> Result<(Vec<f32>, usize)> {
        let (path, class) = &self.entries[entry_idx];
        let img = match &self.cache {
            Some(c) => c.get_or_decode(path)?,
            None => Arc::new(decode_resize(path)?),
        };
        let img = match &self.augment {
            Some(cfg) if cfg.enabled => {
                // Per-item rng derived from (seed, epoch, position): the
                // same augmentation regardless of who decodes when.
                let mut rng = Xoshiro256PlusPlus::for_stream(
                    self.seed,
                    STREAM_AUGMENT | ((self.epoch as u64) << 24) | position as u64,
                );
                augment(&img, &mut rng, cfg)
            }
            _ => (*img).clone(),
        };
        let pixels = img.data.iter().map(|&b| b as f32 / 255.0).collect();
        Ok((pixels, *class))
    }

    fn build_batch(&self, order: &[usize], index_in_epoch: usize) -> Result<Batch> {
        let start = index_in_epoch * self.batch_size;
        let slice = &order[start..(start + self.batch_size).min(order.len())];
        let n = slice.len();
        let mut data = Vec::with_capacity(n * IMG_SIZE * IMG_SIZE * CHANNELS);
        let mut labels = Vec::with_capacity(n);
        for (offset, &entry_idx) in slice.iter().enumerate() {
            let (pixels, class) = self.load(start + offset, entry_idx)?;
            data.extend_from_slice(&pixels);
            labels.push(class);
        }
        let x = Tensor::from_vec(Shape::new(&[n, IMG_SIZE, IMG_SIZE, CHANNELS])?, data)?;
        Ok(Batch {
            x,
            y: labels,
            epoch: self.epoch,
            index_in_epoch,
        })
    }
}

enum Source {
    Sequential {
        plan: Plan,
        order: Vec<usize>,
        next: usize,
    },
    Prefetched {
        rx: mpsc::Receiver<Result<Batch>>,
        _worker: thread::JoinHandle<()>,
    },
}

/// Ordered stream of batches for one epoch.
pub struct BatchStream {
    source: Source,
}

/// Number of batches prepared ahead of the consumer.
const PREFETCH_DEPTH: usize = 2;

impl BatchStream {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        index: &DatasetIndex,
        batch_size: usize,
        seed: u64,
        epoch: usize,
        augment: Option<AugmentConfig>,
        cache: Option<Arc<ImageCache>>,
        prefetch: bool,
    ) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::Dataset("cannot batch an empty index".into()));
        }
        if batch_size == 0 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        if let Some(cfg) = &augment {
            cfg.validate()?;
        }
        let plan = Plan {
            entries: index.entries.clone(),
            batch_size,
            seed,
            epoch,
            augment,
            cache,
        };
        let order = plan.order();
        if !prefetch {
            return Ok(Self {
                source: Source::Sequential {
                    plan,
                    order,
                    next: 0,
                },
            });
        }
        let (tx, rx) = mpsc::sync_channel(PREFETCH_DEPTH);
        let worker = thread::spawn(move || {
            let count = plan.batch_count();
            for i in 0..count {
                let batch = plan.build_batch(&order, i);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        Ok(Self {
            source: Source::Prefetched {
                rx,
                _worker: worker,
            },
        })
    }
}

impl Iterator for BatchStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.source {
            Source::Sequential { plan, order, next } => {
                if *next >= plan.batch_count() {
                    return None;
                }
                let batch = plan.build_batch(order, *next);
                *next += 1;
                Some(batch)
            }
            Source::Prefetched { rx, .. } => rx.recv().ok(),
        }
    }
}
