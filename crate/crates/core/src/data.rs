//! Datasets, the three client partition cases, and minibatch sampling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::RngStream;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let feature_dim = first.features.len();
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if s.label as usize >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label as usize] += 1;
        }
        counts
    }

    /// Even/odd relabeling for the binary SVM task: even labels become 0
    /// (y = +1), odd labels become 1 (y = -1).
    pub fn to_parity(&self) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample::new(s.features.clone(), s.label % 2))
                .collect(),
            num_classes: 2,
            feature_dim: self.feature_dim,
        }
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Fixed unit direction of class `c`: the basis vector `e_c` while `c < d`,
/// otherwise a normalized Gaussian direction from a fixed stream.
fn class_direction(c: usize, d: usize) -> Vec<f64> {
    if c < d {
        let mut u = vec![0.0; d];
        u[c] = 1.0;
        return u;
    }
    let mut rng = RngStream::derive(0, 0x6469_7273, c as u32);
    let u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.into_iter().map(|x| x / n).collect()
}

/// Class-conditional Gaussian blobs with unit variance. Class `c` is
/// centred at `separation * u_c`; sample `j` has label `j mod classes`, so
/// classes are balanced to within one sample.
pub fn gen_synthetic(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    gen_blobs(n, d, classes, separation, RngStream::derive(seed, crate::numerics::domain::DATA, 0))
}

/// Held-out draw from the same class-conditional distribution as
/// [`gen_synthetic`] with the same seed, using an independent stream.
pub fn gen_synthetic_test(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    gen_blobs(
        n,
        d,
        classes,
        separation,
        RngStream::derive(seed, crate::numerics::domain::TEST_DATA, 0),
    )
}

fn gen_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    mut rng: RngStream,
) -> Result<Dataset> {
    if classes < 2 || n < classes || d == 0 || !(separation > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gen_synthetic needs n >= classes >= 2, d >= 1, separation > 0 (n={n}, d={d}, classes={classes}, separation={separation})"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| class_direction(c, d).into_iter().map(|u| separation * u).collect())
        .collect();
    let samples = (0..n)
        .map(|j| {
            let label = j % classes;
            let features = centers[label].iter().map(|m| m + rng.normal()).collect();
            Sample::new(features, label as u32)
        })
        .collect();
    Dataset::new(samples, classes)
}

struct IdxCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl IdxCursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| Error::IdxTruncated {
            path: self.path.to_path_buf(),
            detail: format!("missing {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != expected {
            return Err(Error::IdxMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }

    fn body(&mut self, len: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(Error::IdxTruncated {
                path: self.path.to_path_buf(),
                detail: format!("expected {len} data bytes, found {available}"),
            });
        }
        Ok(&self.bytes[self.pos..self.pos + len])
    }
}

/// Reads an IDX image/label file pair. Pixels are scaled to `[0, 1]`;
/// the class count is `max label + 1` (10 for MNIST).
pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut img = IdxCursor {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32("image count")? as usize;
    let rows = img.u32("row count")? as usize;
    let cols = img.u32("column count")? as usize;
    let pixels_per = rows * cols;
    let pixels = img.body(count * pixels_per)?;

    let mut lab = IdxCursor {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.u32("label count")? as usize;
    if label_count != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels = lab.body(label_count)?;
    if count == 0 || pixels_per == 0 {
        return Err(Error::Empty("idx dataset"));
    }

    let samples: Vec<Sample> = pixels
        .chunks_exact(pixels_per)
        .zip(labels)
        .map(|(px, &label)| {
            Sample::new(
                px.iter().map(|&p| p as f64 / 255.0).collect(),
                label as u32,
            )
        })
        .collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(samples, num_classes.max(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionCase {
    /// Each sample goes to a uniformly random client.
    Case1,
    /// Each client holds a single label (group).
    Case2,
    /// First half of the clients are IID over the first half of the labels;
    /// the rest hold single labels from the second half.
    Case3,
}

impl std::str::FromStr for PartitionCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" | "1" => Ok(Self::Case1),
            "case2" | "2" => Ok(Self::Case2),
            "case3" | "3" => Ok(Self::Case3),
            other => Err(Error::InvalidArgument(format!("unknown partition case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub case: PartitionCase,
    pub shards: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// Per-client label histograms.
    pub fn label_histograms(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.shards
            .iter()
            .map(|shard| {
                let mut h = vec![0; ds.num_classes];
                for &i in shard {
                    h[ds.samples[i].label as usize] += 1;
                }
                h
            })
            .collect()
    }
}

/// Shuffles `indices` and deals them into `n` contiguous chunks whose sizes
/// differ by at most one.
fn deal_iid(mut indices: Vec<usize>, n: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    rng.shuffle(&mut indices);
    split_even(&indices, n)
}

fn split_even(items: &[usize], n: usize) -> Vec<Vec<usize>> {
    let base = items.len() / n;
    let extra = items.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for j in 0..n {
        let len = base + usize::from(j < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Single-label-group shards over `labels`. With at least as many labels as
/// clients, labels are cut into contiguous groups; otherwise each label is
/// shared by a contiguous run of clients that split its samples evenly.
fn deal_by_label(
    ds: &Dataset,
    labels: &[usize],
    n: usize,
    rng: &mut RngStream,
) -> Vec<Vec<usize>> {
    let mut by_label = |l: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.samples[i].label as usize == l)
            .collect();
        rng.shuffle(&mut idx);
        idx
    };
    if labels.len() >= n {
        split_even(labels, n)
            .into_iter()
            .map(|group| group.into_iter().flat_map(&mut by_label).collect::<Vec<_>>())
            .map(|mut shard| {
                shard.sort_unstable();
                shard
            })
            .collect()
    } else {
        let clients: Vec<usize> = (0..n).collect();
        let owners = split_even(&clients, labels.len());
        let mut shards = vec![Vec::new(); n];
        for (l, group) in labels.iter().zip(owners) {
            let idx = by_label(*l);
            let parts = split_even(&idx, group.len());
            for (c, mut part) in group.into_iter().zip(parts) {
                part.sort_unstable();
                shards[c] = part;
            }
        }
        shards
    }
}

pub fn partition(ds: &Dataset, case: PartitionCase, n_clients: usize, seed: u64) -> Result<PartitionPlan> {
    if n_clients < 2 {
        return Err(Error::InvalidArgument(format!(
            "partition needs at least 2 clients, got {n_clients}"
        )));
    }
    let mut rng = RngStream::derive(seed, crate::numerics::domain::PARTITION, 0);
    let c = ds.num_classes;
    let shards = match case {
        PartitionCase::Case1 => deal_iid(ds.all_indices(), n_clients, &mut rng),
        PartitionCase::Case2 => {
            if n_clients > c {
                return Err(Error::InvalidArgument(format!(
                    "case2 needs n_clients <= num_classes ({n_clients} > {c})"
                )));
            }
            let labels: Vec<usize> = (0..c).collect();
            deal_by_label(ds, &labels, n_clients, &mut rng)
        }
        PartitionCase::Case3 => {
            let iid_clients = n_clients.div_ceil(2);
            let iid_labels = c.div_ceil(2);
            let first: Vec<usize> = (0..ds.len())
                .filter(|&i| (ds.samples[i].label as usize) < iid_labels)
                .collect();
            let mut shards = deal_iid(first, iid_clients, &mut rng);
            let rest: Vec<usize> = (iid_labels..c).collect();
            let rest_clients = n_clients - iid_clients;
            if rest.is_empty() {
                return Err(Error::InvalidArgument(
                    "case3 needs at least 2 labels".into(),
                ));
            }
            shards.extend(deal_by_label(ds, &rest, rest_clients, &mut rng));
            shards
        }
    };
    if let Some(i) = shards.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "partition left client {i} without samples"
        )));
    }
    Ok(PartitionPlan { case, shards })
}

/// `batch_size` indices drawn uniformly with replacement from `shard`.
pub fn sample_minibatch(shard: &[usize], batch_size: usize, rng: &mut RngStream) -> Vec<usize> {
    assert!(!shard.is_empty(), "cannot sample from an empty shard");
    (0..batch_size)
        .map(|_| shard[rng.below(shard.len() as u64) as usize])
        .collect()
}
