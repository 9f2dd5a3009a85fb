//! NTU-style sample naming and benchmark splits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Ids decoded from `S{sss}C{ccc}P{ppp}R{rrr}A{aaa}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub setup_id: u32,
    pub camera_id: u32,
    pub performer_id: u32,
    pub replication_id: u32,
    pub action_class: u32,
}

impl SampleMeta {
    /// Parse a sample name; a file extension or `.skeleton`-style suffix is ignored.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not an NTU sample name: `{name}`"));
        let stem = name.get(..20).ok_or_else(bad)?;
        let b = stem.as_bytes();
        let mut ids = [0u32; 5];
        for (i, tag) in [b'S', b'C', b'P', b'R', b'A'].iter().enumerate() {
            let at = i * 4;
            if b[at] != *tag {
                return Err(bad());
            }
            let digits = &stem[at + 1..at + 4];
            if !digits.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            ids[i] = digits.parse().map_err(|_| bad())?;
            if ids[i] == 0 {
                return Err(bad());
            }
        }
        if name.len() > 20 && !name[20..].starts_with('.') && !name[20..].starts_with('_') {
            return Err(bad());
        }
        Ok(SampleMeta {
            setup_id: ids[0],
            camera_id: ids[1],
            performer_id: ids[2],
            replication_id: ids[3],
            action_class: ids[4],
        })
    }

    pub fn name(&self) -> String {
        format!(
            "S{:03}C{:03}P{:03}R{:03}A{:03}",
            self.setup_id, self.camera_id, self.performer_id, self.replication_id, self.action_class
        )
    }

    /// Zero-based class label.
    pub fn label(&self) -> usize {
        self.action_class as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Train,
    Test,
}

/// Cameras 2 and 3 train, camera 1 tests.
pub fn split_cross_view(samples: &[SampleMeta]) -> Result<Vec<Assignment>> {
    samples
        .iter()
        .map(|m| match m.camera_id {
            1 => Ok(Assignment::Test),
            2 | 3 => Ok(Assignment::Train),
            c => Err(Error::InvalidArgument(format!("camera id {c} outside {{1,2,3}} in {}", m.name()))),
        })
        .collect()
}

/// Cross-subject training performers listed in the NTU RGB+D dataset documentation.
pub const NTU_CROSS_SUBJECT_TRAIN_IDS: [u32; 20] =
    [1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38];

/// Performers in `train_ids` train, everyone else tests.
pub fn split_cross_subject(samples: &[SampleMeta], train_ids: &[u32]) -> Result<Vec<Assignment>> {
    if train_ids.is_empty() {
        return Err(Error::Empty("cross-subject training id list"));
    }
    Ok(samples
        .iter()
        .map(|m| if train_ids.contains(&m.performer_id) { Assignment::Train } else { Assignment::Test })
        .collect())
}

/// Seeded uniform draw of `round(fraction · N)` validation items out of
/// `train` (without replacement). Returns `(remaining train, validation)`,
/// both in their original order.
pub fn validation_split<T: Clone>(train: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let n = train.len();
    let k = libm::round(fraction * n as f64) as usize;
    let mut rng = rng_for(seed);
    let mut chosen = alloc::vec![false; n];
    for i in sample(&mut rng, n, k.min(n)).iter() {
        chosen[i] = true;
    }
    let mut keep = Vec::with_capacity(n - k);
    let mut val = Vec::with_capacity(k);
    for (item, &c) in train.iter().zip(&chosen) {
        if c {
            val.push(item.clone());
        } else {
            keep.push(item.clone());
        }
    }
    Ok((keep, val))
}
