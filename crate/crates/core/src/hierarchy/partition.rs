use std::collections::BTreeSet;

use crate::data::{ClassCatalog, TrainingSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub common: BTreeSet<usize>,
    pub rare: BTreeSet<usize>,
}

/// Splits classes into common and rare by superpixel mass.
///
/// Classes are taken in descending count order (ties by ascending index)
/// until their cumulative count exceeds `rho * total`. If no prefix exceeds
/// it (only possible for `rho = 1`), every class is common.
pub fn partition_classes(catalog: &ClassCatalog, rho: f64) -> Result<Partition> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} not in (0, 1]")));
    }
    let counts = catalog.superpixel_counts();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("all superpixel counts are zero".into()));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let threshold = rho * total as f64;
    let mut cumulative = 0u64;
    let mut common = BTreeSet::new();
    for &j in &order {
        if cumulative as f64 > threshold {
            break;
        }
        common.insert(j);
        cumulative += counts[j];
    }
    let rare = (0..counts.len()).filter(|j| !common.contains(j)).collect();
    Ok(Partition { common, rare })
}

/// Sample count of the largest rare class (`0` when there are none).
pub fn largest_rare_count(samples: &[TrainingSample], partition: &Partition) -> usize {
    partition
        .rare
        .iter()
        .map(|&j| samples.iter().filter(|s| s.class_label == j).count())
        .max()
        .unwrap_or(0)
}
