use super::histogram::{compute_label_histogram, HistogramDescriptor};
use super::kmeans::{count_distinct, kmeans};
use super::Partition;
use crate::data::{Dataset, LabelHierarchy, Provenance, Roi, Subclass, TrainingSample};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const MAX_CLUSTER_COUNT: usize = 15;
pub const KMEANS_MAX_ITER: usize = 100;

fn kmeans_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "kmeans", k as u64)
}

/// Grows the cluster count while every cluster keeps more than `n_star`
/// members. Runs that fail to converge are skipped, not counted as failures.
/// A candidate larger than the number of distinct points ends the search.
pub fn choose_cluster_count(points: &[Vec<f64>], n_star: usize, seed: u64) -> Result<usize> {
    let distinct = count_distinct(points);
    if distinct < 2 {
        return Ok(1);
    }
    let mut k_best = 2;
    for i in 2..=MAX_CLUSTER_COUNT {
        if i > distinct {
            break;
        }
        let run = kmeans(points, i, KMEANS_MAX_ITER, kmeans_seed(seed, i))?;
        if !run.converged {
            continue;
        }
        if run.cluster_sizes().iter().all(|&n| n > n_star) {
            k_best = i;
        } else {
            break;
        }
    }
    Ok(k_best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelmapBuild {
    pub hierarchy: LabelHierarchy,
    /// Common-class samples whose window held no labelled pixel.
    pub dropped_empty: usize,
    /// Chosen cluster count per class; rare classes report 1.
    pub cluster_counts: Vec<usize>,
}

/// Clusters the label-histogram descriptors of each common class's samples
/// and assigns `subclass_label` on every sample.
///
/// Samples with an empty descriptor are left out of clustering and share an
/// identity subclass of their class.
pub fn build_labelmap_hierarchy(
    samples: &mut [TrainingSample],
    ds: &Dataset,
    partition: &Partition,
    roi: Roi,
    n_star: usize,
    seed: u64,
) -> Result<LabelmapBuild> {
    let num_classes = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.class_label].push(i);
    }

    let mut subclasses = Vec::new();
    let mut cluster_counts = vec![1; num_classes];
    let mut dropped_empty = 0;
    for (j, members) in by_class.iter().enumerate() {
        if partition.rare.contains(&j) {
            let id = subclasses.len();
            subclasses.push(Subclass {
                parent: j,
                provenance: Provenance::Identity,
            });
            for &i in members {
                samples[i].subclass_label = Some(id);
            }
            continue;
        }

        let mut points = Vec::new();
        let mut usable = Vec::new();
        let mut empty = Vec::new();
        for &i in members {
            let s = &samples[i];
            match compute_label_histogram(ds.image(s.image).labels(), s.center, roi, num_classes)? {
                HistogramDescriptor::Unit(v) => {
                    points.push(v);
                    usable.push(i);
                }
                HistogramDescriptor::Empty => empty.push(i),
            }
        }
        if points.is_empty() {
            return Err(Error::NoUsableSamples { class: j });
        }
        dropped_empty += empty.len();

        let class_seed = derive_seed(seed, "class", j as u64);
        let k = choose_cluster_count(&points, n_star, class_seed)?;
        cluster_counts[j] = k;
        let run = kmeans(&points, k, KMEANS_MAX_ITER, kmeans_seed(class_seed, k))?;
        let mut ids = vec![None; k];
        for (&i, &a) in usable.iter().zip(&run.assignments) {
            let id = *ids[a].get_or_insert_with(|| {
                subclasses.push(Subclass {
                    parent: j,
                    provenance: Provenance::Cluster(run.centers[a].clone()),
                });
                subclasses.len() - 1
            });
            samples[i].subclass_label = Some(id);
        }
        if !empty.is_empty() {
            let id = subclasses.len();
            subclasses.push(Subclass {
                parent: j,
                provenance: Provenance::Identity,
            });
            for i in empty {
                samples[i].subclass_label = Some(id);
            }
        }
    }

    let hierarchy = LabelHierarchy::new(num_classes, subclasses, partition.common.clone(), partition.rare.clone())?;
    Ok(LabelmapBuild {
        hierarchy,
        dropped_empty,
        cluster_counts,
    })
}
