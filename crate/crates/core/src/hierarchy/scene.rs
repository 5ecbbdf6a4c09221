use std::collections::{BTreeMap, BTreeSet};

use super::Partition;
use crate::data::{Dataset, LabelHierarchy, Provenance, Subclass, TrainingSample};
use crate::error::{Error, Result};

/// One subclass per realised (common class, scene name) pair and one identity
/// subclass per rare class. Assigns `subclass_label` on every sample.
pub fn build_scene_name_hierarchy(
    samples: &mut [TrainingSample],
    ds: &Dataset,
    partition: &Partition,
) -> Result<LabelHierarchy> {
    let num_classes = ds.num_classes();
    let mut scenes: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); num_classes];
    for s in samples.iter() {
        if partition.common.contains(&s.class_label) {
            let img = ds.image(s.image);
            let name = img.scene_name.as_deref().ok_or_else(|| Error::MissingSceneName {
                image: img.id.clone(),
            })?;
            scenes[s.class_label].insert(name);
        }
    }

    let mut subclasses = Vec::new();
    let mut lookup: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    let mut identity = vec![None; num_classes];
    for (j, names) in scenes.iter().enumerate() {
        if partition.rare.contains(&j) || names.is_empty() {
            identity[j] = Some(subclasses.len());
            subclasses.push(Subclass {
                parent: j,
                provenance: Provenance::Identity,
            });
            continue;
        }
        for &name in names {
            lookup.insert((j, name), subclasses.len());
            subclasses.push(Subclass {
                parent: j,
                provenance: Provenance::SceneName(name.to_string()),
            });
        }
    }

    for s in samples.iter_mut() {
        let sub = match identity[s.class_label] {
            Some(id) => id,
            None => {
                let name = ds.image(s.image).scene_name.as_deref().expect("checked above");
                lookup[&(s.class_label, name)]
            }
        };
        s.subclass_label = Some(sub);
    }
    LabelHierarchy::new(num_classes, subclasses, partition.common.clone(), partition.rare.clone())
}
