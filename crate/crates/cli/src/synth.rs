//! Planted-subclass datasets: striped scenes whose subclass structure is
//! known by construction.
//!
//! Every image shows alternating stripes of two common classes. Which pair
//! an image shows is its scene; a class's context is its partner in that
//! pair. Class colour depends on the context, so each class has one
//! appearance per context. Some images also carry one small square of a
//! rare class, centred on a sampling-grid point.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use semctx::ingest::{io::save_dataset, sample_centers};
use semctx::rng::rng_for;
use semctx::{validate_dataset, ClassCatalog, Dataset, Error, Label, LabelMap, LabeledImage};

use crate::error::CliError;

pub const PLANTED_FILE: &str = "planted.tsv";
pub const RARE_CLASS_NAME: &str = "rare";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Common classes.
    pub classes: usize,
    pub contexts: usize,
    pub images: usize,
    pub size: usize,
    /// Per-channel colour noise amplitude. Zero also fixes the stripe layout.
    pub noise: f64,
    /// Fraction of images carrying one rare-class square; zero omits the
    /// rare class from the catalog.
    pub rare_fraction: f64,
    /// Sampling density the rare squares are aligned to.
    pub pixels_per_cell: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            contexts: 2,
            images: 200,
            size: 64,
            noise: 0.1,
            rare_fraction: 0.58,
            pixels_per_cell: 300,
            seed: 0,
        }
    }
}

/// Hidden ground truth for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Planted {
    pub image_id: String,
    pub scene: usize,
    pub pair: (usize, usize),
}

impl Planted {
    /// The partner of `class` in this image's scene, if it takes part.
    pub fn partner(&self, class: usize) -> Option<usize> {
        match self.pair {
            (a, b) if a == class => Some(b),
            (a, b) if b == class => Some(a),
            _ => None,
        }
    }
}

/// Class pairs such that every class belongs to exactly `contexts` pairs.
pub fn context_pairs(classes: usize, contexts: usize) -> Result<Vec<(usize, usize)>, CliError> {
    if contexts == 0 || contexts >= classes || (contexts % 2 == 1 && classes % 2 == 1) {
        return Err(CliError::Usage(format!(
            "cannot give each of {classes} classes {contexts} distinct partners"
        )));
    }
    let mut pairs = Vec::new();
    for d in 1..=contexts / 2 {
        for i in 0..classes {
            let j = (i + d) % classes;
            // For d = classes/2 the pair would appear twice.
            if 2 * d == classes && i >= j {
                continue;
            }
            pairs.push((i.min(j), i.max(j)));
        }
    }
    if contexts % 2 == 1 {
        let half = classes / 2;
        pairs.extend((0..half).map(|i| (i, i + half)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

fn scene_name(pair: (usize, usize)) -> String {
    format!("scene-{}-{}", pair.0, pair.1)
}

/// Colours at least `min_dist` apart (Euclidean), drawn by rejection.
fn palette(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng_for(seed, "palette", 0);
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut min_dist = 0.35;
    let mut tries = 0;
    while out.len() < n {
        let c = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
        let ok = out.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_dist);
        if ok {
            out.push(c);
        }
        tries += 1;
        if tries % 1000 == 0 {
            min_dist *= 0.9;
        }
    }
    out
}

/// Builds the dataset in memory with its hidden ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Vec<Planted>), CliError> {
    generate_with_palette(spec, spec.seed)
}

/// As [`generate`], with colours drawn from `palette_seed` so that several
/// splits can share one appearance model.
pub fn generate_with_palette(spec: &SynthSpec, palette_seed: u64) -> Result<(Dataset, Vec<Planted>), CliError> {
    if spec.size < 8 || spec.images == 0 {
        return Err(CliError::Usage("synthetic images must be at least 8x8 and non-empty".into()));
    }
    if !(0.0..=1.0).contains(&spec.noise) || !(0.0..=1.0).contains(&spec.rare_fraction) {
        return Err(CliError::Usage("noise and rare_fraction must lie in [0, 1]".into()));
    }
    let pairs = context_pairs(spec.classes, spec.contexts)?;
    let with_rare = spec.rare_fraction > 0.0;
    let n = spec.classes;
    let rare = n as Label;

    // One colour per (class, partner), then one for the rare class.
    let colours = palette(n * n + 1, palette_seed);
    let colour = |class: usize, partner: usize| colours[class * n + partner];
    let rare_colour = colours[n * n];

    let mut names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    if with_rare {
        names.push(RARE_CLASS_NAME.into());
    }

    let mut rare_images: Vec<usize> = (0..spec.images).collect();
    rare_images.shuffle(&mut rng_for(spec.seed, "rare-images", 0));
    rare_images.truncate((spec.rare_fraction * spec.images as f64).round() as usize);
    rare_images.sort_unstable();

    let size = spec.size;
    let base_width = (size / 8).max(2);
    let probe = LabeledImage::new("probe", size, size, vec![0.0; size * size * 3], LabelMap::filled(size, size, 0), None)?;
    let grid: Vec<usize> = sample_centers(&probe, spec.pixels_per_cell)?
        .into_iter()
        .map(|(_, c)| c)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] - w[0] < 4) {
        return Err(CliError::Usage(format!(
            "a {size}x{size} image needs at least two sampling lines at least 4 pixels apart"
        )));
    }
    let mut images = Vec::with_capacity(spec.images);
    let mut planted = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let mut rng = rng_for(spec.seed, "image", i as u64);
        let scene = i % pairs.len();
        let pair = pairs[scene];
        let horizontal = rng.gen_bool(0.5);
        // Alternating within a scene balances the classes exactly; the
        // noiseless layout keeps every image of a scene identical.
        let first_is_a = spec.noise == 0.0 || (i / pairs.len()) % 2 == 0;

        // One stripe boundary between adjacent grid lines, so grid samples
        // alternate between the two classes. The margins outside the grid
        // are striped at the same pitch so that edge windows see both.
        let pitch = (grid[1] - grid[0]) as f64 / 2.0;
        let mut boundaries: Vec<usize> = Vec::new();
        let mut x = grid[0] as f64 - pitch;
        while x >= 1.0 {
            boundaries.push(x.round() as usize);
            x -= pitch;
        }
        for w in grid.windows(2) {
            let mid = (w[0] + w[1]).div_ceil(2) as i64;
            let slack = ((w[1] - w[0]) / 6) as i64;
            let b = if spec.noise > 0.0 { mid + rng.gen_range(-slack..=slack) } else { mid };
            boundaries.push(b.clamp(w[0] as i64 + 1, w[1] as i64) as usize);
        }
        let last = grid[grid.len() - 1];
        let mut x = last as f64 + pitch;
        while x < size as f64 {
            boundaries.push(x.round() as usize);
            x += pitch;
        }
        boundaries.sort_unstable();
        let stripe_of: Vec<usize> = (0..size).map(|x| boundaries.iter().filter(|&&b| x >= b).count()).collect();

        let mut labels = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let s = stripe_of[if horizontal { r } else { c }];
                let a_here = (s % 2 == 0) == first_is_a;
                labels.push(if a_here { pair.0 } else { pair.1 } as Label);
            }
        }
        let mut label_map = LabelMap::new(size, size, labels)?;

        if rare_images.binary_search(&i).is_ok() {
            let (cr, cc) = (grid[rng.gen_range(0..grid.len())], grid[rng.gen_range(0..grid.len())]);
            let half = (base_width * 11 / 16).max(1);
            for r in cr.saturating_sub(half)..(cr + half + 1).min(size) {
                for c in cc.saturating_sub(half)..(cc + half + 1).min(size) {
                    label_map.set(r, c, rare);
                }
            }
        }

        let mut pixels = Vec::with_capacity(size * size * 3);
        for r in 0..size {
            for c in 0..size {
                let l = label_map.get(r, c);
                let base = if l == rare {
                    rare_colour
                } else if l as usize == pair.0 {
                    colour(pair.0, pair.1)
                } else {
                    colour(pair.1, pair.0)
                };
                for v in base {
                    let jitter = if spec.noise > 0.0 { rng.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
                    pixels.push((v + jitter).clamp(0.0, 1.0));
                }
            }
        }

        let id = format!("img{i:04}");
        images.push(LabeledImage::new(id.clone(), size, size, pixels, label_map, Some(scene_name(pair)))?);
        planted.push(Planted {
            image_id: id,
            scene,
            pair,
        });
    }
    let catalog = ClassCatalog::from_names(names)?;
    let ds = validate_dataset(images, catalog)?;
    Ok((ds, planted))
}

pub fn planted_to_tsv(planted: &[Planted]) -> String {
    let mut out = String::from("image_id\tscene\tfirst\tsecond\n");
    for p in planted {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", p.image_id, p.scene, p.pair.0, p.pair.1);
    }
    out
}

pub fn read_planted(path: &Path) -> Result<Vec<Planted>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Core(Error::io(path, e)))?;
    let bad = |line: usize| {
        CliError::Core(Error::Format {
            path: path.into(),
            line,
            detail: "expected image_id, scene, first, second".into(),
        })
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(i + 1));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1));
        out.push(Planted {
            image_id: f[0].to_string(),
            scene: num(f[1])?,
            pair: (num(f[2])?, num(f[3])?),
        });
    }
    Ok(out)
}

/// Writes the dataset and its `planted.tsv` under `dir`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<Dataset, CliError> {
    generate_synthetic_split(spec, spec.seed, dir)
}

pub fn generate_synthetic_split(spec: &SynthSpec, palette_seed: u64, dir: &Path) -> Result<Dataset, CliError> {
    let (ds, planted) = generate_with_palette(spec, palette_seed)?;
    save_dataset(dir, &ds)?;
    let path = dir.join(PLANTED_FILE);
    fs::write(&path, planted_to_tsv(&planted)).map_err(|e| CliError::Core(Error::io(path, e)))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use semctx::hierarchy::{build_scene_name_hierarchy, compute_label_histogram, partition_classes};
    use semctx::ingest::{class_counts, collect_samples};
    use semctx::{Roi, UNLABELED};

    #[test]
    fn pairs_give_each_class_the_requested_partners() {
        for (n, k) in [(4, 2), (4, 1), (4, 3), (6, 2), (5, 2), (6, 4)] {
            let pairs = context_pairs(n, k).unwrap();
            for c in 0..n {
                let deg = pairs.iter().filter(|p| p.0 == c || p.1 == c).count();
                assert_eq!(deg, k, "n={n} k={k} class {c}");
            }
        }
        assert!(context_pairs(5, 1).is_err());
        assert!(context_pairs(3, 3).is_err());
        assert!(context_pairs(3, 0).is_err());
    }

    #[test]
    fn noiseless_single_context_histograms_coincide() {
        let spec = SynthSpec {
            contexts: 1,
            images: 12,
            noise: 0.0,
            rare_fraction: 0.0,
            ..SynthSpec::default()
        };
        let (ds, _) = generate(&spec).unwrap();
        let samples = collect_samples(&ds, spec.pixels_per_cell).unwrap();
        for class in 0..spec.classes {
            let hists: Vec<_> = samples
                .iter()
                .filter(|s| s.class_label == class)
                .map(|s| compute_label_histogram(ds.image(s.image).labels(), s.center, Roi::Whole, ds.num_classes()).unwrap())
                .collect();
            assert!(!hists.is_empty());
            assert!(hists.iter().all(|h| *h == hists[0]), "class {class}");
        }
    }

    #[test]
    fn label_maps_are_complete_and_exact() {
        let (ds, planted) = generate(&SynthSpec {
            images: 20,
            ..SynthSpec::default()
        })
        .unwrap();
        for (img, p) in ds.images().iter().zip(&planted) {
            assert_eq!(img.scene_name.as_deref(), Some(scene_name(p.pair).as_str()));
            for &l in img.labels().as_slice() {
                assert_ne!(l, UNLABELED);
                let l = l as usize;
                assert!(l == p.pair.0 || l == p.pair.1 || l == spec_rare());
            }
        }
        fn spec_rare() -> usize {
            SynthSpec::default().classes
        }
    }

    #[test]
    fn scene_names_reproduce_the_planting() {
        let spec = SynthSpec {
            images: 40,
            ..SynthSpec::default()
        };
        let (ds, planted) = generate(&spec).unwrap();
        let mut samples = collect_samples(&ds, spec.pixels_per_cell).unwrap();
        let ds = ds.clone().with_catalog(ds.catalog().with_counts(class_counts(&samples, ds.num_classes())).unwrap()).unwrap();
        let partition = partition_classes(ds.catalog(), 0.93).unwrap();
        assert_eq!(partition.common.len(), spec.classes);
        let h = build_scene_name_hierarchy(&mut samples, &ds, &partition).unwrap();
        assert_eq!(h.num_subclasses(), spec.classes * spec.contexts + 1);
        // Same (class, partner) exactly when same subclass.
        let key = |s: &semctx::TrainingSample| (s.class_label, planted[s.image].partner(s.class_label));
        for a in &samples {
            for b in samples.iter().step_by(7) {
                assert_eq!(key(a) == key(b), a.subclass_label == b.subclass_label);
            }
        }
    }

    #[test]
    fn planted_file_round_trips() {
        let (_, planted) = generate(&SynthSpec {
            images: 6,
            ..SynthSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PLANTED_FILE);
        fs::write(&path, planted_to_tsv(&planted)).unwrap();
        assert_eq!(read_planted(&path).unwrap(), planted);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            images: 8,
            seed: 3,
            ..SynthSpec::default()
        };
        let (a, pa) = generate(&spec).unwrap();
        let (b, pb) = generate(&spec).unwrap();
        assert_eq!(a.images(), b.images());
        assert_eq!(pa, pb);
    }
}
