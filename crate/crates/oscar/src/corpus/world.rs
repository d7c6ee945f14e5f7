//! Synthetic multimodal world: class prototypes in feature space, a small
//! vocabulary, caption templates, and samplers for images, captions, and
//! (noisy) object tags.
//!
//! This stands in for a detector pipeline: an "image" is a set of region
//! feature vectors around class prototypes with normalized boxes, a
//! caption mentions a subset of the depicted classes by name, and tags are
//! the distinct class names subjected to configurable drop/flip noise.

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::Rng;

const DEFAULT_CLASS_NAMES: [&str; 16] = [
    "cat", "dog", "car", "bus", "tree", "house", "bird", "boat", "horse", "train", "chair",
    "table", "plane", "sheep", "bike", "truck",
];

const DEFAULT_FILLER: [&str; 51] = [
    "a", "an", "the", "and", "with", "near", "beside", "under", "over", "in", "on", "at", "of",
    "by", "photo", "picture", "image", "scene", "view", "shot", "shows", "contains", "features",
    "depicts", "there", "is", "are", "one", "two", "three", "some", "several", "small", "large",
    "big", "tiny", "bright", "dark", "old", "new", "day", "night", "morning", "evening", "what",
    "which", "main", "object", "same", "both", "here",
];

/// How many draws a single prototype may take before separation is
/// declared unsatisfiable.
const PROTOTYPE_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub num_classes: usize,
    /// Region feature dimension P.
    pub feature_dim: usize,
    /// Box geometry dimension R: 4 = corners only, 6 = corners plus height and width.
    pub box_dim: usize,
    /// Minimum pairwise L2 distance between class prototypes.
    pub separation: f64,
    pub caption_budget: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_classes: 8,
            feature_dim: 16,
            box_dim: 6,
            separation: 2.0,
            caption_budget: 12,
        }
    }
}

/// One caption skeleton: `prefix [objects] suffix`, where the object slot
/// expands to the mentioned class names joined by "and".
#[derive(Clone, Debug)]
pub struct CaptionTemplate {
    pub prefix: Vec<String>,
    pub suffix: Vec<String>,
}

fn template(prefix: &[&str], suffix: &[&str]) -> CaptionTemplate {
    CaptionTemplate {
        prefix: prefix.iter().map(|s| s.to_string()).collect(),
        suffix: suffix.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// One feature-space prototype per class, pairwise separated.
    pub prototypes: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    pub filler: Vec<String>,
    pub templates: Vec<CaptionTemplate>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Region {
    pub feature: Vec<f64>,
    /// (x1, y1, x2, y2), all in [0, 1], x1 < x2, y1 < y2.
    pub bbox: [f64; 4],
    pub gt_class: usize,
}

impl Region {
    /// Position vector z in the configured geometry layout.
    pub fn z(&self, box_dim: usize) -> Vec<f64> {
        let [x1, y1, x2, y2] = self.bbox;
        match box_dim {
            4 => vec![x1, y1, x2, y2],
            6 => vec![x1, y1, x2, y2, y2 - y1, x2 - x1],
            other => panic!("unsupported box_dim {other}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImageSample {
    pub regions: Vec<Region>,
}

impl ImageSample {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Distinct ground-truth classes, sorted by class id.
    pub fn distinct_classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.regions.iter().map(|r| r.gt_class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Most frequent class; ties broken toward the lower class id.
    pub fn dominant_class(&self) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for r in &self.regions {
            *counts.entry(r.gt_class).or_insert(0usize) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("image has regions")
            .0
    }
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Draw class prototypes and assemble the world. Deterministic per seed.
/// Prototypes are rejection-resampled until every pair is farther apart
/// than `config.separation`.
pub fn build_world(config: WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    if config.num_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if config.feature_dim < 2 {
        return Err(Error::Config("need feature_dim >= 2".into()));
    }
    if config.separation <= 0.0 {
        return Err(Error::Config("separation must be positive".into()));
    }
    if config.box_dim != 4 && config.box_dim != 6 {
        return Err(Error::Config(format!("box_dim must be 4 or 6, got {}", config.box_dim)));
    }
    if config.num_classes > DEFAULT_CLASS_NAMES.len() {
        return Err(Error::Config(format!(
            "at most {} classes supported",
            DEFAULT_CLASS_NAMES.len()
        )));
    }

    let mut rng = Rng::derive(seed, &[0x77_6f_72_6c_64]); // "world"
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(config.num_classes);
    for c in 0..config.num_classes {
        let mut ok = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let cand: Vec<f64> = (0..config.feature_dim).map(|_| rng.normal()).collect();
            let separated = prototypes.iter().all(|p| l2(p, &cand) > config.separation);
            if separated {
                prototypes.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Exhausted(format!(
                "could not place prototype {c} with separation {}",
                config.separation
            )));
        }
    }

    let class_names: Vec<String> = DEFAULT_CLASS_NAMES[..config.num_classes]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let filler: Vec<String> = DEFAULT_FILLER.iter().map(|s| s.to_string()).collect();
    debug_assert!(class_names.iter().all(|c| !filler.contains(c)));

    let templates = vec![
        template(&["a", "photo", "of"], &[]),
        template(&["the", "image", "shows"], &[]),
        template(&["there", "is"], &["in", "the", "scene"]),
        template(&["a", "picture", "with"], &[]),
        template(&["the", "scene", "contains"], &[]),
    ];

    Ok(SyntheticWorld {
        config,
        prototypes,
        class_names,
        filler,
        templates,
        seed,
    })
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl SyntheticWorld {
    /// The linguistic dictionary: specials, then class names, then filler.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut words: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        words.extend(self.filler.iter().map(String::as_str));
        Vocabulary::new(&words).expect("world word lists are disjoint")
    }

    pub fn min_prototype_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.prototypes.len() {
            for j in i + 1..self.prototypes.len() {
                min = min.min(l2(&self.prototypes[i], &self.prototypes[j]));
            }
        }
        min
    }
}

/// Sample an image: `num_objects` regions, each with a uniformly random
/// class and feature = prototype + N(0, noise_std^2 I). Non-overlapping
/// base boxes live in disjoint grid cells; with probability `overlap_prob`
/// a region after the first is instead jittered onto a previously placed
/// box so the pair's IoU exceeds 0.3, modeling ambiguous over-sampled
/// regions. An image therefore contains an overlapping pair iff at least
/// one region took the overlap branch.
pub fn generate_image(
    world: &SyntheticWorld,
    num_objects: usize,
    noise_std: f64,
    overlap_prob: f64,
    rng: &mut Rng,
) -> Result<ImageSample> {
    if num_objects == 0 {
        return Err(Error::Config("num_objects must be >= 1".into()));
    }
    let grid = (1..)
        .find(|g| g * g >= num_objects)
        .expect("grid side exists");
    let cell = 1.0 / grid as f64;

    // distinct cells for the base boxes
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    for i in 0..num_objects {
        let j = i + rng.below(cells.len() - i);
        cells.swap(i, j);
    }

    let mut regions: Vec<Region> = Vec::with_capacity(num_objects);
    for i in 0..num_objects {
        let gt_class = rng.below(world.config.num_classes);
        let feature: Vec<f64> = world.prototypes[gt_class]
            .iter()
            .map(|p| p + noise_std * rng.normal())
            .collect();

        let bbox = if i > 0 && rng.bernoulli(overlap_prob) {
            // copy a previous box, shifted by at most 20% of its size:
            // intersection >= 0.64 area, union <= 1.36 area, IoU >= 0.47
            let donor = &regions[rng.below(i)].bbox;
            let w = donor[2] - donor[0];
            let h = donor[3] - donor[1];
            let dx = rng.uniform(0.05, 0.2) * w * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let dy = rng.uniform(0.05, 0.2) * h * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let x1 = (donor[0] + dx).clamp(0.0, 1.0 - w);
            let y1 = (donor[1] + dy).clamp(0.0, 1.0 - h);
            [x1, y1, x1 + w, y1 + h]
        } else {
            // inside this region's own cell, with a 10% margin all around
            let cx = (cells[i] % grid) as f64 * cell;
            let cy = (cells[i] / grid) as f64 * cell;
            let inner = 0.8 * cell;
            let w = rng.uniform(0.25, 0.9) * inner;
            let h = rng.uniform(0.25, 0.9) * inner;
            let x1 = cx + 0.1 * cell + rng.f64() * (inner - w);
            let y1 = cy + 0.1 * cell + rng.f64() * (inner - h);
            [x1, y1, x1 + w, y1 + h]
        };
        debug_assert!(bbox[0] < bbox[2] && bbox[1] < bbox[3]);
        debug_assert!(bbox.iter().all(|v| (0.0..=1.0).contains(v)));
        regions.push(Region {
            feature,
            bbox,
            gt_class,
        });
    }
    Ok(ImageSample { regions })
}

/// Fill a caption template with the names of a random subset of the
/// image's distinct classes (each kept with `mention_prob`, at least one
/// forced) plus filler tokens, within the world's caption budget.
pub fn generate_caption(
    image: &ImageSample,
    world: &SyntheticWorld,
    mention_prob: f64,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    if image.regions.is_empty() {
        return Err(Error::Config("caption of an empty image".into()));
    }
    let classes = image.distinct_classes();
    let mut mentioned: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|_| rng.bernoulli(mention_prob))
        .collect();
    if mentioned.is_empty() {
        mentioned.push(classes[rng.below(classes.len())]);
    }
    let names: Vec<&str> = mentioned
        .iter()
        .map(|&c| world.class_names[c].as_str())
        .collect();

    let tpl = rng.pick(&world.templates).clone();
    let budget = world.config.caption_budget;
    let with_connectors = tpl.prefix.len() + names.len() * 2 - 1;
    let mut caption: Vec<String> = Vec::new();
    if with_connectors <= budget {
        caption.extend(tpl.prefix.iter().cloned());
        for (i, n) in names.iter().enumerate() {
            if i > 0 {
                caption.push("and".to_string());
            }
            caption.push(n.to_string());
        }
        if !tpl.suffix.is_empty()
            && caption.len() + tpl.suffix.len() <= budget
            && rng.bernoulli(0.5)
        {
            caption.extend(tpl.suffix.iter().cloned());
        }
    } else if tpl.prefix.len() + names.len() <= budget {
        caption.extend(tpl.prefix.iter().cloned());
        caption.extend(names.iter().map(|n| n.to_string()));
    } else {
        // names alone, behind a single-token opener
        caption.push("shows".to_string());
        caption.extend(names.iter().map(|n| n.to_string()));
    }
    debug_assert!(caption.len() <= budget);
    Ok(caption)
}

/// Detector-style tags: for each distinct ground-truth class, drop it with
/// `drop_rate`, otherwise emit its name, flipped to a uniformly random
/// wrong class with `flip_rate`. Zero rates recover the ground-truth tags
/// exactly.
pub fn detect_tags(
    image: &ImageSample,
    world: &SyntheticWorld,
    flip_rate: f64,
    drop_rate: f64,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&flip_rate) || !(0.0..=1.0).contains(&drop_rate) {
        return Err(Error::Config("rates must be in [0, 1]".into()));
    }
    let c = world.config.num_classes;
    let mut tags = Vec::new();
    for class in image.distinct_classes() {
        if rng.bernoulli(drop_rate) {
            continue;
        }
        let emitted = if rng.bernoulli(flip_rate) {
            // uniform over the C-1 wrong classes
            let mut wrong = rng.below(c - 1);
            if wrong >= class {
                wrong += 1;
            }
            wrong
        } else {
            class
        };
        tags.push(world.class_names[emitted].clone());
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_prototypes_respect_separation() {
        let cfg = WorldConfig {
            num_classes: 2,
            feature_dim: 2,
            separation: 1.0,
            ..WorldConfig::default()
        };
        let w = build_world(cfg, 1).unwrap();
        assert!(w.min_prototype_distance() > 1.0);
    }

    #[test]
    fn same_seed_same_world() {
        let a = build_world(WorldConfig::default(), 9).unwrap();
        let b = build_world(WorldConfig::default(), 9).unwrap();
        assert_eq!(a.prototypes, b.prototypes);
        let c = build_world(WorldConfig::default(), 10).unwrap();
        assert_ne!(a.prototypes, c.prototypes);
    }

    #[test]
    fn desk_world_separation_by_exhaustive_scan() {
        let w = build_world(WorldConfig::default(), 3).unwrap();
        assert_eq!(w.prototypes.len(), 8);
        // O(C^2) scan over all pairs
        for i in 0..8 {
            for j in i + 1..8 {
                let d = w.prototypes[i]
                    .iter()
                    .zip(&w.prototypes[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > w.config.separation, "pair ({i},{j}) at distance {d}");
            }
        }
    }

    #[test]
    fn unsatisfiable_separation_errors() {
        let cfg = WorldConfig {
            num_classes: 8,
            feature_dim: 2,
            separation: 1e6,
            ..WorldConfig::default()
        };
        assert!(matches!(build_world(cfg, 1), Err(Error::Exhausted(_))));
    }

    #[test]
    fn zero_noise_features_equal_prototypes() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(2);
        let img = generate_image(&w, 4, 0.0, 0.0, &mut rng).unwrap();
        for r in &img.regions {
            assert_eq!(r.feature, w.prototypes[r.gt_class]);
        }
    }

    #[test]
    fn forced_overlap_has_iou_above_threshold() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        for seed in 0..50 {
            let mut rng = Rng::new(seed);
            let img = generate_image(&w, 2, 0.1, 1.0, &mut rng).unwrap();
            let i = iou(&img.regions[0].bbox, &img.regions[1].bbox);
            assert!(i > 0.3, "seed {seed}: iou {i}");
        }
    }

    #[test]
    fn no_overlap_without_branch() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        for seed in 0..50 {
            let mut rng = Rng::new(seed);
            let img = generate_image(&w, 6, 0.1, 0.0, &mut rng).unwrap();
            for i in 0..6 {
                for j in i + 1..6 {
                    assert_eq!(iou(&img.regions[i].bbox, &img.regions[j].bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn overlap_rate_monte_carlo() {
        // fraction of 2-object images with an overlapping pair = 0.5 +/- 0.02,
        // measured geometrically, independent of the branch bookkeeping
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(123);
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            let img = generate_image(&w, 2, 0.1, 0.5, &mut rng).unwrap();
            if iou(&img.regions[0].bbox, &img.regions[1].bbox) > 0.3 {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "overlap fraction {frac}");
    }

    #[test]
    fn caption_mentions_every_class_at_prob_one() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        for seed in 0..30 {
            let mut rng = Rng::new(seed);
            let img = generate_image(&w, 6, 0.1, 0.2, &mut rng).unwrap();
            let cap = generate_caption(&img, &w, 1.0, &mut rng).unwrap();
            for c in img.distinct_classes() {
                assert!(
                    cap.contains(&w.class_names[c]),
                    "missing {} in {cap:?}",
                    w.class_names[c]
                );
            }
            assert!(cap.len() <= w.config.caption_budget);
        }
    }

    #[test]
    fn caption_always_shares_a_class() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        for seed in 0..200 {
            let mut rng = Rng::new(seed);
            let img = generate_image(&w, 3, 0.1, 0.2, &mut rng).unwrap();
            let cap = generate_caption(&img, &w, 0.0, &mut rng).unwrap();
            let shared = img
                .distinct_classes()
                .iter()
                .any(|&c| cap.contains(&w.class_names[c]));
            assert!(shared, "caption {cap:?} shares nothing");
        }
    }

    #[test]
    fn mention_profile_matches_binomial() {
        // On 3-object images with mention_prob 0.55, the measured share
        // profile matches the forced-minimum binomial tail and is ordered.
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(77);
        let p = 0.55;
        let n = 10_000;
        let mut share = [0usize; 3]; // >=1, >=2, >=3
        let mut analytic = [0.0f64; 3];
        for _ in 0..n {
            let img = generate_image(&w, 3, 0.1, 0.2, &mut rng).unwrap();
            let d = img.distinct_classes().len();
            let cap = generate_caption(&img, &w, p, &mut rng).unwrap();
            let mentioned = img
                .distinct_classes()
                .iter()
                .filter(|&&c| cap.contains(&w.class_names[c]))
                .count();
            for k in 1..=3 {
                if mentioned >= k {
                    share[k - 1] += 1;
                }
            }
            // closed-form tail of (Binomial(d, p) forced to >= 1)
            for k in 1..=3usize {
                analytic[k - 1] += if k == 1 { 1.0 } else { binom_tail(d, p, k) };
            }
        }
        for k in 0..3 {
            let measured = share[k] as f64 / n as f64;
            let expect = analytic[k] / n as f64;
            assert!(
                (measured - expect).abs() < 0.05,
                "share>= {}: measured {measured}, analytic {expect}",
                k + 1
            );
        }
        assert!(share[0] > share[1] && share[1] > share[2]);
    }

    fn binom_tail(n: usize, p: f64, k: usize) -> f64 {
        // P(B >= k), B ~ Binomial(n, p)
        let mut total = 0.0;
        for i in k..=n {
            let mut c = 1.0;
            for j in 0..i {
                c = c * (n - j) as f64 / (j + 1) as f64;
            }
            total += c * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
        }
        total
    }

    #[test]
    fn clean_tags_are_sorted_distinct_class_names() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(8);
        let img = generate_image(&w, 6, 0.1, 0.2, &mut rng).unwrap();
        let tags = detect_tags(&img, &w, 0.0, 0.0, &mut rng).unwrap();
        let expect: Vec<String> = img
            .distinct_classes()
            .into_iter()
            .map(|c| w.class_names[c].clone())
            .collect();
        assert_eq!(tags, expect);
    }

    #[test]
    fn full_drop_rate_empties_tags() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(8);
        let img = generate_image(&w, 4, 0.1, 0.2, &mut rng).unwrap();
        let tags = detect_tags(&img, &w, 0.0, 1.0, &mut rng).unwrap();
        assert!(tags.is_empty());
    }

    #[test]
    fn flip_rate_monte_carlo() {
        let w = build_world(WorldConfig::default(), 5).unwrap();
        let mut rng = Rng::new(99);
        let mut wrong = 0usize;
        let mut total = 0usize;
        for _ in 0..10_000 {
            let img = generate_image(&w, 3, 0.1, 0.2, &mut rng).unwrap();
            let truth: Vec<String> = img
                .distinct_classes()
                .into_iter()
                .map(|c| w.class_names[c].clone())
                .collect();
            let tags = detect_tags(&img, &w, 0.2, 0.0, &mut rng).unwrap();
            assert_eq!(tags.len(), truth.len());
            for (t, gt) in tags.iter().zip(&truth) {
                total += 1;
                if t != gt {
                    wrong += 1;
                }
            }
        }
        let rate = wrong as f64 / total as f64;
        assert!((rate - 0.2).abs() < 0.01, "flip rate {rate}");
    }

    #[test]
    fn dominant_class_tie_breaks_low() {
        let img = ImageSample {
            regions: vec![
                Region { feature: vec![], bbox: [0.0, 0.0, 0.1, 0.1], gt_class: 5 },
                Region { feature: vec![], bbox: [0.2, 0.2, 0.3, 0.3], gt_class: 2 },
            ],
        };
        assert_eq!(img.dominant_class(), 2);
    }
}
