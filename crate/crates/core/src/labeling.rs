//! Teacher-to-aerial class remapping and per-tile soft-label aggregation.
//!
//! Every aggregate is a noisy-OR over the images associated with a tile:
//!
//! ```text
//! P(c | t) = 1 - prod_x (1 - w_x * s_c(x))
//! ```
//!
//! where `s_c(x)` is either the binarized teacher output (hard and weighted
//! methods) or the teacher probability (distilled method), and `w_x` is 1 for
//! the hard method or the footprint overlap ratio otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiling::TileId;

/// Class name to score.
pub type ClassScores = BTreeMap<String, f64>;
/// Class name to binary presence.
pub type ClassFlags = BTreeMap<String, bool>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("unknown teacher class {0:?}")]
    UnknownClass(String),
    #[error("no images associated with the tile")]
    NoImages,
    #[error("overlap ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("probability {value} for class {class:?} outside [0, 1]")]
    ProbabilityOutOfRange { class: String, value: f64 },
    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),
    #[error("binarization threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// Mapping from teacher classes onto the aerial class set.
///
/// Aerial classes without a merge rule pass through from the teacher class of
/// the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub aerial_classes: Vec<String>,
    #[serde(default)]
    pub merge_rules: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub drop_list: BTreeSet<String>,
}

impl Default for ClassCatalog {
    /// Twelve aerial classes: the four algae classes merged into `Algae`,
    /// and teacher classes with no aerial counterpart dropped.
    fn default() -> Self {
        let aerial = [
            "Acropore_branched",
            "Acropore_digitised",
            "Acropore_tabular",
            "Dead_coral",
            "No_acropore_encrusting",
            "No_acropore_massive",
            "Millepore",
            "No_acropore_sub_massive",
            "Rock",
            "Rubble",
            "Sand",
            "Algae",
        ];
        let algae = ["Algae_assembly", "Algae_drawn_up", "Algae_limestone", "Algae_sodding"];
        let dropped = ["Blurred", "Homo", "Fish", "Sea_cucumber", "Sea_urchins"];
        Self {
            aerial_classes: aerial.iter().map(|s| s.to_string()).collect(),
            merge_rules: [("Algae".to_string(), algae.iter().map(|s| s.to_string()).collect())]
                .into_iter()
                .collect(),
            drop_list: dropped.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassCatalog {
    pub fn validate(&self) -> Result<(), LabelError> {
        let bad = |m: String| Err(LabelError::InvalidCatalog(m));
        let aerial: BTreeSet<&String> = self.aerial_classes.iter().collect();
        if aerial.len() != self.aerial_classes.len() {
            return bad("duplicate aerial class".into());
        }
        if let Some(target) = self.merge_rules.keys().find(|k| !aerial.contains(k)) {
            return bad(format!("merge rule targets unknown aerial class {target:?}"));
        }
        let mut seen: BTreeMap<&String, &String> = BTreeMap::new();
        for class in &self.aerial_classes {
            let sources: Vec<&String> = match self.merge_rules.get(class) {
                Some(s) if s.is_empty() => return bad(format!("aerial class {class:?} has no sources")),
                Some(s) => s.iter().collect(),
                None => vec![class],
            };
            for src in sources {
                if let Some(prev) = seen.insert(src, class) {
                    return bad(format!("teacher class {src:?} feeds both {prev:?} and {class:?}"));
                }
                if self.drop_list.contains(src) {
                    return bad(format!("teacher class {src:?} is both dropped and a merge source"));
                }
            }
        }
        Ok(())
    }

    /// Aerial class fed by a teacher class, or `None` for dropped classes.
    fn target_of<'a>(&'a self, teacher: &str) -> Result<Option<&'a str>, LabelError> {
        if self.drop_list.contains(teacher) {
            return Ok(None);
        }
        for (target, sources) in &self.merge_rules {
            if sources.contains(teacher) {
                return Ok(Some(target));
            }
        }
        match self.aerial_classes.iter().find(|c| *c == teacher) {
            Some(c) if !self.merge_rules.contains_key(c) => Ok(Some(c)),
            _ => Err(LabelError::UnknownClass(teacher.to_string())),
        }
    }
}

fn check_probability(class: &str, value: f64) -> Result<(), LabelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(LabelError::ProbabilityOutOfRange {
            class: class.to_string(),
            value,
        })
    }
}

/// Converts teacher probabilities to aerial classes. Merged classes take the
/// maximum over their sources, dropped classes vanish, and every aerial class
/// is present in the output (0 when none of its sources was reported).
pub fn remap_classes(probs: &ClassScores, catalog: &ClassCatalog) -> Result<ClassScores, LabelError> {
    let mut out: ClassScores = catalog.aerial_classes.iter().map(|c| (c.clone(), 0.0)).collect();
    for (class, &p) in probs {
        check_probability(class, p)?;
        if let Some(target) = catalog.target_of(class)? {
            let slot = out.get_mut(target).expect("target is an aerial class");
            *slot = slot.max(p);
        }
    }
    Ok(out)
}

/// `p >= threshold` becomes present.
pub fn binarize(probs: &ClassScores, threshold: f64) -> Result<ClassFlags, LabelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LabelError::InvalidThreshold(threshold));
    }
    Ok(probs.iter().map(|(c, &p)| (c.clone(), p >= threshold)).collect())
}

/// Noisy-OR of per-image presence terms, each in `[0, 1]`.
///
/// Accumulates `P <- P + a * (1 - P)`, which equals `1 - prod(1 - a)` without
/// forming the product: small terms are never lost against 1, a single term
/// is returned unchanged, and a zero term leaves `P` untouched.
pub fn noisy_or<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    terms
        .into_iter()
        .fold(0.0f64, |acc, a| (acc + a * (1.0 - acc)).clamp(0.0, 1.0))
}

fn class_union<'a, T: 'a, I>(maps: I) -> BTreeSet<&'a String>
where
    I: IntoIterator<Item = &'a BTreeMap<String, T>>,
{
    maps.into_iter().flat_map(|m| m.keys()).collect()
}

fn check_ratio(r: f64) -> Result<(), LabelError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(LabelError::RatioOutOfRange(r))
    }
}

/// Hard presence: 1 if any image flags the class. Classes missing from an
/// image's map count as absent.
pub fn aggregate_hard(images: &[ClassFlags]) -> Result<ClassScores, LabelError> {
    if images.is_empty() {
        return Err(LabelError::NoImages);
    }
    Ok(class_union(images)
        .into_iter()
        .map(|c| {
            let h = images.iter().map(|m| f64::from(u8::from(m.get(c).copied().unwrap_or(false))));
            (c.clone(), noisy_or(h))
        })
        .collect())
}

/// Overlap-weighted presence from binary teacher outputs.
pub fn aggregate_weighted(images: &[(ClassFlags, f64)]) -> Result<ClassScores, LabelError> {
    if images.is_empty() {
        return Err(LabelError::NoImages);
    }
    for (_, r) in images {
        check_ratio(*r)?;
    }
    Ok(class_union(images.iter().map(|(m, _)| m))
        .into_iter()
        .map(|c| {
            let terms = images
                .iter()
                .map(|(m, r)| if m.get(c).copied().unwrap_or(false) { *r } else { 0.0 });
            (c.clone(), noisy_or(terms))
        })
        .collect())
}

/// Overlap-weighted presence from teacher probabilities (soft labels).
pub fn aggregate_distilled(images: &[(ClassScores, f64)]) -> Result<ClassScores, LabelError> {
    if images.is_empty() {
        return Err(LabelError::NoImages);
    }
    for (m, r) in images {
        check_ratio(*r)?;
        for (c, &p) in m {
            check_probability(c, p)?;
        }
    }
    Ok(class_union(images.iter().map(|(m, _)| m))
        .into_iter()
        .map(|c| {
            let terms = images.iter().map(|(m, r)| r * m.get(c).copied().unwrap_or(0.0));
            (c.clone(), noisy_or(terms))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hard,
    Weighted,
    #[default]
    Distilled,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(Method::Hard),
            "weighted" => Ok(Method::Weighted),
            "distilled" => Ok(Method::Distilled),
            other => Err(format!("unknown aggregation method {other:?} (hard|weighted|distilled)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Hard => "hard",
            Method::Weighted => "weighted",
            Method::Distilled => "distilled",
        })
    }
}

/// One image's contribution to a tile: remapped teacher probabilities and
/// footprint overlap ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub probs: ClassScores,
    pub overlap: f64,
}

/// Dispatches to the aggregation selected by `method`.
pub fn aggregate(method: Method, images: &[Contribution], threshold: f64) -> Result<ClassScores, LabelError> {
    match method {
        Method::Hard => {
            let flags = images
                .iter()
                .map(|c| binarize(&c.probs, threshold))
                .collect::<Result<Vec<_>, _>>()?;
            aggregate_hard(&flags)
        }
        Method::Weighted => {
            let items = images
                .iter()
                .map(|c| Ok((binarize(&c.probs, threshold)?, c.overlap)))
                .collect::<Result<Vec<_>, LabelError>>()?;
            aggregate_weighted(&items)
        }
        Method::Distilled => {
            let items: Vec<(ClassScores, f64)> =
                images.iter().map(|c| (c.probs.clone(), c.overlap)).collect();
            aggregate_distilled(&items)
        }
    }
}

/// Per-tile, per-class presence labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelSet {
    pub method: Method,
    pub classes: Vec<String>,
    pub labels: BTreeMap<TileId, ClassScores>,
}

impl SoftLabelSet {
    /// Number of tiles where `class` reaches `presence_threshold`.
    pub fn presence_count(&self, class: &str, presence_threshold: f64) -> usize {
        self.labels
            .values()
            .filter(|m| m.get(class).is_some_and(|&v| v >= presence_threshold))
            .count()
    }
}

/// Drops classes present (label >= `presence_threshold`) on fewer than
/// `min_count` tiles. Returns the pruned set and the removed class names.
pub fn prune_rare_classes(
    labels: &SoftLabelSet,
    min_count: usize,
    presence_threshold: f64,
) -> (SoftLabelSet, Vec<String>) {
    let (kept, removed): (Vec<String>, Vec<String>) = labels
        .classes
        .iter()
        .cloned()
        .partition(|c| labels.presence_count(c, presence_threshold) >= min_count);
    let keep: BTreeSet<&String> = kept.iter().collect();
    let pruned = SoftLabelSet {
        method: labels.method,
        labels: labels
            .labels
            .iter()
            .map(|(t, m)| {
                (*t, m.iter().filter(|(c, _)| keep.contains(c)).map(|(c, v)| (c.clone(), *v)).collect())
            })
            .collect(),
        classes: kept,
    };
    (pruned, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(pairs: &[(&str, f64)]) -> ClassScores {
        pairs.iter().map(|(c, v)| (c.to_string(), *v)).collect()
    }

    fn flags(pairs: &[(&str, bool)]) -> ClassFlags {
        pairs.iter().map(|(c, v)| (c.to_string(), *v)).collect()
    }

    #[test]
    fn default_catalog_is_valid() {
        let cat = ClassCatalog::default();
        cat.validate().unwrap();
        assert_eq!(cat.aerial_classes.len(), 12);
    }

    #[test]
    fn catalog_validation_failures() {
        let mut cat = ClassCatalog::default();
        cat.drop_list.insert("Algae_sodding".into());
        assert!(cat.validate().is_err());

        let mut cat = ClassCatalog::default();
        cat.merge_rules.insert("Rock".into(), ["Algae_assembly".to_string()].into_iter().collect());
        assert!(cat.validate().is_err());

        let mut cat = ClassCatalog::default();
        cat.merge_rules.insert("Rock".into(), BTreeSet::new());
        assert!(cat.validate().is_err());
    }

    #[test]
    fn algae_takes_max_of_sources() {
        let probs = scores(&[
            ("Algae_assembly", 0.2),
            ("Algae_drawn_up", 0.9),
            ("Algae_limestone", 0.1),
            ("Algae_sodding", 0.4),
        ]);
        let out = remap_classes(&probs, &ClassCatalog::default()).unwrap();
        assert_eq!(out["Algae"], 0.9);
        assert_eq!(out.len(), 12);
    }

    #[test]
    fn dropped_and_passthrough_classes() {
        let probs = scores(&[("Blurred", 0.95), ("Sand", 0.7)]);
        let out = remap_classes(&probs, &ClassCatalog::default()).unwrap();
        assert!(!out.contains_key("Blurred"));
        assert_eq!(out["Sand"], 0.7);
        assert_eq!(out["Rock"], 0.0);
    }

    #[test]
    fn unknown_and_out_of_range() {
        let cat = ClassCatalog::default();
        assert_eq!(
            remap_classes(&scores(&[("Kelp", 0.5)]), &cat),
            Err(LabelError::UnknownClass("Kelp".into()))
        );
        assert!(matches!(
            remap_classes(&scores(&[("Sand", 1.5)]), &cat),
            Err(LabelError::ProbabilityOutOfRange { .. })
        ));
        // a merge target is not itself a teacher class
        assert!(remap_classes(&scores(&[("Algae", 0.5)]), &cat).is_err());
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        let out = binarize(&scores(&[("a", 0.8), ("b", 0.5), ("c", 0.49)]), 0.5).unwrap();
        assert_eq!(out, flags(&[("a", true), ("b", true), ("c", false)]));
        assert!(binarize(&ClassScores::new(), 1.0).is_err());
    }

    #[test]
    fn hard_aggregation() {
        let h = |v: bool| flags(&[("a", v)]);
        assert_eq!(aggregate_hard(&[h(false), h(false), h(false)]).unwrap()["a"], 0.0);
        assert_eq!(aggregate_hard(&[h(false), h(true), h(false)]).unwrap()["a"], 1.0);
        assert_eq!(aggregate_hard(&[h(true), h(true)]).unwrap()["a"], 1.0);
        assert_eq!(aggregate_hard(&[]), Err(LabelError::NoImages));
    }

    #[test]
    fn weighted_aggregation() {
        let on = flags(&[("a", true)]);
        assert_eq!(aggregate_weighted(&[(on.clone(), 1.0)]).unwrap()["a"], 1.0);
        let two = aggregate_weighted(&[(on.clone(), 0.5), (on.clone(), 0.25)]).unwrap();
        assert!((two["a"] - 0.625).abs() < 1e-12);
        let off = flags(&[("a", false)]);
        assert_eq!(aggregate_weighted(&[(off.clone(), 0.7), (off, 0.3)]).unwrap()["a"], 0.0);
        assert_eq!(aggregate_weighted(&[(on, 1.2)]), Err(LabelError::RatioOutOfRange(1.2)));
    }

    #[test]
    fn distilled_aggregation() {
        let p = |v: f64| scores(&[("a", v)]);
        assert!((aggregate_distilled(&[(p(0.8), 0.5)]).unwrap()["a"] - 0.4).abs() < 1e-12);
        let two = aggregate_distilled(&[(p(0.6), 0.5), (p(0.6), 0.5)]).unwrap();
        assert!((two["a"] - 0.51).abs() < 1e-12);
        assert!(matches!(
            aggregate_distilled(&[(p(-0.1), 0.5)]),
            Err(LabelError::ProbabilityOutOfRange { .. })
        ));
        assert_eq!(aggregate_distilled(&[]), Err(LabelError::NoImages));
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let imgs = vec![
            Contribution { probs: scores(&[("a", 0.7), ("b", 0.2)]), overlap: 0.4 },
            Contribution { probs: scores(&[("a", 0.1), ("b", 0.9)]), overlap: 0.9 },
        ];
        let hard = aggregate(Method::Hard, &imgs, 0.5).unwrap();
        assert_eq!(hard, scores(&[("a", 1.0), ("b", 1.0)]));
        let weighted = aggregate(Method::Weighted, &imgs, 0.5).unwrap();
        assert!((weighted["a"] - 0.4).abs() < 1e-15 && (weighted["b"] - 0.9).abs() < 1e-15);
        let distilled = aggregate(Method::Distilled, &imgs, 0.5).unwrap();
        assert!((distilled["a"] - (1.0 - (1.0 - 0.28) * (1.0 - 0.09))).abs() < 1e-15);
    }

    #[test]
    fn pruning() {
        let mut labels = BTreeMap::new();
        for i in 0..200u32 {
            let common = 0.9;
            let rare = if i < 150 { 0.8 } else { 0.1 };
            labels.insert(TileId::new(i, 0), scores(&[("common", common), ("rare", rare)]));
        }
        let set = SoftLabelSet {
            method: Method::Distilled,
            classes: vec!["common".into(), "rare".into()],
            labels,
        };
        let (pruned, removed) = prune_rare_classes(&set, 200, 0.5);
        assert_eq!(removed, ["rare"]);
        assert_eq!(pruned.classes, ["common"]);
        assert!(pruned.labels.values().all(|m| m.len() == 1));
        let (same, none) = prune_rare_classes(&set, 0, 0.5);
        assert_eq!(same, set);
        assert!(none.is_empty());
    }

    fn arb_terms() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..12)
    }

    proptest! {
        #[test]
        fn distilled_bounds_permutation_and_zero_terms(terms in arb_terms(), rot in 0usize..12) {
            let items: Vec<(ClassScores, f64)> = terms.iter().map(|(p, r)| (scores(&[("a", *p)]), *r)).collect();
            let v = aggregate_distilled(&items).unwrap()["a"];
            prop_assert!((0.0..=1.0).contains(&v));

            let mut rotated = items.clone();
            rotated.rotate_left(rot % items.len());
            let w = aggregate_distilled(&rotated).unwrap()["a"];
            prop_assert!((v - w).abs() <= 1e-14);

            let mut padded = items.clone();
            padded.push((scores(&[("a", 0.0)]), 0.8));
            padded.push((scores(&[("a", 0.6)]), 0.0));
            prop_assert_eq!(aggregate_distilled(&padded).unwrap()["a"], v);

            let direct = 1.0 - terms.iter().map(|(p, r)| 1.0 - p * r).product::<f64>();
            prop_assert!((v - direct).abs() <= 1e-12);
        }

        #[test]
        fn distilled_is_monotone(terms in arb_terms(), idx in 0usize..12, bump in 0.0..1.0f64) {
            let i = idx % terms.len();
            let base: Vec<(ClassScores, f64)> = terms.iter().map(|(p, r)| (scores(&[("a", *p)]), *r)).collect();
            let v = aggregate_distilled(&base).unwrap()["a"];
            let mut more_p = base.clone();
            let p = terms[i].0;
            more_p[i].0.insert("a".into(), p + (1.0 - p) * bump);
            prop_assert!(aggregate_distilled(&more_p).unwrap()["a"] >= v);
            let mut more_r = base.clone();
            more_r[i].1 = terms[i].1 + (1.0 - terms[i].1) * bump;
            prop_assert!(aggregate_distilled(&more_r).unwrap()["a"] >= v);
        }

        #[test]
        fn single_image_is_product(p in 0.0..=1.0f64, r in 0.0..=1.0f64) {
            let v = aggregate_distilled(&[(scores(&[("a", p)]), r)]).unwrap()["a"];
            prop_assert_eq!(v, r * p);
        }

        #[test]
        fn weighted_never_exceeds_hard(terms in proptest::collection::vec((any::<bool>(), 0.0..=1.0f64), 1..10)) {
            let hard: Vec<ClassFlags> = terms.iter().map(|(h, _)| flags(&[("a", *h)])).collect();
            let weighted: Vec<(ClassFlags, f64)> = terms.iter().map(|(h, r)| (flags(&[("a", *h)]), *r)).collect();
            let hv = aggregate_hard(&hard).unwrap()["a"];
            let wv = aggregate_weighted(&weighted).unwrap()["a"];
            prop_assert!(wv <= hv);
            let full: Vec<(ClassFlags, f64)> = terms.iter().map(|(h, _)| (flags(&[("a", *h)]), 1.0)).collect();
            prop_assert_eq!(aggregate_weighted(&full).unwrap()["a"], hv);
        }
    }
}
