//! Temporal multilabel stratified splitting into train/validation/test.
//!
//! Each temporal group is split on its own with iterative stratification,
//! first into train vs. the rest, then the rest into validation vs. test, and
//! the per-group subsets are concatenated.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("no samples to split")]
    EmptyInput,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateSample(String),
    #[error("sample {0:?} has no assignment")]
    MissingAssignment(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabels {
    pub sample_id: String,
    pub group_key: String,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

pub type SplitAssignment = BTreeMap<String, Subset>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(SplitError::InvalidRatios(format!("all ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidRatios(format!("ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad ratio {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [train, val, test] => Ok(Self { train, val, test }),
            _ => Err(format!("expected three comma-separated ratios, got {s:?}")),
        }
    }
}

fn pick_max(candidates: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let best = candidates.iter().map(|&j| key(j)).fold(f64::NEG_INFINITY, f64::max);
    candidates.iter().copied().filter(|&j| key(j) == best).collect()
}

/// Chooses the subset with the largest remaining demand for the label, then
/// the largest remaining overall capacity, then uniformly at random.
fn choose_subset<R: Rng>(label_need: Option<&[f64; 2]>, capacity: &[f64; 2], rng: &mut R) -> usize {
    let mut tied = vec![0, 1];
    if let Some(need) = label_need {
        tied = pick_max(&tied, |j| need[j]);
    }
    if tied.len() > 1 {
        tied = pick_max(&tied, |j| capacity[j]);
    }
    if tied.len() > 1 {
        tied[rng.random_range(0..tied.len())]
    } else {
        tied[0]
    }
}

fn stratify_label_sets<R: Rng>(sets: &[&BTreeSet<String>], ratios: [f64; 2], rng: &mut R) -> [Vec<usize>; 2] {
    let n = sets.len();
    let mut capacity = [ratios[0] * n as f64, ratios[1] * n as f64];

    let mut label_total: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sets {
        for l in s.iter() {
            *label_total.entry(l.as_str()).or_default() += 1;
        }
    }
    let mut need: BTreeMap<&str, [f64; 2]> = label_total
        .iter()
        .map(|(l, &c)| (*l, [ratios[0] * c as f64, ratios[1] * c as f64]))
        .collect();
    let mut remaining: BTreeMap<&str, usize> = label_total.clone();

    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut out: [Vec<usize>; 2] = [Vec::new(), Vec::new()];

    let mut assign = |i: usize,
                      j: usize,
                      assigned: &mut Vec<Option<usize>>,
                      need: &mut BTreeMap<&str, [f64; 2]>,
                      remaining: &mut BTreeMap<&str, usize>,
                      capacity: &mut [f64; 2]| {
        assigned[i] = Some(j);
        out[j].push(i);
        capacity[j] -= 1.0;
        for l in sets[i].iter() {
            need.get_mut(l.as_str()).expect("label counted")[j] -= 1.0;
            *remaining.get_mut(l.as_str()).expect("label counted") -= 1;
        }
    };

    // rarest remaining label first; ties resolved by label name
    while let Some((&label, _)) = remaining.iter().filter(|(_, &c)| c > 0).min_by_key(|(_, &c)| c) {
        let carriers: Vec<usize> = (0..n)
            .filter(|&i| assigned[i].is_none() && sets[i].contains(label))
            .collect();
        for i in carriers {
            let j = choose_subset(Some(&need[label]), &capacity, rng);
            assign(i, j, &mut assigned, &mut need, &mut remaining, &mut capacity);
        }
    }
    for i in 0..n {
        if assigned[i].is_none() {
            let j = choose_subset(None, &capacity, rng);
            assign(i, j, &mut assigned, &mut need, &mut remaining, &mut capacity);
        }
    }
    for subset in &mut out {
        subset.sort_unstable();
    }
    out
}

fn check_pair(ratios: (f64, f64)) -> Result<[f64; 2], SplitError> {
    let (a, b) = ratios;
    if !(a > 0.0 && b > 0.0) || (a + b - 1.0).abs() > 1e-9 {
        return Err(SplitError::InvalidRatios(format!(
            "expected two positive ratios summing to 1, got ({a}, {b})"
        )));
    }
    Ok([a, b])
}

/// Iterative multilabel stratification into two subsets. Returns the sorted
/// indices of the samples placed in each subset.
///
/// Samples are visited in input order, so the same seed with a permuted input
/// may produce a different (equally balanced) assignment.
pub fn iterative_stratify(
    samples: &[SampleLabels],
    ratios: (f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    if samples.is_empty() {
        return Err(SplitError::EmptyInput);
    }
    let r = check_pair(ratios)?;
    let sets: Vec<&BTreeSet<String>> = samples.iter().map(|s| &s.labels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b] = stratify_label_sets(&sets, r, &mut rng);
    Ok((a, b))
}

/// FNV-1a; mixes a group key into the per-group seed.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn group_seed(seed: u64, group_key: &str) -> u64 {
    seed ^ fnv1a(group_key.as_bytes()).rotate_left(17)
}

/// Per-group two-stage stratification into train, validation and test.
pub fn temporal_split(samples: &[SampleLabels], ratios: &SplitRatios, seed: u64) -> Result<SplitAssignment, SplitError> {
    if samples.is_empty() {
        return Err(SplitError::EmptyInput);
    }
    ratios.validate()?;
    let mut groups: BTreeMap<&str, Vec<&SampleLabels>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for s in samples {
        if !ids.insert(s.sample_id.as_str()) {
            return Err(SplitError::DuplicateSample(s.sample_id.clone()));
        }
        groups.entry(s.group_key.as_str()).or_default().push(s);
    }
    let rest = ratios.val + ratios.test;
    let first = [ratios.train, rest];
    let second = [ratios.val / rest, ratios.test / rest];

    let mut out = SplitAssignment::new();
    for (key, members) in groups {
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, key));
        let sets: Vec<&BTreeSet<String>> = members.iter().map(|s| &s.labels).collect();
        let [train, holdout] = stratify_label_sets(&sets, first, &mut rng);
        for i in train {
            out.insert(members[i].sample_id.clone(), Subset::Train);
        }
        if holdout.is_empty() {
            continue;
        }
        let hold_sets: Vec<&BTreeSet<String>> = holdout.iter().map(|&i| sets[i]).collect();
        let [val, test] = stratify_label_sets(&hold_sets, second, &mut rng);
        for i in val {
            out.insert(members[holdout[i]].sample_id.clone(), Subset::Val);
        }
        for i in test {
            out.insert(members[holdout[i]].sample_id.clone(), Subset::Test);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequency {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub total: usize,
}

/// Share of each class's samples that landed in each subset.
pub fn split_report(
    assignment: &SplitAssignment,
    samples: &[SampleLabels],
) -> Result<BTreeMap<String, ClassFrequency>, SplitError> {
    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for s in samples {
        let subset = assignment
            .get(&s.sample_id)
            .ok_or_else(|| SplitError::MissingAssignment(s.sample_id.clone()))?;
        let k = Subset::ALL.iter().position(|x| x == subset).expect("subset listed");
        for l in &s.labels {
            counts.entry(l.as_str()).or_default()[k] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(class, c)| {
            let total = c.iter().sum::<usize>();
            let f = |k: usize| c[k] as f64 / total as f64;
            (
                class.to_string(),
                ClassFrequency {
                    train: f(0),
                    val: f(1),
                    test: f(2),
                    total,
                },
            )
        })
        .collect())
}
