//! Individual and group fairness over similarity matrices and outcome
//! tables: pair selection, outcome deltas and violation rates, k-means
//! clustering of similarity features, and disparate-impact group scores.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropyProfile;
use crate::error::{Error, Result};
use crate::ingest::{DemographicTable, OutcomeColumn, OutcomeTable};
use crate::matrix::SimilarityMatrix;

/// Pairs whose similarity met the threshold, plus the qualifying fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPairs {
    /// Unordered qualifying pairs, each with the lexicographically earlier
    /// matrix index first.
    pub pairs: Vec<(String, String)>,
    pub total_pairs: usize,
}

impl SelectedPairs {
    /// Qualifying pairs over all pairs.
    pub fn fraction(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            self.pairs.len() as f64 / self.total_pairs as f64
        }
    }
}

/// Pairs with similarity >= epsilon.
pub fn select_pairs(sim: &SimilarityMatrix, epsilon: f64) -> Result<SelectedPairs> {
    if sim.n() < 2 {
        return Err(Error::TooFewUsers {
            have: sim.n(),
            need: 2,
        });
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )));
    }
    let ids = sim.user_ids();
    let mut pairs = Vec::new();
    for i in 0..sim.n() {
        for j in (i + 1)..sim.n() {
            if sim.get(i, j) >= epsilon {
                pairs.push((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    Ok(SelectedPairs {
        pairs,
        total_pairs: sim.n() * (sim.n() - 1) / 2,
    })
}

/// Symmetric relative outcome difference: 1 - min/max, and 0 when both
/// values are 0.
pub fn outcome_delta(a: f64, b: f64) -> f64 {
    let lo = a.min(b);
    let hi = a.max(b);
    if hi == 0.0 {
        0.0
    } else {
        1.0 - lo / hi
    }
}

/// Outcome delta and verdict for one pair under one audited outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub user_a: String,
    pub user_b: String,
    pub delta: f64,
    pub violated: bool,
}

/// Violation tally over the qualifying pairs of one (source, column) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub violated: usize,
    pub evaluated: usize,
    /// Pairs dropped because a member lacks the audited outcome.
    pub dropped_pairs: usize,
    pub verdicts: Vec<PairDelta>,
}

impl ViolationStats {
    pub fn fraction(&self) -> f64 {
        self.violated as f64 / self.evaluated as f64
    }
}

/// Fraction of qualifying pairs whose outcome delta exceeds tau. Pairs with
/// a missing outcome are dropped and counted.
pub fn violation_rate(
    pairs: &[(String, String)],
    outcomes: &OutcomeTable,
    source: &str,
    column: OutcomeColumn,
    tau: f64,
) -> Result<ViolationStats> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "tau must be in (0, 1), got {tau}"
        )));
    }
    let mut verdicts = Vec::new();
    let mut dropped = 0usize;
    let mut violated = 0usize;
    for (a, b) in pairs {
        let (da, db) = match (
            outcomes.value(a, source, column),
            outcomes.value(b, source, column),
        ) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                dropped += 1;
                continue;
            }
        };
        let delta = outcome_delta(da, db);
        let is_violation = delta > tau;
        if is_violation {
            violated += 1;
        }
        verdicts.push(PairDelta {
            user_a: a.clone(),
            user_b: b.clone(),
            delta,
            violated: is_violation,
        });
    }
    if verdicts.is_empty() {
        return Err(Error::NoQualifyingPairs {
            outcome_source: source.to_string(),
            column: column.as_str().to_string(),
        });
    }
    Ok(ViolationStats {
        violated,
        evaluated: verdicts.len(),
        dropped_pairs: dropped,
        verdicts,
    })
}

/// Pair-level verdict across the privacy- and utility-flavoured outcomes of
/// one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub user_a: String,
    pub user_b: String,
    pub metric: String,
    pub similarity: f64,
    pub delta_privacy: f64,
    pub delta_utility: f64,
    pub violated_privacy: bool,
    pub violated_utility: bool,
}

/// Build full pair verdicts for one source: the privacy-flavoured column
/// (uniqueness or privacy gain) and the utility-flavoured column
/// (predictability or utility decline) side by side.
pub fn pair_verdicts(
    sim: &SimilarityMatrix,
    pairs: &[(String, String)],
    metric: &str,
    outcomes: &OutcomeTable,
    source: &str,
    tau: f64,
) -> Vec<PairVerdict> {
    let index: BTreeMap<&str, usize> = sim
        .user_ids()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let [pri_col, uti_col] = OutcomeTable::columns_for(source);
    let mut out = Vec::new();
    for (a, b) in pairs {
        let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) else {
            continue;
        };
        let values = (
            outcomes.value(a, source, pri_col),
            outcomes.value(b, source, pri_col),
            outcomes.value(a, source, uti_col),
            outcomes.value(b, source, uti_col),
        );
        let (Some(pa), Some(pb), Some(ua), Some(ub)) = values else {
            continue;
        };
        let dp = outcome_delta(pa, pb);
        let du = outcome_delta(ua, ub);
        out.push(PairVerdict {
            user_a: a.clone(),
            user_b: b.clone(),
            metric: metric.to_string(),
            similarity: sim.get(ia, ib),
            delta_privacy: dp,
            delta_utility: du,
            violated_privacy: dp > tau,
            violated_utility: du > tau,
        });
    }
    out
}

/// Standardized user-by-feature matrix: [effective SSIM, SE, LE, HE, AE],
/// each column z-scored over the cohort. Zero-variance columns become all
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub user_ids: Vec<String>,
    data: Vec<f64>,
    cols: usize,
}

impl FeatureMatrix {
    pub fn n(&self) -> usize {
        self.user_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn feature_matrix(profiles: &[EntropyProfile], eff_ssim: &[f64]) -> Result<FeatureMatrix> {
    if profiles.len() != eff_ssim.len() {
        return Err(Error::MissingFeature {
            user: String::new(),
            feature: "effective_ssim".into(),
        });
    }
    let n = profiles.len();
    let cols = 5usize;
    let mut data = vec![0.0; n * cols];
    for (i, p) in profiles.iter().enumerate() {
        data[i * cols] = eff_ssim[i];
        data[i * cols + 1] = p.se;
        data[i * cols + 2] = p.le;
        data[i * cols + 3] = p.he;
        data[i * cols + 4] = p.ae;
    }
    for c in 0..cols {
        let column: Vec<f64> = (0..n).map(|i| data[i * cols + c]).collect();
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            data[i * cols + c] = if sd == 0.0 {
                0.0
            } else {
                (data[i * cols + c] - mean) / sd
            };
        }
    }
    Ok(FeatureMatrix {
        user_ids: profiles.iter().map(|p| p.user_id.clone()).collect(),
        data,
        cols,
    })
}

/// K-means result: labels per user, final inertia, mean silhouette, and the
/// inertia recorded after every assignment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    pub inertia: f64,
    pub silhouette: f64,
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_centers(features: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.n();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(features.row(i), features.row(c)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining points coincide with a center; take the first
            // index not yet chosen.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }
    chosen
        .into_iter()
        .map(|i| features.row(i).to_vec())
        .collect()
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn mean_silhouette(features: &FeatureMatrix, labels: &[usize], k: usize) -> f64 {
    let n = features.n();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue; // singleton: silhouette 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(features.row(i), features.row(j)).sqrt();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != labels[i] && sizes[c] > 0 {
                b = b.min(sums[c] / sizes[c] as f64);
            }
        }
        if !b.is_finite() {
            continue; // no other non-empty cluster
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given
/// (features, k, seed); converges when assignments stabilize.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = features.n();
    if k < 2 || k > n {
        return Err(Error::KOutOfRange { k, users: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_centers(features, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut inertia_history = Vec::new();
    let mut inertia = 0.0;

    while inertia_history.len() < KMEANS_MAX_ITER {
        let new_labels: Vec<usize> = (0..n)
            .map(|i| nearest_center(features.row(i), &centers))
            .collect();
        inertia = (0..n)
            .map(|i| sq_dist(features.row(i), &centers[new_labels[i]]))
            .sum();
        inertia_history.push(inertia);
        let converged = labels == new_labels;
        labels = new_labels;
        if converged {
            break;
        }

        // Update step: centers move to their members' mean.
        let mut sums = vec![vec![0.0; features.cols()]; k];
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            sizes[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= sizes[c] as f64;
                }
                centers[c] = sums[c].clone();
            }
        }
        // Reseed empty clusters with the point farthest from its center,
        // drawn from a cluster that can spare one.
        for c in 0..k {
            if sizes[c] == 0 {
                let donor = (0..n)
                    .filter(|&i| sizes[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(features.row(a), &centers[labels[a]])
                            .total_cmp(&sq_dist(features.row(b), &centers[labels[b]]))
                    });
                if let Some(i) = donor {
                    sizes[labels[i]] -= 1;
                    labels[i] = c;
                    sizes[c] = 1;
                    centers[c] = features.row(i).to_vec();
                }
            }
        }
    }

    let silhouette = mean_silhouette(features, &labels, k);
    Ok(ClusterAssignment {
        k,
        labels: features
            .user_ids
            .iter()
            .cloned()
            .zip(labels.iter().copied())
            .collect(),
        inertia,
        silhouette,
        inertia_history,
    })
}

/// Per-candidate-k quality measures for human inspection of the elbow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostics {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

/// Run k-means across a k range and recommend the silhouette-maximizing k
/// (ties prefer the smaller k). Inertia per k is reported so the elbow
/// stays inspectable.
pub fn choose_k(
    features: &FeatureMatrix,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<(usize, Vec<KDiagnostics>)> {
    if k_min > k_max {
        return Err(Error::EmptyKRange { k_min, k_max });
    }
    let mut diagnostics = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for k in k_min..=k_max {
        let assignment = kmeans(features, k, seed)?;
        diagnostics.push(KDiagnostics {
            k,
            inertia: assignment.inertia,
            silhouette: assignment.silhouette,
        });
        let better = match best {
            None => true,
            Some((_, s)) => assignment.silhouette > s,
        };
        if better {
            best = Some((k, assignment.silhouette));
        }
    }
    Ok((best.expect("non-empty k range").0, diagnostics))
}

/// Violation tally for one cluster: a member violates when its mean
/// pairwise outcome delta against the rest of the cluster exceeds tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterViolation {
    pub cluster: usize,
    pub size: usize,
    pub violated_users: usize,
    /// Members skipped because they lack the audited outcome.
    pub dropped_users: usize,
    pub singleton: bool,
}

impl ClusterViolation {
    pub fn fraction(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.violated_users as f64 / self.size as f64
        }
    }
}

/// Per-cluster violation rates for one audited outcome. Singleton clusters
/// report zero and are flagged.
pub fn cluster_violation_rate(
    assignment: &ClusterAssignment,
    outcomes: &OutcomeTable,
    source: &str,
    column: OutcomeColumn,
    tau: f64,
) -> Vec<ClusterViolation> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); assignment.k];
    let mut dropped = vec![0usize; assignment.k];
    for (user, &cluster) in &assignment.labels {
        match outcomes.value(user, source, column) {
            Some(v) => members[cluster].push(v),
            None => dropped[cluster] += 1,
        }
    }
    (0..assignment.k)
        .map(|c| {
            let values = &members[c];
            let size = values.len();
            let singleton = size <= 1;
            let violated_users = if singleton {
                0
            } else {
                values
                    .iter()
                    .enumerate()
                    .filter(|&(i, &v)| {
                        let mean_delta: f64 = values
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, &w)| outcome_delta(v, w))
                            .sum::<f64>()
                            / (size - 1) as f64;
                        mean_delta > tau
                    })
                    .count()
            };
            ClusterViolation {
                cluster: c,
                size,
                violated_users,
                dropped_users: dropped[c],
                singleton,
            }
        })
        .collect()
}

/// How the disparate-impact ratio is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfsMode {
    /// min(d/a, a/d): direction-free, always in (0, 1].
    Symmetric,
    /// a/d: advantaged over disadvantaged mean, as printed.
    Literal,
}

/// One subgroup's group-fairness score for one audited outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFairnessRow {
    pub attribute: String,
    pub subgroup: String,
    /// Users of the subgroup holding the audited outcome.
    pub users: usize,
    pub advantaged: bool,
    pub mean_outcome: f64,
    /// None when a zero mean makes the ratio undefined, and for the
    /// advantaged subgroup itself.
    pub gfs: Option<f64>,
    /// Four-fifths verdict: GFS >= 0.8.
    pub fair: Option<bool>,
}

/// Disparate impact of each subgroup against the advantaged one (the
/// subgroup with the most users holding the outcome; name order breaks
/// ties). The advantaged row is listed first with no score.
pub fn group_fairness_score(
    outcomes: &OutcomeTable,
    demographics: &DemographicTable,
    attribute: &str,
    source: &str,
    column: OutcomeColumn,
    mode: GfsMode,
) -> Result<Vec<GroupFairnessRow>> {
    let subgroups = demographics.subgroups(attribute);
    if subgroups.is_empty() {
        return Err(Error::MissingAttribute {
            attribute: attribute.to_string(),
        });
    }
    // Subgroup -> outcome values of its users.
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (subgroup, users) in &subgroups {
        let vs: Vec<f64> = users
            .iter()
            .filter_map(|u| outcomes.value(u, source, column))
            .collect();
        if !vs.is_empty() {
            values.insert(subgroup, vs);
        }
    }
    if values.len() < 2 {
        return Err(Error::TooFewSubgroups {
            attribute: attribute.to_string(),
        });
    }
    let advantaged = values
        .iter()
        .max_by(|(na, va), (nb, vb)| va.len().cmp(&vb.len()).then(nb.cmp(na)))
        .map(|(name, _)| *name)
        .expect("at least two subgroups");
    let mean = |vs: &[f64]| vs.iter().sum::<f64>() / vs.len() as f64;
    let a = mean(&values[advantaged]);

    let mut rows = Vec::new();
    rows.push(GroupFairnessRow {
        attribute: attribute.to_string(),
        subgroup: advantaged.to_string(),
        users: values[advantaged].len(),
        advantaged: true,
        mean_outcome: a,
        gfs: None,
        fair: None,
    });
    for (subgroup, vs) in &values {
        if *subgroup == advantaged {
            continue;
        }
        let d = mean(vs);
        let gfs = match mode {
            GfsMode::Symmetric => {
                if a == 0.0 || d == 0.0 {
                    None
                } else {
                    Some((d / a).min(a / d))
                }
            }
            GfsMode::Literal => {
                if d == 0.0 {
                    None
                } else {
                    Some(a / d)
                }
            }
        };
        rows.push(GroupFairnessRow {
            attribute: attribute.to_string(),
            subgroup: subgroup.to_string(),
            users: vs.len(),
            advantaged: false,
            mean_outcome: d,
            gfs,
            fair: gfs.map(|g| g >= 0.8),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(ids: &[&str], entries: &[(usize, usize, f64)]) -> SimilarityMatrix {
        let mut m = SimilarityMatrix::new(ids.iter().map(|s| s.to_string()).collect());
        for &(i, j, v) in entries {
            m.set_symmetric(i, j, v);
        }
        m
    }

    #[test]
    fn select_pairs_thresholds_and_fraction() {
        let m = matrix(
            &["a", "b", "c"],
            &[(0, 1, 0.9), (0, 2, 0.5), (1, 2, 0.79)],
        );
        let sel = select_pairs(&m, 0.8).unwrap();
        assert_eq!(sel.pairs, vec![("a".to_string(), "b".to_string())]);
        assert!((sel.fraction() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_users_all_qualify() {
        let m = matrix(&["a", "b", "c"], &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]);
        let sel = select_pairs(&m, 0.8).unwrap();
        assert_eq!(sel.pairs.len(), 3);
        assert_eq!(sel.fraction(), 1.0);
    }

    #[test]
    fn outcome_delta_examples() {
        assert_eq!(outcome_delta(0.5, 0.5), 0.0);
        assert!((outcome_delta(0.5, 0.4) - 0.2).abs() < 1e-12);
        assert_eq!(outcome_delta(0.0, 0.3), 1.0);
        assert_eq!(outcome_delta(0.0, 0.0), 0.0);
    }

    fn outcomes_with(values: &[(&str, f64)]) -> OutcomeTable {
        let mut t = OutcomeTable::new();
        for (user, v) in values {
            t.insert(*user, "model", OutcomeColumn::PrivacyGain, *v).unwrap();
        }
        t
    }

    #[test]
    fn violation_rate_counts_exceedances() {
        // Deltas: 0.1, 0.3, 0.25, 0.05 at tau = 0.2 -> half violate.
        let outcomes = outcomes_with(&[
            ("a", 0.9),
            ("b", 0.81),
            ("c", 0.7),
            ("d", 0.49),
            ("e", 0.8),
            ("f", 0.6),
            ("g", 1.0),
            ("h", 0.95),
        ]);
        let pairs: Vec<(String, String)> = [("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")]
            .iter()
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect();
        let stats =
            violation_rate(&pairs, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2).unwrap();
        assert_eq!(stats.evaluated, 4);
        assert_eq!(stats.violated, 2);
        assert_eq!(stats.fraction(), 0.5);
    }

    #[test]
    fn identical_outcomes_never_violate() {
        let outcomes = outcomes_with(&[("a", 0.7), ("b", 0.7), ("c", 0.7)]);
        let pairs = vec![
            ("a".to_string(), "b".to_string()),
            ("a".to_string(), "c".to_string()),
        ];
        let stats =
            violation_rate(&pairs, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2).unwrap();
        assert_eq!(stats.violated, 0);
    }

    #[test]
    fn missing_outcomes_drop_pairs() {
        let outcomes = outcomes_with(&[("a", 0.5), ("b", 0.5)]);
        let pairs = vec![
            ("a".to_string(), "b".to_string()),
            ("a".to_string(), "zz".to_string()),
        ];
        let stats =
            violation_rate(&pairs, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2).unwrap();
        assert_eq!(stats.dropped_pairs, 1);
        assert_eq!(stats.evaluated, 1);

        let only_missing = vec![("a".to_string(), "zz".to_string())];
        assert!(matches!(
            violation_rate(&only_missing, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2),
            Err(Error::NoQualifyingPairs { .. })
        ));
    }

    fn profile(user: &str, se: f64, le: f64, he: f64, ae: f64) -> EntropyProfile {
        EntropyProfile {
            user_id: user.into(),
            se,
            le,
            he,
            ae,
        }
    }

    #[test]
    fn feature_matrix_standardizes_columns() {
        let profiles: Vec<EntropyProfile> = (0..10)
            .map(|i| profile(&format!("u{i}"), i as f64, 2.0 * i as f64, 5.0, 1.0))
            .collect();
        let eff: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let fm = feature_matrix(&profiles, &eff).unwrap();
        for c in 0..5 {
            let col: Vec<f64> = (0..10).map(|i| fm.row(i)[c]).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-9);
            if c == 3 || c == 4 {
                // Constant features become all-zero columns.
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
        // DERIVED oracle: hand standardization of the SE column.
        let se_col: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mean = 4.5;
        let sd = (se_col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10.0).sqrt();
        for i in 0..10 {
            assert!((fm.row(i)[1] - (i as f64 - mean) / sd).abs() < 1e-12);
        }
    }

    fn blobs(seed: u64) -> (FeatureMatrix, Vec<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Every feature separates the blobs, so standardization cannot blow
        // noise-only columns up to unit variance.
        let centers = [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [50.0, 40.0, 30.0, 20.0, 10.0],
            [100.0, 80.0, 60.0, 40.0, 20.0],
        ];
        let mut profiles = Vec::new();
        let mut eff = Vec::new();
        let mut truth = Vec::new();
        for (b, center) in centers.iter().enumerate() {
            for i in 0..8 {
                let jitter = |v: f64, rng: &mut ChaCha8Rng| v + rng.random_range(-0.5..0.5);
                eff.push(jitter(center[0], &mut rng));
                profiles.push(profile(
                    &format!("b{b}u{i}"),
                    jitter(center[1], &mut rng),
                    jitter(center[2], &mut rng),
                    jitter(center[3], &mut rng),
                    jitter(center[4], &mut rng),
                ));
                truth.push(b);
            }
        }
        (feature_matrix(&profiles, &eff).unwrap(), truth)
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (fm, truth) = blobs(1);
        let assignment = kmeans(&fm, 3, 7).unwrap();
        // Permutation-invariant: every truth blob maps to exactly one label.
        let mut mapping: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, user) in fm.user_ids.iter().enumerate() {
            let label = assignment.labels[user];
            let entry = mapping.entry(truth[i]).or_insert(label);
            assert_eq!(*entry, label);
        }
        assert_eq!(
            mapping.values().collect::<std::collections::BTreeSet<_>>().len(),
            3
        );
    }

    #[test]
    fn kmeans_k_equals_n_gives_zero_inertia() {
        let profiles: Vec<EntropyProfile> = (0..5)
            .map(|i| profile(&format!("u{i}"), i as f64, -(i as f64), 2.0 * i as f64, 1.0))
            .collect();
        let eff: Vec<f64> = (0..5).map(|i| i as f64 * 3.0).collect();
        let fm = feature_matrix(&profiles, &eff).unwrap();
        let assignment = kmeans(&fm, 5, 3).unwrap();
        assert_eq!(assignment.inertia, 0.0);
        let labels: std::collections::BTreeSet<usize> =
            assignment.labels.values().copied().collect();
        assert_eq!(labels.len(), 5);
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let (fm, _) = blobs(2);
        let a = kmeans(&fm, 3, 11).unwrap();
        let b = kmeans(&fm, 3, 11).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia_history, b.inertia_history);
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let (fm, _) = blobs(3);
        for k in 2..=5 {
            let assignment = kmeans(&fm, k, 99).unwrap();
            for w in assignment.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "inertia rose: {w:?}");
            }
        }
    }

    #[test]
    fn choose_k_finds_three_blobs() {
        let (fm, _) = blobs(4);
        let (k, diags) = choose_k(&fm, 2, 6, 5).unwrap();
        assert_eq!(k, 3);
        assert_eq!(diags.len(), 5);
    }

    #[test]
    fn choose_k_prefers_two_for_two_clouds() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut profiles = Vec::new();
        let mut eff = Vec::new();
        for b in 0..2 {
            for i in 0..10 {
                let base = b as f64 * 40.0;
                profiles.push(profile(
                    &format!("b{b}u{i}"),
                    base + rng.random_range(-0.25..0.25),
                    base + rng.random_range(-0.25..0.25),
                    0.0,
                    0.0,
                ));
                eff.push(base + rng.random_range(-0.25..0.25));
            }
        }
        let fm = feature_matrix(&profiles, &eff).unwrap();
        let (k, _) = choose_k(&fm, 2, 6, 13).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn choose_k_single_candidate() {
        let (fm, _) = blobs(7);
        let (k, diags) = choose_k(&fm, 4, 4, 1).unwrap();
        assert_eq!(k, 4);
        assert_eq!(diags.len(), 1);
    }

    fn assignment_of(labels: &[(&str, usize)], k: usize) -> ClusterAssignment {
        ClusterAssignment {
            k,
            labels: labels.iter().map(|(u, c)| (u.to_string(), *c)).collect(),
            inertia: 0.0,
            silhouette: 0.0,
            inertia_history: vec![0.0],
        }
    }

    #[test]
    fn cluster_violation_identical_outcomes() {
        let outcomes = outcomes_with(&[("a", 0.6), ("b", 0.6), ("c", 0.6)]);
        let assignment = assignment_of(&[("a", 0), ("b", 0), ("c", 0)], 1);
        let v = cluster_violation_rate(&assignment, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2);
        assert_eq!(v[0].violated_users, 0);
    }

    #[test]
    fn cluster_violation_hand_computed() {
        // Members 0.9, 0.9, 0.3: the 0.3 user's mean delta is 0.667 and the
        // 0.9 users' mean delta is (0 + 0.667)/2 = 0.333; all exceed 0.2.
        let outcomes = outcomes_with(&[("a", 0.9), ("b", 0.9), ("c", 0.3)]);
        let assignment = assignment_of(&[("a", 0), ("b", 0), ("c", 0)], 1);
        let v = cluster_violation_rate(&assignment, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2);
        assert_eq!(v[0].violated_users, 3);
        assert_eq!(v[0].fraction(), 1.0);
    }

    #[test]
    fn singleton_cluster_reports_zero_flagged() {
        let outcomes = outcomes_with(&[("a", 0.9), ("b", 0.1)]);
        let assignment = assignment_of(&[("a", 0), ("b", 1)], 2);
        let v = cluster_violation_rate(&assignment, &outcomes, "model", OutcomeColumn::PrivacyGain, 0.2);
        assert!(v.iter().all(|c| c.singleton && c.violated_users == 0));
    }

    fn gfs_fixture(adv_values: &[f64], dis_values: &[f64]) -> (OutcomeTable, DemographicTable) {
        let mut outcomes = OutcomeTable::new();
        let mut demo = DemographicTable::new();
        for (i, v) in adv_values.iter().enumerate() {
            let u = format!("adv{i}");
            outcomes
                .insert(&u, "model", OutcomeColumn::PrivacyGain, *v)
                .unwrap();
            demo.insert(&u, "gender", "male").unwrap();
        }
        for (i, v) in dis_values.iter().enumerate() {
            let u = format!("dis{i}");
            outcomes
                .insert(&u, "model", OutcomeColumn::PrivacyGain, *v)
                .unwrap();
            demo.insert(&u, "gender", "female").unwrap();
        }
        (outcomes, demo)
    }

    #[test]
    fn gfs_examples() {
        let (outcomes, demo) = gfs_fixture(&[0.8, 0.8, 0.8], &[0.72, 0.72]);
        let rows = group_fairness_score(
            &outcomes,
            &demo,
            "gender",
            "model",
            OutcomeColumn::PrivacyGain,
            GfsMode::Symmetric,
        )
        .unwrap();
        assert!(rows[0].advantaged);
        assert_eq!(rows[0].subgroup, "male");
        let dis = &rows[1];
        assert!((dis.gfs.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(dis.fair, Some(true));

        let (outcomes, demo) = gfs_fixture(&[0.8, 0.8], &[0.6]);
        let rows = group_fairness_score(
            &outcomes,
            &demo,
            "gender",
            "model",
            OutcomeColumn::PrivacyGain,
            GfsMode::Symmetric,
        )
        .unwrap();
        assert!((rows[1].gfs.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(rows[1].fair, Some(false));

        let (outcomes, demo) = gfs_fixture(&[0.5, 0.5], &[0.5]);
        let rows = group_fairness_score(
            &outcomes,
            &demo,
            "gender",
            "model",
            OutcomeColumn::PrivacyGain,
            GfsMode::Symmetric,
        )
        .unwrap();
        assert_eq!(rows[1].gfs, Some(1.0));
        assert_eq!(rows[1].fair, Some(true));
    }

    #[test]
    fn gfs_literal_mode_keeps_direction() {
        let (outcomes, demo) = gfs_fixture(&[0.9, 0.9], &[0.6]);
        let rows = group_fairness_score(
            &outcomes,
            &demo,
            "gender",
            "model",
            OutcomeColumn::PrivacyGain,
            GfsMode::Literal,
        )
        .unwrap();
        assert!((rows[1].gfs.unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(rows[1].fair, Some(true));
    }

    #[test]
    fn gfs_zero_mean_is_undefined() {
        let (outcomes, demo) = gfs_fixture(&[0.0, 0.0], &[0.5]);
        let rows = group_fairness_score(
            &outcomes,
            &demo,
            "gender",
            "model",
            OutcomeColumn::PrivacyGain,
            GfsMode::Symmetric,
        )
        .unwrap();
        assert_eq!(rows[1].gfs, None);
        assert_eq!(rows[1].fair, None);
    }

    #[test]
    fn gfs_symmetric_invariant_to_group_swap() {
        // The dominant group flips when sizes flip; symmetric GFS must not.
        let (o1, d1) = gfs_fixture(&[0.8, 0.8, 0.8], &[0.6, 0.6]);
        let (o2, d2) = gfs_fixture(&[0.6, 0.6], &[0.8, 0.8, 0.8]);
        let g1 = group_fairness_score(&o1, &d1, "gender", "model", OutcomeColumn::PrivacyGain, GfsMode::Symmetric)
            .unwrap()[1]
            .gfs
            .unwrap();
        let g2 = group_fairness_score(&o2, &d2, "gender", "model", OutcomeColumn::PrivacyGain, GfsMode::Symmetric)
            .unwrap()[1]
            .gfs
            .unwrap();
        assert!((g1 - g2).abs() < 1e-15);
        assert!((g1 - 0.75).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn outcome_delta_symmetric_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let d = outcome_delta(a, b);
                prop_assert_eq!(d, outcome_delta(b, a));
                prop_assert!((0.0..=1.0).contains(&d));
            }

            #[test]
            fn raising_epsilon_never_adds_pairs(
                sims in proptest::collection::vec(0.0f64..=1.0, 6),
                eps_lo in 0.05f64..0.5,
                eps_gap in 0.0f64..0.45,
            ) {
                let mut m = SimilarityMatrix::new(
                    (0..4).map(|i| format!("u{i}")).collect(),
                );
                let mut it = sims.iter();
                for i in 0..4 {
                    for j in (i + 1)..4 {
                        m.set_symmetric(i, j, *it.next().unwrap());
                    }
                }
                let lo = select_pairs(&m, eps_lo).unwrap();
                let hi = select_pairs(&m, eps_lo + eps_gap).unwrap();
                prop_assert!(hi.pairs.len() <= lo.pairs.len());
                for p in &hi.pairs {
                    prop_assert!(lo.pairs.contains(p));
                }
            }
        }
    }
}
