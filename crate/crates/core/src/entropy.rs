//! The four trajectory entropies and entropy-based user similarity.
//!
//! * Shannon entropy of the visit distribution (bits).
//! * Fuzzy entropy of the longitude/latitude series (nats).
//! * Two-dimensional sample entropy of the heatmap image (nats).
//! * Lempel-Ziv "actual" entropy of the cell-novelty series (nats).
//!
//! A user whose in-box visits all fall into a single grid cell carries no
//! spatial information at that granularity and receives the all-zero
//! profile; the kernels below are otherwise applied unchanged.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_heatmap, project_to_cell, GridSpec, Heatmap};
use crate::ingest::{resample_trajectory, Trajectory};
use crate::matrix::SimilarityMatrix;

/// Fuzzy entropy parameters: template length, tolerance as a fraction of the
/// series standard deviation, and the membership exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyParams {
    pub m: usize,
    pub r_factor: f64,
    pub n_pow: f64,
}

impl Default for FuzzyParams {
    fn default() -> Self {
        FuzzyParams {
            m: 2,
            r_factor: 0.2,
            n_pow: 2.0,
        }
    }
}

/// 2-D sample entropy parameters: window side, tolerance as a fraction of
/// the image standard deviation, and whether intensities are log-scaled
/// (log(1 + count)) to tame heavy-tailed visit counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampEn2dParams {
    pub m: usize,
    pub r_factor: f64,
    pub log_scale: bool,
}

impl Default for SampEn2dParams {
    fn default() -> Self {
        SampEn2dParams {
            m: 1,
            r_factor: 0.2,
            log_scale: true,
        }
    }
}

/// Everything needed to turn one trajectory into an entropy profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyParams {
    pub resample_interval_s: f64,
    pub fuzzy: FuzzyParams,
    pub heatmap: SampEn2dParams,
}

impl Default for EntropyParams {
    fn default() -> Self {
        EntropyParams {
            resample_interval_s: 600.0,
            fuzzy: FuzzyParams::default(),
            heatmap: SampEn2dParams::default(),
        }
    }
}

/// Per-user vector of the four entropy values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub user_id: String,
    /// Shannon entropy of the visit distribution, bits.
    pub se: f64,
    /// Fuzzy entropy of the coordinate series, nats.
    pub le: f64,
    /// 2-D sample entropy of the heatmap, nats.
    pub he: f64,
    /// Lempel-Ziv entropy of the novelty series, nats.
    pub ae: f64,
}

/// Binary first-visit series over the resampled trajectory: 1 the first
/// time a cell is entered, 0 afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltySeries {
    pub user_id: String,
    pub bits: Vec<bool>,
}

/// Shannon entropy of the cell visit distribution, in bits.
pub fn shannon_entropy_of_heatmap(h: &Heatmap) -> Result<f64> {
    let total = h.total();
    if total == 0 {
        return Err(Error::NoInBoxPoints {
            user: String::new(),
        });
    }
    let total = total as f64;
    let mut bits = 0.0;
    for &c in h.counts() {
        if c > 0 {
            let p = c as f64 / total;
            bits -= p * p.log2();
        }
    }
    Ok(bits)
}

/// Shannon entropy of a trajectory's visit distribution on a grid.
pub fn shannon_entropy(traj: &Trajectory, spec: &GridSpec) -> Result<f64> {
    let h = build_heatmap(traj, spec);
    shannon_entropy_of_heatmap(&h).map_err(|e| match e {
        Error::NoInBoxPoints { .. } => Error::NoInBoxPoints {
            user: traj.user_id().to_string(),
        },
        other => other,
    })
}

/// Mean-subtracted template of a window.
fn centered_template(window: &[f64]) -> Vec<f64> {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    window.iter().map(|v| v - mean).collect()
}

/// Average pairwise membership (self-matches excluded) between templates of
/// one length. Both scales use the same number of templates.
fn fuzzy_phi(series: &[f64], template_len: usize, count: usize, r: f64, n_pow: f64) -> f64 {
    let templates: Vec<Vec<f64>> = (0..count)
        .map(|i| centered_template(&series[i..i + template_len]))
        .collect();
    let mut total = 0.0;
    for i in 0..count {
        for j in 0..count {
            if i == j {
                continue;
            }
            let d = templates[i]
                .iter()
                .zip(&templates[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            total += (-d.powf(n_pow) / r).exp();
        }
    }
    total / (count * (count - 1)) as f64
}

/// Fuzzy entropy of a real series: ln phi^m - ln phi^(m+1) with Chebyshev
/// distances between mean-subtracted templates and the exponential
/// membership exp(-d^n_pow / r).
pub fn fuzzy_entropy(series: &[f64], m: usize, r: f64, n_pow: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveTolerance(r));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("template length m must be >= 1".into()));
    }
    let n = series.len();
    if n <= m + 1 {
        return Err(Error::SeriesTooShort { len: n, min: m + 1 });
    }
    let count = n - m;
    let phi_m = fuzzy_phi(series, m, count, r, n_pow);
    let phi_m1 = fuzzy_phi(series, m + 1, count, r, n_pow);
    Ok(phi_m.ln() - phi_m1.ln())
}

fn population_std(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn axis_fuzzy(series: &[f64], p: &FuzzyParams) -> Result<f64> {
    let sd = population_std(series);
    if sd == 0.0 {
        // A degenerate (constant) axis contributes no irregularity.
        return Ok(0.0);
    }
    fuzzy_entropy(series, p.m, p.r_factor * sd, p.n_pow)
}

/// Fuzzy entropy of the resampled longitude and latitude series, averaged
/// over the two axes. Each axis uses r = r_factor * (its own standard
/// deviation); a zero-variance axis contributes 0.
pub fn lonlat_entropy(traj: &Trajectory, interval: f64, p: &FuzzyParams) -> Result<f64> {
    let resampled = resample_trajectory(traj, interval)?;
    let lons: Vec<f64> = resampled.points().iter().map(|pt| pt.lon).collect();
    let lats: Vec<f64> = resampled.points().iter().map(|pt| pt.lat).collect();
    let e_lon = axis_fuzzy(&lons, p)?;
    let e_lat = axis_fuzzy(&lats, p)?;
    Ok(0.5 * (e_lon + e_lat))
}

/// Count ordered window pairs within Chebyshev tolerance. Windows of side
/// `side` are evaluated at the shared position set of both scales.
fn window_match_count(
    values: &[f64],
    cols: usize,
    pos_rows: usize,
    pos_cols: usize,
    side: usize,
    r: f64,
) -> u64 {
    let positions: Vec<(usize, usize)> = (0..pos_rows)
        .flat_map(|i| (0..pos_cols).map(move |j| (i, j)))
        .collect();
    let k = positions.len();
    let mut matches = 0u64;
    for a in 0..k {
        for b in (a + 1)..k {
            let (ia, ja) = positions[a];
            let (ib, jb) = positions[b];
            let mut within = true;
            'outer: for di in 0..side {
                for dj in 0..side {
                    let va = values[(ia + di) * cols + (ja + dj)];
                    let vb = values[(ib + di) * cols + (jb + dj)];
                    if (va - vb).abs() > r {
                        within = false;
                        break 'outer;
                    }
                }
            }
            if within {
                matches += 2; // ordered pairs
            }
        }
    }
    matches
}

/// Two-dimensional sample entropy of an intensity matrix:
/// -ln(U^(m+1) / U^m), where U^l is the average fraction of other windows
/// within Chebyshev tolerance r. Both scales evaluate windows at the same
/// (rows - m) x (cols - m) origin set, so at least (m + 1) + 1 cells per
/// side are required.
pub fn sample_entropy_2d_values(
    values: &[f64],
    rows: usize,
    cols: usize,
    m: usize,
    r: f64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveTolerance(r));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("window side m must be >= 1".into()));
    }
    if rows < m + 2 || cols < m + 2 {
        return Err(Error::GridTooSmall {
            rows,
            cols,
            min: m + 2,
        });
    }
    if values.len() != rows * cols {
        return Err(Error::Internal("intensity buffer does not match grid".into()));
    }
    let pos_rows = rows - m;
    let pos_cols = cols - m;
    let k = (pos_rows * pos_cols) as f64;
    let denom = k * (k - 1.0);
    let matches_m = window_match_count(values, cols, pos_rows, pos_cols, m, r);
    if matches_m == 0 {
        return Err(Error::UndefinedEntropy { scale: m });
    }
    let matches_m1 = window_match_count(values, cols, pos_rows, pos_cols, m + 1, r);
    if matches_m1 == 0 {
        return Err(Error::UndefinedEntropy { scale: m + 1 });
    }
    let u_m = matches_m as f64 / denom;
    let u_m1 = matches_m1 as f64 / denom;
    Ok(-(u_m1 / u_m).ln())
}

/// Two-dimensional sample entropy of a heatmap's raw counts.
pub fn sample_entropy_2d(h: &Heatmap, m: usize, r: f64) -> Result<f64> {
    let values: Vec<f64> = h.counts().iter().map(|&c| c as f64).collect();
    sample_entropy_2d_values(&values, h.spec().rows(), h.spec().cols(), m, r)
}

/// 2-D sample entropy of a heatmap with the profile conventions applied:
/// optional log(1 + count) scaling and r = r_factor * (intensity standard
/// deviation). A constant image has entropy 0.
pub fn heatmap_entropy(h: &Heatmap, p: &SampEn2dParams) -> Result<f64> {
    let values: Vec<f64> = h
        .counts()
        .iter()
        .map(|&c| {
            if p.log_scale {
                (c as f64).ln_1p()
            } else {
                c as f64
            }
        })
        .collect();
    let sd = population_std(&values);
    if sd == 0.0 {
        return Ok(0.0);
    }
    sample_entropy_2d_values(
        &values,
        h.spec().rows(),
        h.spec().cols(),
        p.m,
        p.r_factor * sd,
    )
}

/// First-visit series of the resampled trajectory on a grid. Points outside
/// the bounding box share one synthetic "outside" bucket.
pub fn novelty_series(traj: &Trajectory, spec: &GridSpec, interval: f64) -> Result<NoveltySeries> {
    let resampled = resample_trajectory(traj, interval)?;
    let mut seen: BTreeSet<Option<(usize, usize)>> = BTreeSet::new();
    let bits = resampled
        .points()
        .iter()
        .map(|p| seen.insert(project_to_cell(p, spec)))
        .collect();
    Ok(NoveltySeries {
        user_id: traj.user_id().to_string(),
        bits,
    })
}

/// Suffix automaton over a binary alphabet, tracking per state the minimal
/// end index of any occurrence. Used to compute, for every position, the
/// longest prefix of the tail that occurs fully inside the preceding
/// prefix.
struct SuffixAutomaton {
    next: Vec<[i32; 2]>,
    link: Vec<i32>,
    len: Vec<usize>,
    minend: Vec<usize>,
    last: usize,
}

impl SuffixAutomaton {
    fn new() -> Self {
        SuffixAutomaton {
            next: vec![[-1, -1]],
            link: vec![-1],
            len: vec![0],
            minend: vec![usize::MAX],
            last: 0,
        }
    }

    fn add_state(&mut self, len: usize, minend: usize) -> usize {
        self.next.push([-1, -1]);
        self.link.push(-1);
        self.len.push(len);
        self.minend.push(minend);
        self.next.len() - 1
    }

    fn extend(&mut self, ch: usize, pos: usize) {
        let cur = self.add_state(self.len[self.last] + 1, pos);
        let mut p = self.last as i32;
        while p >= 0 && self.next[p as usize][ch] < 0 {
            self.next[p as usize][ch] = cur as i32;
            p = self.link[p as usize];
        }
        if p < 0 {
            self.link[cur] = 0;
        } else {
            let q = self.next[p as usize][ch] as usize;
            if self.len[p as usize] + 1 == self.len[q] {
                self.link[cur] = q as i32;
            } else {
                // Split q: the clone keeps q's earliest occurrence.
                let clone = self.add_state(self.len[p as usize] + 1, self.minend[q]);
                self.next[clone] = self.next[q];
                self.link[clone] = self.link[q];
                while p >= 0 && self.next[p as usize][ch] == q as i32 {
                    self.next[p as usize][ch] = clone as i32;
                    p = self.link[p as usize];
                }
                self.link[q] = clone as i32;
                self.link[cur] = clone as i32;
            }
        }
        self.last = cur;
    }
}

/// For each position i, the length of the shortest substring starting at i
/// that does not occur as a contiguous substring of the preceding prefix.
/// When every substring starting at i occurs in the prefix, the value is
/// one past the tail length.
pub fn shortest_new_substring_lengths(bits: &[bool]) -> Vec<usize> {
    let n = bits.len();
    let mut sam = SuffixAutomaton::new();
    for (pos, &b) in bits.iter().enumerate() {
        sam.extend(b as usize, pos);
    }

    let mut lambdas = Vec::with_capacity(n);
    let mut state = 0usize;
    let mut len = 0usize;
    for i in 0..n {
        // Grow the match while the next character still yields a substring
        // with an occurrence ending before position i.
        while i + len < n {
            let ch = bits[i + len] as usize;
            let t = sam.next[state][ch];
            if t < 0 {
                break;
            }
            let mut t = t as usize;
            while sam.link[t] >= 0 && sam.len[sam.link[t] as usize] >= len + 1 {
                t = sam.link[t] as usize;
            }
            if sam.minend[t] >= i {
                break;
            }
            state = t;
            len += 1;
        }
        lambdas.push(len + 1);
        // Slide the window: drop the first character of the match.
        if len > 0 {
            len -= 1;
            while state != 0 && sam.len[sam.link[state] as usize] >= len {
                state = sam.link[state] as usize;
            }
        }
    }
    lambdas
}

/// Lempel-Ziv entropy estimate over a binary series:
/// (mean lambda)^-1 * ln(n).
pub fn actual_entropy_bits(bits: &[bool]) -> Result<f64> {
    let n = bits.len();
    if n < 2 {
        return Err(Error::NoveltySeriesTooShort { len: n });
    }
    let lambdas = shortest_new_substring_lengths(bits);
    let mean = lambdas.iter().sum::<usize>() as f64 / n as f64;
    Ok((n as f64).ln() / mean)
}

/// Lempel-Ziv entropy of a novelty series.
pub fn actual_entropy(s: &NoveltySeries) -> Result<f64> {
    actual_entropy_bits(&s.bits)
}

/// Compute a user's four-entropy profile on the shared cohort grid.
pub fn entropy_profile(
    traj: &Trajectory,
    spec: &GridSpec,
    params: &EntropyParams,
) -> Result<EntropyProfile> {
    let h = build_heatmap(traj, spec);
    if h.total() == 0 {
        return Err(Error::NoInBoxPoints {
            user: traj.user_id().to_string(),
        });
    }
    if h.nonzero_cells() <= 1 {
        // Stationary at this granularity: no spatial information to encode.
        return Ok(EntropyProfile {
            user_id: traj.user_id().to_string(),
            se: 0.0,
            le: 0.0,
            he: 0.0,
            ae: 0.0,
        });
    }
    let se = shannon_entropy_of_heatmap(&h)?;
    let le = lonlat_entropy(traj, params.resample_interval_s, &params.fuzzy)?;
    let he = heatmap_entropy(&h, &params.heatmap)?;
    let ns = novelty_series(traj, spec, params.resample_interval_s)?;
    let ae = actual_entropy(&ns)?;
    Ok(EntropyProfile {
        user_id: traj.user_id().to_string(),
        se,
        le,
        he,
        ae,
    })
}

/// Which entropy measure drives a similarity matrix. `Combined` is the
/// conjunctive criterion over all four measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyKind {
    Shannon,
    LonLat,
    Heatmap,
    Actual,
    Combined,
}

impl EntropyKind {
    pub const SINGLES: [EntropyKind; 4] = [
        EntropyKind::Shannon,
        EntropyKind::LonLat,
        EntropyKind::Heatmap,
        EntropyKind::Actual,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            EntropyKind::Shannon => "SE",
            EntropyKind::LonLat => "LE",
            EntropyKind::Heatmap => "HE",
            EntropyKind::Actual => "AE",
            EntropyKind::Combined => "EOTs",
        }
    }

    fn extract(&self, p: &EntropyProfile) -> f64 {
        match self {
            EntropyKind::Shannon => p.se,
            EntropyKind::LonLat => p.le,
            EntropyKind::Heatmap => p.he,
            EntropyKind::Actual => p.ae,
            EntropyKind::Combined => unreachable!("combined kind has no scalar"),
        }
    }
}

fn single_kind_similarity(profiles: &[EntropyProfile], kind: EntropyKind) -> SimilarityMatrix {
    let ids: Vec<String> = profiles.iter().map(|p| p.user_id.clone()).collect();
    let values: Vec<f64> = profiles.iter().map(|p| kind.extract(p)).collect();
    crate::matrix::range_normalized_similarity(ids, &values)
}

/// Entropy-based user similarity: 1 - |E_i - E_j| / (cohort range) for a
/// single measure, and the element-wise minimum across all four measures
/// for the combined criterion. A cohort with zero range under a measure
/// makes every pair fully similar.
pub fn entropy_similarity(
    profiles: &[EntropyProfile],
    kind: EntropyKind,
) -> Result<SimilarityMatrix> {
    if profiles.len() < 2 {
        return Err(Error::TooFewUsers {
            have: profiles.len(),
            need: 2,
        });
    }
    match kind {
        EntropyKind::Combined => {
            let mut acc = single_kind_similarity(profiles, EntropyKind::Shannon);
            for k in [EntropyKind::LonLat, EntropyKind::Heatmap, EntropyKind::Actual] {
                acc = acc.elementwise_min(&single_kind_similarity(profiles, k))?;
            }
            Ok(acc)
        }
        single => Ok(single_kind_similarity(profiles, single)),
    }
}

/// Write profiles as CSV: `user_id,se,le,he,ae`.
pub fn write_profiles_csv<W: Write>(profiles: &[EntropyProfile], mut w: W) -> std::io::Result<()> {
    writeln!(w, "user_id,se,le,he,ae")?;
    for p in profiles {
        writeln!(w, "{},{},{},{},{}", p.user_id, p.se, p.le, p.he, p.ae)?;
    }
    Ok(())
}
