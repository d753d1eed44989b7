//! End-to-end audit orchestration and report emission.
//!
//! `run_audit` stitches the modules together: heatmaps, similarity
//! matrices (SSIM, the four entropies, the combined criterion, and its
//! conjunction with SSIM), pair tables, violation grids, clustering, and
//! group fairness. Reports render as a single JSON document (canonical),
//! a CSV bundle, or aligned text tables; all three carry the same numbers,
//! rounded only at render time.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{
    entropy_profile, entropy_similarity, EntropyKind, EntropyParams, EntropyProfile, FuzzyParams,
    SampEn2dParams,
};
use crate::error::{Error, Result};
use crate::fairness::{
    choose_k, cluster_violation_rate, group_fairness_score, kmeans, select_pairs, violation_rate,
    feature_matrix, GfsMode, KDiagnostics, SelectedPairs,
};
use crate::grid::{build_heatmap, integrate_heatmaps, GridSpec, Heatmap};
use crate::ingest::{DemographicTable, OutcomeTable, Trajectory};
use crate::matrix::{range_normalized_similarity, SimilarityMatrix};
use crate::similarity::{effective_ssim, pairwise_ssim, SsimParams};

/// Which similarity feeds the SSIM row of the individual-fairness table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimPairMode {
    /// Full pairwise SSIM between user heatmaps.
    Pairwise,
    /// Range-normalized closeness of per-user effective SSIM values.
    Effective,
}

/// Full audit configuration; every report echoes it for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Heatmap cell size in meters.
    pub granularity_m: f64,
    /// Granularities for the sweep table, in meters.
    pub sweep_granularities_m: Vec<f64>,
    /// Similarity threshold for pair selection.
    pub epsilon: f64,
    /// Outcome-delta threshold for violations.
    pub tau: f64,
    /// Resampling interval for the time-series entropies, seconds.
    pub resample_interval_s: f64,
    pub fuzzy: FuzzyParams,
    pub heatmap_entropy: SampEn2dParams,
    pub ssim: SsimParams,
    pub ssim_pair_mode: SsimPairMode,
    pub k_min: usize,
    pub k_max: usize,
    pub kmeans_seed: u64,
    pub gfs_mode: GfsMode,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            granularity_m: 100.0,
            sweep_granularities_m: vec![50.0, 100.0, 300.0, 500.0, 700.0, 900.0],
            epsilon: 0.8,
            tau: 0.2,
            resample_interval_s: 600.0,
            fuzzy: FuzzyParams::default(),
            heatmap_entropy: SampEn2dParams::default(),
            ssim: SsimParams::default(),
            ssim_pair_mode: SsimPairMode::Pairwise,
            k_min: 2,
            k_max: 8,
            kmeans_seed: 42,
            gfs_mode: GfsMode::Symmetric,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.granularity_m > 0.0) {
            return bad("granularity_m must be > 0");
        }
        if self.sweep_granularities_m.iter().any(|g| !(*g > 0.0)) {
            return bad("sweep granularities must be > 0");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must be in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must be in (0, 1)");
        }
        if !(self.resample_interval_s > 0.0) {
            return bad("resample_interval_s must be > 0");
        }
        if self.fuzzy.m == 0 || !(self.fuzzy.r_factor > 0.0) {
            return bad("fuzzy entropy needs m >= 1 and r_factor > 0");
        }
        if self.heatmap_entropy.m == 0 || !(self.heatmap_entropy.r_factor > 0.0) {
            return bad("heatmap entropy needs m >= 1 and r_factor > 0");
        }
        self.ssim.validate()?;
        if self.k_min < 2 || self.k_min > self.k_max {
            return bad("k range needs 2 <= k_min <= k_max");
        }
        Ok(())
    }

    fn entropy_params(&self) -> EntropyParams {
        EntropyParams {
            resample_interval_s: self.resample_interval_s,
            fuzzy: self.fuzzy,
            heatmap: self.heatmap_entropy,
        }
    }
}

/// A user excluded from the audit, with the stage-tagged reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedUser {
    pub user_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    /// Audited users (trajectories and outcomes present, profile computed).
    pub users: Vec<String>,
    pub dropped_users: Vec<DroppedUser>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub total_pairs: usize,
}

/// One audited (source, column) violation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationCell {
    pub source: String,
    pub column: String,
    pub evaluated: usize,
    pub violated: usize,
    /// None when no pair/user could be evaluated.
    pub violation_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRow {
    pub metric: String,
    pub pair_count: usize,
    pub pair_percent: f64,
    pub cells: Vec<ViolationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualTable {
    pub rows: Vec<IndividualRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub size: usize,
    pub singleton: bool,
    pub cells: Vec<ViolationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub k: usize,
    pub silhouette: f64,
    pub k_diagnostics: Vec<KDiagnostics>,
    pub rows: Vec<ClusterRow>,
    /// Pooled across clusters: violating users over clustered users.
    pub average: Vec<ViolationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfsCell {
    pub source: String,
    pub column: String,
    pub gfs_percent: Option<f64>,
    pub fair: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub subgroup: String,
    pub users: usize,
    pub advantaged: bool,
    pub cells: Vec<GfsCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub attribute: String,
    pub rows: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub attributes: Vec<AttributeGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub granularity_m: f64,
    pub median_pairwise_ssim: f64,
    pub pair_count: usize,
    pub pair_percent: f64,
    pub cells: Vec<ViolationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// The complete audit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub config: AuditConfig,
    pub cohort: CohortSummary,
    pub individual: IndividualTable,
    pub clusters: Option<ClusterTable>,
    pub group: Option<GroupTable>,
    pub sweep: Option<SweepTable>,
    pub notices: Vec<String>,
}

/// The similarity criteria of the individual-fairness table, in row order.
pub const METRIC_ROWS: [&str; 7] = ["SE", "LE", "HE", "AE", "SSIM", "EOTs", "EOTs+SSIM"];

fn percent(part: usize, whole: usize) -> f64 {
    100.0 * part as f64 / whole as f64
}

/// Coarse granularities can shrink the grid below the configured SSIM
/// window; the orchestrator clamps the window to the grid so sweeps stay
/// runnable. The kernel itself remains strict.
fn clamped_ssim(p: &SsimParams, spec: &GridSpec) -> SsimParams {
    let mut out = p.clone();
    out.window = out.window.min(spec.rows()).min(spec.cols()).max(1);
    out
}

/// Build the violation cells of one pair set across all audited outcomes.
fn violation_cells(
    pairs: &SelectedPairs,
    outcomes: &OutcomeTable,
    tau: f64,
) -> Result<Vec<ViolationCell>> {
    outcomes
        .audited_cells()
        .into_iter()
        .map(|(source, column)| {
            match violation_rate(&pairs.pairs, outcomes, &source, column, tau) {
                Ok(stats) => Ok(ViolationCell {
                    source,
                    column: column.as_str().to_string(),
                    evaluated: stats.evaluated,
                    violated: stats.violated,
                    violation_percent: Some(percent(stats.violated, stats.evaluated)),
                }),
                Err(Error::NoQualifyingPairs { .. }) => Ok(ViolationCell {
                    source,
                    column: column.as_str().to_string(),
                    evaluated: 0,
                    violated: 0,
                    violation_percent: None,
                }),
                Err(other) => Err(other),
            }
        })
        .collect()
}

/// All seven similarity matrices of the audit, in table row order. The
/// SSIM window is clamped to the heatmap grid.
pub fn metric_matrices(
    user_ids: &[String],
    heatmaps: &[Heatmap],
    profiles: &[EntropyProfile],
    eff_ssim: &[f64],
    config: &AuditConfig,
) -> Result<Vec<(String, SimilarityMatrix)>> {
    let ssim_matrix = match config.ssim_pair_mode {
        SsimPairMode::Pairwise => {
            let first = heatmaps.first().ok_or(Error::TooFewUsers { have: 0, need: 2 })?;
            let params = clamped_ssim(&config.ssim, first.spec());
            pairwise_ssim(user_ids, heatmaps, &params)?
        }
        SsimPairMode::Effective => range_normalized_similarity(user_ids.to_vec(), eff_ssim),
    };
    let eots = entropy_similarity(profiles, EntropyKind::Combined)?;
    let eots_ssim = eots.elementwise_min(&ssim_matrix)?;
    let mut out = Vec::new();
    for kind in EntropyKind::SINGLES {
        out.push((
            kind.label().to_string(),
            entropy_similarity(profiles, kind)?,
        ));
    }
    out.push(("SSIM".to_string(), ssim_matrix));
    out.push(("EOTs".to_string(), eots));
    out.push(("EOTs+SSIM".to_string(), eots_ssim));
    Ok(out)
}

struct PreparedCohort {
    user_ids: Vec<String>,
    heatmaps: Vec<Heatmap>,
    profiles: Vec<EntropyProfile>,
    eff_ssim: Vec<f64>,
    dropped: Vec<DroppedUser>,
    spec: GridSpec,
}

fn prepare_cohort(
    trajectories: &[Trajectory],
    outcomes: &OutcomeTable,
    config: &AuditConfig,
) -> Result<PreparedCohort> {
    let outcome_users = outcomes.users();
    let mut common: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| outcome_users.contains(t.user_id()))
        .collect();
    common.sort_by(|a, b| a.user_id().cmp(b.user_id()));
    common.dedup_by(|a, b| a.user_id() == b.user_id());
    if common.len() < 2 {
        return Err(Error::TooFewUsers {
            have: common.len(),
            need: 2,
        }
        .at_stage("cohort"));
    }

    let spec = GridSpec::cohort(common.iter().copied(), config.granularity_m)
        .map_err(|e| e.at_stage("grid"))?;

    let params = config.entropy_params();
    let profile_results: Vec<(usize, crate::error::Result<EntropyProfile>)> = common
        .par_iter()
        .enumerate()
        .map(|(i, t)| (i, entropy_profile(t, &spec, &params)))
        .collect();
    let mut kept: Vec<&Trajectory> = Vec::new();
    let mut profiles = Vec::new();
    let mut dropped = Vec::new();
    for (i, result) in profile_results {
        match result {
            Ok(p) => {
                kept.push(common[i]);
                profiles.push(p);
            }
            Err(e) => dropped.push(DroppedUser {
                user_id: common[i].user_id().to_string(),
                reason: format!("entropy-profiles: {e}"),
            }),
        }
    }
    if kept.len() < 2 {
        return Err(Error::TooFewUsers {
            have: kept.len(),
            need: 2,
        }
        .at_stage("entropy-profiles"));
    }

    let heatmaps: Vec<Heatmap> = kept.par_iter().map(|t| build_heatmap(t, &spec)).collect();
    let integrated = integrate_heatmaps(&heatmaps).map_err(|e| e.at_stage("heatmaps"))?;
    let ssim_params = clamped_ssim(&config.ssim, &spec);
    let eff_ssim: Vec<f64> = heatmaps
        .par_iter()
        .map(|h| effective_ssim(h, &integrated, &ssim_params))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("similarity"))?;

    Ok(PreparedCohort {
        user_ids: kept.iter().map(|t| t.user_id().to_string()).collect(),
        heatmaps,
        profiles,
        eff_ssim,
        dropped,
        spec,
    })
}

fn build_group_table(
    outcomes: &OutcomeTable,
    demographics: &DemographicTable,
    mode: GfsMode,
    notices: &mut Vec<String>,
) -> Option<GroupTable> {
    let mut attributes = Vec::new();
    for attribute in demographics.attributes() {
        let mut rows: Vec<GroupRow> = Vec::new();
        let mut any_cell = false;
        for (source, column) in outcomes.audited_cells() {
            match group_fairness_score(outcomes, demographics, &attribute, &source, column, mode) {
                Ok(gfs_rows) => {
                    if rows.is_empty() {
                        rows = gfs_rows
                            .iter()
                            .map(|r| GroupRow {
                                subgroup: r.subgroup.clone(),
                                users: r.users,
                                advantaged: r.advantaged,
                                cells: Vec::new(),
                            })
                            .collect();
                    }
                    for row in rows.iter_mut() {
                        let found = gfs_rows.iter().find(|r| r.subgroup == row.subgroup);
                        row.cells.push(GfsCell {
                            source: source.clone(),
                            column: column.as_str().to_string(),
                            gfs_percent: found.and_then(|r| r.gfs).map(|g| 100.0 * g),
                            fair: found.and_then(|r| r.fair),
                        });
                    }
                    any_cell = true;
                }
                Err(e) => {
                    notices.push(format!(
                        "group fairness skipped for attribute {attribute:?} on ({source}, {column}): {e}"
                    ));
                }
            }
        }
        if any_cell {
            attributes.push(AttributeGroup { attribute, rows });
        }
    }
    if attributes.is_empty() {
        None
    } else {
        Some(GroupTable { attributes })
    }
}

/// Run the full audit: individual fairness by epsilon-thresholding across
/// all seven similarity criteria, cluster-level fairness, and group
/// fairness when demographics are supplied.
pub fn run_audit(
    trajectories: &[Trajectory],
    outcomes: &OutcomeTable,
    demographics: Option<&DemographicTable>,
    config: &AuditConfig,
) -> Result<FairnessReport> {
    config.validate().map_err(|e| e.at_stage("config"))?;
    let cohort = prepare_cohort(trajectories, outcomes, config)?;
    let mut notices = Vec::new();
    let effective_window = clamped_ssim(&config.ssim, &cohort.spec).window;
    if effective_window != config.ssim.window {
        notices.push(format!(
            "SSIM window clamped from {} to {} to fit the {}x{} grid",
            config.ssim.window,
            effective_window,
            cohort.spec.rows(),
            cohort.spec.cols()
        ));
    }

    let matrices = metric_matrices(
        &cohort.user_ids,
        &cohort.heatmaps,
        &cohort.profiles,
        &cohort.eff_ssim,
        config,
    )
    .map_err(|e| e.at_stage("similarity"))?;

    let mut rows = Vec::new();
    for (metric, matrix) in &matrices {
        let selected = select_pairs(matrix, config.epsilon).map_err(|e| e.at_stage("pair-selection"))?;
        let cells =
            violation_cells(&selected, outcomes, config.tau).map_err(|e| e.at_stage("violations"))?;
        rows.push(IndividualRow {
            metric: metric.clone(),
            pair_count: selected.pairs.len(),
            pair_percent: 100.0 * selected.fraction(),
            cells,
        });
    }
    let total_pairs = cohort.user_ids.len() * (cohort.user_ids.len() - 1) / 2;

    // Cluster-level individual fairness on [effective SSIM, SE, LE, HE, AE].
    let clusters = {
        let features = feature_matrix(&cohort.profiles, &cohort.eff_ssim)
            .map_err(|e| e.at_stage("clustering"))?;
        let k_max = config.k_max.min(cohort.user_ids.len());
        if config.k_min > k_max {
            notices.push(format!(
                "clustering skipped: k_min {} exceeds cohort size {}",
                config.k_min,
                cohort.user_ids.len()
            ));
            None
        } else {
            let (best_k, k_diagnostics) = choose_k(&features, config.k_min, k_max, config.kmeans_seed)
                .map_err(|e| e.at_stage("clustering"))?;
            let assignment =
                kmeans(&features, best_k, config.kmeans_seed).map_err(|e| e.at_stage("clustering"))?;
            let mut sizes = vec![0usize; best_k];
            for &c in assignment.labels.values() {
                sizes[c] += 1;
            }
            let audited = outcomes.audited_cells();
            let mut cluster_rows: Vec<ClusterRow> = (0..best_k)
                .map(|c| ClusterRow {
                    cluster: c,
                    size: sizes[c],
                    singleton: sizes[c] <= 1,
                    cells: Vec::new(),
                })
                .collect();
            let mut average: Vec<ViolationCell> = Vec::new();
            for (source, column) in &audited {
                let per_cluster =
                    cluster_violation_rate(&assignment, outcomes, source, *column, config.tau);
                let mut pooled_violated = 0usize;
                let mut pooled_evaluated = 0usize;
                for cv in &per_cluster {
                    pooled_violated += cv.violated_users;
                    pooled_evaluated += cv.size;
                    cluster_rows[cv.cluster].cells.push(ViolationCell {
                        source: source.clone(),
                        column: column.as_str().to_string(),
                        evaluated: cv.size,
                        violated: cv.violated_users,
                        violation_percent: if cv.size == 0 {
                            None
                        } else {
                            Some(percent(cv.violated_users, cv.size))
                        },
                    });
                }
                average.push(ViolationCell {
                    source: source.clone(),
                    column: column.as_str().to_string(),
                    evaluated: pooled_evaluated,
                    violated: pooled_violated,
                    violation_percent: if pooled_evaluated == 0 {
                        None
                    } else {
                        Some(percent(pooled_violated, pooled_evaluated))
                    },
                });
            }
            Some(ClusterTable {
                k: best_k,
                silhouette: assignment.silhouette,
                k_diagnostics,
                rows: cluster_rows,
                average,
            })
        }
    };

    let group = match demographics {
        Some(demo) if !demo.is_empty() => {
            build_group_table(outcomes, demo, config.gfs_mode, &mut notices)
        }
        _ => {
            notices.push("group fairness not available: no demographics provided".to_string());
            None
        }
    };

    Ok(FairnessReport {
        config: config.clone(),
        cohort: CohortSummary {
            users: cohort.user_ids,
            dropped_users: cohort.dropped,
            grid_rows: cohort.spec.rows(),
            grid_cols: cohort.spec.cols(),
            total_pairs,
        },
        individual: IndividualTable { rows },
        clusters,
        group,
        sweep: None,
        notices,
    })
}

/// Median pairwise SSIM and violation grid per granularity, epsilon and tau
/// held fixed. Rows are ordered by granularity.
pub fn sweep_granularity(
    trajectories: &[Trajectory],
    outcomes: &OutcomeTable,
    config: &AuditConfig,
) -> Result<SweepTable> {
    config.validate().map_err(|e| e.at_stage("config"))?;
    let mut granularities = config.sweep_granularities_m.clone();
    granularities.sort_by(f64::total_cmp);
    granularities.dedup();
    if granularities.len() < 2 {
        return Err(Error::InvalidConfig(
            "granularity sweep needs at least 2 distinct values".into(),
        ));
    }

    let outcome_users = outcomes.users();
    let mut common: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| outcome_users.contains(t.user_id()))
        .collect();
    common.sort_by(|a, b| a.user_id().cmp(b.user_id()));
    common.dedup_by(|a, b| a.user_id() == b.user_id());
    if common.len() < 2 {
        return Err(Error::TooFewUsers {
            have: common.len(),
            need: 2,
        }
        .at_stage("cohort"));
    }
    let user_ids: Vec<String> = common.iter().map(|t| t.user_id().to_string()).collect();

    let mut rows = Vec::new();
    for &g in &granularities {
        let spec = GridSpec::cohort(common.iter().copied(), g).map_err(|e| e.at_stage("grid"))?;
        let heatmaps: Vec<Heatmap> = common.par_iter().map(|t| build_heatmap(t, &spec)).collect();
        let params = clamped_ssim(&config.ssim, &spec);
        let matrix =
            pairwise_ssim(&user_ids, &heatmaps, &params).map_err(|e| e.at_stage("similarity"))?;
        let median = matrix
            .median_off_diagonal()
            .ok_or_else(|| Error::Internal("pairwise matrix with no off-diagonal".into()))?;
        let selected =
            select_pairs(&matrix, config.epsilon).map_err(|e| e.at_stage("pair-selection"))?;
        let cells =
            violation_cells(&selected, outcomes, config.tau).map_err(|e| e.at_stage("violations"))?;
        rows.push(SweepRow {
            granularity_m: g,
            median_pairwise_ssim: median,
            pair_count: selected.pairs.len(),
            pair_percent: 100.0 * selected.fraction(),
            cells,
        });
    }
    Ok(SweepTable { rows })
}

/// Output formats for `emit_report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvBundle,
    Text,
}

/// Canonical JSON rendering: pretty-printed, stable field order, trailing
/// newline. Identical inputs produce byte-identical output.
pub fn report_json(report: &FairnessReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn individual_csv(report: &FairnessReport) -> String {
    let mut out = String::from(
        "metric,source,column,pair_count,total_pairs,pair_percent,evaluated,violated,violation_percent\n",
    );
    let total = report.cohort.total_pairs;
    for row in &report.individual.rows {
        for cell in &row.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.metric,
                cell.source,
                cell.column,
                row.pair_count,
                total,
                row.pair_percent,
                cell.evaluated,
                cell.violated,
                fmt_opt(cell.violation_percent),
            ));
        }
    }
    out
}

fn clusters_csv(table: &ClusterTable) -> String {
    let mut out =
        String::from("cluster,size,singleton,source,column,evaluated,violated,violation_percent\n");
    for row in &table.rows {
        for cell in &row.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.cluster,
                row.size,
                row.singleton,
                cell.source,
                cell.column,
                cell.evaluated,
                cell.violated,
                fmt_opt(cell.violation_percent),
            ));
        }
    }
    for cell in &table.average {
        out.push_str(&format!(
            "average,,,{},{},{},{},{}\n",
            cell.source,
            cell.column,
            cell.evaluated,
            cell.violated,
            fmt_opt(cell.violation_percent),
        ));
    }
    out
}

fn group_csv(table: &GroupTable) -> String {
    let mut out = String::from("attribute,subgroup,users,advantaged,source,column,gfs_percent,fair\n");
    for attr in &table.attributes {
        for row in &attr.rows {
            for cell in &row.cells {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    attr.attribute,
                    row.subgroup,
                    row.users,
                    row.advantaged,
                    cell.source,
                    cell.column,
                    fmt_opt(cell.gfs_percent),
                    cell.fair.map(|f| f.to_string()).unwrap_or_default(),
                ));
            }
        }
    }
    out
}

fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from(
        "granularity_m,median_pairwise_ssim,pair_count,pair_percent,source,column,evaluated,violated,violation_percent\n",
    );
    for row in &table.rows {
        for cell in &row.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.granularity_m,
                row.median_pairwise_ssim,
                row.pair_count,
                row.pair_percent,
                cell.source,
                cell.column,
                cell.evaluated,
                cell.violated,
                fmt_opt(cell.violation_percent),
            ));
        }
    }
    out
}

fn pad(s: &str, width: usize) -> String {
    format!("{s:<width$}")
}

fn render_grid(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], widths: &[usize]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, &w)| pad(c, w))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&render_row(&header, &widths));
    out.push('\n');
    for row in &rows {
        out.push_str(&render_row(row, &widths));
        out.push('\n');
    }
    out
}

fn pct(v: f64) -> String {
    format!("{v:.2}%")
}

fn pct_opt(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".to_string())
}

/// Aligned text tables, percentages rounded to two decimals.
pub fn render_text(report: &FairnessReport) -> String {
    let mut out = String::new();
    let cell_headers: Vec<String> = report
        .individual
        .rows
        .first()
        .map(|r| {
            r.cells
                .iter()
                .map(|c| format!("{}/{}", c.source, c.column))
                .collect()
        })
        .unwrap_or_default();

    out.push_str(&format!(
        "== Individual fairness (epsilon={}, tau={}, granularity={} m) ==\n",
        report.config.epsilon, report.config.tau, report.config.granularity_m
    ));
    let mut header = vec!["metric".to_string(), "% of pairs".to_string()];
    header.extend(cell_headers.iter().cloned());
    let rows: Vec<Vec<String>> = report
        .individual
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.metric.clone(), pct(r.pair_percent)];
            row.extend(r.cells.iter().map(|c| pct_opt(c.violation_percent)));
            row
        })
        .collect();
    out.push_str(&render_grid(header, rows));

    if let Some(table) = &report.clusters {
        out.push_str(&format!(
            "\n== Cluster fairness (k={}, silhouette={:.4}) ==\n",
            table.k, table.silhouette
        ));
        let mut header = vec!["cluster".to_string(), "size".to_string()];
        header.extend(cell_headers.iter().cloned());
        let mut rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.cluster.to_string(), r.size.to_string()];
                row.extend(r.cells.iter().map(|c| pct_opt(c.violation_percent)));
                row
            })
            .collect();
        let mut avg = vec!["average".to_string(), "-".to_string()];
        avg.extend(table.average.iter().map(|c| pct_opt(c.violation_percent)));
        rows.push(avg);
        out.push_str(&render_grid(header, rows));
    }

    if let Some(table) = &report.group {
        out.push_str("\n== Group fairness (GFS, four-fifths rule) ==\n");
        for attr in &table.attributes {
            out.push_str(&format!("-- {} --\n", attr.attribute));
            let mut header = vec!["subgroup".to_string(), "users".to_string()];
            header.extend(
                attr.rows
                    .first()
                    .map(|r| {
                        r.cells
                            .iter()
                            .map(|c| format!("{}/{}", c.source, c.column))
                            .collect::<Vec<_>>()
                    })
                    .unwrap_or_default(),
            );
            let rows: Vec<Vec<String>> = attr
                .rows
                .iter()
                .map(|r| {
                    let mut row = vec![r.subgroup.clone(), r.users.to_string()];
                    row.extend(r.cells.iter().map(|c| pct_opt(c.gfs_percent)));
                    row
                })
                .collect();
            out.push_str(&render_grid(header, rows));
        }
    }

    if let Some(table) = &report.sweep {
        out.push_str(&format!(
            "\n== Granularity sweep (epsilon={}, tau={}) ==\n",
            report.config.epsilon, report.config.tau
        ));
        let mut header = vec![
            "granularity_m".to_string(),
            "median SSIM".to_string(),
            "% of pairs".to_string(),
        ];
        header.extend(
            table
                .rows
                .first()
                .map(|r| {
                    r.cells
                        .iter()
                        .map(|c| format!("{}/{}", c.source, c.column))
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default(),
        );
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    format!("{}", r.granularity_m),
                    format!("{:.4}", r.median_pairwise_ssim),
                    pct(r.pair_percent),
                ];
                row.extend(r.cells.iter().map(|c| pct_opt(c.violation_percent)));
                row
            })
            .collect();
        out.push_str(&render_grid(header, rows));
    }

    if !report.notices.is_empty() {
        out.push_str("\nnotices:\n");
        for n in &report.notices {
            out.push_str(&format!("  - {n}\n"));
        }
    }
    out
}

/// Write the report in the requested format, returning the files written.
pub fn emit_report(
    report: &FairnessReport,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let write = |name: &str, contents: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    };
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            written.push(write("report.json", report_json(report))?);
        }
        ReportFormat::CsvBundle => {
            written.push(write("individual.csv", individual_csv(report))?);
            if let Some(table) = &report.clusters {
                written.push(write("clusters.csv", clusters_csv(table))?);
            }
            if let Some(table) = &report.group {
                written.push(write("group.csv", group_csv(table))?);
            }
            if let Some(table) = &report.sweep {
                written.push(write("sweep.csv", sweep_csv(table))?);
            }
        }
        ReportFormat::Text => {
            written.push(write("report.txt", render_text(report))?);
        }
    }
    Ok(written)
}
