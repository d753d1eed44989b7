//! Structural similarity between heatmaps: local SSIM maps, global SSIM,
//! and the masked effective SSIM against the integrated cohort heatmap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Heatmap};
use crate::matrix::SimilarityMatrix;

/// SSIM stabilizer constants and windowing.
///
/// Local SSIM values are computed over a uniform square window slid across
/// every cell (stride 1, clipped at the borders) and then mean-pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the normalized intensities.
    pub dynamic_range: f64,
    /// Window side in cells. Even windows center with the extra cell on the
    /// trailing side.
    pub window: usize,
    /// Apply log(1 + count) before normalization.
    pub log_scale: bool,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            window: 8,
            log_scale: false,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0) || !(self.c2() > 0.0) || self.window == 0 {
            return Err(Error::InvalidConfig(
                "SSIM requires k1*L > 0, k2*L > 0 and a positive window".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell local SSIM values over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    spec: GridSpec,
    values: Vec<f64>,
}

impl SsimMap {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols() + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Normalize a pair of heatmaps onto one intensity scale [0, L], scaling
/// linearly by the pairwise maximum. An all-zero pair stays all-zero.
fn normalized_pair(a: &Heatmap, b: &Heatmap, p: &SsimParams) -> (Vec<f64>, Vec<f64>) {
    let transform = |c: u64| {
        if p.log_scale {
            (c as f64).ln_1p()
        } else {
            c as f64
        }
    };
    let va: Vec<f64> = a.counts().iter().map(|&c| transform(c)).collect();
    let vb: Vec<f64> = b.counts().iter().map(|&c| transform(c)).collect();
    let max = va
        .iter()
        .chain(vb.iter())
        .fold(0.0f64, |acc, &v| acc.max(v));
    if max == 0.0 {
        return (va, vb);
    }
    let scale = p.dynamic_range / max;
    (
        va.into_iter().map(|v| v * scale).collect(),
        vb.into_iter().map(|v| v * scale).collect(),
    )
}

fn check_pair(a: &Heatmap, b: &Heatmap, p: &SsimParams) -> Result<()> {
    p.validate()?;
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch);
    }
    let (rows, cols) = (a.spec().rows(), a.spec().cols());
    if p.window > rows || p.window > cols {
        return Err(Error::WindowTooLarge {
            window: p.window,
            rows,
            cols,
        });
    }
    Ok(())
}

/// The SSIM formula over one pair of windows:
/// (2 mu_a mu_b + c1)(2 cov + c2) / ((mu_a^2 + mu_b^2 + c1)(var_a + var_b + c2)).
fn window_ssim(
    va: &[f64],
    vb: &[f64],
    cols: usize,
    r_lo: usize,
    r_hi: usize,
    c_lo: usize,
    c_hi: usize,
    c1: f64,
    c2: f64,
) -> f64 {
    let n = ((r_hi - r_lo + 1) * (c_hi - c_lo + 1)) as f64;
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            sum_a += va[r * cols + c];
            sum_b += vb[r * cols + c];
        }
    }
    let mu_a = sum_a / n;
    let mu_b = sum_b / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let da = va[r * cols + c] - mu_a;
            let db = vb[r * cols + c] - mu_b;
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
        }
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    (num / den).clamp(-1.0, 1.0)
}

/// Local SSIM values between two heatmaps sharing one grid.
pub fn ssim_map(a: &Heatmap, b: &Heatmap, p: &SsimParams) -> Result<SsimMap> {
    check_pair(a, b, p)?;
    let (va, vb) = normalized_pair(a, b, p);
    let (rows, cols) = (a.spec().rows(), a.spec().cols());
    let (c1, c2) = (p.c1(), p.c2());
    let before = (p.window - 1) / 2;
    let after = p.window / 2;
    let mut values = vec![0.0; rows * cols];
    for r in 0..rows {
        let r_lo = r.saturating_sub(before);
        let r_hi = (r + after).min(rows - 1);
        for c in 0..cols {
            let c_lo = c.saturating_sub(before);
            let c_hi = (c + after).min(cols - 1);
            values[r * cols + c] = window_ssim(&va, &vb, cols, r_lo, r_hi, c_lo, c_hi, c1, c2);
        }
    }
    Ok(SsimMap {
        spec: a.spec().clone(),
        values,
    })
}

/// Mean of the local SSIM map.
pub fn ssim_global(a: &Heatmap, b: &Heatmap, p: &SsimParams) -> Result<f64> {
    Ok(ssim_map(a, b, p)?.mean())
}

/// SSIM of a user against the integrated cohort heatmap, averaged only over
/// the cells the cohort actually visited. Masking keeps the unreached area
/// from inflating the similarity.
pub fn effective_ssim(user: &Heatmap, integrated: &Heatmap, p: &SsimParams) -> Result<f64> {
    if integrated.max_count() == 0 {
        return Err(Error::EmptyIntegrated);
    }
    let map = ssim_map(user, integrated, p)?;
    let cols = integrated.spec().cols();
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..integrated.spec().rows() {
        for c in 0..cols {
            if integrated.count(r, c) > 0 {
                sum += map.get(r, c);
                n += 1;
            }
        }
    }
    Ok(sum / n as f64)
}

/// Full pairwise SSIM matrix over a cohort. The diagonal is exactly 1 and
/// every pair is normalized by its own maximum intensity.
pub fn pairwise_ssim(
    user_ids: &[String],
    maps: &[Heatmap],
    p: &SsimParams,
) -> Result<SimilarityMatrix> {
    if user_ids.len() != maps.len() {
        return Err(Error::Internal(
            "user id list does not match heatmap list".into(),
        ));
    }
    if maps.len() < 2 {
        return Err(Error::TooFewUsers {
            have: maps.len(),
            need: 2,
        });
    }
    let n = maps.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| Ok(((i, j), ssim_global(&maps[i], &maps[j], p)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = SimilarityMatrix::new(user_ids.to_vec());
    for ((i, j), v) in computed {
        matrix.set_symmetric(i, j, v);
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_heatmap(rng: &mut ChaCha8Rng, spec: &GridSpec, max: u64) -> Heatmap {
        let counts: Vec<u64> = (0..spec.cells()).map(|_| rng.random_range(0..=max)).collect();
        Heatmap::from_counts(spec.clone(), counts).unwrap()
    }

    /// Straight re-statement of the windowed formula, kept free of the
    /// implementation's helpers.
    fn oracle_map(a: &Heatmap, b: &Heatmap, p: &SsimParams) -> Vec<f64> {
        let rows = a.spec().rows();
        let cols = a.spec().cols();
        let to_f = |h: &Heatmap| -> Vec<f64> { h.counts().iter().map(|&c| c as f64).collect() };
        let mut va = to_f(a);
        let mut vb = to_f(b);
        let max = va.iter().chain(vb.iter()).cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            for v in va.iter_mut().chain(vb.iter_mut()) {
                *v *= p.dynamic_range / max;
            }
        }
        let c1 = (p.k1 * p.dynamic_range).powi(2);
        let c2 = (p.k2 * p.dynamic_range).powi(2);
        let before = (p.window - 1) / 2;
        let after = p.window / 2;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let r_lo = r.saturating_sub(before);
                let r_hi = (r + after).min(rows - 1);
                let c_lo = c.saturating_sub(before);
                let c_hi = (c + after).min(cols - 1);
                let mut win_a = Vec::new();
                let mut win_b = Vec::new();
                for rr in r_lo..=r_hi {
                    for cc in c_lo..=c_hi {
                        win_a.push(va[rr * cols + cc]);
                        win_b.push(vb[rr * cols + cc]);
                    }
                }
                let n = win_a.len() as f64;
                let mu_a: f64 = win_a.iter().sum::<f64>() / n;
                let mu_b: f64 = win_b.iter().sum::<f64>() / n;
                let var_a: f64 = win_a.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / n;
                let var_b: f64 = win_b.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / n;
                let cov: f64 = win_a
                    .iter()
                    .zip(&win_b)
                    .map(|(x, y)| (x - mu_a) * (y - mu_b))
                    .sum::<f64>()
                    / n;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                out[r * cols + c] = num / den;
            }
        }
        out
    }

    #[test]
    fn identity_map_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let h = random_heatmap(&mut rng, &spec, 9);
        let map = ssim_map(&h, &h, &SsimParams::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 1.0));
        assert_eq!(ssim_global(&h, &h, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn all_zero_pair_is_all_ones() {
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let z = Heatmap::from_counts(spec.clone(), vec![0; spec.cells()]).unwrap();
        let map = ssim_map(&z, &z, &SsimParams::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_pair_matches_bruteforce_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let p = SsimParams {
            window: 3,
            ..SsimParams::default()
        };
        let a = random_heatmap(&mut rng, &spec, 12);
        let b = random_heatmap(&mut rng, &spec, 12);
        let map = ssim_map(&a, &b, &p).unwrap();
        let oracle = oracle_map(&a, &b, &p);
        for (got, want) in map.values().iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
        let global = ssim_global(&a, &b, &p).unwrap();
        let oracle_mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
        assert!((global - oracle_mean).abs() <= 1e-9);
    }

    #[test]
    fn global_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = GridSpec::from_cells(10, 9, 100.0).unwrap();
        let p = SsimParams::default();
        let a = random_heatmap(&mut rng, &spec, 30);
        let b = random_heatmap(&mut rng, &spec, 30);
        let ab = ssim_global(&a, &b, &p).unwrap();
        let ba = ssim_global(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn window_larger_than_grid_is_rejected() {
        let spec = GridSpec::from_cells(4, 4, 100.0).unwrap();
        let h = Heatmap::from_counts(spec.clone(), vec![1; spec.cells()]).unwrap();
        let p = SsimParams {
            window: 5,
            ..SsimParams::default()
        };
        assert!(matches!(
            ssim_map(&h, &h, &p),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn effective_ssim_of_single_user_cohort_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let h = random_heatmap(&mut rng, &spec, 9);
        assert_eq!(effective_ssim(&h, &h, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn empty_user_against_bright_cohort_is_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let z = Heatmap::from_counts(spec.clone(), vec![0; spec.cells()]).unwrap();
        let mut bright = random_heatmap(&mut rng, &spec, 9);
        while bright.max_count() == 0 {
            bright = random_heatmap(&mut rng, &spec, 9);
        }
        let v = effective_ssim(&z, &bright, &SsimParams::default()).unwrap();
        assert!(v < 1.0);
        assert!(v >= -1.0);
    }

    #[test]
    fn effective_ssim_matches_masked_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let p = SsimParams::default();
        let users: Vec<Heatmap> = (0..3).map(|_| random_heatmap(&mut rng, &spec, 6)).collect();
        let integrated = crate::grid::integrate_heatmaps(&users).unwrap();
        for u in &users {
            let got = effective_ssim(u, &integrated, &p).unwrap();
            let oracle = oracle_map(u, &integrated, &p);
            let mut sum = 0.0;
            let mut n = 0;
            for r in 0..spec.rows() {
                for c in 0..spec.cols() {
                    if integrated.count(r, c) > 0 {
                        sum += oracle[r * spec.cols() + c];
                        n += 1;
                    }
                }
            }
            assert!((got - sum / n as f64).abs() <= 1e-9);
        }
    }

    #[test]
    fn effective_ssim_rejects_empty_integrated() {
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let z = Heatmap::from_counts(spec.clone(), vec![0; spec.cells()]).unwrap();
        assert!(matches!(
            effective_ssim(&z, &z, &SsimParams::default()),
            Err(Error::EmptyIntegrated)
        ));
    }

    #[test]
    fn pairwise_matrix_matches_direct_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let p = SsimParams::default();
        let maps: Vec<Heatmap> = (0..4).map(|_| random_heatmap(&mut rng, &spec, 9)).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        let m = pairwise_ssim(&ids, &maps, &p).unwrap();
        for i in 0..4 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..4 {
                assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-12);
                if i < j {
                    let direct = ssim_global(&maps[i], &maps[j], &p).unwrap();
                    assert_eq!(m.get(i, j), direct);
                }
            }
        }
    }

    #[test]
    fn duplicate_heatmaps_have_unit_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
        let h = random_heatmap(&mut rng, &spec, 9);
        let ids = vec!["a".to_string(), "b".to_string()];
        let m = pairwise_ssim(&ids, &[h.clone(), h], &SsimParams::default()).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn local_values_stay_bounded(seed in 0u64..500) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let spec = GridSpec::from_cells(8, 8, 100.0).unwrap();
                let a = random_heatmap(&mut rng, &spec, 40);
                let b = random_heatmap(&mut rng, &spec, 40);
                let map = ssim_map(&a, &b, &SsimParams::default()).unwrap();
                prop_assert!(map.values().iter().all(|v| (-1.0..=1.0).contains(v)));
                let g = ssim_global(&a, &b, &SsimParams::default()).unwrap();
                prop_assert!((-1.0..=1.0).contains(&g));
            }
        }
    }
}
