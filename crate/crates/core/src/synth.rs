//! Seeded synthetic cohorts for demos and verification.
//!
//! Random-walk trajectories around a shared base point, plus randomized
//! outcome tables, give the audit pipeline something realistic to chew on
//! without touching restricted datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::METERS_PER_DEGREE;
use crate::ingest::{GeoPoint, OutcomeTable, Trajectory, ORIGINAL_SOURCE};

/// Random-walk cohort: `n_users` walkers starting at a common base point,
/// stepping `step_m` meters (uniform per axis) every `step_s` seconds.
pub fn random_walk_cohort(
    n_users: usize,
    n_steps: usize,
    step_m: f64,
    step_s: f64,
    seed: u64,
) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_lat: f64 = 46.52;
    let base_lon: f64 = 6.63;
    let lat_per_m = 1.0 / METERS_PER_DEGREE;
    let lon_per_m = 1.0 / (METERS_PER_DEGREE * base_lat.to_radians().cos());
    (0..n_users)
        .map(|u| {
            let mut lat = base_lat;
            let mut lon = base_lon;
            let points = (0..=n_steps)
                .map(|i| {
                    if i > 0 {
                        lat += rng.random_range(-step_m..step_m) * lat_per_m;
                        lon += rng.random_range(-step_m..step_m) * lon_per_m;
                    }
                    GeoPoint {
                        lat,
                        lon,
                        timestamp: i as f64 * step_s,
                    }
                })
                .collect();
            Trajectory::new(format!("user{u:03}"), points).expect("non-empty walk")
        })
        .collect()
}

/// Uniform-random outcome table covering the original tasks plus the given
/// model sources, for every listed user.
pub fn random_outcomes(users: &[String], models: &[&str], seed: u64) -> OutcomeTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = OutcomeTable::new();
    for user in users {
        for column in OutcomeTable::columns_for(ORIGINAL_SOURCE) {
            table
                .insert(user, ORIGINAL_SOURCE, column, rng.random::<f64>())
                .expect("fresh cell");
        }
        for model in models {
            for column in OutcomeTable::columns_for(model) {
                table
                    .insert(user, *model, column, rng.random::<f64>())
                    .expect("fresh cell");
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_is_deterministic_and_well_formed() {
        let a = random_walk_cohort(5, 50, 40.0, 60.0, 9);
        let b = random_walk_cohort(5, 50, 40.0, 60.0, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for t in &a {
            assert_eq!(t.len(), 51);
        }
    }

    #[test]
    fn outcomes_cover_all_cells() {
        let users: Vec<String> = (0..4).map(|i| format!("user{i:03}")).collect();
        let table = random_outcomes(&users, &["mo-pae", "trajgan"], 3);
        assert_eq!(table.len(), 4 * 6);
        assert_eq!(table.audited_cells().len(), 6);
    }
}
