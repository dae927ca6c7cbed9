//! Seeded Brownian increments for the truncated Q-Wiener process.
//!
//! Mode `j` of the lattice is drawn from its own ChaCha8 stream (stream id
//! `j`) keyed by the seed, so rows are independent of generation order and
//! can be produced in parallel.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::spectrum::SpectralModel;

/// Name recorded in every output that depends on random draws.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, stream per mode) + Ziggurat StandardNormal (rand_distr 0.5)";

/// Default cap on the number of stored matrix entries.
pub const DEFAULT_MAX_ENTRIES: usize = 10_000_000;

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of the `path_index`-th ensemble member.
pub fn path_seed(master_seed: u64, path_index: u64) -> u64 {
    master_seed ^ path_index.wrapping_mul(SEED_STRIDE)
}

/// Uniform grid `t_n = n·T/M`, `n = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        let grid = TimeGrid { t_final, n_steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::Validation(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.n_steps == 0 {
            return Err(Error::Validation("n_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|n| self.time(n))
    }

    /// Grid index closest to `t`.
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.t_final * (1.0 + 1e-12)) {
            return Err(Error::Argument(format!("time {t} outside [0, {}]", self.t_final)));
        }
        Ok(((t / self.dt()).round() as usize).min(self.n_steps))
    }
}

/// Matrix of increments `ΔB_{j,n} = B_j(t_{n+1}) − B_j(t_n)`, one row per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    seed: u64,
    grid: TimeGrid,
    increments: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeMetadata {
    pub seed: u64,
    pub generator: String,
    pub grid: TimeGrid,
    pub n_modes: usize,
}

impl BrownianLattice {
    pub fn generate(seed: u64, model: &SpectralModel, grid: TimeGrid) -> Result<Self> {
        Self::generate_modes(seed, model.n_modes(), grid, DEFAULT_MAX_ENTRIES)
    }

    /// Generate `n_modes` rows of increments, refusing lattices with more than
    /// `max_entries` stored values.
    pub fn generate_modes(seed: u64, n_modes: usize, grid: TimeGrid, max_entries: usize) -> Result<Self> {
        grid.validate()?;
        if n_modes == 0 {
            return Err(Error::Validation("lattice needs at least one mode".into()));
        }
        let entries = n_modes.saturating_mul(grid.n_steps + 1);
        if entries > max_entries {
            return Err(Error::Validation(format!(
                "{n_modes} modes x {} grid points = {entries} entries exceeds the cap of {max_entries}",
                grid.n_steps + 1
            )));
        }
        let sd = grid.dt().sqrt();
        let rows: Vec<Vec<f64>> = (0..n_modes)
            .into_par_iter()
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                (0..grid.n_steps)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sd * z
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let increments = Array2::from_shape_vec((n_modes, grid.n_steps), flat)
            .expect("row lengths match the grid");
        Ok(BrownianLattice { seed, grid, increments })
    }

    /// Build a lattice from given increments (rows are modes).
    pub fn from_increments(seed: u64, grid: TimeGrid, increments: Array2<f64>) -> Result<Self> {
        grid.validate()?;
        if increments.ncols() != grid.n_steps || increments.nrows() == 0 {
            return Err(Error::Shape(format!(
                "increment matrix is {}x{}, expected n_modes x {}",
                increments.nrows(),
                increments.ncols(),
                grid.n_steps
            )));
        }
        Ok(BrownianLattice { seed, grid, increments })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.increments.nrows()
    }

    pub fn increments(&self) -> &Array2<f64> {
        &self.increments
    }

    /// Increments of the 1-based mode `j`.
    pub fn mode(&self, j: usize) -> Result<ArrayView1<'_, f64>> {
        if j == 0 || j > self.n_modes() {
            return Err(Error::Index { what: "lattice mode", index: j, len: self.n_modes() });
        }
        Ok(self.increments.row(j - 1))
    }

    /// `B_j(t_n)` as the prefix sum of increments.
    pub fn path_value(&self, j: usize, n: usize) -> Result<f64> {
        let row = self.mode(j)?;
        if n > self.grid.n_steps {
            return Err(Error::Index { what: "grid step", index: n, len: self.grid.n_steps });
        }
        Ok(row.iter().take(n).sum())
    }

    pub fn metadata(&self) -> LatticeMetadata {
        LatticeMetadata {
            seed: self.seed,
            generator: RNG_ALGORITHM.to_string(),
            grid: self.grid,
            n_modes: self.n_modes(),
        }
    }

    /// CSV with header `mode,step,increment`; modes are 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mode,step,increment")?;
        for (j, row) in self.increments.rows().into_iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", j + 1, n, float17(*v))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{CovarianceLaw, SpectralModel};

    fn model(n: usize) -> SpectralModel {
        SpectralModel::dirichlet_laplacian(n, CovarianceLaw::PowerLaw { c0: 1.0, r: 0.0 }).unwrap()
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let a = BrownianLattice::generate(1, &model(4), grid).unwrap();
        let b = BrownianLattice::generate(1, &model(4), grid).unwrap();
        let c = BrownianLattice::generate(2, &model(4), grid).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn rows_do_not_depend_on_mode_count() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let small = BrownianLattice::generate(9, &model(2), grid).unwrap();
        let large = BrownianLattice::generate(9, &model(5), grid).unwrap();
        assert_eq!(small.mode(2).unwrap(), large.mode(2).unwrap());
    }

    #[test]
    fn pooled_variance_matches_dt() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let lat = BrownianLattice::generate(17, &model(1000), grid).unwrap();
        let n = lat.increments().len() as f64;
        let mean = lat.increments().sum() / n;
        let var = lat.increments().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-4, "mean {mean}");
        assert!((var / 0.001 - 1.0).abs() < 0.01, "pooled variance {var}");
    }

    #[test]
    fn halving_dt_halves_variance() {
        let pooled = |m: usize| {
            let lat = BrownianLattice::generate(5, &model(100), TimeGrid::new(1.0, m).unwrap()).unwrap();
            let n = lat.increments().len() as f64;
            let var = lat.increments().iter().map(|x| x * x).sum::<f64>() / n;
            (var, (2.0 / n).sqrt() * var)
        };
        let (v1, se1) = pooled(500);
        let (v2, se2) = pooled(1000);
        let ratio = v1 / v2;
        let se = ratio * ((se1 / v1).powi(2) + (se2 / v2).powi(2)).sqrt();
        assert!((ratio - 2.0).abs() < 3.0 * se, "ratio {ratio} +- {se}");
    }

    #[test]
    fn distinct_rows_are_uncorrelated() {
        let lat = BrownianLattice::generate(3, &model(2), TimeGrid::new(1.0, 10_000).unwrap()).unwrap();
        let a = lat.mode(1).unwrap();
        let b = lat.mode(2).unwrap();
        let corr = a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt();
        assert!(corr.abs() < 0.05, "corr {corr}");
    }

    #[test]
    fn path_values_are_prefix_sums() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let lat = BrownianLattice::from_increments(0, grid, ndarray::array![[0.1, -0.2]]).unwrap();
        assert_eq!(lat.path_value(1, 0).unwrap(), 0.0);
        assert!((lat.path_value(1, 2).unwrap() + 0.1).abs() < 1e-15);
        assert!(lat.path_value(1, 3).is_err());
        assert!(lat.path_value(2, 0).is_err());

        let lat = BrownianLattice::generate(11, &model(3), TimeGrid::new(2.0, 300).unwrap()).unwrap();
        for j in 1..=3 {
            let mut total = 0.0;
            for v in lat.mode(j).unwrap() {
                total += v;
            }
            assert_eq!(lat.path_value(j, 300).unwrap(), total);
        }
    }

    #[test]
    fn grid_validation_and_cap() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let grid = TimeGrid::new(1.0, 99).unwrap();
        assert!(BrownianLattice::generate_modes(0, 10, grid, 999).is_err());
        assert!(BrownianLattice::generate_modes(0, 10, grid, 1000).is_ok());
    }

    #[test]
    fn per_path_seeds() {
        assert_eq!(path_seed(42, 0), 42);
        assert_eq!(path_seed(42, 1), 42 ^ 0x9E37_79B9_7F4A_7C15);
        assert_ne!(path_seed(42, 2), path_seed(42, 3));
    }

    #[test]
    fn csv_dump() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let lat = BrownianLattice::from_increments(0, grid, ndarray::array![[0.5, -0.25]]).unwrap();
        let mut buf = Vec::new();
        lat.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "mode,step,increment");
        assert_eq!(lines.len(), 3);
        let v: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, -0.25);
    }
}
