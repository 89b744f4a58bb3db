use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

/// Candidate image-source positions on a polar grid: `T` radii
/// `R(q) = R_a + q·ΔR` with `ΔR = v_c / f_s`, times `M` azimuths `m·2π/M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub radial_count: usize,
    pub angular_count: usize,
    pub array_radius: f64,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
}

impl PolarGrid {
    pub fn new(
        radial_count: usize,
        angular_count: usize,
        array_radius: f64,
        sample_rate: f64,
        speed_of_sound: f64,
    ) -> Result<Self> {
        if radial_count == 0 || angular_count < 3 {
            return Err(Error::invalid(format!(
                "grid needs T >= 1 and M >= 3, got T={radial_count} M={angular_count}"
            )));
        }
        if !(array_radius > 0.0 && sample_rate > 0.0 && speed_of_sound > 0.0) {
            return Err(Error::invalid("grid needs positive R_a, f_s and v_c"));
        }
        Ok(PolarGrid {
            radial_count,
            angular_count,
            array_radius,
            sample_rate,
            speed_of_sound,
        })
    }

    pub fn len(&self) -> usize {
        self.radial_count * self.angular_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radial_step(&self) -> f64 {
        self.speed_of_sound / self.sample_rate
    }

    pub fn angular_step(&self) -> f64 {
        TAU / self.angular_count as f64
    }

    pub fn r_min(&self) -> f64 {
        self.array_radius
    }

    pub fn r_max(&self) -> f64 {
        self.radial_count as f64 * self.radial_step() + self.array_radius
    }

    pub fn radius(&self, q: usize) -> f64 {
        self.array_radius + q as f64 * self.radial_step()
    }

    pub fn azimuth(&self, m: usize) -> f64 {
        m as f64 * self.angular_step()
    }

    /// Flat index of cell `(q, m)`: channel blocks of length `T`.
    pub fn index(&self, q: usize, m: usize) -> usize {
        m * self.radial_count + q
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index % self.radial_count, index / self.radial_count)
    }

    /// Continuous radial coordinate of distance `r`.
    pub fn radial_coord(&self, r: f64) -> f64 {
        (r - self.array_radius) / self.radial_step()
    }

    /// Nearest grid cell to an image source at `(r, azimuth)`, if `r` lies on
    /// the grid's radial span.
    pub fn nearest_cell(&self, r: f64, azimuth: f64) -> Option<(usize, usize)> {
        let q = self.radial_coord(r).round();
        if !(q >= 0.0 && q < self.radial_count as f64) {
            return None;
        }
        let m = (wrap_angle(azimuth) / self.angular_step()).round() as usize % self.angular_count;
        Some((q as usize, m))
    }

    /// Circular distance between two angular indices.
    pub fn angular_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b) % self.angular_count;
        d.min(self.angular_count - d)
    }
}

/// Solution vector `s` on a grid, stacked as `[s⁽⁰⁾; …; s⁽ᴹ⁻¹⁾]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSourceMap {
    pub values: Vec<f64>,
    pub grid: PolarGrid,
}

impl ImageSourceMap {
    pub fn new(values: Vec<f64>, grid: PolarGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "image-source map has {} entries, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image-source map contains non-finite values"));
        }
        Ok(ImageSourceMap { values, grid })
    }

    pub fn get(&self, q: usize, m: usize) -> f64 {
        self.values[self.grid.index(q, m)]
    }

    /// Cell of the largest entry.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| self.grid.cell(i))
    }
}
