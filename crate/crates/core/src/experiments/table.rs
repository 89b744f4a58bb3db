//! Result rows, CSV round trip and hit-rate aggregation. The CSV schema is
//! documented in `docs/csv.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Row {
    pub config_hash: String,
    pub method: String,
    pub floor_depth: f64,
    pub run: usize,
    pub detected_r: Option<f64>,
    pub detected_azimuth_deg: Option<f64>,
    pub normal_mse: f64,
    pub mse_missing: bool,
    pub n_detections: usize,
    pub floor_points: usize,
    pub horizontal_used: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Row {
    pub config_hash: String,
    pub method: String,
    pub angle_deg: f64,
    pub snr_db: f64,
    pub run: usize,
    pub hit: u8,
    pub radial_err_cells: Option<i64>,
    pub angular_err_cells: Option<usize>,
    pub n_detections: usize,
    pub priors_used: usize,
    pub mu: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3Row {
    pub config_hash: String,
    pub method: String,
    pub angle_deg: f64,
    pub snr_db: f64,
    pub run: usize,
    pub wall_hit: u8,
    pub window_hit: u8,
    pub wall_radial_err_cells: Option<i64>,
    pub wall_angular_err_cells: Option<usize>,
    pub window_radial_err_cells: Option<i64>,
    pub window_angular_err_cells: Option<usize>,
    pub n_detections: usize,
    pub priors_used: usize,
    pub mu: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Wall,
    Window,
}

impl Surface {
    pub fn name(self) -> &'static str {
        match self {
            Surface::Wall => "wall",
            Surface::Window => "window",
        }
    }
}

/// Mean hit rate of one `(method, surface, angle, SNR)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitCell {
    pub method: String,
    pub surface: Surface,
    pub angle_deg: f64,
    pub snr_db: f64,
    pub hitrate: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResultsTable {
    Exp1(Vec<Exp1Row>),
    Exp2(Vec<Exp2Row>),
    Exp3(Vec<Exp3Row>),
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn from_csv<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

impl ResultsTable {
    /// `"exp1"`, `"exp2"` or `"exp3"`.
    pub fn kind(&self) -> &'static str {
        match self {
            ResultsTable::Exp1(_) => "exp1",
            ResultsTable::Exp2(_) => "exp2",
            ResultsTable::Exp3(_) => "exp3",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ResultsTable::Exp1(r) => r.len(),
            ResultsTable::Exp2(r) => r.len(),
            ResultsTable::Exp3(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_csv_string(&self) -> Result<String> {
        match self {
            ResultsTable::Exp1(r) => to_csv(r),
            ResultsTable::Exp2(r) => to_csv(r),
            ResultsTable::Exp3(r) => to_csv(r),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    /// Parses a table of the given kind; `path` is only used in errors.
    pub fn from_csv_str(kind: &str, text: &str, path: &Path) -> Result<Self> {
        Ok(match kind {
            "exp1" => ResultsTable::Exp1(from_csv(text, path)?),
            "exp2" => ResultsTable::Exp2(from_csv(text, path)?),
            "exp3" => ResultsTable::Exp3(from_csv(text, path)?),
            other => return Err(Error::invalid(format!("unknown table kind {other:?}"))),
        })
    }

    /// Reads a CSV, taking the kind from the file name prefix.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let kind = ["exp1", "exp2", "exp3"]
            .into_iter()
            .find(|k| name.starts_with(k))
            .ok_or_else(|| Error::invalid(format!("cannot tell experiment from file name {name:?}")))?;
        Self::from_csv_str(kind, &text, path)
    }

    /// Mean hit rates, sorted by method, surface, angle and SNR. Empty for
    /// the floor sweep.
    pub fn hit_summary(&self) -> Vec<HitCell> {
        let mut acc: Vec<(String, Surface, f64, f64, u64, usize)> = Vec::new();
        let mut add = |method: &str, surface: Surface, angle: f64, snr: f64, hit: u8| {
            let slot = acc.iter_mut().find(|c| {
                c.0 == method && c.1 == surface && c.2.to_bits() == angle.to_bits() && c.3.to_bits() == snr.to_bits()
            });
            match slot {
                Some(c) => {
                    c.4 += hit as u64;
                    c.5 += 1;
                }
                None => acc.push((method.to_string(), surface, angle, snr, hit as u64, 1)),
            }
        };
        match self {
            ResultsTable::Exp1(_) => {}
            ResultsTable::Exp2(rows) => {
                for r in rows {
                    add(&r.method, Surface::Wall, r.angle_deg, r.snr_db, r.hit);
                }
            }
            ResultsTable::Exp3(rows) => {
                for r in rows {
                    add(&r.method, Surface::Wall, r.angle_deg, r.snr_db, r.wall_hit);
                    add(&r.method, Surface::Window, r.angle_deg, r.snr_db, r.window_hit);
                }
            }
        }
        let mut cells: Vec<HitCell> = acc
            .into_iter()
            .map(|(method, surface, angle_deg, snr_db, hits, runs)| HitCell {
                method,
                surface,
                angle_deg,
                snr_db,
                hitrate: hits as f64 / runs as f64,
                runs,
            })
            .collect();
        cells.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.surface.cmp(&b.surface))
                .then(a.angle_deg.total_cmp(&b.angle_deg))
                .then(a.snr_db.total_cmp(&b.snr_db))
        });
        cells
    }

    /// Mean hit rate of one cell, if present.
    pub fn hitrate_at(&self, method: &str, surface: Surface, angle_deg: f64, snr_db: f64) -> Option<f64> {
        self.hit_summary()
            .into_iter()
            .find(|c| c.method == method && c.surface == surface && c.angle_deg == angle_deg && c.snr_db == snr_db)
            .map(|c| c.hitrate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, angle: f64, snr: f64, run: usize, hit: u8) -> Exp2Row {
        Exp2Row {
            config_hash: "abc".into(),
            method: method.into(),
            angle_deg: angle,
            snr_db: snr,
            run,
            hit,
            radial_err_cells: if hit == 1 { Some(-1) } else { None },
            angular_err_cells: Some(0),
            n_detections: 1,
            priors_used: 0,
            mu: 0.1 + run as f64 / 3.0,
            converged: true,
            iterations: 10,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = ResultsTable::Exp2(vec![
            row("baseline", 0.0, f64::INFINITY, 0, 1),
            row("baseline", 0.0, -9.0, 1, 0),
            row("proposed", 30.0, 2.5, 2, 1),
        ]);
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("config_hash,method,angle_deg,snr_db,run,hit,"));
        let back = ResultsTable::from_csv_str("exp2", &text, Path::new("x.csv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string().unwrap(), text);
    }

    #[test]
    fn summary_means() {
        let t = ResultsTable::Exp2(vec![
            row("baseline", 0.0, 0.0, 0, 1),
            row("baseline", 0.0, 0.0, 1, 0),
            row("baseline", 0.0, 0.0, 2, 1),
            row("baseline", 0.0, 0.0, 3, 1),
            row("proposed", 0.0, 0.0, 0, 1),
        ]);
        assert_eq!(t.hitrate_at("baseline", Surface::Wall, 0.0, 0.0), Some(0.75));
        assert_eq!(t.hitrate_at("proposed", Surface::Wall, 0.0, 0.0), Some(1.0));
        assert_eq!(t.hitrate_at("proposed", Surface::Window, 0.0, 0.0), None);
        assert_eq!(t.hit_summary().len(), 2);
    }

    #[test]
    fn bad_csv_reports_line() {
        let err = ResultsTable::from_csv_str("exp2", "config_hash,method\nx,y\n", Path::new("t.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
