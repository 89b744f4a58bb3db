use crate::acoustic::{spreading, AcousticParams, Directivity};
use crate::error::{Error, Result};
use crate::geometry::{SystemPose, Vec3};

use super::grid::PolarGrid;

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    channel: usize,
    start: usize,
    taps: Vec<f64>,
}

/// Sparse column-wise representation of the operator `Φ` mapping grid
/// activations to the stacked M-channel response. Each column holds one
/// delayed kernel per microphone.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub grid: PolarGrid,
    pub pose: SystemPose,
    pub directivity: Directivity,
    pub params: AcousticParams,
    n_samples: usize,
    columns: Vec<Vec<Segment>>,
}

/// Builds `Φ`: column `(q, m′)` is the response of a unit image source at
/// grid point `(q, m′)`, with amplitude `gain(m′Δα) / d` and the same delay
/// kernel as the simulator.
pub fn build_dictionary(
    grid: &PolarGrid,
    pose: &SystemPose,
    directivity: &Directivity,
    params: &AcousticParams,
    n_samples: usize,
) -> Result<Dictionary> {
    pose.validate()?;
    params.validate()?;
    if grid.angular_count != pose.mic_count {
        return Err(Error::invalid(format!(
            "grid has {} azimuths but the array has {} microphones",
            grid.angular_count, pose.mic_count
        )));
    }
    let mics = pose.mic_positions();
    let mut columns = Vec::with_capacity(grid.len());
    for m_img in 0..grid.angular_count {
        let az = grid.azimuth(m_img);
        let gain = directivity.gain(az, pose.speaker_axis_angle);
        for q in 0..grid.radial_count {
            let r = grid.radius(q);
            let pos = Vec3::new(r * az.cos(), r * az.sin(), 0.0);
            let mut segs = Vec::with_capacity(mics.len());
            for (ch, mic) in mics.iter().enumerate() {
                let d = (pos - mic).norm();
                let k = params.kernel.taps(params.delay_samples(d), gain * spreading(d));
                if k.end() > n_samples as i64 {
                    return Err(Error::invalid(format!(
                        "grid point (q={q}, m={m_img}) at {r:.3} m needs {} samples on channel {ch}, N_h = {n_samples}",
                        k.end()
                    )));
                }
                let skip = (-k.start).max(0) as usize;
                segs.push(Segment {
                    channel: ch,
                    start: (k.start.max(0)) as usize,
                    taps: k.taps[skip..].to_vec(),
                });
            }
            columns.push(segs);
        }
    }
    Ok(Dictionary {
        grid: grid.clone(),
        pose: pose.clone(),
        directivity: *directivity,
        params: *params,
        n_samples,
        columns,
    })
}

impl Dictionary {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_rows(&self) -> usize {
        self.n_samples * self.pose.mic_count
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_dense(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for seg in &self.columns[j] {
            let base = seg.channel * self.n_samples + seg.start;
            out[base..base + seg.taps.len()].copy_from_slice(&seg.taps);
        }
        out
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        self.columns[j]
            .iter()
            .flat_map(|s| s.taps.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `Φ s`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.n_cols());
        let mut out = vec![0.0; self.n_rows()];
        for (col, &v) in self.columns.iter().zip(s) {
            if v == 0.0 {
                continue;
            }
            for seg in col {
                let base = seg.channel * self.n_samples + seg.start;
                for (o, t) in out[base..base + seg.taps.len()].iter_mut().zip(&seg.taps) {
                    *o += v * t;
                }
            }
        }
        out
    }

    /// `Φᵀ r`.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n_rows());
        self.columns
            .iter()
            .map(|col| {
                col.iter()
                    .map(|seg| {
                        let base = seg.channel * self.n_samples + seg.start;
                        r[base..base + seg.taps.len()]
                            .iter()
                            .zip(&seg.taps)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    /// Dense Gram matrix `ΦᵀΦ`, computed from overlapping column segments.
    pub fn gram(&self) -> Gram {
        let n = self.n_cols();
        let mut data = vec![0.0; n * n];
        let channels = self.pose.mic_count;
        // per channel: segments sorted by start for a sweep over overlaps
        for ch in 0..channels {
            let mut segs: Vec<(usize, &Segment)> =
                self.columns.iter().enumerate().map(|(j, col)| (j, &col[ch])).collect();
            segs.sort_by_key(|(j, s)| (s.start, *j));
            for a in 0..segs.len() {
                let (ja, sa) = segs[a];
                let end_a = sa.start + sa.taps.len();
                for &(jb, sb) in &segs[a..] {
                    if sb.start >= end_a {
                        break;
                    }
                    let lo = sb.start;
                    let hi = end_a.min(sb.start + sb.taps.len());
                    let dot: f64 = (lo..hi).map(|n| sa.taps[n - sa.start] * sb.taps[n - sb.start]).sum();
                    data[ja * n + jb] += dot;
                    if ja != jb {
                        data[jb * n + ja] += dot;
                    }
                }
            }
        }
        Gram::new(n, data)
    }
}

/// Runs of nonzeros, bridging gaps shorter than 16 entries.
fn nonzero_runs(row: &[f64]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in row.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        match runs.last_mut() {
            Some(last) if i - last.1 < 16 => last.1 = i + 1,
            _ => runs.push((i, i + 1)),
        }
    }
    runs
}

/// Symmetric positive semi-definite matrix `ΦᵀΦ` with its largest eigenvalue.
#[derive(Debug, Clone)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
    /// Per row, the `[start, end)` runs of nonzero entries.
    spans: Vec<Vec<(usize, usize)>>,
    max_eigenvalue: f64,
}

impl Gram {
    /// Wraps a row-major symmetric matrix and estimates its spectral norm.
    pub fn new(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "Gram matrix must be n x n");
        let spans = (0..n).map(|i| nonzero_runs(&data[i * n..(i + 1) * n])).collect();
        let mut g = Gram {
            n,
            data,
            spans,
            max_eigenvalue: 0.0,
        };
        g.max_eigenvalue = g.power_iteration();
        g
    }

    /// `AᵀA` for a dense row-major `rows × cols` matrix.
    pub fn from_dense(a: &[f64], rows: usize, cols: usize) -> Self {
        assert_eq!(a.len(), rows * cols);
        let mut data = vec![0.0; cols * cols];
        for r in 0..rows {
            let row = &a[r * cols..(r + 1) * cols];
            for i in 0..cols {
                if row[i] == 0.0 {
                    continue;
                }
                let ri = row[i];
                let out = &mut data[i * cols..(i + 1) * cols];
                for (o, &rj) in out.iter_mut().zip(row) {
                    *o += ri * rj;
                }
            }
        }
        Gram::new(cols, data)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// `G x`, skipping zero entries of `x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (j, &v) in x.iter().enumerate() {
            if v != 0.0 {
                let row = self.row(j);
                for &(a, b) in &self.spans[j] {
                    for (o, g) in out[a..b].iter_mut().zip(&row[a..b]) {
                        *o += v * g;
                    }
                }
            }
        }
        out
    }

    fn power_iteration(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        // deterministic start with all-positive entries
        let mut v: Vec<f64> = (0..self.n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = self.mul(&v);
            let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = w;
            if (next - lambda).abs() <= 1e-10 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        // upper-bound safety margin; backtracking in the solver absorbs the rest
        lambda * 1.01
    }
}
