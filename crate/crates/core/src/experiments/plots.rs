//! Static SVG line charts for the experiment tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::table::{ResultsTable, Surface};
use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    y_range: Option<(f64, f64)>,
    series: Vec<Series>,
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

impl Chart {
    fn render(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
        let pw = w - left - right;
        let ph = h - top - bottom;
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !(x1 > x0) {
            x0 -= 1.0;
            x1 += 1.0;
        }
        let (y0, y1) = self.y_range.unwrap_or_else(|| {
            let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
            let (a, b) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
            let a = a.min(0.0);
            if b > a {
                (a, b * 1.05)
            } else {
                (a, a + 1.0)
            }
        });
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            left + pw / 2.0,
            self.title
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=5 {
            let fx = x0 + (x1 - x0) * i as f64 / 5.0;
            let fy = y0 + (y1 - y0) * i as f64 / 5.0;
            let (px, py) = (sx(fx), sy(fy));
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{}" stroke="#ddd"/>"##,
                top + ph
            );
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/>"##,
                left + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                top + ph + 16.0,
                fmt_num(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                left - 6.0,
                py + 4.0,
                fmt_num(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            h - 18.0,
            self.x_label
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            top + ph / 2.0,
            self.y_label
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if series.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                pts.join(" ")
            );
            for &(x, y) in &series.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(x),
                    sy(y)
                );
            }
            let ly = top + 14.0 + 18.0 * i as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
                lx + 24.0
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, series.label);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn snr_label(snr: f64) -> String {
    if snr == f64::INFINITY {
        "SNR inf".to_string()
    } else {
        format!("SNR {} dB", fmt_num(snr))
    }
}

fn hit_chart(table: &ResultsTable, method: &str, surface: Surface, title: String) -> Chart {
    let cells: Vec<_> = table
        .hit_summary()
        .into_iter()
        .filter(|c| c.method == method && c.surface == surface)
        .collect();
    let mut snrs: Vec<f64> = cells.iter().map(|c| c.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let series = snrs
        .iter()
        .map(|&snr| Series {
            label: snr_label(snr),
            points: cells
                .iter()
                .filter(|c| c.snr_db == snr)
                .map(|c| (c.angle_deg, c.hitrate))
                .collect(),
            dashed: false,
        })
        .collect();
    Chart {
        title,
        x_label: "wall angle [deg]".into(),
        y_label: format!("{} hitrate", surface.name()),
        y_range: Some((0.0, 1.0)),
        series,
    }
}

/// Renders the figure files for `table` as `(file name, contents)`, CSV
/// first.
pub fn render_files(table: &ResultsTable) -> Result<Vec<(String, String)>> {
    if table.is_empty() {
        return Err(Error::invalid("cannot plot an empty results table"));
    }
    let kind = table.kind();
    let mut files = vec![(format!("{kind}.csv"), table.to_csv_string()?)];
    match table {
        ResultsTable::Exp1(rows) => {
            let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
            methods.sort_unstable();
            methods.dedup();
            let series = |f: &dyn Fn(&super::Exp1Row) -> Option<f64>| -> Vec<Series> {
                methods
                    .iter()
                    .map(|&m| {
                        let mut points: Vec<(f64, f64)> = rows
                            .iter()
                            .filter(|r| r.method == m)
                            .filter_map(|r| f(r).map(|y| (r.floor_depth, y)))
                            .collect();
                        points.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series {
                            label: m.to_string(),
                            points,
                            dashed: false,
                        }
                    })
                    .collect()
            };
            let distance = Chart {
                title: "Detected image-source distance".into(),
                x_label: "floor distance d_f [m]".into(),
                y_label: "detected R [m]".into(),
                y_range: None,
                series: series(&|r| r.detected_r),
            };
            let mse = Chart {
                title: "Normal vector MSE".into(),
                x_label: "floor distance d_f [m]".into(),
                y_label: "MSE".into(),
                y_range: None,
                series: series(&|r| Some(r.normal_mse)),
            };
            files.push(("exp1_distance.svg".into(), distance.render()));
            files.push(("exp1_mse.svg".into(), mse.render()));
        }
        ResultsTable::Exp2(_) => {
            for m in ["baseline", "proposed"] {
                let c = hit_chart(table, m, Surface::Wall, format!("Wall hitrate, {m}"));
                files.push((format!("exp2_{m}.svg"), c.render()));
            }
        }
        ResultsTable::Exp3(_) => {
            for m in ["baseline", "proposed"] {
                for s in [Surface::Wall, Surface::Window] {
                    let c = hit_chart(table, m, s, format!("{} hitrate, {m}", s.name()));
                    files.push((format!("exp3_{m}_{}.svg", s.name()), c.render()));
                }
            }
        }
    }
    Ok(files)
}

/// Writes the CSV and SVG files for `table` into `out_dir`. On any I/O
/// failure the files written so far are removed.
pub fn emit_plots(table: &ResultsTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = render_files(table)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, PathBuf)], done: usize| {
        for (i, (tmp, fin)) in staged.iter().enumerate() {
            let _ = std::fs::remove_file(tmp);
            if i < done {
                let _ = std::fs::remove_file(fin);
            }
        }
    };
    for (name, body) in &files {
        let fin = out_dir.join(name);
        let tmp = out_dir.join(format!(".{name}.tmp"));
        if let Err(e) = std::fs::write(&tmp, body) {
            staged.push((tmp.clone(), fin));
            cleanup(&staged, 0);
            return Err(Error::io(tmp, e));
        }
        staged.push((tmp, fin));
    }
    for i in 0..staged.len() {
        let (tmp, fin) = &staged[i];
        if let Err(e) = std::fs::rename(tmp, fin) {
            let path = fin.clone();
            cleanup(&staged, i);
            return Err(Error::io(path, e));
        }
    }
    Ok(staged.into_iter().map(|(_, f)| f).collect())
}
