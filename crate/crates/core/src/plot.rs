//! Static SVG plots and the CSV tables behind them.
//!
//! Written by hand: the figures are a few polylines and a heatmap.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::grid::SpaceTimeField;
use crate::solver::SolveReport;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs()) * 1e-3;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

/// Line plot; with `log_y` the values are plotted as `log10` and non-positive
/// points are dropped.
pub fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let keep = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0);
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| tf(p.1))));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (tf(y) - y0) / (y1 - y0) * ph;

    let mut s = header(title);
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let px = LEFT + pw * k as f64 / 4.0;
        let py = TOP + ph - ph * k as f64 / 4.0;
        let ylab = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.4}") };
        let _ = writeln!(
            s,
            r#"<text x="{px}" y="{}" text-anchor="middle">{fx:.3}</text><text x="{}" y="{}" text-anchor="end">{ylab}</text>"#,
            TOP + ph + 16.0,
            LEFT - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(keep)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT - 140.0,
            W - RIGHT - 115.0,
            W - RIGHT - 110.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn color_ramp(v: f64) -> String {
    // blue -> white -> red
    let v = v.clamp(0.0, 1.0);
    let (r, g, b) = if v < 0.5 {
        let a = v / 0.5;
        (40.0 + 215.0 * a, 90.0 + 165.0 * a, 200.0 + 55.0 * a)
    } else {
        let a = (v - 0.5) / 0.5;
        (255.0, 255.0 - 175.0 * a, 255.0 - 195.0 * a)
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

/// Heatmap of `values[row * cols + col]`, row 0 at the bottom.
pub fn heatmap_svg(title: &str, xlabel: &str, ylabel: &str, cols: usize, rows: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), cols * rows);
    let (lo, hi) = range(values.iter().copied());
    let pw = W - LEFT - RIGHT - 60.0;
    let ph = H - TOP - BOTTOM;
    let cw = pw / cols as f64;
    let ch = ph / rows as f64;
    let mut s = header(title);
    for r in 0..rows {
        for c in 0..cols {
            let v = (values[r * cols + c] - lo) / (hi - lo);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                LEFT + c as f64 * cw,
                TOP + ph - (r + 1) as f64 * ch,
                cw + 0.3,
                ch + 0.3,
                color_ramp(v)
            );
        }
    }
    let bx = LEFT + pw + 20.0;
    for k in 0..20 {
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            TOP + ph - (k + 1) as f64 * ph / 20.0,
            ph / 20.0 + 0.3,
            color_ramp((k as f64 + 0.5) / 20.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">{hi:.4}</text><text x="{}" y="{}">{lo:.4}</text>"#,
        bx - 10.0,
        TOP - 4.0,
        bx - 10.0,
        TOP + ph + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(ylabel)
    );
    s.push_str("</svg>\n");
    s
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

/// Which files [`write_plots`] produces.
#[derive(Clone, Copy, Debug)]
pub struct PlotFormats {
    pub csv: bool,
    pub svg: bool,
}

/// Writes endpoint slices of `u` and `m`, space-time heatmaps and the Newton
/// / viscosity convergence history into `dir`. Returns the written paths.
pub fn write_plots(dir: &Path, report: &SolveReport, formats: PlotFormats) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let save_svg = |name: &str, body: String, out: &mut Vec<PathBuf>| -> io::Result<()> {
        if formats.svg {
            let p = dir.join(name);
            fs::write(&p, body)?;
            out.push(p);
        }
        Ok(())
    };
    let u = &report.u;
    let grid = u.grid;
    let last = grid.nt;
    let fields: Vec<(&str, &SpaceTimeField)> = match &report.m {
        Some(m) => vec![("u", u), ("m", m)],
        None => vec![("u", u)],
    };

    // endpoint slices
    if formats.csv {
        let p = dir.join("slices.csv");
        let mut header: Vec<String> = (0..grid.dim).map(|k| if grid.dim == 1 { "x".into() } else { format!("x{}", k + 1) }).collect();
        for (name, _) in &fields {
            header.push(format!("{name}_t0"));
            header.push(format!("{name}_tT"));
        }
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            &p,
            &refs,
            (0..grid.spatial_count()).map(|i| {
                let mut row = grid.x(i);
                for (_, f) in &fields {
                    row.push(f.at(i, 0));
                    row.push(f.at(i, last));
                }
                row
            }),
        )?;
        out.push(p);
    }
    for (name, f) in &fields {
        if grid.dim == 1 {
            let slice = |j: usize| (0..grid.nx).map(|i| (grid.x(i)[0], f.at(i, j))).collect::<Vec<_>>();
            let series = [
                Series {
                    label: format!("{name}(x, 0)"),
                    points: slice(0),
                },
                Series {
                    label: format!("{name}(x, T)"),
                    points: slice(last),
                },
            ];
            save_svg(&format!("{name}_slices.svg"), line_svg(&format!("{name} at t = 0 and t = T"), "x", name, &series, false), &mut out)?;
            // space-time picture: rows are time levels
            save_svg(
                &format!("{name}_spacetime.svg"),
                heatmap_svg(&format!("{name}(x, t)"), "x", "t", grid.nx, grid.nt + 1, &f.values),
                &mut out,
            )?;
        } else {
            for (j, tag) in [(0, "t0"), (last, "tT")] {
                let vals = f.slice(j).to_vec();
                save_svg(
                    &format!("{name}_{tag}.svg"),
                    heatmap_svg(&format!("{name} at {}", if j == 0 { "t = 0" } else { "t = T" }), "x1", "x2", grid.nx, grid.nx, &transpose(&vals, grid.nx)),
                    &mut out,
                )?;
            }
        }
    }

    // Newton history: residual after each iteration, solves concatenated
    let mut hist = Vec::new();
    let mut k = 0usize;
    for (solve, entry) in report.path.iter().enumerate() {
        for r in &entry.residual_history {
            hist.push((k as f64, *r, solve as f64, entry.theta, entry.epsilon));
            k += 1;
        }
    }
    if formats.csv {
        let p = dir.join("newton_history.csv");
        write_csv(
            &p,
            &["step", "residual_sup", "solve", "theta", "epsilon"],
            hist.iter().map(|h| vec![h.0, h.1, h.2, h.3, h.4]),
        )?;
        out.push(p);
    }
    save_svg(
        "newton_history.svg",
        line_svg(
            "Newton residual along the continuation path",
            "cumulative Newton step",
            "sup |F|",
            &[Series {
                label: "sup |F|".into(),
                points: hist.iter().map(|h| (h.0, h.1)).collect(),
            }],
            true,
        ),
        &mut out,
    )?;

    if !report.stages.is_empty() {
        let rows: Vec<(f64, f64)> = report
            .stages
            .iter()
            .map(|s| (s.epsilon, s.cauchy_increment.unwrap_or(f64::NAN)))
            .collect();
        if formats.csv {
            let p = dir.join("epsilon_history.csv");
            write_csv(&p, &["epsilon", "cauchy_increment"], rows.iter().map(|r| vec![r.0, r.1]))?;
            out.push(p);
        }
        save_svg(
            "epsilon_history.svg",
            line_svg(
                "Viscosity sequence",
                "stage",
                "||m_k - m_(k-1)|| (L2)",
                &[Series {
                    label: "Cauchy increment".into(),
                    points: rows.iter().enumerate().map(|(k, r)| (k as f64, r.1)).collect(),
                }],
                true,
            ),
            &mut out,
        )?;
    }
    Ok(out)
}

// spatial slices are stored with i = i1 * nx + i2; the heatmap wants rows of x2
fn transpose(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i1 in 0..n {
        for i2 in 0..n {
            out[i2 * n + i1] = v[i1 * n + i2];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let s = line_svg(
            "a < b",
            "x",
            "y",
            &[Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)],
            }],
            false,
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn log_plot_drops_nonpositive_points() {
        let s = line_svg(
            "t",
            "x",
            "y",
            &[Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 1e-3)],
            }],
            true,
        );
        let poly = s.lines().find(|l| l.contains("<polyline")).unwrap();
        assert_eq!(poly.matches(',').count(), 2);
    }

    #[test]
    fn heatmap_has_one_cell_per_value() {
        let s = heatmap_svg("h", "x", "t", 3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // 6 cells + 20 legend boxes + background
        assert_eq!(s.matches("<rect").count(), 27);
    }
}
