use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{unwritable, HarnessError, MetricsReport};

pub const CSV_FILE: &str = "results.csv";

/// Figure files written next to the CSV.
pub const SVG_FILES: [&str; 3] = ["params_vs_metrics.svg", "validity_vs_uniqueness.svg", "training_times.svg"];

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 70.0;

pub fn write_csv(path: &Path, reports: &[MetricsReport]) -> Result<(), HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::NoReports);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| unwritable(path, e))?;
    for r in reports {
        w.serialize(r).map_err(|e| unwritable(path, e))?;
    }
    w.flush().map_err(|e| unwritable(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsReport>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<MetricsReport>, _>>()
        .map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Writes `results.csv` and the three figures into `dir`; returns the paths.
pub fn write_report(dir: &Path, reports: &[MetricsReport]) -> Result<Vec<PathBuf>, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::NoReports);
    }
    std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let csv_path = dir.join(CSV_FILE);
    write_csv(&csv_path, reports)?;
    let mut out = vec![csv_path];
    for (name, svg) in SVG_FILES.iter().zip(render_svgs(reports)) {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(|e| unwritable(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

/// Parameter count against the three percentages, validity against
/// uniqueness, and autoencoder against flow training time.
pub fn render_svgs(reports: &[MetricsReport]) -> [String; 3] {
    let label = |r: &MetricsReport| format!("{} (z={})", r.experiment, r.latent_z);
    let metrics = Plot {
        title: "Trainable parameters against valid, unique and novel molecules",
        x_label: "Number of trainable parameters",
        y_label: "Percentage of molecules (%)",
        series: &["valid", "unique", "novel"],
        x_range: None,
        y_range: Some((0.0, 100.0)),
        markers: reports
            .iter()
            .map(|r| Marker {
                label: label(r),
                x: r.params as f64,
                ys: vec![r.validity, r.uniqueness, r.novelty],
            })
            .collect(),
    };
    let vu = Plot {
        title: "Validity against uniqueness",
        x_label: "Validity (%)",
        y_label: "Uniqueness (%)",
        series: &["experiment"],
        x_range: Some((0.0, 100.0)),
        y_range: Some((0.0, 100.0)),
        markers: reports
            .iter()
            .map(|r| Marker {
                label: label(r),
                x: r.validity,
                ys: vec![r.uniqueness],
            })
            .collect(),
    };
    let times = Plot {
        title: "Autoencoder against diffusion model training time",
        x_label: "Autoencoder training time (s)",
        y_label: "Diffusion model training time (s)",
        series: &["experiment"],
        x_range: None,
        y_range: None,
        markers: reports
            .iter()
            .map(|r| Marker {
                label: label(r),
                x: r.ae_seconds,
                ys: vec![r.flow_seconds],
            })
            .collect(),
    };
    [metrics.render(), vu.render(), times.render()]
}

struct Marker {
    label: String,
    x: f64,
    ys: Vec<f64>,
}

struct Plot<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    series: &'a [&'a str],
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    markers: Vec<Marker>,
}

const COLOURS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Data range padded by 5%, or a unit interval around a single value.
fn auto_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0_f64.max(lo.abs() * 0.1), hi + 1.0_f64.max(hi.abs() * 0.1));
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1e4 || v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

impl Plot<'_> {
    fn render(&self) -> String {
        let (x0, x1) = self.x_range.unwrap_or_else(|| auto_range(self.markers.iter().map(|m| m.x)));
        let (y0, y1) = self.y_range.unwrap_or_else(|| auto_range(self.markers.iter().flat_map(|m| m.ys.iter().copied())));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="30" font-size="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=5 {
            let f = k as f64 / 5.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/><text x="{0:.2}" y="{3}" font-size="12" text-anchor="middle">{4}</text>"#,
                px(xv),
                TOP + ph,
                TOP + ph + 6.0,
                TOP + ph + 22.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{2:.2}" x2="{1}" y2="{2:.2}" stroke="black"/><text x="{3}" y="{4:.2}" font-size="12" text-anchor="end">{5}</text>"#,
                LEFT - 6.0,
                LEFT,
                py(yv),
                LEFT - 10.0,
                py(yv) + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 20.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="24" y="{0}" font-size="14" text-anchor="middle" transform="rotate(-90 24 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(self.y_label)
        );
        if self.series.len() > 1 {
            for (k, name) in self.series.iter().enumerate() {
                let y = TOP + 20.0 + 20.0 * k as f64;
                let x = WIDTH - RIGHT + 20.0;
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}" font-size="12">{}</text>"#,
                    COLOURS[k % COLOURS.len()],
                    x + 10.0,
                    y + 4.0,
                    escape(name)
                );
            }
        }
        for m in &self.markers {
            let _ = writeln!(s, r#"<g class="marker"><title>{}</title>"#, escape(&m.label));
            for (k, &y) in m.ys.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}" fill-opacity="0.8"/>"#,
                    px(m.x),
                    py(y),
                    COLOURS[k % COLOURS.len()]
                );
            }
            let top = m.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text></g>"#,
                px(m.x) + 7.0,
                py(top) - 7.0,
                escape(&m.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, z: usize, v: f64) -> MetricsReport {
        MetricsReport {
            experiment: name.into(),
            latent_z: z,
            validity: v,
            uniqueness: 100.0 / 3.0,
            novelty: 0.1 + 0.2,
            ae_seconds: 12.345678901234567,
            flow_seconds: 1e-3,
            params: 123_456,
            count: 300,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let reports = vec![report("gnn_gaussian", 2, 92.0), report("a,b \"quoted\"", 6, 1.0 / 7.0)];
        write_csv(&path, &reports).unwrap();
        assert_eq!(read_csv(&path).unwrap(), reports);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "experiment,latent_z,validity,uniqueness,novelty,ae_seconds,flow_seconds,params,count"
        );
        write_csv(&path, &reports[..1]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn one_marker_per_report() {
        let reports = vec![report("gnn_gaussian", 2, 92.0), report("heat_1d", 1, 90.0), report("x<y", 6, 0.0)];
        for svg in render_svgs(&reports) {
            assert_eq!(svg.matches(r#"<g class="marker">"#).count(), 3);
            assert!(svg.starts_with("<svg") && svg.contains(r#"width="800""#) && svg.contains(r#"height="600""#));
            assert!(!svg.contains("x<y"));
        }
        assert!(matches!(write_report(Path::new("/nonexistent/dir"), &[]), Err(HarnessError::NoReports)));
    }

    #[test]
    fn unwritable_output() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, "x").unwrap();
        let err = write_report(&file.join("sub"), &[report("a", 2, 1.0)]).unwrap_err();
        assert!(matches!(err, HarnessError::OutputUnwritable { .. }), "{err}");
    }
}
