//! Static SVG line charts rendered from the harness CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::HarnessError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        Some(Self { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            (self.lo as i32..=self.hi as i32)
                .map(|e| 10f64.powi(e))
                .collect()
        } else {
            (0..=4)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Renders series as polylines with markers. Points with non-positive
/// coordinates on a log axis are dropped.
pub fn line_chart_svg(spec: &ChartSpec, series: &[Series]) -> Result<String, HarnessError> {
    let keep = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0)
    };
    let series: Vec<Series> = series
        .iter()
        .map(|s| Series {
            name: s.name.clone(),
            points: s.points.iter().copied().filter(keep).collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let no_data = || HarnessError::Format("chart has no plottable points".into());
    let xa = Axis::fit(all().map(|p| p.0), spec.log_x).ok_or_else(no_data)?;
    let ya = Axis::fit(all().map(|p| p.1), spec.log_y).ok_or_else(no_data)?;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 18.0,
            tick_label(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Groups CSV rows into series keyed by `series_col`, plotting
/// `y_col` against `x_col`. Rows with an empty or non-numeric x or y are
/// skipped.
pub fn series_from_csv(
    text: &str,
    series_col: &str,
    x_col: &str,
    y_col: &str,
) -> Result<Vec<Series>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| HarnessError::Format(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Format(format!("csv has no column `{name}`")))
    };
    let (si, xi, yi) = (col(series_col)?, col(x_col)?, col(y_col)?);
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| HarnessError::Format(e.to_string()))?;
        let parse = |i: usize| record.get(i).and_then(|v| v.parse::<f64>().ok());
        if let (Some(x), Some(y)) = (parse(xi), parse(yi)) {
            let name = record.get(si).unwrap_or("").to_string();
            groups.entry(name).or_default().push((x, y));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(name, points)| Series { name, points })
        .collect())
}

/// Latency against class count, one line per defense, log-log.
pub fn bench_chart(csv_text: &str) -> Result<String, HarnessError> {
    let series = series_from_csv(csv_text, "defense", "classes", "mean_seconds")?;
    line_chart_svg(
        &ChartSpec {
            title: "Defense latency vs number of classes".into(),
            x_label: "classes (K)".into(),
            y_label: "mean latency per call (s)".into(),
            log_x: true,
            log_y: true,
        },
        &series,
    )
}

/// Defended reconstruction error against ε, one line per party count.
pub fn ablation_chart(csv_text: &str) -> Result<String, HarnessError> {
    let series = series_from_csv(csv_text, "n_parties", "epsilon", "mse_with_defense")?
        .into_iter()
        .map(|s| Series {
            name: format!("{} parties", s.name),
            points: s.points,
        })
        .collect::<Vec<_>>();
    line_chart_svg(
        &ChartSpec {
            title: "Reconstruction error under defense vs epsilon".into(),
            x_label: "epsilon".into(),
            y_label: "defended MSE".into(),
            log_x: true,
            log_y: true,
        },
        &series,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_legend() {
        let csv = "defense,classes,calls,mean_seconds,p95_seconds\n\
                   a,10,1000,1e-6,2e-6\na,100,1000,1e-5,2e-5\nb<&>,10,1000,1e-7,1e-7\n";
        let svg = bench_chart(csv).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("b&lt;&amp;&gt;"));
    }

    #[test]
    fn skips_unplottable_rows() {
        let csv = "n_parties,epsilon,mse_with_defense\n2,,1.0\n2,0.1,0.0\n5,0.5,2.0\n";
        let svg = ablation_chart(csv).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("5 parties"));
        assert!(ablation_chart("n_parties,epsilon,mse_with_defense\n").is_err());
        assert!(bench_chart("x,y\n1,2\n").is_err());
    }

    #[test]
    fn linear_axes_handle_constant_data() {
        let spec = ChartSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            log_y: false,
        };
        let s = [Series {
            name: "s".into(),
            points: vec![(1.0, 5.0), (2.0, 5.0)],
        }];
        let svg = line_chart_svg(&spec, &s).unwrap();
        assert!(!svg.contains("NaN"));
    }
}
