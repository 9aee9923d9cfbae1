use super::{ExperimentError, NSummary};
use crate::diagnostics::{fit_slope, SlopeFit};
use crate::scalar::Scalar;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 84.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 64.0;

/// Linear map from a log10 range onto a pixel range.
struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, from: f64, to: f64) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let pad = ((hi - lo) * 0.08).max(0.05);
        lo -= pad;
        hi += pad;
        Axis { lo, hi, from, to }
    }

    fn px(&self, log10: f64) -> f64 {
        self.from + (log10 - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    /// 1-2-5 ticks inside the range, in log10 units.
    fn ticks(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for decade in self.lo.floor() as i32..=self.hi.ceil() as i32 {
            for m in [1.0_f64, 2.0, 5.0] {
                let v = decade as f64 + m.log10();
                if v >= self.lo && v <= self.hi {
                    out.push(v);
                }
            }
        }
        out
    }
}

fn tick_label(log10: f64) -> String {
    let v = 10f64.powf(log10);
    if (1e-3..1e4).contains(&v) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

/// `-1.00` with a typographic minus.
fn slope_label(slope: f64) -> String {
    format!("{slope:.2}").replace('-', "\u{2212}")
}

/// Log-log scatter of mean `e_N` against `N` with the least-squares line and
/// a slope −1 guide through the fitted line's value at the geometric-mean `N`.
pub fn render_plot<S: Scalar>(summary: &[NSummary<S>], path: &Path) -> Result<SlopeFit, ExperimentError> {
    if summary.len() < 2 {
        return Err(ExperimentError::Plot("need ≥ 2 points".into()));
    }
    let points: Vec<(f64, f64, f64)> =
        summary.iter().map(|s| (s.particles as f64, s.mean.to_f64_lossy(), s.stderr.to_f64_lossy())).collect();
    if let Some(&(n, e, _)) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0 && p.1.is_finite())) {
        return Err(ExperimentError::Plot(format!("nonpositive value at N = {n}: mean e_N = {e}")));
    }
    let fit = fit_slope(&points.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>()).map_err(|e| ExperimentError::Plot(e.to_string()))?;
    let fitted = |n: f64| (fit.intercept + fit.slope * n.ln()).exp();

    let (n_lo, n_hi) = points.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let n_mid = (n_lo * n_hi).sqrt();
    let guide = |n: f64| fitted(n_mid) * n_mid / n;

    let x = Axis::new(points.iter().map(|p| p.0.log10()), LEFT, WIDTH - RIGHT);
    let y_values = points
        .iter()
        .flat_map(|&(n, e, se)| [e, e + se, if e - se > 0.0 { e - se } else { e }, fitted(n), guide(n)])
        .map(f64::log10);
    let y = Axis::new(y_values, HEIGHT - BOTTOM, TOP);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">Euler scheme with particle approximation</text>"#,
        WIDTH / 2.0
    );

    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(svg, r#"<g stroke="black" fill="none"><rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}"/></g>"#, x1 - x0, y0 - y1);
    let _ = writeln!(svg, r##"<g class="ticks" stroke="#bbb" stroke-width="0.5">"##);
    for t in x.ticks() {
        let px = x.px(t);
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{y1}"/>"#);
    }
    for t in y.ticks() {
        let py = y.px(t);
        let _ = writeln!(svg, r#"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}"/>"#);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="tick-labels">"#);
    for t in x.ticks() {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, x.px(t), y0 + 16.0, tick_label(t));
    }
    for t in y.ticks() {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y.px(t) + 4.0, tick_label(t));
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">N</text>"#, (x0 + x1) / 2.0, HEIGHT - 20.0);
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">mean e_N</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let line = |f: &dyn Fn(f64) -> f64| {
        let (a, b) = (n_lo, n_hi);
        format!(
            r#"x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}""#,
            x.px(a.log10()),
            y.px(f(a).log10()),
            x.px(b.log10()),
            y.px(f(b).log10())
        )
    };
    let _ = writeln!(svg, r##"<line class="guide" {} stroke="#888" stroke-dasharray="6 4"/>"##, line(&guide));
    let _ = writeln!(svg, r##"<line class="fit" {} stroke="#c03030" stroke-width="1.5"/>"##, line(&fitted));

    let _ = writeln!(svg, r##"<g class="points" fill="#1f4e9c" stroke="#1f4e9c">"##);
    for &(n, e, se) in &points {
        let px = x.px(n.log10());
        if se > 0.0 && e - se > 0.0 {
            let _ = writeln!(
                svg,
                r#"<line class="errorbar" x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}"/>"#,
                y.px((e - se).log10()),
                y.px((e + se).log10())
            );
        }
        let _ = writeln!(svg, r#"<circle class="marker" cx="{px:.2}" cy="{:.2}" r="3.5"/>"#, y.px(e.log10()));
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g class="legend" font-size="12">"#);
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c03030" stroke-width="1.5"/><text x="{:.1}" y="{:.1}">fitted slope {}</text>"##,
        x1 - 170.0,
        y1 + 18.0,
        x1 - 146.0,
        y1 + 18.0,
        x1 - 140.0,
        y1 + 22.0,
        slope_label(fit.slope)
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}">reference slope {}</text>"##,
        x1 - 170.0,
        y1 + 36.0,
        x1 - 146.0,
        y1 + 36.0,
        x1 - 140.0,
        y1 + 40.0,
        slope_label(-1.0)
    );
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");

    std::fs::write(path, svg).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    Ok(fit)
}
