//! Summary statistics and minimal SVG rendering (box plots of deviation
//! ratios with the certified bound as a marker, and ν histograms).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumberSummary {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Linear interpolation between closest ranks.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One box of a box plot.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSeries {
    pub label: String,
    pub stats: FiveNumberSummary,
    pub bound: Option<f64>,
}

impl BoxSeries {
    pub fn violated(&self) -> bool {
        self.bound.is_some_and(|b| self.stats.max > b)
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        let plot = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        MARGIN_TOP + plot * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_axis(s: &mut String, axis: &Axis, label: &str) {
    let bottom = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    for i in 0..=4 {
        let v = axis.lo + (axis.hi - axis.lo) * i as f64 / 4.0;
        let y = axis.y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            MARGIN_LEFT - 4.0,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(label)
    );
}

/// Box-and-whisker plot (min/q1/median/q3/max) with the bound drawn as a red
/// dot. A box whose maximum exceeds its bound is labelled in red.
pub fn box_plot_svg(title: &str, series: &[BoxSeries]) -> String {
    let mut s = svg_open(title);
    let values = series.iter().flat_map(|b| {
        [b.stats.min, b.stats.max]
            .into_iter()
            .chain(b.bound)
    });
    let lo = values.clone().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let axis = Axis::new(lo, if hi.is_finite() { hi } else { 1.0 });
    y_axis(&mut s, &axis, "||Δ_out||² / ||Δ_in||²");

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let slot = plot_w / series.len().max(1) as f64;
    let half = (slot * 0.25).min(40.0);
    for (i, b) in series.iter().enumerate() {
        let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
        let st = &b.stats;
        let (ymin, yq1, ymed, yq3, ymax) = (
            axis.y(st.min),
            axis.y(st.q1),
            axis.y(st.median),
            axis.y(st.q3),
            axis.y(st.max),
        );
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{cx:.2}" y1="{ymin:.2}" x2="{cx:.2}" y2="{ymax:.2}" stroke="black"/>"#
        );
        for y in [ymin, ymax] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                cx + half / 2.0
            );
        }
        let _ = writeln!(
            s,
            r#"<rect class="box" x="{:.2}" y="{yq3:.2}" width="{:.2}" height="{:.2}" fill="steelblue" fill-opacity="0.4" stroke="black"/>"#,
            cx - half,
            2.0 * half,
            (yq1 - yq3).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line class="median" data-value="{}" x1="{:.2}" y1="{ymed:.2}" x2="{:.2}" y2="{ymed:.2}" stroke="black" stroke-width="2"/>"#,
            st.median,
            cx - half,
            cx + half
        );
        if let Some(bound) = b.bound {
            let _ = writeln!(
                s,
                r#"<circle class="bound" data-value="{bound}" cx="{cx:.2}" cy="{:.2}" r="5" fill="red"/>"#,
                axis.y(bound)
            );
        }
        let color = if b.violated() { "red" } else { "black" };
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" fill="{color}">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            escape(&b.label)
        );
        if b.violated() {
            let _ = writeln!(
                s,
                r#"<text class="violation" x="{cx:.2}" y="{:.2}" text-anchor="middle" fill="red" font-weight="bold">BOUND VIOLATED</text>"#,
                HEIGHT - MARGIN_BOTTOM + 36.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; a sample with no spread gets a single
/// bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if values.is_empty() {
        return Err(Error::contract("histogram of an empty sample"));
    }
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![HistogramBin {
            lo,
            hi,
            count: values.len(),
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    Ok(out)
}

pub fn histogram_svg(title: &str, bins: &[HistogramBin], reference: Option<f64>) -> String {
    let mut s = svg_open(title);
    let max_count = bins.iter().map(|b| b.count).max().unwrap_or(0) as f64;
    let axis = Axis::new(0.0, max_count.max(1.0));
    y_axis(&mut s, &axis, "layers");

    let lo = bins.first().map_or(0.0, |b| b.lo);
    let hi = bins.last().map_or(1.0, |b| b.hi);
    let (x_lo, x_hi) = {
        let (a, b) = match reference {
            Some(r) => (lo.min(r), hi.max(r)),
            None => (lo, hi),
        };
        if b > a {
            let pad = 0.05 * (b - a);
            (a - pad, b + pad)
        } else {
            (a - 0.5, a + 0.5)
        }
    };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let x = |v: f64| MARGIN_LEFT + plot_w * (v - x_lo) / (x_hi - x_lo);
    let bottom = axis.y(0.0);
    for b in bins {
        let (x0, x1) = if b.hi > b.lo {
            (x(b.lo), x(b.hi))
        } else {
            (x(b.lo) - 10.0, x(b.lo) + 10.0)
        };
        let top = axis.y(b.count as f64);
        let _ = writeln!(
            s,
            r#"<rect class="bin" data-count="{}" x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="black"/>"#,
            b.count,
            (x1 - x0).max(0.5),
            bottom - top
        );
    }
    for i in 0..=4 {
        let v = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#,
            x(v),
            HEIGHT - MARGIN_BOTTOM + 18.0
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            r#"<line class="reference" x1="{:.2}" y1="{MARGIN_TOP}" x2="{:.2}" y2="{bottom:.2}" stroke="red" stroke-dasharray="4 3"/>"#,
            x(r),
            x(r)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">extracted ν</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_three_points() {
        let s = FiveNumberSummary::from_values(&[0.3, 0.1, 0.2]).unwrap();
        assert_eq!(s.median, 0.2);
        assert_eq!(s.min, 0.1);
        assert_eq!(s.max, 0.3);
        assert!((s.q1 - 0.15).abs() < 1e-15);
        assert!(FiveNumberSummary::from_values(&[]).is_none());
    }

    #[test]
    fn box_plot_marks_median_and_bound() {
        let stats = FiveNumberSummary::from_values(&[0.1, 0.2, 0.3]).unwrap();
        let svg = box_plot_svg(
            "test",
            &[BoxSeries {
                label: "depth 2".into(),
                stats,
                bound: Some(0.5),
            }],
        );
        assert!(svg.contains(r#"class="median" data-value="0.2""#));
        assert!(svg.contains(r#"class="bound" data-value="0.5""#));
        assert!(!svg.contains("BOUND VIOLATED"));
    }

    #[test]
    fn box_plot_flags_violation() {
        let stats = FiveNumberSummary::from_values(&[0.1, 0.9]).unwrap();
        let b = BoxSeries {
            label: "x".into(),
            stats,
            bound: Some(0.5),
        };
        assert!(b.violated());
        assert!(box_plot_svg("t", &[b]).contains("BOUND VIOLATED"));
    }

    #[test]
    fn constant_sample_is_one_bin() {
        let bins = histogram(&[1.0; 7], 10).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 7);
        let svg = histogram_svg("nu", &bins, Some(1.0));
        assert_eq!(svg.matches(r#"class="bin""#).count(), 1);
    }

    #[test]
    fn histogram_counts_everything() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let bins = histogram(&values, 7).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 100);
        assert!(histogram(&[], 3).is_err());
    }
}
