//! Plot data and minimal SVG renderings: the distribution of user risk
//! aversion on log-spaced bins, and a user's position in the risk-return
//! plane relative to the frontier.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::frontier::{optimal_portfolio, EfficientFrontier, GammaBounds};
use crate::io::fmt_f64;
use crate::market::MomentEstimates;

/// Counts over bins equally spaced in `ln gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHistogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl LogHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Bins span the gamma bounds; values at `max` fall in the last bin and
/// values outside the bounds are clamped into the end bins.
pub fn log_histogram(values: &[f64], bounds: &GammaBounds, bins: usize) -> Result<LogHistogram> {
    bounds.validate()?;
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let (lo, hi) = (bounds.min.ln(), bounds.max.ln());
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { bounds.max } else { (lo + width * i as f64).exp() })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonFiniteInput("histogram values"));
        }
        let b = ((v.ln() - lo) / width).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(LogHistogram { edges, counts })
}

/// `bin_low,bin_high,count`; header only when there are no values.
pub fn write_histogram_csv(path: &Path, h: &LogHistogram) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count\n");
    if h.total() > 0 {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", fmt_f64(h.edges[i]), fmt_f64(h.edges[i + 1]));
        }
    }
    write_text(path, &out)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo <= 0.0 {
                (lo - 0.5 * lo.abs().max(1e-12), hi + 0.5 * hi.abs().max(1e-12))
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: range(&mut xs.clone()),
            y: range(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bars over `log10(gamma)`.
pub fn histogram_svg(h: &LogHistogram) -> String {
    let mut s = svg_open("Distribution of user risk aversion", "log10(gamma)", "users");
    let lx: Vec<f64> = h.edges.iter().map(|e| e.log10()).collect();
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x: (lx[0], lx[lx.len() - 1]),
        y: (0.0, top),
    };
    for (i, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x0, x1) = (frame.px(lx[i]), frame.px(lx[i + 1]));
        let (y0, y1) = (frame.py(0.0), frame.py(c as f64));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="#4878a8" stroke="white"/>"##,
            x1 - x0,
            y0 - y1
        );
    }
    for d in (lx[0].ceil() as i64)..=(lx[lx.len() - 1].floor() as i64) {
        let x = frame.px(d as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{d}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// What a point in the risk-return plane represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Frontier,
    User,
    /// The user's portfolio after adding one recommended asset.
    Addition,
    /// The frontier portfolio at the user's gamma.
    Optimum,
}

impl PointKind {
    pub fn name(self) -> &'static str {
        match self {
            PointKind::Frontier => "frontier",
            PointKind::User => "user",
            PointKind::Addition => "addition",
            PointKind::Optimum => "optimum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub kind: PointKind,
    pub label: String,
    pub risk: f64,
    pub expected_return: f64,
}

/// A user's portfolio, where it moves under each recommendation, and the
/// frontier for reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReturnPlot {
    pub user_id: String,
    pub gamma: f64,
    pub points: Vec<PlotPoint>,
}

impl RiskReturnPlot {
    pub fn of_kind(&self, kind: PointKind) -> impl Iterator<Item = &PlotPoint> {
        self.points.iter().filter(move |p| p.kind == kind)
    }

    /// Utility of the user's current portfolio.
    pub fn user_utility(&self) -> Option<f64> {
        self.of_kind(PointKind::User)
            .next()
            .map(|p| p.expected_return - self.gamma * p.risk * p.risk)
    }
}

/// Builds the plot for one user. `recommended` lists `(asset index, label)`
/// in rank order; each is added at weight `w_r` (1 for an empty portfolio).
pub fn risk_return_plot(
    user_id: &str,
    m: &MomentEstimates,
    frontier: &EfficientFrontier,
    w: ArrayView1<f64>,
    gamma: f64,
    w_r: f64,
    recommended: &[(usize, String)],
) -> Result<RiskReturnPlot> {
    let mut points: Vec<PlotPoint> = frontier
        .points
        .iter()
        .map(|p| PlotPoint {
            kind: PointKind::Frontier,
            label: fmt_f64(p.gamma),
            risk: p.risk,
            expected_return: p.expected_return,
        })
        .collect();
    let empty = w.iter().all(|&x| x == 0.0);
    if !empty {
        let (ret, var) = m.stats(w)?;
        points.push(PlotPoint {
            kind: PointKind::User,
            label: user_id.to_string(),
            risk: var.max(0.0).sqrt(),
            expected_return: ret,
        });
    }
    let w_r = if empty { 1.0 } else { w_r };
    let base: Array1<f64> = w.mapv(|x| (1.0 - w_r) * x);
    for (j, label) in recommended {
        let mut v = base.clone();
        v[*j] += w_r;
        let (ret, var) = m.stats(v.view())?;
        points.push(PlotPoint {
            kind: PointKind::Addition,
            label: label.clone(),
            risk: var.max(0.0).sqrt(),
            expected_return: ret,
        });
    }
    let opt = optimal_portfolio(m, gamma)?;
    points.push(PlotPoint {
        kind: PointKind::Optimum,
        label: fmt_f64(gamma),
        risk: opt.risk,
        expected_return: opt.expected_return,
    });
    Ok(RiskReturnPlot {
        user_id: user_id.to_string(),
        gamma,
        points,
    })
}

/// `kind,label,risk,expected_return`.
pub fn write_risk_return_csv(path: &Path, plot: &RiskReturnPlot) -> Result<()> {
    let mut out = String::from("kind,label,risk,expected_return\n");
    for p in &plot.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.kind.name(),
            p.label,
            fmt_f64(p.risk),
            fmt_f64(p.expected_return)
        );
    }
    write_text(path, &out)
}

/// Frontier curve, user and post-addition points, and the user's utility
/// level line `ret = U + gamma * risk^2`.
pub fn risk_return_svg(plot: &RiskReturnPlot) -> String {
    let frame = Frame::fit(
        plot.points.iter().map(|p| p.risk),
        plot.points.iter().map(|p| p.expected_return),
    );
    let mut s = svg_open(
        &format!("{} (gamma = {:.4})", plot.user_id, plot.gamma),
        "risk",
        "expected return",
    );
    let path_of = |pts: &[(f64, f64)]| -> String {
        pts.iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, frame.px(*x), frame.py(*y)))
            .collect()
    };
    let mut curve: Vec<(f64, f64)> = plot
        .of_kind(PointKind::Frontier)
        .map(|p| (p.risk, p.expected_return))
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !curve.is_empty() {
        let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#4878a8" stroke-width="2"/>"##, path_of(&curve));
    }
    if let Some(u) = plot.user_utility() {
        let steps = 64;
        let level: Vec<(f64, f64)> = (0..=steps)
            .map(|i| {
                let r = frame.x.0.max(0.0) + (frame.x.1 - frame.x.0.max(0.0)) * i as f64 / steps as f64;
                (r, u + plot.gamma * r * r)
            })
            .filter(|&(_, y)| y >= frame.y.0 && y <= frame.y.1)
            .collect();
        if level.len() > 1 {
            let _ = writeln!(
                s,
                r##"<path d="{}" fill="none" stroke="#999999" stroke-dasharray="4 3"/>"##,
                path_of(&level)
            );
        }
    }
    for p in &plot.points {
        let (x, y) = (frame.px(p.risk), frame.py(p.expected_return));
        match p.kind {
            PointKind::Frontier => {}
            PointKind::User => {
                let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="#d62728"/>"##);
            }
            PointKind::Optimum => {
                let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="none" stroke="#2ca02c" stroke-width="2"/>"##);
            }
            PointKind::Addition => {
                let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="#ff7f0e"/>"##);
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, x + 5.0, y - 5.0, escape(&p.label));
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.csv` and `<stem>.svg` for a histogram.
pub fn emit_histogram(dir: &Path, stem: &str, h: &LogHistogram) -> Result<()> {
    write_histogram_csv(&dir.join(format!("{stem}.csv")), h)?;
    write_text(&dir.join(format!("{stem}.svg")), &histogram_svg(h))
}

/// Writes `<stem>.csv` and `<stem>.svg` for a risk-return plot.
pub fn emit_risk_return(dir: &Path, stem: &str, plot: &RiskReturnPlot) -> Result<()> {
    write_risk_return_csv(&dir.join(format!("{stem}.csv")), plot)?;
    write_text(&dir.join(format!("{stem}.svg")), &risk_return_svg(plot))
}
