//! Static SVG plots. Output depends only on the data, apart from a single
//! timestamp comment line.

use std::fmt::Write;
use std::str::FromStr;

use lltk_core::topo::PersistenceDiagram;

use crate::tables::{EmbeddingRow, PersistenceEntry};

pub const STAMP_PREFIX: &str = "<!-- rendered at unix time ";

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const RADIUS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    EmbeddingScatter,
    PersistenceDiagram,
    TotalPersistenceScatter,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [
        Self::EmbeddingScatter,
        Self::PersistenceDiagram,
        Self::TotalPersistenceScatter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::EmbeddingScatter => "embedding_scatter",
            PlotKind::PersistenceDiagram => "persistence_diagram",
            PlotKind::TotalPersistenceScatter => "total_persistence_scatter",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown plot kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorBy {
    Epoch,
    Seed,
    Loss,
    LogLoss,
}

impl ColorBy {
    pub const ALL: [ColorBy; 4] = [Self::Epoch, Self::Seed, Self::Loss, Self::LogLoss];

    pub fn name(self) -> &'static str {
        match self {
            ColorBy::Epoch => "epoch",
            ColorBy::Seed => "seed",
            ColorBy::Loss => "loss",
            ColorBy::LogLoss => "log_loss",
        }
    }
}

impl FromStr for ColorBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown coloring `{s}`"))
    }
}

// viridis, sampled at five stops
const PALETTE: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (PALETTE.len() - 1) as f64;
    let i = (x.floor() as usize).min(PALETTE.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (PALETTE[i][k] + f * (PALETTE[i + 1][k] - PALETTE[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

struct Marker {
    x: f64,
    y: f64,
    fill: String,
    class: &'static str,
    hollow: bool,
}

struct Frame<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    x: (f64, f64),
    y: (f64, f64),
    diagonal: bool,
    legend: Vec<String>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(frame: &Frame, markers: &[Marker], stamp: u64) -> String {
    let xa = Axis { lo: frame.x.0, hi: frame.x.1, from: MARGIN, to: WIDTH - MARGIN / 2.0 };
    let ya = Axis { lo: frame.y.0, hi: frame.y.1, from: HEIGHT - MARGIN, to: MARGIN / 2.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "{STAMP_PREFIX}{stamp} -->");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(frame.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="dimgray"/>"#,
        xa.from,
        ya.to,
        xa.to - xa.from,
        ya.from - ya.to
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
        (xa.from + xa.to) / 2.0,
        HEIGHT - 12.0,
        escape(frame.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (ya.from + ya.to) / 2.0,
        (ya.from + ya.to) / 2.0,
        escape(frame.y_label)
    );
    for (v, px, py, anchor) in [
        (xa.lo, xa.from, ya.from + 14.0, "start"),
        (xa.hi, xa.to, ya.from + 14.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{py:.1}" font-family="sans-serif" font-size="9" text-anchor="{anchor}">{v:.3e}</text>"#
        );
    }
    for (v, py) in [(ya.lo, ya.from), (ya.hi, ya.to + 8.0)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{py:.1}" font-family="sans-serif" font-size="9" text-anchor="end">{v:.3e}</text>"#,
            xa.from - 3.0
        );
    }
    if frame.diagonal {
        let lo = xa.lo.max(ya.lo);
        let hi = xa.hi.min(ya.hi);
        let _ = writeln!(
            s,
            r#"<line class="diagonal" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="gray" stroke-dasharray="4 3"/>"#,
            xa.map(lo),
            ya.map(lo),
            xa.map(hi),
            ya.map(hi)
        );
    }
    if markers.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">no data</text>"#,
            (xa.from + xa.to) / 2.0,
            (ya.from + ya.to) / 2.0
        );
    }
    for m in markers {
        let (fill, stroke) = if m.hollow {
            ("none".to_string(), m.fill.clone())
        } else {
            (m.fill.clone(), "none".to_string())
        };
        let _ = writeln!(
            s,
            r#"<circle class="{}" cx="{:.3}" cy="{:.3}" r="{RADIUS}" fill="{fill}" stroke="{stroke}"/>"#,
            m.class,
            xa.map(m.x),
            ya.map(m.y)
        );
    }
    for (i, line) in frame.legend.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="9" text-anchor="end">{}</text>"#,
            xa.to - 4.0,
            ya.to + 12.0 + 11.0 * i as f64,
            escape(line)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scales values to [0, 1]; `log` maps through ln first (non-positive
/// values sit at the bottom of the scale).
fn normalize(values: &[f64], log: bool) -> (Vec<f64>, f64, f64) {
    let mapped: Vec<f64> = values
        .iter()
        .map(|&v| if log { if v > 0.0 { v.ln() } else { f64::NAN } } else { v })
        .collect();
    let finite = mapped.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let t = mapped
        .iter()
        .map(|&v| {
            if !v.is_finite() || !(hi > lo) {
                0.0
            } else {
                (v - lo) / (hi - lo)
            }
        })
        .collect();
    let back = |v: f64| if log { v.exp() } else { v };
    (t, back(lo), back(hi))
}

pub fn embedding_scatter(rows: &[EmbeddingRow], by: ColorBy, stamp: u64) -> String {
    let raw: Vec<f64> = rows
        .iter()
        .map(|r| match by {
            ColorBy::Epoch => r.epoch as f64,
            ColorBy::Seed => r.seed as f64,
            ColorBy::Loss | ColorBy::LogLoss => r.train_loss,
        })
        .collect();
    let (t, lo, hi) = normalize(&raw, by == ColorBy::LogLoss);
    let markers: Vec<Marker> = rows
        .iter()
        .zip(&t)
        .map(|(r, &t)| Marker {
            x: r.x,
            y: r.y,
            fill: color(t),
            class: "point",
            hollow: false,
        })
        .collect();
    let legend = if rows.is_empty() {
        Vec::new()
    } else {
        vec![format!("color: {} {lo:.3e} to {hi:.3e}", by.name())]
    };
    let frame = Frame {
        title: "Embedding of sampled parameters",
        x_label: "component 1",
        y_label: "component 2",
        x: bounds(rows.iter().map(|r| r.x)),
        y: bounds(rows.iter().map(|r| r.y)),
        diagonal: false,
        legend,
    };
    render(&frame, &markers, stamp)
}

/// Birth/death plot of every pair; H0 dark, H1 light, essential classes
/// hollow at their capped death.
pub fn persistence_diagram(diagrams: &[PersistenceDiagram], stamp: u64) -> String {
    let pairs: Vec<(usize, f64, f64, bool)> = diagrams
        .iter()
        .flat_map(|d| d.pairs.iter().map(move |p| (d.dimension, p.birth, p.death, p.essential)))
        .collect();
    let (lo, hi) = bounds(pairs.iter().flat_map(|p| [p.1, p.2]));
    let markers: Vec<Marker> = pairs
        .iter()
        .map(|&(dim, birth, death, essential)| Marker {
            x: birth,
            y: death,
            fill: color(if dim == 0 { 0.2 } else { 0.8 }),
            class: if dim == 0 { "pair h0" } else { "pair h1" },
            hollow: essential,
        })
        .collect();
    let frame = Frame {
        title: "Persistence diagram of the loss-level filtration",
        x_label: "birth",
        y_label: "death",
        x: (lo, hi),
        y: (lo, hi),
        diagonal: true,
        legend: vec!["H0 dark, H1 light, essential hollow".to_string()],
    };
    render(&frame, &markers, stamp)
}

pub fn total_persistence_scatter(rows: &[PersistenceEntry], stamp: u64) -> String {
    let decays: Vec<f64> = rows.iter().map(|r| r.weight_decay).collect();
    let (t, lo, hi) = normalize(&decays, false);
    let markers: Vec<Marker> = rows
        .iter()
        .zip(&t)
        .map(|(r, &t)| Marker {
            x: r.test_loss,
            y: r.total_h0,
            fill: color(t),
            class: "network",
            hollow: false,
        })
        .collect();
    let legend = if rows.is_empty() {
        Vec::new()
    } else {
        vec![format!("color: weight decay {lo:.1e} to {hi:.1e}")]
    };
    let frame = Frame {
        title: "H0 total persistence against test loss",
        x_label: "test loss at optimum",
        y_label: "H0 total persistence",
        x: bounds(rows.iter().map(|r| r.test_loss)),
        y: bounds(rows.iter().map(|r| r.total_h0)),
        diagonal: false,
        legend,
    };
    render(&frame, &markers, stamp)
}

/// SVG text with the timestamp comment removed, for comparisons.
pub fn strip_stamp(svg: &str) -> String {
    svg.lines()
        .filter(|l| !l.starts_with(STAMP_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}
