//! Minimal self-contained SVG emission for learning curves (mean with a
//! +/- one-standard-deviation band per run) and budget-sweep charts. The
//! exact numbers always go to a sibling delimited text file; the SVG is a
//! rendering, the text file is the record.

use std::fmt::Write as _;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// (x, mean, std) triples, sorted by x.
    pub points: Vec<(f64, f64, f64)>,
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scale {
    fn of(series: &[Series]) -> Scale {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for s in series {
            for &(x, m, sd) in &s.points {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(m - sd);
                y1 = y1.max(m + sd);
            }
        }
        if !x0.is_finite() || x0 == x1 {
            x1 = x0 + 1.0;
        }
        if !y0.is_finite() || y0 == y1 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Scale {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn fmt(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Render series as an SVG line chart with shaded deviation bands.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let scale = Scale::of(series);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{title}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    );
    for i in 0..=4 {
        let fx = scale.x0 + (scale.x1 - scale.x0) * i as f64 / 4.0;
        let fy = scale.y0 + (scale.y1 - scale.y0) * i as f64 / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{x}\" y=\"{ybase}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{xv}</text>\n\
             <text x=\"{xbase}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{yv}</text>\n",
            x = scale.px(fx),
            ybase = HEIGHT - MARGIN_B + 18.0,
            xv = fmt(fx),
            xbase = MARGIN_L - 6.0,
            y = scale.py(fy) + 4.0,
            yv = fmt(fy),
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.points.len() > 1 {
            // Deviation band: upper path forward, lower path backward.
            let mut band = String::new();
            for &(x, m, sd) in &s.points {
                let _ = write!(band, "{:.2},{:.2} ", scale.px(x), scale.py(m + sd));
            }
            for &(x, m, sd) in s.points.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", scale.px(x), scale.py(m - sd));
            }
            let _ = write!(
                svg,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                band.trim_end()
            );
        }
        let mut line = String::new();
        for &(x, m, _) in &s.points {
            let _ = write!(line, "{:.2},{:.2} ", scale.px(x), scale.py(m));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            line.trim_end()
        );
        for &(x, m, _) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>\n",
                scale.px(x),
                scale.py(m)
            );
        }
        // Legend entry.
        let ly = MARGIN_T + 18.0 * k as f64 + 10.0;
        let _ = write!(
            svg,
            "<line x1=\"{x0}\" y1=\"{ly}\" x2=\"{x1}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
            x0 = WIDTH - MARGIN_R + 12.0,
            x1 = WIDTH - MARGIN_R + 34.0,
            tx = WIDTH - MARGIN_R + 40.0,
            ty = ly + 4.0,
            label = s.label,
        );
    }
    svg.push_str("</svg>\n");
    svg
}
