//! Minimal self-contained SVG plotting.

use std::fmt::Write;

pub const GREEN: &str = "#2e8b57";
pub const RED: &str = "#c0392b";
pub const GRAY: &str = "#7f8c8d";

pub struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
             font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.body, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>", escape(s));
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
            a.0, a.1, b.0, b.1
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\" \
             fill-opacity=\"{opacity}\" stroke=\"{stroke}\"/>"
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\" fill-opacity=\"{opacity}\"/>"
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
            d.trim_end()
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Data-to-pixel mapping of one panel.
pub struct Axes {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub log_y: bool,
}

impl Axes {
    pub fn new(left: f64, top: f64, width: f64, height: f64, x: (f64, f64), y: (f64, f64), log_y: bool) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let y = if log_y { (y.0.max(1e-300).log10(), y.1.max(1e-300).log10()) } else { y };
        Self { left, top, width, height, x: pad(x), y: pad(y), log_y }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.max(1e-300).log10() } else { y };
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    pub fn frame(&self, c: &mut Canvas, title: &str, xlabel: &str, ylabel: &str) {
        c.rect(self.left, self.top, self.width, self.height, "none", "#333", 1.0);
        c.text(self.left + self.width / 2.0, self.top - 8.0, "middle", title);
        c.text(self.left + self.width / 2.0, self.top + self.height + 30.0, "middle", xlabel);
        c.text(self.left - 8.0, self.top - 8.0, "start", ylabel);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let px = self.left + f * self.width;
            c.line((px, self.top + self.height), (px, self.top + self.height + 4.0), "#333", 1.0);
            c.text(px, self.top + self.height + 16.0, "middle", &tick(xv));
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let py = self.top + self.height - f * self.height;
            c.line((self.left - 4.0, py), (self.left, py), "#333", 1.0);
            let label = if self.log_y { tick(10f64.powf(yv)) } else { tick(yv) };
            c.text(self.left - 6.0, py + 4.0, "end", &label);
        }
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box (quartiles), whiskers (extremes), median line and mean marker.
pub fn boxplot(c: &mut Canvas, ax: &Axes, x_center: f64, half_width: f64, values: &[f64], color: &str) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let (q1, q2, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let cx = ax.px(x_center);
    let hw = half_width * ax.width / (ax.x.1 - ax.x.0);
    c.line((cx, ax.py(v[0])), (cx, ax.py(q1)), color, 1.0);
    c.line((cx, ax.py(q3)), (cx, ax.py(v[v.len() - 1])), color, 1.0);
    c.rect(cx - hw, ax.py(q3), 2.0 * hw, (ax.py(q1) - ax.py(q3)).max(0.5), color, color, 0.3);
    c.line((cx - hw, ax.py(q2)), (cx + hw, ax.py(q2)), color, 2.0);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    c.circle(cx, ax.py(mean), 3.0, "#f1c40f", 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn document_is_well_formed_svg() {
        let mut c = Canvas::new(100.0, 80.0);
        let ax = Axes::new(20.0, 10.0, 60.0, 50.0, (0.0, 1.0), (1e-3, 1.0), true);
        ax.frame(&mut c, "a<b", "x", "y");
        boxplot(&mut c, &ax, 0.5, 0.1, &[0.01, 0.1, 0.2], RED);
        let s = c.finish();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
