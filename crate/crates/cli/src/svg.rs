//! Static SVG charts. Output depends only on the input values.

use std::fmt::Write;

use rnoise::numerics::Tensor;

use crate::csvio::LedgerSeries;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 60.0;
const TICKS: usize = 5;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, out: &mut String, title: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        writeln!(
            out,
            r#"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{title}</text>"#,
            l + w / 2.0,
            t - 12.0
        )
        .unwrap();
        for k in 0..=TICKS {
            let f = k as f64 / TICKS as f64;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            writeln!(
                out,
                r#"<line x1="{xp:.2}" y1="{:.2}" x2="{xp:.2}" y2="{:.2}" stroke="black"/><text x="{xp:.2}" y="{:.2}" text-anchor="middle" font-size="10">{xv:.2}</text>"#,
                t + h,
                t + h + 5.0,
                t + h + 18.0
            )
            .unwrap();
            writeln!(
                out,
                r#"<line x1="{:.2}" y1="{yp:.2}" x2="{l:.2}" y2="{yp:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{yv:.2}</text>"#,
                l - 5.0,
                l - 8.0,
                yp + 3.0
            )
            .unwrap();
        }
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Generated points (blue) over optional reference points (grey). Both must
/// be two-dimensional.
pub fn scatter(generated: &Tensor, reference: Option<&Tensor>) -> String {
    let sets: Vec<&Tensor> = reference.into_iter().chain(std::iter::once(generated)).collect();
    let mut bx = (f64::INFINITY, f64::NEG_INFINITY);
    let mut by = bx;
    for s in &sets {
        for i in 0..s.rows() {
            let r = s.row(i);
            bx = (bx.0.min(r[0]), bx.1.max(r[0]));
            by = (by.0.min(r[1]), by.1.max(r[1]));
        }
    }
    let frame = Frame {
        x: padded(bx.0, bx.1),
        y: padded(by.0, by.1),
        left: MARGIN,
        top: MARGIN,
        width: SIZE - 2.0 * MARGIN,
        height: SIZE - 2.0 * MARGIN,
    };
    let mut out = header(SIZE, SIZE);
    frame.axes(&mut out, "samples");
    if let Some(r) = reference {
        out.push_str("<g fill=\"#999999\" fill-opacity=\"0.4\">\n");
        push_points(&mut out, &frame, r);
        out.push_str("</g>\n");
    }
    out.push_str("<g fill=\"#1f4e9c\" fill-opacity=\"0.5\">\n");
    push_points(&mut out, &frame, generated);
    out.push_str("</g>\n</svg>\n");
    out
}

fn push_points(out: &mut String, frame: &Frame, pts: &Tensor) {
    for i in 0..pts.rows() {
        let r = pts.row(i);
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, frame.px(r[0]), frame.py(r[1])).unwrap();
    }
}

fn line_panel(out: &mut String, top: f64, title: &str, steps: &[usize], values: &[f64]) {
    let last = steps.last().copied().unwrap_or(1).max(1) as f64;
    let hi = values.iter().copied().fold(0.0, f64::max);
    let frame = Frame {
        x: (0.0, last),
        y: (0.0, if hi > 0.0 { hi * 1.05 } else { 1.0 }),
        left: MARGIN,
        top,
        width: SIZE - 2.0 * MARGIN,
        height: SIZE / 2.0 - 2.0 * MARGIN,
    };
    frame.axes(out, title);
    let pts: Vec<String> = steps
        .iter()
        .zip(values)
        .map(|(&s, &v)| format!("{:.2},{:.2}", frame.px(s as f64), frame.py(v)))
        .collect();
    writeln!(out, r##"<polyline fill="none" stroke="#c0392b" points="{}"/>"##, pts.join(" ")).unwrap();
}

/// Per-step and cumulative mean noise magnitude.
pub fn ledger_chart(series: &LedgerSeries) -> String {
    let final_cum = series.cumulative.last().copied().unwrap_or(0.0);
    let mut out = header(SIZE, SIZE + 30.0);
    line_panel(&mut out, MARGIN, "mean |noise| per step", &series.steps, &series.per_step);
    line_panel(&mut out, SIZE / 2.0 + MARGIN, "mean |cumulative noise|", &series.steps, &series.cumulative);
    writeln!(
        out,
        r#"<text id="final-cumulative" data-value="{final_cum}" x="{MARGIN}" y="{:.2}" font-size="12">final mean cumulative noise norm: {final_cum}</text>"#,
        SIZE + 10.0
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}
