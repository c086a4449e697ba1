//! Minimal actual-vs-predicted line chart.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 320.0;
const PAD: f64 = 40.0;

fn polyline(values: &[f64], lo: f64, hi: f64, color: &str) -> String {
    let n = values.len().max(2) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut points = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = PAD + (WIDTH - 2.0 * PAD) * i as f64 / n as f64;
        let y = HEIGHT - PAD - (HEIGHT - 2.0 * PAD) * (v - lo) / span;
        let _ = write!(points, "{x:.1},{y:.1} ");
    }
    format!(
        "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.trim_end()
    )
}

pub fn line_chart(actual: &[f64], predicted: &[f64]) -> String {
    let all = actual.iter().chain(predicted);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    s.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        "  <text x=\"{PAD}\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">actual (black) vs predicted (red), range {lo:.3} to {hi:.3}</text>"
    );
    s.push_str(&polyline(actual, lo, hi, "#222"));
    s.push_str(&polyline(predicted, lo, hi, "#c33"));
    s.push_str("</svg>\n");
    s
}
