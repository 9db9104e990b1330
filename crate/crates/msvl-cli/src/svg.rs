//! Minimal SVG renderer for ROC curves: axes, the chance diagonal, one
//! polyline per model, and a legend carrying each AUROC.

use msvl::metrics::RocPoint;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Curve {
    pub label: String,
    pub auroc: f64,
    pub points: Vec<RocPoint>,
}

fn x_of(fpr: f64) -> f64 {
    MARGIN_LEFT + fpr * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_of(tpr: f64) -> f64 {
    HEIGHT - MARGIN_BOTTOM - tpr * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

pub fn render(curves: &[Curve]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    ));
    out.push('\n');
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    out.push('\n');

    // Axes box and ticks.
    out.push_str(&format!(
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    ));
    out.push('\n');
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (x, y) = (x_of(t), y_of(t));
        out.push_str(&format!(
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#,
            HEIGHT - MARGIN_BOTTOM,
            HEIGHT - MARGIN_BOTTOM + 5.0
        ));
        out.push_str(&format!(
            r#"<text x="{x}" y="{}" text-anchor="middle" font-size="12">{t:.1}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 20.0
        ));
        out.push_str(&format!(
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end" font-size="12">{t:.1}</text>"#,
            MARGIN_LEFT - 9.0,
            y + 4.0
        ));
        out.push('\n');
    }
    out.push_str(&format!(
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">False positive rate</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 18.0
    ));
    out.push('\n');
    out.push_str(&format!(
        r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">True positive rate</text>"#,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0
    ));
    out.push('\n');

    // Chance diagonal.
    out.push_str(&format!(
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="6,4"/>"#,
        x_of(0.0),
        y_of(0.0),
        x_of(1.0),
        y_of(1.0)
    ));
    out.push('\n');

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.fpr), y_of(p.tpr)))
            .collect();
        out.push_str(&format!(
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        ));
        out.push('\n');
    }

    // Legend, lower right.
    let legend_x = WIDTH - MARGIN_RIGHT - 280.0;
    let mut legend_y = HEIGHT - MARGIN_BOTTOM - 20.0 - curves.len() as f64 * 20.0;
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            r#"<line x1="{legend_x}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>"#,
            legend_x + 28.0
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}" font-size="13">{} (AUROC = {:.3})</text>"#,
            legend_x + 36.0,
            legend_y + 4.0,
            xml_escape(&curve.label),
            curve.auroc
        ));
        out.push('\n');
        legend_y += 20.0;
    }

    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
