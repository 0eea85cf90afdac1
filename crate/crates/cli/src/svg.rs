use std::fmt::Write;

use gaplab_core::geometry::GapReport;
use gaplab_core::Matrix;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const CAPTION: f64 = 48.0;

/// Scatter plot of 2-D points: the first `n_images` rows are drawn as
/// circles, the rest as squares.
pub fn scatter(points: &Matrix, n_images: usize, report: &GapReport) -> String {
    let xs: Vec<f64> = points.iter_rows().map(|r| r[0]).collect();
    let ys: Vec<f64> = points.iter_rows().map(|r| r[1]).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-12 {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| MARGIN + (y1 - y) / (y1 - y0) * span;

    let mut s = String::new();
    let height = SIZE + CAPTION;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}">"#
    )
    .unwrap();
    writeln!(s, r#"  <title>Joint PCA projection of image and text embeddings</title>"#).unwrap();
    writeln!(s, r##"  <g id="images" fill="#1f77b4" fill-opacity="0.6">"##).unwrap();
    for i in 0..n_images {
        writeln!(s, r#"    <circle cx="{:.2}" cy="{:.2}" r="3"/>"#, px(xs[i]), py(ys[i])).unwrap();
    }
    writeln!(s, "  </g>").unwrap();
    writeln!(s, r##"  <g id="texts" fill="#d62728" fill-opacity="0.6">"##).unwrap();
    for i in n_images..points.rows() {
        writeln!(
            s,
            r#"    <rect x="{:.2}" y="{:.2}" width="6" height="6"/>"#,
            px(xs[i]) - 3.0,
            py(ys[i]) - 3.0
        )
        .unwrap();
    }
    writeln!(s, "  </g>").unwrap();
    writeln!(
        s,
        r#"  <text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="14">images (circles), texts (squares): raw gap {:.4}, centroid gap {:.4}, distribution gap {:.4}</text>"#,
        SIZE + CAPTION / 2.0,
        report.raw_gap,
        report.centroid_gap,
        report.distribution_gap
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}
