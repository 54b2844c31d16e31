//! Minimal deterministic SVG writer for log-log series plots.

use std::fmt::Write as _;

/// One plotted line: a label and `(x, y)` samples; nonpositive values
/// cannot be drawn on log axes and are skipped.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 62.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

fn coord(value: f64) -> String {
    format!("{value:.2}")
}

/// Renders a log-log plot with one polyline per series and a legend.
pub fn loglog_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    );
    let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    );

    let logged: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
                .map(|&(x, y)| (x.log10(), y.log10()))
                .collect()
        })
        .collect();

    let xs: Vec<f64> = logged.iter().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = logged.iter().flatten().map(|p| p.1).collect();
    if xs.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no positive data to plot</text>\n</svg>\n",
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        return svg;
    }

    let pad = |lo: f64, hi: f64| if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let (x_lo, x_hi) = pad(xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y_lo, y_hi) = pad(ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    // Frame, grid, and tick labels at five even positions per axis.
    let _ = write!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        coord(MARGIN_LEFT),
        coord(MARGIN_TOP),
        coord(plot_w),
        coord(plot_h)
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let x = x_lo + frac * (x_hi - x_lo);
        let y = y_lo + frac * (y_hi - y_lo);
        let px = sx(x);
        let py = sy(y);
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            coord(px),
            coord(MARGIN_TOP),
            coord(px),
            coord(MARGIN_TOP + plot_h)
        );
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            coord(MARGIN_LEFT),
            coord(py),
            coord(MARGIN_LEFT + plot_w),
            coord(py)
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.2e}</text>\n",
            coord(px),
            coord(MARGIN_TOP + plot_h + 20.0),
            10f64.powf(x)
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2e}</text>\n",
            coord(MARGIN_LEFT - 8.0),
            coord(py + 4.0),
            10f64.powf(y)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        coord(MARGIN_LEFT + plot_w / 2.0),
        coord(HEIGHT - 16.0)
    );
    let _ = write!(
        svg,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        coord(MARGIN_TOP + plot_h / 2.0),
        coord(MARGIN_TOP + plot_h / 2.0)
    );

    for (index, (s, pts)) in series.iter().zip(&logged).enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        if pts.len() > 1 {
            let path: Vec<String> =
                pts.iter().map(|&(x, y)| format!("{},{}", coord(sx(x)), coord(sy(y)))).collect();
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            );
        }
        for &(x, y) in pts {
            let _ = write!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                coord(sx(x)),
                coord(sy(y))
            );
        }
        // Legend entry.
        let ly = MARGIN_TOP + 14.0 + 20.0 * index as f64;
        let lx = WIDTH - MARGIN_RIGHT + 14.0;
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coord(lx),
            coord(ly - 4.0),
            coord(lx + 22.0),
            coord(ly - 4.0)
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\">{}{}</text>\n",
            coord(lx + 28.0),
            coord(ly),
            s.label,
            if pts.is_empty() { " (no positive data)" } else { "" }
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Vec<Series> {
        vec![
            Series {
                label: "em".to_string(),
                points: vec![(0.5, 0.04), (0.25, 0.02), (0.125, 0.01)],
            },
            Series { label: "ubu".to_string(), points: vec![(0.5, 0.004), (0.25, 0.001)] },
        ]
    }

    #[test]
    fn plot_is_deterministic_and_lists_every_series() {
        let a = loglog_svg("mse vs h", "h", "mse", &demo());
        let b = loglog_svg("mse vs h", "h", "mse", &demo());
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains(">em<") || a.contains(">em"), "legend labels present");
        assert!(a.contains("ubu"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert_eq!(a.matches("<circle").count(), 5);
    }

    #[test]
    fn zero_values_are_skipped_not_plotted() {
        let series = vec![Series {
            label: "flat".to_string(),
            points: vec![(0.5, 0.0), (0.25, 1e-4)],
        }];
        let svg = loglog_svg("t", "x", "y", &series);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn empty_input_renders_a_placeholder() {
        let svg = loglog_svg("t", "x", "y", &[]);
        assert!(svg.contains("no positive data"));
    }

    #[test]
    fn single_point_gets_a_padded_range() {
        let series =
            vec![Series { label: "dot".to_string(), points: vec![(0.5, 0.01)] }];
        let svg = loglog_svg("t", "x", "y", &series);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
