//! Deterministic SVG charts: no timestamps, no randomness, fixed palette,
//! coordinates rounded to two decimals. Rendering the same data twice yields
//! byte-identical files.

/// Line colors, reused in order when a chart has more series than entries.
pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const PLOT_LEFT: f64 = 64.0;
const PLOT_RIGHT: f64 = 616.0;
const PLOT_TOP: f64 = 44.0;
const PLOT_BOTTOM: f64 = 352.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: shortest representation that still reads well on an axis.
fn tick_label(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return None;
    }
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    Some((lo, hi))
}

fn axis_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        // snap near-zero ticks so "-0" never appears
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

/// Multi-series line chart. Non-finite y values break the line into segments.
/// Returns `None` when no series contains a finite point.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Option<String> {
    let (x_lo, x_hi) = range_of(
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, _)| x),
    )?;
    let (y_lo, y_hi) = range_of(series.iter().flat_map(|s| s.points.iter()).map(|&(_, y)| y))?;
    let pad = (y_hi - y_lo) * 0.05;
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let sx = |x: f64| PLOT_LEFT + (x - x_lo) / (x_hi - x_lo) * (PLOT_RIGHT - PLOT_LEFT);
    let sy = |y: f64| PLOT_BOTTOM - (y - y_lo) / (y_hi - y_lo) * (PLOT_BOTTOM - PLOT_TOP);

    let mut svg = svg_open();
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" \
         font-family=\"sans-serif\">{}</text>\n",
        fmt(WIDTH / 2.0),
        escape(title)
    ));

    for t in axis_ticks(x_lo, x_hi) {
        let x = fmt(sx(t));
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            fmt(PLOT_TOP),
            fmt(PLOT_BOTTOM)
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
             font-family=\"sans-serif\">{}</text>\n",
            fmt(PLOT_BOTTOM + 16.0),
            tick_label(t)
        ));
    }
    for t in axis_ticks(y_lo, y_hi) {
        let y = fmt(sy(t));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
            fmt(PLOT_LEFT),
            fmt(PLOT_RIGHT)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\" \
             font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            fmt(PLOT_LEFT - 6.0),
            tick_label(t)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>\n",
        fmt(PLOT_LEFT),
        fmt(PLOT_TOP),
        fmt(PLOT_RIGHT - PLOT_LEFT),
        fmt(PLOT_BOTTOM - PLOT_TOP)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         font-family=\"sans-serif\">{}</text>\n",
        fmt((PLOT_LEFT + PLOT_RIGHT) / 2.0),
        fmt(HEIGHT - 8.0),
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt((PLOT_TOP + PLOT_BOTTOM) / 2.0),
        fmt((PLOT_TOP + PLOT_BOTTOM) / 2.0),
        escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, svg: &mut String| {
            if seg.len() >= 2 {
                svg.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.5\"/>\n",
                    seg.join(" ")
                ));
            } else if seg.len() == 1 {
                let (x, y) = seg[0].split_once(',').unwrap();
                svg.push_str(&format!(
                    "<circle cx=\"{x}\" cy=\"{y}\" r=\"2\" fill=\"{color}\"/>\n"
                ));
            }
            seg.clear();
        };
        for &(x, y) in &s.points {
            if y.is_finite() && x.is_finite() {
                segment.push(format!("{},{}", fmt(sx(x)), fmt(sy(y))));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);

        let ly = PLOT_TOP + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n",
            fmt(PLOT_RIGHT - 150.0),
            fmt(ly),
            fmt(PLOT_RIGHT - 126.0),
            fmt(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" dominant-baseline=\"middle\" font-size=\"11\" \
             font-family=\"sans-serif\">{}</text>\n",
            fmt(PLOT_RIGHT - 120.0),
            fmt(ly),
            escape(&s.name)
        ));
    }

    svg.push_str("</svg>\n");
    Some(svg)
}

/// Diverging blue-white-red fill, symmetric around zero.
fn diverging_color(v: f64, max_abs: f64) -> String {
    if !v.is_finite() {
        return "#cccccc".to_string();
    }
    let t = if max_abs > 0.0 { (v / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t.abs()).round() as u8;
    let (r, g, b) = if t < 0.0 {
        (lerp(255.0, 31.0), lerp(255.0, 119.0), lerp(255.0, 180.0))
    } else {
        (lerp(255.0, 214.0), lerp(255.0, 39.0), lerp(255.0, 40.0))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Grid heatmap with row index = first label set, column index = second.
/// `values` is row-major with `rows.len() * cols.len()` entries.
/// Returns `None` when every value is non-finite or the grid is empty.
pub fn heatmap(
    title: &str,
    row_axis: &str,
    col_axis: &str,
    rows: &[usize],
    cols: &[usize],
    values: &[f64],
) -> Option<String> {
    assert_eq!(values.len(), rows.len() * cols.len(), "heatmap grid shape");
    if rows.is_empty() || cols.is_empty() {
        return None;
    }
    let max_abs = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .map(f64::abs)
        .fold(f64::NAN, f64::max);
    if !max_abs.is_finite() {
        return None;
    }

    let grid_left = 70.0;
    let grid_top = 44.0;
    let grid_w = 480.0;
    let grid_h = 300.0;
    let cell_w = grid_w / cols.len() as f64;
    let cell_h = grid_h / rows.len() as f64;

    let mut svg = svg_open();
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" \
         font-family=\"sans-serif\">{}</text>\n",
        fmt(WIDTH / 2.0),
        escape(title)
    ));

    for (ri, &row) in rows.iter().enumerate() {
        for (ci, &col) in cols.iter().enumerate() {
            let v = values[ri * cols.len() + ci];
            let x = grid_left + ci as f64 * cell_w;
            let y = grid_top + ri as f64 * cell_h;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" \
                 stroke=\"#ffffff\" stroke-width=\"0.5\"><title>{row},{col}: {v}</title></rect>\n",
                fmt(x),
                fmt(y),
                fmt(cell_w),
                fmt(cell_h),
                diverging_color(v, max_abs)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"middle\" \
             font-size=\"11\" font-family=\"sans-serif\">{row}</text>\n",
            fmt(grid_left - 6.0),
            fmt(grid_top + (ri as f64 + 0.5) * cell_h)
        ));
    }
    for (ci, &col) in cols.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
             font-family=\"sans-serif\">{col}</text>\n",
            fmt(grid_left + (ci as f64 + 0.5) * cell_w),
            fmt(grid_top + grid_h + 16.0)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         font-family=\"sans-serif\">{}</text>\n",
        fmt(grid_left + grid_w / 2.0),
        fmt(grid_top + grid_h + 36.0),
        escape(col_axis)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        fmt(grid_top + grid_h / 2.0),
        fmt(grid_top + grid_h / 2.0),
        escape(row_axis)
    ));

    let bar_x = grid_left + grid_w + 24.0;
    svg.push_str(
        "<defs><linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\
         <stop offset=\"0\" stop-color=\"#1f77b4\"/>\
         <stop offset=\"0.5\" stop-color=\"#ffffff\"/>\
         <stop offset=\"1\" stop-color=\"#d62728\"/>\
         </linearGradient></defs>\n",
    );
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"16\" height=\"{}\" fill=\"url(#scale)\" \
         stroke=\"#333333\" stroke-width=\"0.5\"/>\n",
        fmt(bar_x),
        fmt(grid_top),
        fmt(grid_h)
    ));
    for (offset, value) in [(0.0, max_abs), (0.5, 0.0), (1.0, -max_abs)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" font-family=\"sans-serif\" \
             dominant-baseline=\"middle\">{}</text>\n",
            fmt(bar_x + 20.0),
            fmt(grid_top + grid_h * offset),
            format_args!("{value:.3}")
        ));
    }

    svg.push_str("</svg>\n");
    Some(svg)
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        WIDTH as u32, HEIGHT as u32, WIDTH as u32, HEIGHT as u32, WIDTH as u32, HEIGHT as u32
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
