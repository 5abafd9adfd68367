//! Deterministic SVG emission: per-dataset scatter rows (truth plus the four
//! models) and a grouped bar chart of final mixture weights.

use amfvi::Matrix;

const PANEL: f64 = 240.0;
const MARGIN: f64 = 12.0;
const TITLE_BAND: f64 = 22.0;

/// One row of scatter panels on fixed axes `[-axis, axis]^2`.
///
/// `panels` holds `(title, points)`; a `None` entry renders an
/// "unavailable" placeholder.
pub fn scatter_row_svg(dataset: &str, panels: &[(String, Option<Matrix>)], axis: f64) -> String {
    let width = MARGIN + panels.len() as f64 * (PANEL + MARGIN);
    let height = TITLE_BAND + PANEL + MARGIN;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN:.0}\" y=\"15\" font-family=\"sans-serif\" font-size=\"13\" \
         font-weight=\"bold\">{dataset}</text>\n"
    ));
    for (idx, (title, points)) in panels.iter().enumerate() {
        let x0 = MARGIN + idx as f64 * (PANEL + MARGIN);
        let y0 = TITLE_BAND;
        svg.push_str("<g class=\"panel\">\n");
        svg.push_str(&format!(
            "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{PANEL:.0}\" height=\"{PANEL:.0}\" \
             fill=\"white\" stroke=\"#999\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{title}</text>\n",
            x0 + PANEL / 2.0,
            y0 + PANEL + 11.0
        ));
        match points {
            Some(m) => {
                let color = if idx == 0 { "#333333" } else { "#3670a8" };
                for row in m.rows() {
                    let (px, py) = (row[0], row[1]);
                    if px.abs() > axis || py.abs() > axis {
                        continue;
                    }
                    let cx = x0 + (px + axis) / (2.0 * axis) * PANEL;
                    let cy = y0 + (axis - py) / (2.0 * axis) * PANEL;
                    svg.push_str(&format!(
                        "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"1\" fill=\"{color}\" \
                         fill-opacity=\"0.35\"/>\n"
                    ));
                }
            }
            None => {
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
                     fill=\"#aa3333\" text-anchor=\"middle\">unavailable</text>\n",
                    x0 + PANEL / 2.0,
                    y0 + PANEL / 2.0
                ));
            }
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bar chart of final mixture weights per dataset, annotated with
/// the effective number of experts.
pub fn weights_bar_svg(rows: &[(String, Vec<(String, f64)>, f64)]) -> String {
    let bar_w = 26.0;
    let gap = 30.0;
    let chart_h = 200.0;
    let base_y = 40.0 + chart_h;
    let colors = ["#4c72b0", "#dd8452", "#55a868"];
    let group_w = |k: usize| k as f64 * bar_w;
    let total_w: f64 = MARGIN
        + rows
            .iter()
            .map(|(_, bars, _)| group_w(bars.len()) + gap)
            .sum::<f64>()
        + 140.0;
    let height = base_y + 40.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {total_w:.0} {height:.0}\">\n"
    ));
    svg.push_str(
        "<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\" \
         font-weight=\"bold\">final mixture weights</text>\n",
    );
    let mut x = MARGIN;
    for (dataset, bars, n_eff) in rows {
        for (k, (_, weight)) in bars.iter().enumerate() {
            let h = weight * chart_h;
            let bx = x + k as f64 * bar_w;
            let by = base_y - h;
            svg.push_str(&format!(
                "<rect x=\"{bx:.1}\" y=\"{by:.2}\" width=\"{:.1}\" height=\"{h:.2}\" \
                 fill=\"{}\"/>\n",
                bar_w - 3.0,
                colors[k % colors.len()]
            ));
        }
        let cx = x + group_w(bars.len()) / 2.0;
        svg.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{dataset}</text>\n",
            base_y + 14.0
        ));
        svg.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">N_eff {n_eff:.2}</text>\n",
            base_y + 28.0
        ));
        x += group_w(bars.len()) + gap;
    }
    // Legend from the first row's expert names.
    if let Some((_, bars, _)) = rows.first() {
        for (k, (name, _)) in bars.iter().enumerate() {
            let ly = 40.0 + k as f64 * 18.0;
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
                x + 10.0,
                ly,
                colors[k % colors.len()]
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" \
                 font-size=\"11\">{name}</text>\n",
                x + 27.0,
                ly + 10.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn panel_count_matches_input() {
        let pts = Array2::from_shape_fn((50, 2), |(i, j)| (i as f64 * 0.1) - 2.0 + j as f64);
        let panels = vec![
            ("truth".to_string(), Some(pts.clone())),
            ("realnvp".to_string(), Some(pts)),
            ("maf".to_string(), None),
        ];
        let svg = scatter_row_svg("banana", &panels, 6.0);
        assert_eq!(svg.matches("<g class=\"panel\">").count(), 3);
        assert!(svg.contains("unavailable"));
    }

    #[test]
    fn svg_is_byte_stable() {
        let pts = Array2::from_shape_fn((20, 2), |(i, _)| (i as f64) * 0.05 - 0.5);
        let panels = vec![("truth".to_string(), Some(pts))];
        let a = scatter_row_svg("rings", &panels, 6.0);
        let b = scatter_row_svg("rings", &panels, 6.0);
        assert_eq!(a, b);
    }

    #[test]
    fn bar_heights_reflect_weights() {
        let rows = vec![(
            "banana".to_string(),
            vec![
                ("realnvp".to_string(), 0.505),
                ("maf".to_string(), 0.010),
                ("rbig".to_string(), 0.485),
            ],
            2.10,
        )];
        let svg = weights_bar_svg(&rows);
        assert!(svg.contains("N_eff 2.10"));
        assert!(svg.matches("<rect").count() >= 3);
    }
}
