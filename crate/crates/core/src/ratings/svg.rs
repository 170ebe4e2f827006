use std::fmt::Write;

use super::CorrelationMatrix;

const CELL: usize = 36;
const LEFT: usize = 140;
const TOP: usize = 120;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Diverging blue-white-red fill for r in [-1, 1]; grey for undefined cells.
fn fill(r: Option<f64>) -> String {
    let Some(r) = r else {
        return "#bdbdbd".to_string();
    };
    let t = r.clamp(-1.0, 1.0).abs();
    let mix = |full: u8| (255.0 - (255.0 - f64::from(full)) * t).round() as u8;
    let (rr, gg, bb) = if r >= 0.0 {
        (mix(178), mix(24), mix(43))
    } else {
        (mix(33), mix(102), mix(172))
    };
    format!("#{rr:02x}{gg:02x}{bb:02x}")
}

/// Heatmap of a correlation matrix with the value printed in each cell.
pub fn correlation_svg(m: &CorrelationMatrix, title: &str) -> String {
    let width = LEFT + CELL * m.columns.len() + 20;
    let height = TOP + CELL * m.rows.len() + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    for (j, col) in m.columns.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-60)">{}</text>"#,
            TOP - 4,
            escape(col)
        );
    }
    for (i, row) in m.rows.iter().enumerate() {
        let y = TOP + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL / 2 + 3,
            escape(row)
        );
        for (j, cell) in m.cells[i].iter().enumerate() {
            let x = LEFT + j * CELL;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#ffffff"/>"##,
                fill(cell.r)
            );
            let label = cell.r.map(|r| format!("{r:.2}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 3
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::CorrelationCell;

    #[test]
    fn renders_every_cell() {
        let cell = |r| CorrelationCell { r, n: 5, flag: None };
        let m = CorrelationMatrix {
            rows: vec!["WT".into(), "a<b".into()],
            columns: vec!["DICE".into(), "HDRFDST".into()],
            cells: vec![vec![cell(Some(0.5)), cell(Some(-1.0))], vec![cell(None), cell(Some(1.0))]],
        };
        let svg = correlation_svg(&m, "raw");
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains(">n/a<"));
        assert!(svg.contains("#b2182b"));
        assert!(svg.contains("#2166ac"));
    }
}
