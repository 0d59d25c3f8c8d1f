//! SVG renderings of the report: confusion heatmap, per-decade curve and
//! ablation curves.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{CoreError, Result};

use super::ablation::{AblationTable, AblationVariant};
use super::metrics::DecadeStat;

fn plot_err(path: &Path, e: impl std::fmt::Display) -> CoreError {
    CoreError::Evaluation(format!("plot {} failed: {e}", path.display()))
}

/// Heatmap of a `[truth][prediction]` count matrix.
pub fn confusion_heatmap_svg(confusion: &[Vec<u64>], title: &str, path: &Path) -> Result<()> {
    let n = confusion.len();
    if n == 0 {
        return Err(CoreError::Evaluation("empty confusion matrix".into()));
    }
    let max = confusion.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let side = 640u32;
    let root = SVGBackend::new(path, (side, side)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0..n as i32, (n as i32)..0)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("predicted class")
        .y_desc("true class")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(confusion.iter().enumerate().flat_map(|(t, row)| {
            row.iter().enumerate().map(move |(p, &count)| {
                let intensity = (count as f64 / max).sqrt(); // sqrt lifts the off-diagonal detail
                let shade = (255.0 * (1.0 - intensity)) as u8;
                Rectangle::new(
                    [(p as i32, t as i32), (p as i32 + 1, t as i32 + 1)],
                    RGBColor(255, shade, shade).filled(),
                )
            })
        }))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))?;
    Ok(())
}

/// Accuracy (left axis) and sample count (right axis) per decade.
pub fn decade_curve_svg(per_decade: &BTreeMap<i32, DecadeStat>, title: &str, path: &Path) -> Result<()> {
    if per_decade.is_empty() {
        return Err(CoreError::Evaluation("no decade stats to plot".into()));
    }
    let decades: Vec<i32> = per_decade.keys().copied().collect();
    let max_count = per_decade.values().map(|s| s.count).max().unwrap_or(1).max(1) as f64;
    let (x0, x1) = (decades[0] - 5, decades[decades.len() - 1] + 5);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .right_y_label_area_size(50)
        .build_cartesian_2d(x0..x1, 0.0..1.0f64)
        .map_err(|e| plot_err(path, e))?
        .set_secondary_coord(x0..x1, 0.0..max_count * 1.1);
    chart
        .configure_mesh()
        .x_desc("decade")
        .y_desc("accuracy (d = 0)")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_secondary_axes()
        .y_desc("samples")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(LineSeries::new(
            per_decade.iter().map(|(&d, s)| (d, s.accuracy)),
            RED.stroke_width(2),
        ))
        .map_err(|e| plot_err(path, e))?
        .label("accuracy")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED.stroke_width(2)));
    chart
        .draw_secondary_series(LineSeries::new(
            per_decade.iter().map(|(&d, s)| (d, s.count as f64)),
            BLUE.stroke_width(2),
        ))
        .map_err(|e| plot_err(path, e))?
        .label("samples")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE.stroke_width(2)));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))?;
    Ok(())
}

/// Accuracy versus k for the six ablation variants.
pub fn ablation_curves_svg(table: &AblationTable, title: &str, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let max_acc = table
        .rows
        .iter()
        .flat_map(|r| r.cells.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(1..table.n as i32, 0.0..max_acc * 1.15)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("crops considered (k)")
        .y_desc("accuracy (d = 0)")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    let palette = [
        RGBColor(0xd6, 0x27, 0x28),
        RGBColor(0xff, 0x7f, 0x0e),
        RGBColor(0x2c, 0xa0, 0x2c),
        RGBColor(0x17, 0xbe, 0xcf),
        RGBColor(0x1f, 0x77, 0xb4),
        RGBColor(0x94, 0x67, 0xbd),
    ];
    for (vi, variant) in AblationVariant::ALL.iter().enumerate() {
        let color = palette[vi];
        chart
            .draw_series(LineSeries::new(
                table.rows.iter().map(|r| (r.k as i32, r.cells[vi])),
                color.stroke_width(2),
            ))
            .map_err(|e| plot_err(path, e))?
            .label(variant.label())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::ablation::AblationRow;

    #[test]
    fn plots_render_nonempty_svg() {
        let dir = tempfile::tempdir().unwrap();
        let confusion = vec![vec![5, 1], vec![2, 7]];
        let p1 = dir.path().join("confusion.svg");
        confusion_heatmap_svg(&confusion, "confusion", &p1).unwrap();
        assert!(std::fs::metadata(&p1).unwrap().len() > 500);

        let mut decades = BTreeMap::new();
        decades.insert(1930, DecadeStat { accuracy: 0.2, count: 10 });
        decades.insert(1950, DecadeStat { accuracy: 0.5, count: 40 });
        decades.insert(1990, DecadeStat { accuracy: 0.4, count: 5 });
        let p2 = dir.path().join("decades.svg");
        decade_curve_svg(&decades, "by decade", &p2).unwrap();
        assert!(std::fs::metadata(&p2).unwrap().len() > 500);

        let table = AblationTable {
            n: 3,
            subset_counts: vec![3, 3, 1],
            rows: (1..=3)
                .map(|k| AblationRow { k, cells: [0.1 * k as f64; 6] })
                .collect(),
            photos_per_variant: [4; 6],
        };
        let p3 = dir.path().join("ablation.svg");
        ablation_curves_svg(&table, "ablation", &p3).unwrap();
        assert!(std::fs::metadata(&p3).unwrap().len() > 500);
    }
}
