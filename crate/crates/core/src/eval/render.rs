//! Confusion matrix rendering: `log10(1 + count)` shading with the raw count
//! printed under each scaled value.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::metrics::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedCell {
    pub scaled: f64,
    pub raw: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionRendering {
    pub class_names: Vec<String>,
    pub cells: Vec<Vec<RenderedCell>>,
}

pub fn log10_scale(count: u64) -> f64 {
    (1.0 + count as f64).log10()
}

pub fn render_confusion_log10(cm: &ConfusionMatrix, class_names: &[&str]) -> ConfusionRendering {
    let names = (0..cm.classes())
        .map(|i| {
            class_names
                .get(i)
                .map_or_else(|| format!("class{i}"), |s| s.to_string())
        })
        .collect();
    let cells = cm
        .counts()
        .iter()
        .map(|row| {
            row.iter()
                .map(|&raw| RenderedCell {
                    scaled: log10_scale(raw),
                    raw,
                })
                .collect()
        })
        .collect();
    ConfusionRendering {
        class_names: names,
        cells,
    }
}

impl ConfusionRendering {
    /// Text grid: rows are true categories, columns predictions. Each cell
    /// takes two lines, scaled value over raw count.
    pub fn to_text(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(|s| s.len())
            .chain(self.cells.iter().flatten().map(|c| c.raw.to_string().len()))
            .max()
            .unwrap_or(0)
            .max("true\\pred".len());
        let mut out = format!("{:>width$} |", "true\\pred");
        for n in &self.class_names {
            out.push_str(&format!(" {n:>width$}"));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.cells) {
            out.push_str(&format!("{name:>width$} |"));
            for c in row {
                out.push_str(&format!(" {:>width$.2}", c.scaled));
            }
            out.push('\n');
            out.push_str(&format!("{:>width$} |", ""));
            for c in row {
                out.push_str(&format!(" {:>width$}", format!("({})", c.raw)));
            }
            out.push('\n');
        }
        out
    }

    /// Recovers raw counts from [`to_text`](Self::to_text) output.
    pub fn parse_raw_counts(text: &str) -> Result<Vec<Vec<u64>>> {
        let mut rows = Vec::new();
        for line in text.lines().skip(1).skip(1).step_by(2) {
            let body = line.split_once('|').map_or("", |(_, b)| b);
            let row = body
                .split_whitespace()
                .map(|tok| {
                    tok.trim_start_matches('(')
                        .trim_end_matches(')')
                        .parse::<u64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad count {tok:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(rows)
    }

    /// Grayscale raster, darker for larger `log10(1 + count)`.
    pub fn save_png(&self, path: &Path, cell_px: u32) -> Result<()> {
        let n = self.cells.len() as u32;
        let max = self
            .cells
            .iter()
            .flatten()
            .map(|c| c.scaled)
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let side = (n * cell_px).max(1);
        let img = image::GrayImage::from_fn(side, side, |x, y| {
            let (i, j) = ((y / cell_px) as usize, (x / cell_px) as usize);
            let shade = self
                .cells
                .get(i)
                .and_then(|r| r.get(j))
                .map_or(0.0, |c| c.scaled / max);
            image::Luma([(255.0 * (1.0 - shade)).round() as u8])
        });
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_values() {
        let cm = ConfusionMatrix::from_counts(vec![vec![0, 99], vec![9, 1234]]).unwrap();
        let r = render_confusion_log10(&cm, &["a", "b"]);
        assert_eq!(format!("{:.2}", r.cells[0][0].scaled), "0.00");
        assert_eq!(format!("{:.2}", r.cells[0][1].scaled), "2.00");
        assert_eq!(format!("{:.2}", r.cells[1][0].scaled), "1.00");
        let text = r.to_text();
        assert_eq!(
            ConfusionRendering::parse_raw_counts(&text).unwrap(),
            cm.counts()
        );
    }
}
