//! Cosine similarity between label spatial identifiers and the coordinate
//! embeddings of page positions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::doc::COORD_MAX;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::par::Exec;
use crate::tensor::{kernels, Real};

pub const DEFAULT_STRIDE: usize = 10;

/// Cosine values over grid points `(x, y)`, rows keyed by `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGrid {
    pub label: String,
    pub stride: usize,
    /// Coordinates sampled along each axis.
    pub coords: Vec<usize>,
    /// `values[row][col]` is the cell at `(coords[col], coords[row])`.
    pub values: Vec<Vec<f64>>,
    /// Cells set to 0 because a vector had zero norm.
    pub zero_norm_cells: usize,
}

pub fn grid_coords(stride: usize) -> Result<Vec<usize>> {
    if !(1..=COORD_MAX as usize).contains(&stride) {
        return Err(Error::Config(format!("stride must lie in [1, {COORD_MAX}], got {stride}")));
    }
    Ok((0..=COORD_MAX as usize).step_by(stride).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = kernels::dot(a, a).sqrt();
    let nb = kernels::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((kernels::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

impl SimilarityGrid {
    /// Grid from an arbitrary cell function.
    pub fn from_fn(label: &str, stride: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Result<Self> {
        let coords = grid_coords(stride)?;
        let mut zero = 0;
        let values = coords
            .iter()
            .map(|&y| {
                coords
                    .iter()
                    .map(|&x| {
                        f(x, y).unwrap_or_else(|| {
                            zero += 1;
                            0.0
                        })
                    })
                    .collect()
            })
            .collect();
        if zero > 0 {
            log::warn!("grid `{label}`: {zero} cells with a zero-norm vector set to 0");
        }
        Ok(SimilarityGrid {
            label: label.into(),
            stride,
            coords,
            values,
            zero_norm_cells: zero,
        })
    }

    pub fn mean(&self) -> f64 {
        let n = self.coords.len() * self.coords.len();
        self.values.iter().flatten().sum::<f64>() / n as f64
    }
}

/// Grid for one label word's spatial identifier. A point `(i, j)` is embedded
/// as the degenerate box `(i, j, i, j)`.
pub fn word_similarity_grid<T: Real>(model: &Model<T>, word: &str, name: &str, stride: usize) -> Result<SimilarityGrid> {
    let row = model
        .label_word_row(word)
        .ok_or_else(|| Error::Config(format!("`{word}` is not a label word")))?;
    let p = &model.params;
    let ids = &model.ids;
    let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let sid = to64(p.get(ids.spatial_id).row(row));
    let (x0, y0, x1, y1) = (p.get(ids.x0), p.get(ids.y0), p.get(ids.x1), p.get(ids.y1));
    SimilarityGrid::from_fn(name, stride, |x, y| {
        let e: Vec<f64> = (0..sid.len())
            .map(|k| (x0.row(x)[k] + y0.row(y)[k] + x1.row(x)[k] + y1.row(y)[k]).as_f64())
            .collect();
        cosine(&sid, &e)
    })
}

/// Grid for a label, using the first word of its surface name.
pub fn spatial_similarity_grid<T: Real>(model: &Model<T>, label: &str, stride: usize) -> Result<SimilarityGrid> {
    let idx = model
        .labels
        .index_of(label)
        .ok_or_else(|| Error::Config(format!("unknown label `{label}`")))?;
    let word = model.labels.get(idx).name[0].clone();
    word_similarity_grid(model, &word, label, stride)
}

/// One grid per label, in label order.
pub fn label_grids<T: Real>(model: &Model<T>, stride: usize, exec: Exec) -> Result<Vec<SimilarityGrid>> {
    let labels: Vec<String> = model.labels.labels.iter().map(|l| l.id.clone()).collect();
    exec.try_map(&labels, |l| spatial_similarity_grid(model, l, stride))
}

/// Axis-aligned half-open region `[x0, x1) × [y0, y1)` in page coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Region { x0, y0, x1, y1 }
    }

    /// Full-width horizontal band `[y0, y1)`.
    pub fn band(y0: usize, y1: usize) -> Self {
        Region::new(0, y0, COORD_MAX as usize + 1, y1)
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
}

fn region_mean(grid: &SimilarityGrid, r: &Region) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (row, &y) in grid.coords.iter().enumerate() {
        for (col, &x) in grid.coords.iter().enumerate() {
            if r.contains(x, y) {
                sum += grid.values[row][col];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Validation(format!("region {r:?} contains no grid cells")));
    }
    Ok(sum / n as f64)
}

pub fn region_contrast(grid: &SimilarityGrid, a: &Region, b: &Region) -> Result<Contrast> {
    let mean_a = region_mean(grid, a)?;
    let mean_b = region_mean(grid, b)?;
    Ok(Contrast {
        mean_a,
        mean_b,
        difference: mean_a - mean_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Csv,
    Pgm,
}

impl GridFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GridFormat::Csv => "csv",
            GridFormat::Pgm => "pgm",
        }
    }
}

/// `round(255 · (v + 1) / 2)` with halves rounded up.
pub fn pixel(v: f64) -> u8 {
    (255.0 * (v.clamp(-1.0, 1.0) + 1.0) / 2.0 + 0.5).floor() as u8
}

pub fn grid_to_csv(grid: &SimilarityGrid) -> String {
    let mut out = String::from("y\\x");
    for x in &grid.coords {
        write!(out, ",{x}").unwrap();
    }
    out.push('\n');
    for (y, row) in grid.coords.iter().zip(&grid.values) {
        write!(out, "{y}").unwrap();
        for v in row {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Values of a grid written by [`grid_to_csv`].
pub fn parse_grid_csv(text: &str) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let bad = |m: String| Error::Validation(format!("grid csv: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let coords = header
        .split(',')
        .skip(1)
        .map(|c| c.parse().map_err(|_| bad(format!("bad coordinate `{c}`"))))
        .collect::<Result<Vec<usize>>>()?;
    let values = lines
        .map(|l| {
            l.split(',')
                .skip(1)
                .map(|c| c.parse().map_err(|_| bad(format!("bad value `{c}`"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((coords, values))
}

pub fn grid_to_pgm(grid: &SimilarityGrid) -> Vec<u8> {
    let n = grid.coords.len();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(grid.values.iter().flatten().map(|&v| pixel(v)));
    out
}

/// File name `{label}_{stride}.{ext}`.
pub fn grid_file_name(grid: &SimilarityGrid, format: GridFormat) -> String {
    let label: String = grid
        .label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{label}_{}.{}", grid.stride, format.extension())
}

/// Write `grid` into `dir`; returns the file path.
pub fn emit_grid(grid: &SimilarityGrid, dir: &Path, format: GridFormat) -> Result<PathBuf> {
    let path = dir.join(grid_file_name(grid, format));
    let bytes = match format {
        GridFormat::Csv => grid_to_csv(grid).into_bytes(),
        GridFormat::Pgm => grid_to_pgm(grid),
    };
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests;
