//! Ground-truth value grids, MSVE, the leakage metric, and grid output
//! (CSV and PGM heatmaps).
//!
//! Everything is evaluated on a uniform grid over the map; cells whose
//! center is inside a wall or a reward zone are flagged non-free and
//! excluded from every metric (the value of a terminal or blocked point
//! is undefined under the absorbing-reward convention).

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::envsim::{rollout_return, MapLayout, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::geom::{Point, Rect};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub col: usize,
    pub row: usize,
    pub center: Point,
    pub free: bool,
    pub value: f64,
    pub stderr: f64,
}

/// Uniform grid of per-cell values over a map, row-major from the
/// bottom-left cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub map_id: String,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub cells: Vec<GridCell>,
}

impl ValueGrid {
    /// Lay out the grid and mark free cells; values start at zero.
    pub fn empty(layout: &MapLayout, cell_size: f64) -> Result<Self> {
        if !(cell_size >= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "cell_size must be >= 2, got {cell_size}"
            )));
        }
        let n_cols = (layout.width / cell_size).ceil() as usize;
        let n_rows = (layout.height / cell_size).ceil() as usize;
        let mut cells = Vec::with_capacity(n_cols * n_rows);
        for row in 0..n_rows {
            for col in 0..n_cols {
                let center = Point::new(
                    (col as f64 + 0.5) * cell_size,
                    (row as f64 + 0.5) * cell_size,
                );
                cells.push(GridCell {
                    col,
                    row,
                    center,
                    free: layout.is_free(center),
                    value: 0.0,
                    stderr: 0.0,
                });
            }
        }
        Ok(ValueGrid {
            map_id: layout.map_id.clone(),
            cell_size,
            n_cols,
            n_rows,
            cells,
        })
    }

    pub fn cell(&self, col: usize, row: usize) -> &GridCell {
        &self.cells[row * self.n_cols + col]
    }

    pub fn cell_at(&self, p: Point) -> Option<&GridCell> {
        let col = (p.x / self.cell_size).floor() as isize;
        let row = (p.y / self.cell_size).floor() as isize;
        if col < 0 || row < 0 || col as usize >= self.n_cols || row as usize >= self.n_rows {
            return None;
        }
        Some(self.cell(col as usize, row as usize))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().filter(|c| c.free)
    }

    fn same_shape(&self, other: &ValueGrid) -> Result<()> {
        if self.map_id != other.map_id
            || self.cell_size != other.cell_size
            || self.n_cols != other.n_cols
            || self.n_rows != other.n_rows
        {
            return Err(Error::GridMismatch(format!(
                "{}/{}x{}@{} vs {}/{}x{}@{}",
                self.map_id,
                self.n_cols,
                self.n_rows,
                self.cell_size,
                other.map_id,
                other.n_cols,
                other.n_rows,
                other.cell_size
            )));
        }
        if self
            .cells
            .iter()
            .zip(&other.cells)
            .any(|(a, b)| a.free != b.free)
        {
            return Err(Error::GridMismatch("free-cell masks differ".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("map_id,cell_size,n_cols,n_rows\n");
        let _ = writeln!(
            out,
            "{},{},{},{}",
            self.map_id, self.cell_size, self.n_cols, self.n_rows
        );
        out.push_str("col,row,cx,cy,free,value,stderr\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.col,
                c.row,
                c.center.x,
                c.center.y,
                u8::from(c.free),
                c.value,
                c.stderr
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let parse = |what: &str, s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                what: format!("grid csv field {what}"),
                detail: format!("`{s}`: {e}"),
            })
        };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "map_id,cell_size,n_cols,n_rows" {
            return Err(Error::Parse {
                what: "grid csv".into(),
                detail: "missing grid header".into(),
            });
        }
        let meta_line = lines.next().ok_or_else(|| Error::Parse {
            what: "grid csv".into(),
            detail: "missing header values".into(),
        })?;
        let meta: Vec<&str> = meta_line.split(',').collect();
        if meta.len() != 4 {
            return Err(Error::Parse {
                what: "grid csv".into(),
                detail: "header needs 4 fields".into(),
            });
        }
        let map_id = meta[0].trim().to_string();
        let cell_size = parse("cell_size", meta[1])?;
        let n_cols = parse("n_cols", meta[2])? as usize;
        let n_rows = parse("n_rows", meta[3])? as usize;
        let columns = lines.next().unwrap_or_default();
        if columns.trim() != "col,row,cx,cy,free,value,stderr" {
            return Err(Error::Parse {
                what: "grid csv".into(),
                detail: "missing column header".into(),
            });
        }
        let mut cells = Vec::with_capacity(n_cols * n_rows);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Parse {
                    what: "grid csv".into(),
                    detail: format!("row needs 7 fields, got {}", f.len()),
                });
            }
            cells.push(GridCell {
                col: parse("col", f[0])? as usize,
                row: parse("row", f[1])? as usize,
                center: Point::new(parse("cx", f[2])?, parse("cy", f[3])?),
                free: parse("free", f[4])? != 0.0,
                value: parse("value", f[5])?,
                stderr: parse("stderr", f[6])?,
            });
        }
        if cells.len() != n_cols * n_rows {
            return Err(Error::Parse {
                what: "grid csv".into(),
                detail: format!(
                    "expected {} cells, got {}",
                    n_cols * n_rows,
                    cells.len()
                ),
            });
        }
        Ok(ValueGrid {
            map_id,
            cell_size,
            n_cols,
            n_rows,
            cells,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Monte-Carlo ground truth: per free cell, the average discounted
/// return of `rollouts_per_cell` seeded rollouts from the cell center,
/// with its standard error. Cell `i` draws from seed substream `i`, so
/// the grid is reproducible cell-by-cell and safe to fill in parallel.
pub fn ground_truth(
    layout: &MapLayout,
    gamma: f64,
    cell_size: f64,
    rollouts_per_cell: usize,
    max_len: usize,
    seed: u64,
) -> Result<ValueGrid> {
    if rollouts_per_cell == 0 {
        return Err(Error::InvalidParameter("rollouts_per_cell must be >= 1".into()));
    }
    let mut grid = ValueGrid::empty(layout, cell_size)?;
    let mut returns = Vec::with_capacity(rollouts_per_cell);
    for idx in 0..grid.cells.len() {
        if !grid.cells[idx].free {
            continue;
        }
        let mut rng = crate::envsim::episode_rng(seed, idx as u64);
        returns.clear();
        for _ in 0..rollouts_per_cell {
            returns.push(rollout_return(
                layout,
                grid.cells[idx].center,
                &mut rng,
                max_len,
                gamma,
            ));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let stderr = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        grid.cells[idx].value = mean;
        grid.cells[idx].stderr = stderr;
    }
    Ok(grid)
}

/// Evaluate an arbitrary value function on the free cells of a grid.
pub fn value_grid_from_fn(
    layout: &MapLayout,
    cell_size: f64,
    mut f: impl FnMut(Point) -> f64,
) -> Result<ValueGrid> {
    let mut grid = ValueGrid::empty(layout, cell_size)?;
    for cell in grid.cells.iter_mut() {
        if cell.free {
            cell.value = f(cell.center);
        }
    }
    Ok(grid)
}

/// Per-cell signed error (prediction − truth) on free cells.
pub fn error_grid(pred: &ValueGrid, truth: &ValueGrid) -> Result<ValueGrid> {
    pred.same_shape(truth)?;
    let mut out = pred.clone();
    for (cell, t) in out.cells.iter_mut().zip(&truth.cells) {
        if cell.free {
            cell.value -= t.value;
            cell.stderr = 0.0;
        }
    }
    Ok(out)
}

pub enum Weighting<'a> {
    Uniform,
    Visitation(&'a TrajectoryDataset),
}

/// Weighted mean of squared per-cell errors over free cells.
/// Visitation weights are the dataset's state-occupancy counts per free
/// cell, normalized to sum to one.
pub fn msve(pred: &ValueGrid, truth: &ValueGrid, weighting: Weighting<'_>) -> Result<f64> {
    pred.same_shape(truth)?;
    match weighting {
        Weighting::Uniform => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (p, t) in pred.cells.iter().zip(&truth.cells) {
                if p.free {
                    let d = p.value - t.value;
                    sum += d * d;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::EmptyRegion);
            }
            Ok(sum / n as f64)
        }
        Weighting::Visitation(ds) => {
            let mut counts = vec![0.0f64; pred.cells.len()];
            for ep in &ds.episodes {
                for i in 0..ep.n_states() {
                    if let Some(cell) = pred.cell_at(ep.state(i)) {
                        if cell.free {
                            counts[cell.row * pred.n_cols + cell.col] += 1.0;
                        }
                    }
                }
            }
            let total: f64 = counts.iter().sum();
            if total == 0.0 {
                return Err(Error::Dataset(
                    "dataset never visits a free cell of this grid".into(),
                ));
            }
            let mut sum = 0.0;
            for ((p, t), w) in pred.cells.iter().zip(&truth.cells).zip(&counts) {
                if p.free && *w > 0.0 {
                    let d = p.value - t.value;
                    sum += w / total * d * d;
                }
            }
            Ok(sum)
        }
    }
}

/// Mean signed error over the free cells whose centers fall in `region`;
/// positive means over-estimation.
pub fn leakage_score(error: &ValueGrid, region: Rect) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in error.free_cells() {
        if region.contains(c.center) {
            sum += c.value;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Region whose true value is (near) zero, where leakage is measured.
pub fn default_leakage_region(map_id: &str) -> Result<Rect> {
    match map_id {
        // Center of the middle corridor, away from both passage columns
        // and one cell away from each wall.
        "map1" => Ok(Rect::new(100.0, 110.0, 300.0, 190.0)),
        // The whole sealed rewardless upper room.
        "map2" => Ok(Rect::new(0.0, 150.0, 400.0, 300.0)),
        // The sealed padding chamber.
        "map3" => Ok(Rect::new(100.0, 200.0, 300.0, 300.0)),
        other => Err(Error::UnknownMap(other.to_string())),
    }
}

/// The map2 room that contains the reward, for the "negative leakage"
/// reading.
pub fn map2_lower_region() -> Rect {
    Rect::new(0.0, 0.0, 400.0, 150.0)
}

/// P2 (ASCII) PGM heatmap: free cells mapped linearly onto 1..=255 over
/// the grid's own value range, non-free cells at the reserved intensity
/// 0. The raster runs top row first.
pub fn grid_to_pgm(grid: &ValueGrid) -> (String, f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for c in grid.free_cells() {
        min = min.min(c.value);
        max = max.max(c.value);
    }
    if !min.is_finite() {
        min = 0.0;
        max = 0.0;
    }
    let span = max - min;
    let mut out = String::new();
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{} {}", grid.n_cols, grid.n_rows);
    let _ = writeln!(out, "255");
    for row in (0..grid.n_rows).rev() {
        let mut line = String::new();
        for col in 0..grid.n_cols {
            let c = grid.cell(col, row);
            let intensity = if !c.free {
                0
            } else if span <= 0.0 {
                255
            } else {
                1 + ((c.value - min) / span * 254.0).round() as u32
            };
            if col > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{intensity}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    (out, min, max)
}

/// Write `<base>.pgm`, `<base>.range.txt` (colorbar range) and
/// `<base>.csv` for a grid.
pub fn render_grid(grid: &ValueGrid, base: &Path) -> Result<()> {
    let (pgm, min, max) = grid_to_pgm(grid);
    std::fs::write(base.with_extension("pgm"), pgm)?;
    std::fs::write(base.with_extension("range.txt"), format!("{min} {max}\n"))?;
    grid.save_csv(&base.with_extension("csv"))?;
    Ok(())
}

/// Scalar evaluation results of one experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub map_id: String,
    pub method: String,
    pub embedding: String,
    pub seed: u64,
    pub dataset_hash: u64,
    pub msve_uniform: f64,
    pub msve_mu: f64,
    pub leakage_score: f64,
    pub leakage_region: Rect,
}

impl EvalReport {
    /// CSV with the run metadata as a `#` text header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# map_id={} method={} embedding={} seed={} dataset_hash={:016x}",
            self.map_id, self.method, self.embedding, self.seed, self.dataset_hash
        );
        let _ = writeln!(
            out,
            "# leakage_region={},{},{},{}",
            self.leakage_region.min.x,
            self.leakage_region.min.y,
            self.leakage_region.max.x,
            self.leakage_region.max.y
        );
        out.push_str("metric,value\n");
        let _ = writeln!(out, "msve_uniform,{}", self.msve_uniform);
        let _ = writeln!(out, "msve_mu,{}", self.msve_mu);
        let _ = writeln!(out, "leakage_score,{}", self.leakage_score);
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
