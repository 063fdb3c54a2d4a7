//! Raster Voronoi partition of the image induced by annotated points.
//!
//! Pixel `(x, y)` belongs to the site nearest to the integer coordinate
//! `(x, y)` (no half-pixel offset), with exact distance ties going to the
//! lowest site index. Ridge pixels are the one-pixel-thick boundary of that
//! partition and act as barriers for the watershed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::grid::Grid;

/// Sites closer than this are merged into one cell.
pub const DUPLICATE_DISTANCE: f64 = 0.5;

/// Per-pixel index of the nearest site.
pub type CellLabelMap = Grid<u32>;
/// Per-pixel ridge flag.
pub type RidgeMask = Grid<bool>;

/// Instances whose points coincided with an earlier point. Both share the
/// cell labeled with `kept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergedSite {
    pub kept: usize,
    pub merged: usize,
}

#[derive(Clone, Debug)]
pub struct VoronoiPartition {
    pub cells: CellLabelMap,
    pub ridges: RidgeMask,
    pub merged: Vec<MergedSite>,
}

impl VoronoiPartition {
    pub fn width(&self) -> usize {
        self.cells.width()
    }

    pub fn height(&self) -> usize {
        self.cells.height()
    }

    pub fn ridge_count(&self) -> usize {
        self.ridges.data().iter().filter(|&&r| r).count()
    }
}

/// Builds the nearest-site label map and its ridge mask.
///
/// Points must lie inside `[0, width) × [0, height)`. The labels are instance
/// indices; a merged duplicate never appears as a label.
pub fn voronoi_partition(points: &[Point2], width: usize, height: usize) -> Result<VoronoiPartition> {
    if points.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("image size {width}x{height}")));
    }
    for p in points {
        if !p.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x >= width as f64 || p.y >= height as f64 {
            return Err(Error::OutOfBounds { x: p.x, y: p.y, width, height });
        }
    }

    let mut sites: Vec<(usize, Point2)> = Vec::with_capacity(points.len());
    let mut merged = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        match sites.iter().find(|(_, q)| q.dist(p) < DUPLICATE_DISTANCE) {
            Some(&(kept, _)) => {
                log::warn!("instance {i} duplicates instance {kept}; sharing its Voronoi cell");
                merged.push(MergedSite { kept, merged: i });
            }
            None => sites.push((i, p)),
        }
    }

    let mut labels = vec![0u32; width * height];
    labels.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let py = y as f64;
        for (x, out) in row.iter_mut().enumerate() {
            let px = x as f64;
            let mut best = f64::INFINITY;
            let mut best_label = 0usize;
            // Sites are in increasing index order, so strict `<` keeps the
            // lowest index on ties.
            for &(idx, s) in &sites {
                let d = (s.x - px) * (s.x - px) + (s.y - py) * (s.y - py);
                if d < best {
                    best = d;
                    best_label = idx;
                }
            }
            *out = best_label as u32;
        }
    });
    let cells = Grid::from_vec(width, height, labels);
    let ridges = ridge_mask(&cells);
    Ok(VoronoiPartition { cells, ridges, merged })
}

/// A pixel is a ridge pixel when one of its 4-neighbors carries a higher
/// label. This yields a one-pixel-thick boundary that still separates every
/// pair of cells under 4-connectivity.
pub fn ridge_mask(cells: &CellLabelMap) -> RidgeMask {
    Grid::from_fn(cells.width(), cells.height(), |x, y| {
        let own = *cells.get(x, y);
        cells.neighbors4(x, y).any(|(nx, ny)| *cells.get(nx, ny) > own)
    })
}
