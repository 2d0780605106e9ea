use serde::{Deserialize, Serialize};

/// One classified operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointVerdict {
    pub p: f64,
    pub q: f64,
    pub survived: bool,
}

/// Square lattice of possibly overlapping cells over a sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellLattice {
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub cell_size: f64,
    pub stride: f64,
}

impl CellLattice {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err("cell size must be > 0".into());
        }
        if !(self.stride > 0.0 && self.stride <= self.cell_size) {
            return Err("stride must be in (0, cell size]".into());
        }
        if !(self.p_range.0 <= self.p_range.1 && self.q_range.0 <= self.q_range.1) {
            return Err("ranges must satisfy lo <= hi".into());
        }
        Ok(())
    }

    /// Cell centers along one axis. The first cell starts at `lo`; the last
    /// one reaches `hi` and may stick out past it. A range narrower than a
    /// cell gets a single centered cell.
    pub fn axis_centers(&self, (lo, hi): (f64, f64)) -> Vec<f64> {
        let width = hi - lo;
        if width <= self.cell_size {
            return vec![0.5 * (lo + hi)];
        }
        let extra = ((width - self.cell_size) / self.stride - 1e-9).ceil().max(0.0) as usize;
        (0..=extra)
            .map(|k| lo + 0.5 * self.cell_size + k as f64 * self.stride)
            .collect()
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        let ps = self.axis_centers(self.p_range);
        let qs = self.axis_centers(self.q_range);
        ps.iter()
            .flat_map(|&p| qs.iter().map(move |&q| (p, q)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub p_center: f64,
    pub q_center: f64,
    pub count: usize,
    pub survivors: usize,
    /// Survival fraction; absent when fewer than the minimum count.
    pub mu: Option<f64>,
}

/// Aggregate verdicts into lattice cells. A point belongs to every cell whose
/// center lies within half a cell size on both axes.
pub fn cluster_cells(samples: &[PointVerdict], lattice: &CellLattice, min_count: usize) -> Vec<Cell> {
    let half = 0.5 * lattice.cell_size;
    lattice
        .centers()
        .into_iter()
        .map(|(pc, qc)| {
            let mut count = 0;
            let mut survivors = 0;
            for s in samples {
                if (s.p - pc).abs() <= half && (s.q - qc).abs() <= half {
                    count += 1;
                    survivors += usize::from(s.survived);
                }
            }
            Cell {
                p_center: pc,
                q_center: qc,
                count,
                survivors,
                mu: (count >= min_count && count > 0).then(|| survivors as f64 / count as f64),
            }
        })
        .collect()
}
