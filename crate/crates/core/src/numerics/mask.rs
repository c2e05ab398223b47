//! Run-length encoded binary masks over row-major pixel order.

use serde::{Deserialize, Serialize};

use crate::numerics::bbox::BBox;
use crate::numerics::GeometryError;

/// One maximal run of set pixels. `start` indexes row-major pixels,
/// `len >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: u32,
    pub len: u32,
}

/// Binary mask stored as sorted, non-overlapping RLE runs over row-major
/// pixel order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<Run>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Mask { width, height, runs: Vec::new() }
    }

    /// Builds a mask from arbitrary run pairs, normalizing into sorted,
    /// merged, non-overlapping form. Rejects out-of-range runs.
    pub fn from_runs(width: u32, height: u32, mut runs: Vec<Run>) -> Result<Self, GeometryError> {
        let total = width as u64 * height as u64;
        for r in &runs {
            if r.len == 0 {
                return Err(GeometryError::InvalidMask("zero-length run".into()));
            }
            if r.start as u64 + r.len as u64 > total {
                return Err(GeometryError::InvalidMask(format!(
                    "run {}+{} exceeds {}x{} pixel count",
                    r.start, r.len, width, height
                )));
            }
        }
        runs.sort_by_key(|r| r.start);
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(last) if r.start <= last.start + last.len => {
                    let end = (r.start + r.len).max(last.start + last.len);
                    last.len = end - last.start;
                }
                _ => merged.push(r),
            }
        }
        Ok(Mask { width, height, runs: merged })
    }

    /// Validates the stored invariants without normalizing.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let total = self.width as u64 * self.height as u64;
        let mut prev_end: u64 = 0;
        for (i, r) in self.runs.iter().enumerate() {
            if r.len == 0 {
                return Err(GeometryError::InvalidMask("zero-length run".into()));
            }
            if i > 0 && (r.start as u64) < prev_end {
                return Err(GeometryError::InvalidMask("runs unsorted or overlapping".into()));
            }
            prev_end = r.start as u64 + r.len as u64;
            if prev_end > total {
                return Err(GeometryError::InvalidMask("run exceeds pixel count".into()));
            }
        }
        Ok(())
    }

    pub fn from_pixels<I: IntoIterator<Item = (u32, u32)>>(
        width: u32,
        height: u32,
        pixels: I,
    ) -> Result<Self, GeometryError> {
        let mut idx: Vec<u32> = pixels
            .into_iter()
            .map(|(x, y)| {
                debug_assert!(x < width && y < height);
                y * width + x
            })
            .collect();
        idx.sort_unstable();
        idx.dedup();
        let mut runs = Vec::new();
        for i in idx {
            match runs.last_mut() {
                Some(Run { start, len }) if *start + *len == i => *len += 1,
                _ => runs.push(Run { start: i, len: 1 }),
            }
        }
        Ok(Mask { width, height, runs })
    }

    /// Fills an axis-aligned box (clipped to the image) as a mask.
    pub fn from_box(width: u32, height: u32, b: &BBox) -> Self {
        let x1 = b.x1.floor().max(0.0) as u32;
        let y1 = b.y1.floor().max(0.0) as u32;
        let x2 = (b.x2.ceil().min(width as f64) as u32).min(width);
        let y2 = (b.y2.ceil().min(height as f64) as u32).min(height);
        let mut runs = Vec::new();
        if x2 > x1 {
            for y in y1..y2 {
                runs.push(Run { start: y * width + x1, len: x2 - x1 });
            }
        }
        Mask { width, height, runs }
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|r| r.len as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.runs
            .iter()
            .flat_map(move |r| (r.start..r.start + r.len).map(move |i| (i % w, i / w)))
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask, GeometryError> {
        self.check_dims(other)?;
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.runs.len() && j < other.runs.len() {
            let a = self.runs[i];
            let b = other.runs[j];
            let start = a.start.max(b.start);
            let end = (a.start + a.len).min(b.start + b.len);
            if end > start {
                out.push(Run { start, len: end - start });
            }
            if a.start + a.len <= b.start + b.len {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(Mask { width: self.width, height: self.height, runs: out })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, GeometryError> {
        self.check_dims(other)?;
        let mut runs = self.runs.clone();
        runs.extend_from_slice(&other.runs);
        Mask::from_runs(self.width, self.height, runs)
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<u64, GeometryError> {
        Ok(self.intersection(other)?.area())
    }

    /// Pixel bounding box; edges lie on the pixel grid so a filled
    /// rectangle round-trips exactly.
    pub fn bounding_box(&self) -> Option<BBox> {
        if self.runs.is_empty() {
            return None;
        }
        let (mut minx, mut miny, mut maxx, mut maxy) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for r in &self.runs {
            let y0 = r.start / self.width;
            let x0 = r.start % self.width;
            let last = r.start + r.len - 1;
            let y1 = last / self.width;
            let x1 = last % self.width;
            miny = miny.min(y0);
            maxy = maxy.max(y1);
            if y0 == y1 {
                minx = minx.min(x0);
                maxx = maxx.max(x1);
            } else {
                // run wraps at least one full row
                minx = 0;
                maxx = self.width - 1;
            }
        }
        Some(BBox {
            x1: minx as f64,
            y1: miny as f64,
            x2: (maxx + 1) as f64,
            y2: (maxy + 1) as f64,
        })
    }

    /// Mean of set pixel centers.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        if self.runs.is_empty() {
            return None;
        }
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for (x, y) in self.iter_pixels() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1.0;
        }
        Some([sx / n, sy / n])
    }

    /// Pixels with at least one missing 4-neighbor; the minimum distance
    /// between two disjoint masks is attained on these.
    pub fn boundary_pixels(&self) -> Vec<(u32, u32)> {
        let set: std::collections::HashSet<(u32, u32)> = self.iter_pixels().collect();
        let mut out: Vec<(u32, u32)> = set
            .iter()
            .copied()
            .filter(|&(x, y)| {
                x == 0
                    || y == 0
                    || x + 1 == self.width
                    || y + 1 == self.height
                    || !set.contains(&(x - 1, y))
                    || !set.contains(&(x + 1, y))
                    || !set.contains(&(x, y - 1))
                    || !set.contains(&(x, y + 1))
            })
            .collect();
        out.sort_unstable();
        out
    }

    fn check_dims(&self, other: &Mask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                a: (self.width, self.height),
                b: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Pixelwise intersection over union. Errors on dimension mismatch.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, GeometryError> {
    let inter = a.intersection_area(b)? as f64;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        Ok(0.0)
    } else {
        Ok(inter / union)
    }
}

/// 4-connected components, sorted by area descending (ties by first run
/// start for determinism). Row-run union-find: runs on adjacent rows join
/// when their column intervals overlap.
#[allow(clippy::needless_range_loop)] // indices double as union-find ids
pub fn connected_components(m: &Mask) -> Vec<(Mask, u64)> {
    #[derive(Clone, Copy)]
    struct RowRun {
        y: u32,
        x0: u32,
        x1: u32, // inclusive
    }
    let mut row_runs: Vec<RowRun> = Vec::new();
    for r in &m.runs {
        // split index runs at row boundaries
        let mut start = r.start;
        let mut remaining = r.len;
        while remaining > 0 {
            let y = start / m.width;
            let x = start % m.width;
            let span = (m.width - x).min(remaining);
            row_runs.push(RowRun { y, x0: x, x1: x + span - 1 });
            start += span;
            remaining -= span;
        }
    }
    let n = row_runs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    // runs are sorted by (y, x0) already since mask runs are sorted
    let mut row_start: std::collections::BTreeMap<u32, (usize, usize)> =
        std::collections::BTreeMap::new();
    for (i, rr) in row_runs.iter().enumerate() {
        row_start.entry(rr.y).and_modify(|e| e.1 = i + 1).or_insert((i, i + 1));
    }
    for (i, rr) in row_runs.iter().enumerate() {
        if rr.y == 0 {
            continue;
        }
        if let Some(&(lo, hi)) = row_start.get(&(rr.y - 1)) {
            for j in lo..hi {
                let above = row_runs[j];
                if above.x0 <= rr.x1 && rr.x0 <= above.x1 {
                    let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<RowRun>> =
        std::collections::BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(row_runs[i]);
    }
    let mut out: Vec<(Mask, u64)> = groups
        .into_values()
        .map(|rrs| {
            let runs: Vec<Run> = rrs
                .iter()
                .map(|rr| Run { start: rr.y * m.width + rr.x0, len: rr.x1 - rr.x0 + 1 })
                .collect();
            let mask = Mask::from_runs(m.width, m.height, runs).expect("runs derived from valid mask");
            let area = mask.area();
            (mask, area)
        })
        .collect();
    out.sort_by_key(|(mask, area)| (u64::MAX - area, mask.runs.first().map_or(0, |r| r.start)));
    out
}
