//! Exact point-to-polyline distance with a uniform-grid candidate filter.

use std::collections::HashMap;

use crate::scalar::Scalar;

/// Distance from `x` to the segment [a, b].
pub(crate) fn point_segment_distance<T: Scalar>(x: &[T], a: &[T], b: &[T]) -> T {
    let mut ab2 = T::zero();
    let mut axab = T::zero();
    for i in 0..x.len() {
        let d = b[i] - a[i];
        ab2 = ab2 + d * d;
        axab = axab + (x[i] - a[i]) * d;
    }
    let s = if ab2 > T::zero() { (axab / ab2).max(T::zero()).min(T::one()) } else { T::zero() };
    let mut acc = T::zero();
    for i in 0..x.len() {
        let p = a[i] + s * (b[i] - a[i]);
        acc = acc + (x[i] - p) * (x[i] - p);
    }
    acc.sqrt()
}

/// Open polyline through ordered points. Queries are exact: when no
/// segment lies within one cell of the query the index falls back to a
/// full scan.
#[derive(Debug, Clone)]
pub(crate) struct PolylineIndex<T> {
    pts: Vec<Vec<T>>,
    cell: T,
    grid: HashMap<Vec<i64>, Vec<u32>>,
}

impl<T: Scalar> PolylineIndex<T> {
    /// `cell` ≤ 0 picks a size from the segment lengths and bounding box.
    pub(crate) fn new(points: &[Vec<T>], cell: T) -> Self {
        assert!(!points.is_empty(), "polyline needs a point");
        let n = points[0].len();
        // never smaller than the longest segment, which bounds cells per segment
        let cell = if cell > T::zero() { cell.max(longest_segment(points)) } else { auto_cell(points) };
        let mut grid: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        let nseg = points.len().saturating_sub(1).max(1);
        for s in 0..nseg {
            let a = &points[s];
            let b = points.get(s + 1).unwrap_or(a);
            let lo: Vec<i64> = (0..n).map(|i| key(a[i].min(b[i]), cell)).collect();
            let hi: Vec<i64> = (0..n).map(|i| key(a[i].max(b[i]), cell)).collect();
            let mut k = lo.clone();
            loop {
                grid.entry(k.clone()).or_default().push(s as u32);
                // odometer over the bounding box of cells
                let mut i = 0;
                while i < n {
                    if k[i] < hi[i] {
                        k[i] += 1;
                        break;
                    }
                    k[i] = lo[i];
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
        }
        Self { pts: points.to_vec(), cell, grid }
    }

    fn segment_distance(&self, x: &[T], s: usize) -> T {
        let a = &self.pts[s];
        let b = self.pts.get(s + 1).unwrap_or(a);
        point_segment_distance(x, a, b)
    }

    /// Distance when it is at most the cell size; None otherwise.
    pub(crate) fn distance_within_cell(&self, x: &[T]) -> Option<T> {
        let best = self.neighbor_distance(x);
        (best <= self.cell).then_some(best)
    }

    pub(crate) fn distance(&self, x: &[T]) -> T {
        let best = self.neighbor_distance(x);
        if best <= self.cell {
            return best;
        }
        let nseg = self.pts.len().saturating_sub(1).max(1);
        (0..nseg).fold(T::infinity(), |acc, s| acc.min(self.segment_distance(x, s)))
    }

    fn neighbor_distance(&self, x: &[T]) -> T {
        let n = x.len();
        let base: Vec<i64> = x.iter().map(|&v| key(v, self.cell)).collect();
        let mut best = T::infinity();
        let mut off = vec![-1i64; n];
        let mut k = vec![0i64; n];
        loop {
            for i in 0..n {
                k[i] = base[i] + off[i];
            }
            if let Some(list) = self.grid.get(&k) {
                for &s in list {
                    best = best.min(self.segment_distance(x, s as usize));
                }
            }
            let mut i = 0;
            while i < n {
                if off[i] < 1 {
                    off[i] += 1;
                    break;
                }
                off[i] = -1;
                i += 1;
            }
            if i == n {
                break;
            }
        }
        best
    }
}

/// Greedy vertex thinning: every dropped point lies within `tol` of the
/// chord that replaces it, so distances to the result differ by at most `tol`.
pub(crate) fn simplify_polyline<T: Scalar>(points: &[Vec<T>], tol: T) -> Vec<Vec<T>> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0].clone()];
    let mut anchor = 0;
    let mut end = 1;
    while end < points.len() - 1 {
        let cand = end + 1;
        let fits = (anchor + 1..cand).all(|k| point_segment_distance(&points[k], &points[anchor], &points[cand]) <= tol);
        if fits {
            end = cand;
        } else {
            out.push(points[end].clone());
            anchor = end;
            end = anchor + 1;
        }
    }
    out.push(points[points.len() - 1].clone());
    out
}

fn key<T: Scalar>(v: T, cell: T) -> i64 {
    (v / cell).floor().to_i64().unwrap_or(0)
}

fn longest_segment<T: Scalar>(points: &[Vec<T>]) -> T {
    points.windows(2).fold(T::zero(), |m, w| m.max(crate::linalg::dist(&w[0], &w[1])))
}

fn auto_cell<T: Scalar>(points: &[Vec<T>]) -> T {
    let n = points[0].len();
    let longest = longest_segment(points);
    let mut diag2 = T::zero();
    for i in 0..n {
        let lo = points.iter().fold(T::infinity(), |m, p| m.min(p[i]));
        let hi = points.iter().fold(T::neg_infinity(), |m, p| m.max(p[i]));
        diag2 = diag2 + (hi - lo) * (hi - lo);
    }
    let c = longest.max(diag2.sqrt() / T::lit(64.0));
    if c > T::zero() {
        c
    } else {
        T::one()
    }
}
