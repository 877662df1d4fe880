//! Cell-list neighbor search with minimum-image distances.

use super::domain::Domain;
use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::collections::HashMap;

/// All unordered pairs (i < j) with minimum-image distance below `r_cut`,
/// sorted lexicographically.
pub fn neighbor_search(points: &[Vector3<f64>], r_cut: f64, domain: &Domain) -> Result<Vec<(usize, usize)>> {
    if !(r_cut > 0.0) {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {r_cut}")));
    }
    let r2 = r_cut * r_cut;
    let mut pairs = Vec::new();
    match *domain {
        Domain::FreeSpace => {
            let key = |p: &Vector3<f64>| {
                [
                    (p.x / r_cut).floor() as i64,
                    (p.y / r_cut).floor() as i64,
                    (p.z / r_cut).floor() as i64,
                ]
            };
            let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
            for (i, p) in points.iter().enumerate() {
                cells.entry(key(p)).or_default().push(i);
            }
            for (i, p) in points.iter().enumerate() {
                let c = key(p);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(list) = cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                for &j in list {
                                    if j > i && (points[j] - p).norm_squared() < r2 {
                                        pairs.push((i, j));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Domain::Periodic { edge } => {
            if r_cut >= edge / 2.0 {
                return Err(Error::InvalidArgument(format!(
                    "cutoff {r_cut} must be below half the box edge {edge}"
                )));
            }
            let nc = ((edge / r_cut).floor() as i64).max(1);
            let size = edge / nc as f64;
            let wrapped: Vec<Vector3<f64>> = points.iter().map(|p| domain.wrap(p)).collect();
            let key = |p: &Vector3<f64>| {
                let k = |c: f64| ((c / size).floor() as i64).clamp(0, nc - 1);
                [k(p.x), k(p.y), k(p.z)]
            };
            let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
            for (i, p) in wrapped.iter().enumerate() {
                cells.entry(key(p)).or_default().push(i);
            }
            for (i, p) in wrapped.iter().enumerate() {
                let c = key(p);
                let mut visited: Vec<[i64; 3]> = Vec::with_capacity(27);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            let cell = [
                                (c[0] + dx).rem_euclid(nc),
                                (c[1] + dy).rem_euclid(nc),
                                (c[2] + dz).rem_euclid(nc),
                            ];
                            if visited.contains(&cell) {
                                continue;
                            }
                            visited.push(cell);
                            if let Some(list) = cells.get(&cell) {
                                for &j in list {
                                    if j > i && domain.displacement(&wrapped[j], p).norm_squared() < r2 {
                                        pairs.push((i, j));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// O(P²) reference used by the tests.
pub fn all_pairs(points: &[Vector3<f64>], r_cut: f64, domain: &Domain) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if domain.displacement(&points[j], &points[i]).norm_squared() < r_cut * r_cut {
                out.push((i, j));
            }
        }
    }
    out
}
