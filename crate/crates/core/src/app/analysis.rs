//! Post-processing: end-to-end statistics, sedimentation metrics, bundles.

use crate::app::trajectory::{NetworkSnapshot, TrajectoryFrame};
use crate::error::Result;
use crate::filament::{DiscretizationOps, FilamentShape};
use crate::spectral::resampling_matrix;
use crate::linalg::apply_blockwise;

/// Normalized histogram on [lo, hi] with equal bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Probability per bin (sums to 1 when any sample falls inside).
    pub mass: Vec<f64>,
    pub count: usize,
}

impl Histogram {
    pub fn new(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut mass = vec![0.0; bins];
        let w = (hi - lo) / bins as f64;
        let mut count = 0;
        for &s in samples {
            if s < lo || s > hi {
                continue;
            }
            let b = (((s - lo) / w) as usize).min(bins - 1);
            mass[b] += 1.0;
            count += 1;
        }
        if count > 0 {
            mass.iter_mut().for_each(|m| *m /= count as f64);
        }
        Self { lo, hi, mass, count }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.mass.len() as f64
    }

    /// Bin density (mass / width).
    pub fn density(&self) -> Vec<f64> {
        let w = self.width();
        self.mass.iter().map(|m| m / w).collect()
    }

    /// L¹ distance ∫|p − q| between two histograms on the same bins.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        assert_eq!(self.mass.len(), other.mass.len(), "histograms must share bins");
        self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct EndToEndStats {
    pub histogram: Histogram,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean over the per-fiber means.
    pub mean_se: f64,
}

pub fn summarize(samples: &[f64]) -> (f64, f64) {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// Pooled ‖𝕏(L) − 𝕏(0)‖ over frames with time ≥ `burn_in`.
pub fn end_to_end_stats(frames: &[TrajectoryFrame], ops: &DiscretizationOps, burn_in: f64, bins: usize) -> Result<EndToEndStats> {
    let nf = frames.first().map_or(0, |f| f.fibers.len());
    let mut per_fiber = vec![Vec::new(); nf];
    for fr in frames.iter().filter(|f| f.time >= burn_in) {
        for (i, fib) in fr.fibers.iter().enumerate() {
            per_fiber[i].push(fib.shape(ops)?.end_to_end());
        }
    }
    let samples: Vec<f64> = per_fiber.iter().flatten().copied().collect();
    let (mean, variance) = summarize(&samples);
    let means: Vec<f64> = per_fiber.iter().filter(|v| !v.is_empty()).map(|v| summarize(v).0).collect();
    let mean_se = if means.len() > 1 { (summarize(&means).1 / means.len() as f64).sqrt() } else { f64::NAN };
    let l = ops.params.length;
    let histogram = Histogram::new(&samples, 0.0, l * (1.0 + 1e-12), bins);
    Ok(EndToEndStats { histogram, samples, mean, variance, mean_se })
}

/// Vertical extent max z − min z, measured on a fine uniform resampling.
pub fn vertical_extent(shape: &FilamentShape, ops: &DiscretizationOps) -> Result<f64> {
    let z = vertical_profile(shape, ops, 401)?;
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(hi - lo)
}

/// z(s) on `n` uniform points.
pub fn vertical_profile(shape: &FilamentShape, ops: &DiscretizationOps, n: usize) -> Result<Vec<f64>> {
    let l = ops.params.length;
    let s: Vec<f64> = (0..n).map(|k| l * k as f64 / (n - 1) as f64).collect();
    let e = resampling_matrix(&ops.x_grid, &s)?.matrix;
    let x = apply_blockwise(&e, shape.positions().as_slice());
    Ok((0..n).map(|k| x[3 * k + 2]).collect())
}

/// Sign changes of d²z/ds² along the fiber, ignoring values below
/// `rel_tol`·max|z''|.
pub fn curvature_sign_changes(shape: &FilamentShape, ops: &DiscretizationOps, rel_tol: f64) -> usize {
    let x = shape.positions().as_slice();
    let d2 = apply_blockwise(&ops.d2, x);
    let l = ops.params.length;
    let n = 201;
    let s: Vec<f64> = (0..n).map(|k| l * k as f64 / (n - 1) as f64).collect();
    let e = resampling_matrix(&ops.x_grid, &s).expect("uniform points lie on the fiber").matrix;
    let zpp: Vec<f64> = apply_blockwise(&e, &d2).chunks(3).map(|c| c[2]).collect();
    let big = zpp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut last = 0i8;
    let mut changes = 0;
    for v in zpp {
        if v.abs() <= rel_tol * big {
            continue;
        }
        let sg = if v > 0.0 { 1 } else { -1 };
        if last != 0 && sg != last {
            changes += 1;
        }
        last = sg;
    }
    changes
}

#[derive(Clone, Debug, PartialEq)]
pub struct SedimentationSample {
    pub time: f64,
    /// Vertical extent of each fiber.
    pub h: Vec<f64>,
    /// Midpoint distance ‖X⁽²⁾(L/2) − X⁽¹⁾(L/2)‖ (two fibers).
    pub d: Option<f64>,
    /// h₁ − h₂ (two fibers).
    pub dh: Option<f64>,
}

pub fn sedimentation_metrics(frames: &[TrajectoryFrame], ops: &DiscretizationOps) -> Result<Vec<SedimentationSample>> {
    frames
        .iter()
        .map(|fr| {
            let shapes: Vec<FilamentShape> = fr.fibers.iter().map(|f| f.shape(ops)).collect::<Result<_>>()?;
            sedimentation_sample(fr.time, &shapes, ops)
        })
        .collect()
}

pub fn sedimentation_sample(time: f64, shapes: &[FilamentShape], ops: &DiscretizationOps) -> Result<SedimentationSample> {
    let h: Vec<f64> = shapes.iter().map(|s| vertical_extent(s, ops)).collect::<Result<_>>()?;
    let (d, dh) = if shapes.len() >= 2 {
        (Some((shapes[1].midpoint() - shapes[0].midpoint()).norm()), Some(h[0] - h[1]))
    } else {
        (None, None)
    };
    Ok(SedimentationSample { time, h, d, dh })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleReport {
    /// Component label of each fiber (components of every size).
    pub labels: Vec<usize>,
    /// Components of size ≥ 2, as fiber lists.
    pub bundles: Vec<Vec<usize>>,
    pub fraction_in_bundles: f64,
    /// Bundles (size ≥ 2) per unit volume.
    pub bundle_density: f64,
    /// All components including singletons per unit volume.
    pub component_density: f64,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Fibers are vertices; i–j is an edge when the two share at least two
/// doubly-bound links whose binding sites are ≥ L/4 apart on either fiber.
/// Bundles are the connected components with at least two fibers.
pub fn bundle_detection(
    net: &NetworkSnapshot,
    n_fibers: usize,
    n_sites: usize,
    length: f64,
    volume: f64,
) -> BundleReport {
    let ds = if n_sites > 1 { length / (n_sites - 1) as f64 } else { 0.0 };
    let arc = |site: u32| (site as usize % n_sites) as f64 * ds;
    let mut by_pair: std::collections::BTreeMap<(usize, usize), Vec<(f64, f64)>> = Default::default();
    for &(a, b) in &net.doubly {
        let (fa, fb) = (a as usize / n_sites, b as usize / n_sites);
        if fa == fb {
            continue;
        }
        let (key, sites) = if fa < fb { ((fa, fb), (arc(a), arc(b))) } else { ((fb, fa), (arc(b), arc(a))) };
        by_pair.entry(key).or_default().push(sites);
    }
    let mut parent: Vec<usize> = (0..n_fibers).collect();
    let tol = 1e-12 * length;
    for ((i, j), links) in by_pair {
        let spread = links.iter().enumerate().any(|(k, p)| {
            links[k + 1..].iter().any(|q| (p.0 - q.0).abs() >= length / 4.0 - tol || (p.1 - q.1).abs() >= length / 4.0 - tol)
        });
        if spread {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let roots: Vec<usize> = (0..n_fibers).map(|i| find(&mut parent, i)).collect();
    let mut ids = std::collections::BTreeMap::new();
    let labels: Vec<usize> = roots
        .iter()
        .map(|r| {
            let next = ids.len();
            *ids.entry(*r).or_insert(next)
        })
        .collect();
    let mut comps = vec![Vec::new(); ids.len()];
    for (i, l) in labels.iter().enumerate() {
        comps[*l].push(i);
    }
    let bundles: Vec<Vec<usize>> = comps.iter().filter(|c| c.len() >= 2).cloned().collect();
    let in_bundles: usize = bundles.iter().map(Vec::len).sum();
    BundleReport {
        labels,
        fraction_in_bundles: if n_fibers > 0 { in_bundles as f64 / n_fibers as f64 } else { 0.0 },
        bundle_density: bundles.len() as f64 / volume,
        component_density: comps.len() as f64 / volume,
        bundles,
    }
}
