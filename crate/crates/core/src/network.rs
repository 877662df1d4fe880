//! Transient cross-linkers on uniform binding sites.
//!
//! Each fiber carries `n_sites` equally spaced binding sites. A linker is
//! either singly bound (one end on a site) or doubly bound (ends on sites of
//! two different fibers). Four reactions are simulated exactly with the
//! Gillespie algorithm while the fiber geometry is frozen over a time step;
//! doubly-bound linkers act as Hookean springs on the fibers.

use crate::app::domain::Domain;
use crate::app::neighbor::neighbor_search;
use crate::error::{Error, Result};
use crate::filament::{DiscretizationOps, FilamentShape};
use crate::linalg::apply_blockwise;
use crate::spectral::resampling_matrix;
use nalgebra::{DMatrix, Vector3};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CLParams {
    /// Binding sites per fiber N_cl.
    pub n_sites: usize,
    /// Spring stiffness K_c.
    pub stiffness: f64,
    /// Rest length ℓ_c.
    pub rest_length: f64,
    /// Attachment rate per unit length of a free end.
    pub k_on: f64,
    pub k_off: f64,
    /// Base rate of binding the second end.
    pub k_on_s: f64,
    /// Unbinding rate of each end of a doubly-bound linker.
    pub k_off_s: f64,
    pub kbt: f64,
}

impl CLParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidArgument("need at least 2 binding sites per fiber".into()));
        }
        let rates = [self.k_on, self.k_off, self.k_on_s, self.k_off_s];
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidArgument("cross-linker rates must be nonnegative".into()));
        }
        if !(self.stiffness > 0.0 && self.kbt > 0.0 && self.rest_length >= 0.0) {
            return Err(Error::InvalidArgument("cross-linker stiffness and k_BT must be positive".into()));
        }
        Ok(())
    }

    /// Δs_cl = L/(N_cl − 1).
    pub fn spacing(&self, length: f64) -> f64 {
        length / (self.n_sites - 1) as f64
    }

    /// ℓ_c + 2√(k_BT/K_c): pairs farther apart are never candidates.
    pub fn cutoff(&self) -> f64 {
        self.rest_length + 2.0 * (self.kbt / self.stiffness).sqrt()
    }

    pub fn energy(&self, ell: f64) -> f64 {
        0.5 * self.stiffness * (ell - self.rest_length).powi(2)
    }
}

/// k_on,s(ℓ) = k_on,s⁰ exp(−K_c(ℓ − ℓ_c)²/(2k_BT)).
pub fn binding_rate(ell: f64, p: &CLParams) -> f64 {
    p.k_on_s * (-p.energy(ell) / p.kbt).exp()
}

/// Site positions and candidate second-end pairs for one frozen geometry.
#[derive(Clone, Debug)]
pub struct SiteGeometry {
    pub n_fibers: usize,
    pub n_sites: usize,
    /// R⁽ᵘ⁾: uniform sites from Chebyshev nodes (N_cl × N_x).
    pub rows: DMatrix<f64>,
    pub positions: Vec<Vector3<f64>>,
    /// Arclength of each site on its fiber.
    pub arclength: Vec<f64>,
    /// Candidate pairs (p, q), p < q on distinct fibers, with binding rates.
    pub candidates: Vec<(usize, usize, f64)>,
    pub domain: Domain,
}

impl SiteGeometry {
    pub fn new(fibers: &[FilamentShape], ops: &DiscretizationOps, p: &CLParams, domain: &Domain) -> Result<Self> {
        p.validate()?;
        let l = ops.params.length;
        let ds = p.spacing(l);
        let arclength: Vec<f64> = (0..p.n_sites).map(|k| (k as f64 * ds).min(l)).collect();
        let rows = resampling_matrix(&ops.x_grid, &arclength)?.matrix;
        let mut positions = Vec::with_capacity(fibers.len() * p.n_sites);
        for f in fibers {
            let x = apply_blockwise(&rows, f.positions().as_slice());
            positions.extend((0..p.n_sites).map(|k| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])));
        }
        let n = p.n_sites;
        let mut candidates = Vec::new();
        if fibers.len() > 1 && p.k_on_s > 0.0 {
            for (a, b) in neighbor_search(&positions, p.cutoff(), domain)? {
                if a / n != b / n {
                    let ell = domain.displacement(&positions[a], &positions[b]).norm();
                    candidates.push((a, b, binding_rate(ell, p)));
                }
            }
        }
        Ok(Self { n_fibers: fibers.len(), n_sites: n, rows, positions, arclength, candidates, domain: *domain })
    }

    pub fn fiber_of(&self, site: usize) -> usize {
        site / self.n_sites
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteState {
    Free,
    /// End of a singly-bound linker.
    Single,
    /// End of the doubly-bound linker with this index.
    Double(usize),
}

/// Occupancy and linker lists.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLinkNetwork {
    pub n_fibers: usize,
    pub n_sites: usize,
    pub sites: Vec<SiteState>,
    /// Sites holding singly-bound linkers.
    pub singly: Vec<usize>,
    /// Site pairs of doubly-bound linkers (first < second).
    pub doubly: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GillespieStats {
    pub events: usize,
    pub bind_first: usize,
    pub unbind_single: usize,
    pub bind_second: usize,
    pub unbind_double: usize,
}

impl CrossLinkNetwork {
    pub fn new(n_fibers: usize, n_sites: usize) -> Self {
        Self { n_fibers, n_sites, sites: vec![SiteState::Free; n_fibers * n_sites], singly: Vec::new(), doubly: Vec::new() }
    }

    pub fn bound_ends(&self) -> usize {
        self.singly.len() + 2 * self.doubly.len()
    }

    /// Checks the occupancy invariants.
    pub fn check(&self) -> Result<()> {
        let mut count = vec![0usize; self.sites.len()];
        for &s in &self.singly {
            count[s] += 1;
            if self.sites[s] != SiteState::Single {
                return Err(Error::InvalidState(format!("site {s} listed as singly bound")));
            }
        }
        for (k, &(a, b)) in self.doubly.iter().enumerate() {
            if a / self.n_sites == b / self.n_sites {
                return Err(Error::InvalidState("doubly-bound link on a single fiber".into()));
            }
            for s in [a, b] {
                count[s] += 1;
                if self.sites[s] != SiteState::Double(k) {
                    return Err(Error::InvalidState(format!("site {s} does not point to link {k}")));
                }
            }
        }
        if count.iter().any(|c| *c > 1) {
            return Err(Error::InvalidState("a site carries two linker ends".into()));
        }
        let occupied = self.sites.iter().filter(|s| **s != SiteState::Free).count();
        if occupied != self.bound_ends() {
            return Err(Error::InvalidState("occupancy does not match the linker lists".into()));
        }
        Ok(())
    }

    fn remove_single(&mut self, site: usize) {
        let k = self.singly.iter().position(|s| *s == site).expect("site holds a singly-bound linker");
        self.singly.swap_remove(k);
        self.sites[site] = SiteState::Free;
    }

    fn remove_double(&mut self, k: usize) -> (usize, usize) {
        let link = self.doubly.swap_remove(k);
        if k < self.doubly.len() {
            let (a, b) = self.doubly[k];
            self.sites[a] = SiteState::Double(k);
            self.sites[b] = SiteState::Double(k);
        }
        link
    }

    /// Exact SSA over an interval `dt` with geometry frozen.
    pub fn gillespie_update<R: Rng + ?Sized>(
        &mut self,
        geom: &SiteGeometry,
        dt: f64,
        length: f64,
        p: &CLParams,
        rng: &mut R,
    ) -> Result<GillespieStats> {
        if geom.n_sites != self.n_sites || geom.n_fibers != self.n_fibers {
            return Err(Error::InvalidArgument("site geometry does not match the network".into()));
        }
        let attach = p.k_on * p.spacing(length);
        let mut stats = GillespieStats::default();
        let mut t = 0.0;
        loop {
            let n_free = self.sites.iter().filter(|s| **s == SiteState::Free).count();
            let a1 = attach * n_free as f64;
            let a2 = p.k_off * self.singly.len() as f64;
            let a3_terms: Vec<(usize, usize, f64)> = geom
                .candidates
                .iter()
                .flat_map(|&(a, b, r)| {
                    let mut v = Vec::with_capacity(2);
                    if self.sites[a] == SiteState::Single && self.sites[b] == SiteState::Free {
                        v.push((a, b, r));
                    }
                    if self.sites[b] == SiteState::Single && self.sites[a] == SiteState::Free {
                        v.push((b, a, r));
                    }
                    v
                })
                .collect();
            let a3: f64 = a3_terms.iter().map(|x| x.2).sum();
            let a4 = 2.0 * p.k_off_s * self.doubly.len() as f64;
            let total = a1 + a2 + a3 + a4;
            if total <= 0.0 {
                break;
            }
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / total;
            if t > dt {
                break;
            }
            let mut pick = rng.random::<f64>() * total;
            stats.events += 1;
            if pick < a1 {
                let k = ((pick / attach) as usize).min(n_free - 1);
                let site = self
                    .sites
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| **s == SiteState::Free)
                    .nth(k)
                    .map(|(i, _)| i)
                    .expect("free site index in range");
                self.sites[site] = SiteState::Single;
                self.singly.push(site);
                stats.bind_first += 1;
                continue;
            }
            pick -= a1;
            if pick < a2 {
                let k = ((pick / p.k_off) as usize).min(self.singly.len() - 1);
                let site = self.singly[k];
                self.remove_single(site);
                stats.unbind_single += 1;
                continue;
            }
            pick -= a2;
            if pick < a3 {
                let mut chosen = a3_terms[a3_terms.len() - 1];
                for term in &a3_terms {
                    if pick < term.2 {
                        chosen = *term;
                        break;
                    }
                    pick -= term.2;
                }
                let (from, to, _) = chosen;
                self.remove_single(from);
                let k = self.doubly.len();
                let link = (from.min(to), from.max(to));
                self.doubly.push(link);
                self.sites[link.0] = SiteState::Double(k);
                self.sites[link.1] = SiteState::Double(k);
                stats.bind_second += 1;
                continue;
            }
            pick -= a3;
            let idx = ((pick / p.k_off_s) as usize).min(2 * self.doubly.len() - 1);
            let (a, b) = self.remove_double(idx / 2);
            let (gone, stays) = if idx % 2 == 0 { (a, b) } else { (b, a) };
            self.sites[gone] = SiteState::Free;
            self.sites[stays] = SiteState::Single;
            self.singly.push(stays);
            stats.unbind_double += 1;
        }
        Ok(stats)
    }
}

/// Spring forces of all doubly-bound links, per fiber (interleaved, 3N_x).
pub fn crosslink_forces(net: &CrossLinkNetwork, geom: &SiteGeometry, p: &CLParams) -> Vec<Vec<f64>> {
    let nx = geom.rows.ncols();
    let mut out = vec![vec![0.0; 3 * nx]; net.n_fibers];
    for &(a, b) in &net.doubly {
        let ell = geom.domain.displacement(&geom.positions[a], &geom.positions[b]);
        let len = ell.norm();
        if len == 0.0 {
            continue;
        }
        let f = ell * (-p.stiffness * (len - p.rest_length) / len);
        let (fa, fb) = (geom.fiber_of(a), geom.fiber_of(b));
        let (ra, rb) = (a % geom.n_sites, b % geom.n_sites);
        for m in 0..nx {
            let (ca, cb) = (geom.rows[(ra, m)], geom.rows[(rb, m)]);
            for d in 0..3 {
                out[fa][3 * m + d] += ca * f[d];
                out[fb][3 * m + d] -= cb * f[d];
            }
        }
    }
    out
}

/// Total spring energy of the doubly-bound links.
pub fn crosslink_energy(net: &CrossLinkNetwork, geom: &SiteGeometry, p: &CLParams) -> f64 {
    net.doubly
        .iter()
        .map(|&(a, b)| p.energy(geom.domain.displacement(&geom.positions[a], &geom.positions[b]).norm()))
        .sum()
}
