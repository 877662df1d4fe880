//! Free-space and periodic simulation domains.

use nalgebra::Vector3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    FreeSpace,
    /// Cubic periodic box of edge `edge`.
    Periodic { edge: f64 },
}

impl Domain {
    /// Minimum image with every component in (−L_d/2, L_d/2].
    pub fn minimum_image(&self, d: Vector3<f64>) -> Vector3<f64> {
        match *self {
            Domain::FreeSpace => d,
            Domain::Periodic { edge } => d.map(|c| c - edge * (c / edge - 0.5).ceil()),
        }
    }

    /// a − b under the minimum-image convention.
    pub fn displacement(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
        self.minimum_image(a - b)
    }

    /// Lattice shift that maps `d` to its minimum image.
    pub fn image_shift(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.minimum_image(*d) - d
    }

    /// Folds a point into [0, L_d)³ (identity in free space).
    pub fn wrap(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Domain::FreeSpace => *p,
            Domain::Periodic { edge } => p.map(|c| {
                let w = c - edge * (c / edge).floor();
                if w >= edge { 0.0 } else { w }
            }),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Domain::Periodic { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_box_maps_to_positive_side() {
        let d = Domain::Periodic { edge: 2.0 };
        let m = d.minimum_image(Vector3::new(1.0, -1.0, 3.0));
        assert_eq!(m, Vector3::new(1.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn minimum_image_in_half_open_range(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0, edge in 0.5f64..10.0) {
            let d = Domain::Periodic { edge };
            let m = d.minimum_image(Vector3::new(x, y, z));
            for c in m.iter() {
                prop_assert!(*c > -edge / 2.0 - 1e-12 && *c <= edge / 2.0 + 1e-12);
            }
            let shift = (Vector3::new(x, y, z) - m) / edge;
            for c in shift.iter() {
                prop_assert!((c - c.round()).abs() < 1e-9);
            }
        }
    }
}
