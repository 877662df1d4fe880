//! The RPY kernel and direct blob summation.

use crate::app::domain::Domain;
use nalgebra::{DMatrix, Matrix3, Vector3};
use std::f64::consts::PI;

/// RPY mobility for displacement r = x − y.
pub fn rpy_kernel_disp(r: &Vector3<f64>, a_hat: f64, mu: f64) -> Matrix3<f64> {
    let pre = 1.0 / (8.0 * PI * mu);
    let dist = r.norm();
    let id = Matrix3::identity();
    if dist == 0.0 {
        return id * (1.0 / (6.0 * PI * mu * a_hat));
    }
    let rr = r * r.transpose() / (dist * dist);
    if dist > 2.0 * a_hat {
        ((id + rr) / dist + (id - rr * 3.0) * (2.0 * a_hat * a_hat / (3.0 * dist.powi(3)))) * pre
    } else {
        (id * (4.0 / (3.0 * a_hat) - 3.0 * dist / (8.0 * a_hat * a_hat))
            + rr * (dist / (8.0 * a_hat * a_hat)))
            * pre
    }
}

pub fn rpy_kernel(x: &Vector3<f64>, y: &Vector3<f64>, a_hat: f64, mu: f64) -> Matrix3<f64> {
    rpy_kernel_disp(&(x - y), a_hat, mu)
}

/// Near-field branch evaluated regardless of separation.
pub fn rpy_near_branch(r: &Vector3<f64>, a_hat: f64, mu: f64) -> Matrix3<f64> {
    let pre = 1.0 / (8.0 * PI * mu);
    let dist = r.norm();
    let outer = if dist > 0.0 { r * r.transpose() / dist } else { Matrix3::zeros() };
    (Matrix3::identity() * (4.0 / (3.0 * a_hat) - 3.0 * dist / (8.0 * a_hat * a_hat))
        + outer / (8.0 * a_hat * a_hat))
        * pre
}

#[inline]
fn rpy_times(r: &Vector3<f64>, f: &Vector3<f64>, a_hat: f64, pre: f64, self_mob: f64) -> Vector3<f64> {
    let d2 = r.norm_squared();
    if d2 == 0.0 {
        return f * self_mob;
    }
    let dist = d2.sqrt();
    let rf = r.dot(f) / d2;
    if dist > 2.0 * a_hat {
        let inv = 1.0 / dist;
        let dip = 2.0 * a_hat * a_hat / 3.0 * inv * inv * inv;
        (f * (inv + dip) + r * (rf * (inv - 3.0 * dip))) * pre
    } else {
        let c1 = 4.0 / (3.0 * a_hat) - 3.0 * dist / (8.0 * a_hat * a_hat);
        let c2 = dist / (8.0 * a_hat * a_hat);
        (f * c1 + r * (rf * c2)) * pre
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSelect {
    All,
    /// Only pairs whose points belong to different groups.
    CrossGroup,
    /// Only pairs within the same group.
    SameGroup,
}

/// U_i = Σ_j M(x_i − x_j) f_j over the selected pairs. Each unordered pair is
/// visited once, in order of increasing (i, j).
pub fn blob_apply(
    points: &[Vector3<f64>],
    forces: &[Vector3<f64>],
    groups: &[usize],
    select: PairSelect,
    a_hat: f64,
    mu: f64,
    domain: &Domain,
) -> Vec<Vector3<f64>> {
    let n = points.len();
    let pre = 1.0 / (8.0 * PI * mu);
    let self_mob = 1.0 / (6.0 * PI * mu * a_hat);
    let mut u = vec![Vector3::zeros(); n];
    let periodic = domain.is_periodic();
    for i in 0..n {
        if select != PairSelect::CrossGroup {
            u[i] += forces[i] * self_mob;
        }
        let xi = points[i];
        let fi = forces[i];
        let gi = groups[i];
        let mut acc = Vector3::zeros();
        for j in i + 1..n {
            let same = groups[j] == gi;
            match select {
                PairSelect::All => {}
                PairSelect::CrossGroup if same => continue,
                PairSelect::SameGroup if !same => continue,
                _ => {}
            }
            let mut r = xi - points[j];
            if periodic {
                r = domain.minimum_image(r);
            }
            acc += rpy_times(&r, &forces[j], a_hat, pre, self_mob);
            u[j] += rpy_times(&r, &fi, a_hat, pre, self_mob);
        }
        u[i] += acc;
    }
    u
}

/// Dense 3P × 3P grand RPY matrix.
pub fn blob_matrix(points: &[Vector3<f64>], a_hat: f64, mu: f64, domain: &Domain) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in i..n {
            let r = domain.displacement(&points[i], &points[j]);
            let k = rpy_kernel_disp(&r, a_hat, mu);
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * i + a, 3 * j + b)] = k[(a, b)];
                    m[(3 * j + b, 3 * i + a)] = k[(a, b)];
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_points_give_stokes_drag() {
        let k = rpy_kernel(&Vector3::zeros(), &Vector3::zeros(), 0.1, 2.0);
        let expect = 1.0 / (6.0 * PI * 2.0 * 0.1);
        assert!((k - Matrix3::identity() * expect).amax() < 1e-15);
    }

    #[test]
    fn branches_agree_at_two_radii() {
        let a = 0.3;
        let r: Vector3<f64> = Vector3::new(1.0, -2.0, 0.5).normalize() * (2.0 * a);
        let pre = 1.0 / (8.0 * PI);
        let d: f64 = r.norm();
        let rr = r * r.transpose() / (d * d);
        let id: Matrix3<f64> = Matrix3::identity();
        let far = ((id + rr) / d + (id - rr * 3.0) * (2.0 * a * a / (3.0 * d.powi(3)))) * pre;
        let near = (id * (4.0 / (3.0 * a) - 3.0 * d / (8.0 * a * a)) + rr * (d / (8.0 * a * a))) * pre;
        for i in 0..9 {
            assert!((far[i] - near[i]).abs() <= 1e-12 * far.amax());
        }
    }

    #[test]
    fn far_branch_term_by_term() {
        let a = 0.1;
        let k = rpy_kernel(&Vector3::new(0.3, 0.0, 0.0), &Vector3::zeros(), a, 1.0);
        // Stokeslet (I + x̂x̂)/R plus (2a²/3)(I − 3x̂x̂)/R³ at R = 0.3.
        let s_xx = 2.0 / 0.3;
        let s_yy = 1.0 / 0.3;
        let d_xx = -2.0 / 0.027;
        let d_yy = 1.0 / 0.027;
        let c = 2.0 * a * a / 3.0;
        let pre = 1.0 / (8.0 * PI);
        assert!((k[(0, 0)] - pre * (s_xx + c * d_xx)).abs() < 1e-14);
        assert!((k[(1, 1)] - pre * (s_yy + c * d_yy)).abs() < 1e-14);
        assert!(k[(0, 1)].abs() < 1e-16);
    }

    #[test]
    fn kernel_symmetry() {
        let x = Vector3::new(0.1, 0.2, -0.4);
        let y = Vector3::new(-0.3, 0.05, 0.2);
        for a in [0.01, 0.5] {
            let k1 = rpy_kernel(&x, &y, a, 1.0);
            let k2 = rpy_kernel(&y, &x, a, 1.0).transpose();
            assert!((k1 - k2).amax() < 1e-14);
        }
    }

    #[test]
    fn blob_apply_matches_matrix() {
        let pts: Vec<Vector3<f64>> = (0..7).map(|i| Vector3::new(0.1 * i as f64, (i as f64).sin() * 0.05, 0.0)).collect();
        let f: Vec<Vector3<f64>> = (0..7).map(|i| Vector3::new(1.0, -(i as f64), 0.5)).collect();
        let groups = vec![0, 0, 0, 1, 1, 1, 1];
        let d = Domain::FreeSpace;
        let m = blob_matrix(&pts, 0.07, 1.5, &d);
        let flat: Vec<f64> = f.iter().flat_map(|v| v.iter().cloned().collect::<Vec<_>>()).collect();
        let u_dense = &m * nalgebra::DVector::from_vec(flat);
        let u = blob_apply(&pts, &f, &groups, PairSelect::All, 0.07, 1.5, &d);
        let cross = blob_apply(&pts, &f, &groups, PairSelect::CrossGroup, 0.07, 1.5, &d);
        let same = blob_apply(&pts, &f, &groups, PairSelect::SameGroup, 0.07, 1.5, &d);
        for i in 0..7 {
            for a in 0..3 {
                assert!((u[i][a] - u_dense[3 * i + a]).abs() < 1e-12);
                assert!((cross[i][a] + same[i][a] - u[i][a]).abs() < 1e-12);
            }
        }
    }
}
