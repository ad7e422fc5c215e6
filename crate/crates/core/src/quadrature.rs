//! Gauss–Legendre rules and Duffy-type rules for integrands with a point
//! singularity at a corner of a cube or a vertex of a triangle.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "quadrature order must be positive");
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..(q + 1) / 2 {
        // Tricomi initial guess, then Newton on P_q
        let mut z = (PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(q, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(q, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_q(z), P_q'(z))` by the three-term recurrence.
fn legendre(q: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = q as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre_unit(q: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(q);
    (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect())
}

/// Tensor Gauss–Legendre integral of `f` over the box `[lo, hi]`.
pub fn integrate_box(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], q: usize) -> f64 {
    let d = lo.len();
    let (x, w) = gauss_legendre_unit(q);
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let mut sum = 0.0;
    for _ in 0..q.pow(d as u32) {
        let mut wt = 1.0;
        for l in 0..d {
            y[l] = lo[l] + (hi[l] - lo[l]) * x[idx[l]];
            wt *= w[idx[l]];
        }
        sum += wt * f(&y);
        crate::tensor::advance(&mut idx, &vec![q; d]);
    }
    sum * vol
}

/// Radial grading `s = t^5` applied to a rule node `t` with weight `wt`.
#[inline]
fn graded(t: f64, wt: f64) -> (f64, f64) {
    let t2 = t * t;
    (t2 * t2 * t, 5.0 * t2 * t2 * wt)
}

/// Integral of `f` over the cube `center + [-a, a]^d` when `f` may be
/// singular at `center`.
///
/// The cube is cut into the `2^d` sub-cubes that share the singular corner.
/// Each sub-cube is split into `d` pyramids with apex at the corner, and each
/// pyramid is pulled back to the unit cube by a Duffy map
/// `z_m = a s, z_j = a s u_j`, whose Jacobian `a^d s^(d-1)` cancels the
/// singularity up to a logarithm. A radial grading `s = t^5` absorbs the
/// remaining `s log s` behaviour, so a moderate tensor Gauss–Legendre order
/// suffices.
pub fn integrate_cube_corner_singular(f: &dyn Fn(&[f64]) -> f64, center: &[f64], a: f64, q: usize) -> f64 {
    let d = center.len();
    let (x, w) = gauss_legendre_unit(q);
    let mut y = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut u_idx = vec![0usize; d - 1];
    let qs = vec![q; d - 1];
    let mut total = 0.0;
    for signs in 0..1usize << d {
        for m in 0..d {
            let mut acc = 0.0;
            for (&t, &wt) in x.iter().zip(&w) {
                let (s, ds) = graded(t, wt);
                let jac = a.powi(d as i32) * s.powi(d as i32 - 1) * ds;
                u_idx.iter_mut().for_each(|i| *i = 0);
                for _ in 0..q.pow(d as u32 - 1) {
                    let mut wu = 1.0;
                    let mut k = 0;
                    for j in 0..d {
                        if j == m {
                            z[j] = a * s;
                        } else {
                            z[j] = a * s * x[u_idx[k]];
                            wu *= w[u_idx[k]];
                            k += 1;
                        }
                    }
                    for l in 0..d {
                        let sign = if signs >> l & 1 == 0 { 1.0 } else { -1.0 };
                        y[l] = center[l] + sign * z[l];
                    }
                    acc += jac * wu * f(&y);
                    crate::tensor::advance(&mut u_idx, &qs);
                }
            }
            total += acc;
        }
    }
    total
}

/// Integral over a triangle of a function that may be singular at the
/// vertex `p0`, using the collapsed map `y = p0 + s((p1 - p0) + u(p2 - p1))`
/// with the same radial grading.
pub fn integrate_triangle_vertex_singular(
    f: &dyn Fn(&[f64]) -> f64,
    p0: [f64; 2],
    p1: [f64; 2],
    p2: [f64; 2],
    q: usize,
) -> f64 {
    let (x, w) = gauss_legendre_unit(q);
    let area2 = ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])).abs();
    let mut sum = 0.0;
    for (&t, &wt) in x.iter().zip(&w) {
        let (s, ds) = graded(t, wt);
        for (&u, &wu) in x.iter().zip(&w) {
            let y = [
                p0[0] + s * ((p1[0] - p0[0]) + u * (p2[0] - p1[0])),
                p0[1] + s * ((p1[1] - p0[1]) + u * (p2[1] - p1[1])),
            ];
            sum += ds * wu * area2 * s * f(&y);
        }
    }
    sum
}

/// Integral over a triangle of a function singular (at worst) at the
/// centroid: three sub-triangles meeting at the centroid.
pub fn integrate_triangle_centroid_singular(f: &dyn Fn(&[f64]) -> f64, tri: [[f64; 2]; 3], q: usize) -> f64 {
    let c = [
        (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
        (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
    ];
    (0..3)
        .map(|k| integrate_triangle_vertex_singular(f, c, tri[k], tri[(k + 1) % 3], q))
        .sum()
}
