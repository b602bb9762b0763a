//! Eigenvalues of a general real matrix.
//!
//! Householder reduction to upper Hessenberg form followed by the Francis
//! double-shift QR iteration, after the EISPACK routines `orthes` and `hqr`.
//! Exceptional shifts at iterations 10 and 30 break the cycles that plain
//! Francis steps fall into on the permutation-like 0/1 patterns produced by
//! connectivity matrices.

use nalgebra::{Complex, DMatrix};

/// Francis steps allowed per eigenvalue before giving up.
const MAX_ITERATIONS_PER_ROOT: usize = 60;

/// Householder similarity reduction to upper Hessenberg form, in place.
fn hessenberg(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut norm2 = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            norm2 += ort[i] * ort[i];
        }
        let mut g = norm2.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        norm2 -= ort[m] * g;
        ort[m] -= g;

        // H ← (I - u·uᵀ/h) H (I - u·uᵀ/h)
        for j in m..n {
            let f = (m..=high).rev().map(|i| ort[i] * h[(i, j)]).sum::<f64>() / norm2;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let f = (m..=high).rev().map(|j| ort[j] * h[(i, j)]).sum::<f64>() / norm2;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }
}

/// All eigenvalues of `a`, in no particular order. `None` when the QR
/// iteration fails to converge.
pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    assert_eq!(a.nrows(), a.ncols(), "square matrix required");
    let nn = a.nrows();
    if nn == 0 {
        return Some(Vec::new());
    }
    let mut h = a.clone();
    hessenberg(&mut h);

    let eps = f64::EPSILON;
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let mut exshift = 0.0;
    let mut iter = 0;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut w, mut x, mut y);
    // `n` is the last row of the active block; the loop ends when it would
    // drop below zero.
    let mut n = nn as isize - 1;
    while n >= 0 {
        let nu = n as usize;
        // Find a negligible subdiagonal entry.
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root.
            re[nu] = h[(nu, nu)] + exshift;
            im[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // Two roots from the trailing 2×2 block.
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h[(nu, nu)] + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[nu - 1] = x + z;
                re[nu] = if z != 0.0 { x - w / z } else { x + z };
                im[nu - 1] = 0.0;
                im[nu] = 0.0;
            } else {
                re[nu - 1] = x + p;
                re[nu] = x + p;
                im[nu - 1] = z;
                im[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];

            if iter == 10 {
                // Wilkinson's ad hoc shift.
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                // Second exceptional shift.
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            if iter > MAX_ITERATIONS_PER_ROOT {
                return None;
            }

            // Look for two consecutive small subdiagonal entries.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let rhs = eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                } else {
                    x = 0.0;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        let mut t = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            t += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= t * z;
                        }
                        h[(k, j)] -= t * x;
                        h[(k + 1, j)] -= t * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        let mut t = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            t += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= t * r;
                        }
                        h[(i, k)] -= t;
                        h[(i, k + 1)] -= t * q;
                    }
                }
                k += 1;
            }
        }
    }
    Some(re.into_iter().zip(im).map(|(a, b)| Complex::new(a, b)).collect())
}

/// Candidate cluster links; generous enough for Jordan blocks of size 3.
const CLUSTER_LINK: f64 = 1e-4;

/// A Jordan block of size `m` comes back as `m` eigenvalues spread over a
/// circle of radius about `ε^(1/m)·‖A‖`, while their mean stays accurate to
/// about `ε·‖A‖`. Groups whose spread fits that pattern are replaced by
/// their mean; anything wider is left alone.
pub(crate) fn merge_defective(values: &mut [Complex<f64>], scale: f64) {
    let n = values.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn root(group: &mut [usize], mut k: usize) -> usize {
        while group[k] != k {
            group[k] = group[group[k]];
            k = group[k];
        }
        k
    }
    for a in 0..n {
        for b in a + 1..n {
            if (values[a] - values[b]).norm() <= CLUSTER_LINK * scale {
                let (ra, rb) = (root(&mut group, a), root(&mut group, b));
                group[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    for r in 0..n {
        let members: Vec<usize> = (0..n).filter(|&k| root(&mut group, k) == r).collect();
        let m = members.len();
        if m < 2 {
            continue;
        }
        let diameter = members
            .iter()
            .flat_map(|&a| members.iter().map(move |&b| (a, b)))
            .map(|(a, b)| (values[a] - values[b]).norm())
            .fold(0.0, f64::max);
        if diameter <= 10.0 * f64::EPSILON.powf(1.0 / m as f64) * scale {
            let mean = members.iter().map(|&k| values[k]).sum::<Complex<f64>>() / m as f64;
            for &k in &members {
                values[k] = mean;
            }
        }
    }
}
