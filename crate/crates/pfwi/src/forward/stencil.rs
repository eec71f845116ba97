//! Fourth-order staggered differences on the flat (x-fastest) layout.
//!
//! `dx_plus` maps center-aligned data to x-faces, `dx_minus` maps x-face
//! data back to centers; likewise in z. As finite matrices (periodic or
//! zero-padded) they satisfy the exact transpose pairs
//! `dx_plus^T = -dx_minus` and `dz_plus^T = -dz_minus`, which the adjoint
//! solver relies on; the tests pin this to rounding.

const C1: f64 = 9.0 / 8.0;
const C2: f64 = -1.0 / 24.0;

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Output accumulates: dst += scale * D(src). `periodic` selects wrap
/// versus implicit zeros outside the grid.
macro_rules! stencil_x {
    ($name:ident, $o0:expr, $o1:expr, $o2:expr, $o3:expr) => {
        pub fn $name(
            dst: &mut [f64],
            src: &[f64],
            nx: usize,
            nz: usize,
            inv_h: f64,
            scale: f64,
            periodic: bool,
        ) {
            debug_assert_eq!(dst.len(), nx * nz);
            debug_assert_eq!(src.len(), nx * nz);
            let k1 = scale * inv_h * C1;
            let k2 = scale * inv_h * C2;
            crate::parallel::for_each_row_band(dst, nx, |iz, drow| {
                let srow = &src[iz * nx..iz * nx + nx];
                // interior: all four taps in range
                let lo = (-[$o0, $o1, $o2, $o3].iter().copied().min().unwrap()).max(0) as usize;
                let hi = nx - [$o0, $o1, $o2, $o3].iter().copied().max().unwrap().max(0) as usize;
                for ix in lo..hi {
                    let i = ix as isize;
                    drow[ix] += k1 * (srow[(i + $o1) as usize] - srow[(i + $o0) as usize])
                        + k2 * (srow[(i + $o2) as usize] - srow[(i + $o3) as usize]);
                }
                // boundary cells
                let tap = |i: isize| -> f64 {
                    if periodic {
                        srow[wrap(i, nx)]
                    } else if i >= 0 && (i as usize) < nx {
                        srow[i as usize]
                    } else {
                        0.0
                    }
                };
                for ix in (0..lo).chain(hi..nx) {
                    let i = ix as isize;
                    drow[ix] += k1 * (tap(i + $o1) - tap(i + $o0))
                        + k2 * (tap(i + $o2) - tap(i + $o3));
                }
            });
        }
    };
}

macro_rules! stencil_z {
    ($name:ident, $o0:expr, $o1:expr, $o2:expr, $o3:expr) => {
        pub fn $name(
            dst: &mut [f64],
            src: &[f64],
            nx: usize,
            nz: usize,
            inv_h: f64,
            scale: f64,
            periodic: bool,
        ) {
            debug_assert_eq!(dst.len(), nx * nz);
            debug_assert_eq!(src.len(), nx * nz);
            let k1 = scale * inv_h * C1;
            let k2 = scale * inv_h * C2;
            crate::parallel::for_each_row_band(dst, nx, |iz, drow| {
                let z = iz as isize;
                let rows: [Option<&[f64]>; 4] = [$o0, $o1, $o2, $o3].map(|o: isize| {
                    let j = z + o;
                    if periodic {
                        let j = wrap(j, nz);
                        Some(&src[j * nx..j * nx + nx])
                    } else if j >= 0 && (j as usize) < nz {
                        let j = j as usize;
                        Some(&src[j * nx..j * nx + nx])
                    } else {
                        None
                    }
                });
                match rows {
                    [Some(r0), Some(r1), Some(r2), Some(r3)] => {
                        for ix in 0..nx {
                            drow[ix] += k1 * (r1[ix] - r0[ix]) + k2 * (r2[ix] - r3[ix]);
                        }
                    }
                    _ => {
                        let at = |r: Option<&[f64]>, ix: usize| r.map_or(0.0, |row| row[ix]);
                        for ix in 0..nx {
                            drow[ix] += k1 * (at(rows[1], ix) - at(rows[0], ix))
                                + k2 * (at(rows[2], ix) - at(rows[3], ix));
                        }
                    }
                }
            });
        }
    };
}

// plus: value at i+1/2 from integer-aligned data
stencil_x!(dx_plus, 0, 1, 2, -1);
// minus: value at i from half-aligned data (index i holds position i+1/2)
stencil_x!(dx_minus, -1, 0, 1, -2);
stencil_z!(dz_plus, 0, 1, 2, -1);
stencil_z!(dz_minus, -1, 0, 1, -2);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn randv(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn transpose_pairs_hold_to_rounding() {
        let (nx, nz) = (13, 9);
        let n = nx * nz;
        for periodic in [true, false] {
            let u = randv(n, 1);
            let v = randv(n, 2);
            type Op = fn(&mut [f64], &[f64], usize, usize, f64, f64, bool);
            // <D+ u, v> must equal <u, -D- v> and vice versa
            let pairs: [(Op, Op); 2] = [
                (dx_plus as Op, dx_minus as Op),
                (dz_plus as Op, dz_minus as Op),
            ];
            for (plus, minus) in pairs {
                let mut pu = vec![0.0; n];
                plus(&mut pu, &u, nx, nz, 1.7, 1.0, periodic);
                let mut mv = vec![0.0; n];
                minus(&mut mv, &v, nx, nz, 1.7, 1.0, periodic);
                let lhs = dot(&pu, &v);
                let rhs = -dot(&u, &mv);
                assert!(
                    (lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()),
                    "periodic={periodic}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn fourth_order_on_smooth_data() {
        // derivative of sin(kx) sampled at centers, evaluated at faces
        let nx = 64;
        let nz = 8;
        let k = 2.0 * std::f64::consts::PI / nx as f64; // periodic wavenumber (h = 1)
        let mut src = vec![0.0; nx * nz];
        for iz in 0..nz {
            for ix in 0..nx {
                src[ix + nx * iz] = (k * ix as f64).sin();
            }
        }
        let mut out = vec![0.0; nx * nz];
        dx_plus(&mut out, &src, nx, nz, 1.0, 1.0, true);
        let mut worst: f64 = 0.0;
        for ix in 0..nx {
            let xf = ix as f64 + 0.5;
            let want = k * (k * xf).cos();
            worst = worst.max((out[ix] - want).abs());
        }
        // 4th-order phase error at this resolution
        assert!(worst < 2e-6, "max err {worst:e}");
    }

    #[test]
    fn constant_field_has_zero_derivative_periodic() {
        let (nx, nz) = (8, 8);
        let src = vec![3.5; nx * nz];
        let mut out = vec![0.0; nx * nz];
        dz_plus(&mut out, &src, nx, nz, 2.0, 1.0, true);
        assert!(out.iter().all(|&v| v.abs() < 1e-14));
    }
}
