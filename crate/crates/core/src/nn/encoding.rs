use std::f32::consts::PI;

pub const SH_COEFFS: usize = 16;

pub fn positional_width(frequencies: usize) -> usize {
    3 + 6 * frequencies
}

/// `[x, sin(2^k π x), cos(2^k π x)]` for `k < frequencies`, written into `out`.
///
/// Layout: the three raw coordinates, then for each frequency the three sines
/// followed by the three cosines.
pub fn positional_encode(x: [f32; 3], frequencies: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), positional_width(frequencies));
    out[..3].copy_from_slice(&x);
    for k in 0..frequencies {
        let scale = (1u32 << k) as f32 * PI;
        let base = 3 + 6 * k;
        for axis in 0..3 {
            let (s, c) = (scale * x[axis]).sin_cos();
            out[base + axis] = s;
            out[base + 3 + axis] = c;
        }
    }
}

/// Real spherical harmonics through degree 3 (16 values).
///
/// The direction is normalized first, so only its orientation matters. A zero
/// vector is encoded as if it pointed along +z.
pub fn sh_encode(d: [f32; 3], out: &mut [f32]) {
    debug_assert_eq!(out.len(), SH_COEFFS);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (x, y, z) = if n > 0.0 {
        (d[0] / n, d[1] / n, d[2] / n)
    } else {
        (0.0, 0.0, 1.0)
    };
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);

    out[0] = 0.282_094_79;
    out[1] = -0.488_602_51 * y;
    out[2] = 0.488_602_51 * z;
    out[3] = -0.488_602_51 * x;
    out[4] = 1.092_548_4 * xy;
    out[5] = -1.092_548_4 * yz;
    out[6] = 0.946_174_7 * zz - 0.315_391_57;
    out[7] = -1.092_548_4 * xz;
    out[8] = 0.546_274_2 * (xx - yy);
    out[9] = 0.590_043_6 * y * (-3.0 * xx + yy);
    out[10] = 2.890_611_4 * xy * z;
    out[11] = 0.457_045_8 * y * (1.0 - 5.0 * zz);
    out[12] = 0.373_176_33 * z * (5.0 * zz - 3.0);
    out[13] = 0.457_045_8 * x * (1.0 - 5.0 * zz);
    out[14] = 1.445_305_7 * z * (xx - yy);
    out[15] = 0.590_043_6 * x * (-xx + 3.0 * yy);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sh(d: [f32; 3]) -> [f32; 16] {
        let mut out = [0.0; 16];
        sh_encode(d, &mut out);
        out
    }

    fn degree(i: usize) -> usize {
        (i as f64).sqrt() as usize
    }

    #[test]
    fn pe_examples() {
        let mut out = vec![0.0; positional_width(4)];
        assert_eq!(out.len(), 27);
        positional_encode([0.0; 3], 4, &mut out);
        for k in 0..4 {
            let b = 3 + 6 * k;
            assert_eq!(&out[b..b + 3], &[0.0; 3]);
            assert_eq!(&out[b + 3..b + 6], &[1.0; 3]);
        }
        positional_encode([0.5, 0.0, 0.0], 4, &mut out);
        assert_eq!(out[0], 0.5);
        assert!((out[3] - 1.0).abs() < 1e-6);
        assert!(out[6].abs() < 1e-6);
    }

    #[test]
    fn sh_constant_term() {
        // 1 / (2 sqrt(pi))
        let y00 = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        for d in [[1.0, 0.0, 0.0], [0.3, -0.4, 0.866], [0.0, 0.0, -1.0]] {
            assert!((sh(d)[0] as f64 - y00).abs() < 1e-7);
        }
    }

    #[test]
    fn sh_at_pole_keeps_only_zonal_terms() {
        let v = sh([0.0, 0.0, 1.0]);
        for l in 0..4usize {
            for m in -(l as i64)..=(l as i64) {
                let i = (l * l + l) as i64 + m;
                let v = v[i as usize] as f64;
                if m == 0 {
                    // Y_l^0 at the pole: sqrt((2l+1)/4π) · P_l(1)
                    let expect = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt();
                    assert!((v - expect).abs() < 1e-6, "l={l}: {v} vs {expect}");
                } else {
                    assert_eq!(v, 0.0, "l={l} m={m}");
                }
            }
        }
    }

    #[test]
    fn sh_normalizes_input() {
        let a = sh([0.2, 0.5, -0.3]);
        let b = sh([2.0, 5.0, -3.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn sh_parity(x in -1f32..1.0, y in -1f32..1.0, z in -1f32..1.0) {
            prop_assume!(x * x + y * y + z * z > 1e-3);
            let a = sh([x, y, z]);
            let b = sh([-x, -y, -z]);
            for i in 0..16 {
                let sgn = if degree(i) % 2 == 1 { -1.0 } else { 1.0 };
                prop_assert!((a[i] - sgn * b[i]).abs() < 1e-6);
            }
        }
    }
}
