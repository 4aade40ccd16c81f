//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.

/// Kronrod abscissae on `[-1, 1]`, nonnegative half, descending.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the center.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

pub const NODES: usize = 15;

/// The 15 Kronrod nodes of `[a, b]` in ascending order.
pub fn kronrod_nodes(a: f64, b: f64) -> [f64; NODES] {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut xs = [0.0; NODES];
    for i in 0..7 {
        xs[i] = center - half * XGK[i];
        xs[NODES - 1 - i] = center + half * XGK[i];
    }
    xs[7] = center;
    xs
}

/// Kronrod and Gauss estimates from integrand values at [`kronrod_nodes`].
pub fn gk15_from_values<const N: usize>(values: &[[f64; N]; NODES], half: f64) -> ([f64; N], [f64; N]) {
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];
    for d in 0..N {
        let mut k = WGK[7] * values[7][d];
        let mut g = WG[3] * values[7][d];
        for i in 0..7 {
            let pair = values[i][d] + values[NODES - 1 - i][d];
            k += WGK[i] * pair;
            if i % 2 == 1 {
                g += WG[i / 2] * pair;
            }
        }
        kronrod[d] = k * half;
        gauss[d] = g * half;
    }
    (kronrod, gauss)
}

/// Integrates `f` over `[a, b]`, bisecting while the Kronrod/Gauss
/// difference of component 0 exceeds `tol` (absolute, per panel).
pub fn integrate_adaptive<const N: usize, F>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> [f64; N]
where
    F: Fn(f64) -> [f64; N],
{
    let xs = kronrod_nodes(a, b);
    let values = xs.map(f);
    refine(f, a, b, &values, tol, max_depth)
}

/// Continues [`integrate_adaptive`] from precomputed node values.
pub fn refine<const N: usize, F>(f: &F, a: f64, b: f64, values: &[[f64; N]; NODES], tol: f64, depth: u32) -> [f64; N]
where
    F: Fn(f64) -> [f64; N],
{
    let (kronrod, gauss) = gk15_from_values(values, 0.5 * (b - a));
    let err = (kronrod[0] - gauss[0]).abs();
    if err <= tol || depth == 0 || !err.is_finite() {
        return kronrod;
    }
    let mid = 0.5 * (a + b);
    let left = integrate_adaptive(f, a, mid, 0.5 * tol, depth - 1);
    let right = integrate_adaptive(f, mid, b, 0.5 * tol, depth - 1);
    let mut out = [0.0; N];
    for d in 0..N {
        out[d] = left[d] + right[d];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomials_and_trig() {
        let r = integrate_adaptive(&|x: f64| [x.powi(6), x.cos()], 0.0, 2.0, 1e-14, 10);
        assert_abs_diff_eq!(r[0], 2f64.powi(7) / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 2f64.sin(), epsilon = 1e-14);
    }

    #[test]
    fn sqrt_cusp_is_refined() {
        let r = integrate_adaptive(&|x: f64| [x.abs().sqrt()], -1.0, 1.0, 1e-12, 40);
        assert_abs_diff_eq!(r[0], 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let xs = kronrod_nodes(1.0, 3.0);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(xs[7], 2.0);
        assert_abs_diff_eq!(xs[0] + xs[14], 4.0, epsilon = 1e-15);
    }
}
