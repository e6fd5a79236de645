//! Scalar search and quadrature used by the bound evaluators.

const INV_PHI: f64 = 0.618_033_988_749_894_9; // (sqrt(5) - 1) / 2

/// Result of a one-dimensional minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
///
/// `f` may return `+inf`; such points simply lose every comparison, so the
/// search never settles on them unless the whole bracket is infinite.
/// Stops once the bracket is narrower than `xtol`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Minimum {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a) > xtol && iter < 500 {
        iter += 1;
        // ties move right-to-left so a flat region resolves toward `lo`
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        Minimum { x: c, value: fc }
    } else {
        Minimum { x: d, value: fd }
    }
}

/// Locate the sign change of `negative(x)` on `(lo, hi)` by bisection, where
/// `negative` holds on a prefix of the interval and fails on the suffix.
/// Returns the boundary point.
pub fn bisect_boundary<F: FnMut(f64) -> bool>(mut negative: F, lo: f64, hi: f64, rtol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..2000 {
        if b - a <= rtol * b.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if negative(m) {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

// 15-point Kronrod nodes/weights with embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of a smooth `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // (lo, hi, estimate, error) intervals; split the worst until converged
    let (est, err) = gk15(f, a, b);
    let mut pieces = vec![(a, b, est, err)];
    for _ in 0..2000 {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= abs_tol {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (e1, r1) = gk15(f, lo, mid);
        let (e2, r2) = gk15(f, mid, hi);
        pieces.push((lo, mid, e1, r1));
        pieces.push((mid, hi, e2, r2));
    }
    let mut sum = 0.0;
    for p in &pieces {
        sum += p.2;
    }
    sum
}

/// Nearest integer to `q` when `q` is within round-off of it, else `floor(q)`.
///
/// Thresholds such as `d + (v - 1)/R` are integers in exact arithmetic for many
/// grid rates; plain `floor` would drop a whole slot on a one-ulp deficit.
pub fn snapped_floor(q: f64) -> f64 {
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        q.floor()
    }
}
