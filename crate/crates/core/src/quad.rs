//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

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
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let s = f(c - h * x) + f(c + h * x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrate `f` over `[a, b]` until the summed error estimate is below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            abs_error: 0.0,
        };
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) && intervals.len() < MAX_INTERVALS {
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v0, e0) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            intervals.push((lo, hi, v0, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // Re-sum to shed the drift of the running updates.
    let value = intervals.iter().map(|iv| iv.2).sum();
    let abs_error = intervals.iter().map(|iv| iv.3).sum();
    Quadrature { value, abs_error }
}

/// Integrate over the real line, splitting at the sorted `breaks` (kinks of the
/// integrand). Unbounded pieces are mapped to `[0, 1)` by `y = p +- s u / (1 - u)`.
pub fn integrate_line<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    scale: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let mut pts: Vec<f64> = breaks.iter().cloned().filter(|v| v.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.is_empty() {
        pts.push(0.0);
    }
    let pieces = pts.len() + 1;
    let piece_tol = abs_tol / pieces as f64;
    let s = scale;
    let first = pts[0];
    let last = *pts.last().unwrap();
    let mut out = Quadrature {
        value: 0.0,
        abs_error: 0.0,
    };
    let mut add = |q: Quadrature| {
        out.value += q.value;
        out.abs_error += q.abs_error;
    };
    add(integrate(
        |u| {
            let d = 1.0 - u;
            f(first - s * u / d) * s / (d * d)
        },
        0.0,
        1.0,
        piece_tol,
        rel_tol,
    ));
    for w in pts.windows(2) {
        add(integrate(&mut f, w[0], w[1], piece_tol, rel_tol));
    }
    add(integrate(
        |u| {
            let d = 1.0 - u;
            f(last + s * u / d) * s / (d * d)
        },
        0.0,
        1.0,
        piece_tol,
        rel_tol,
    ));
    out
}
