//! Adaptive one-dimensional quadrature with a nested driver for low
//! dimensional product-domain integrals.

/// Adaptive Simpson integration of `f` over `[a, b]` to the given relative
/// tolerance (with a small absolute floor so zero integrals terminate).
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    // Seed the recursion from a fixed panel split so integrands with
    // symmetric support are not missed by a single coarse probe.
    let panels = 16;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    let mut estimates = Vec::with_capacity(panels);
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = lo + h;
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let s = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        estimates.push((lo, hi, flo, fmid, fhi, s));
        total += s.abs();
    }
    let abs_floor = 1e-300_f64.max(total * 1e-16);
    let tol = (total * rel_tol).max(abs_floor);
    let mut sum = 0.0;
    for (lo, hi, flo, fmid, fhi, s) in estimates {
        sum += simpson_rec(&mut f, lo, hi, flo, fmid, fhi, s, tol / panels as f64, 48);
    }
    sum
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Nested adaptive quadrature of `f` over the box given by `bounds`
/// (outermost coordinate first).
pub fn adaptive_box<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &[(f64, f64)],
    rel_tol: f64,
) -> f64 {
    let mut point = vec![0.0; bounds.len()];
    nested(f, bounds, rel_tol, 0, &mut point)
}

fn nested<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &[(f64, f64)],
    rel_tol: f64,
    level: usize,
    point: &mut Vec<f64>,
) -> f64 {
    let (lo, hi) = bounds[level];
    if level + 1 == bounds.len() {
        let mut g = |x: f64| {
            point[level] = x;
            f(point)
        };
        adaptive_simpson(&mut g, lo, hi, rel_tol)
    } else {
        let mut g = |x: f64| {
            point[level] = x;
            nested(f, bounds, rel_tol, level + 1, point)
        };
        adaptive_simpson(&mut g, lo, hi, rel_tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_smooth_functions() {
        let got = adaptive_simpson(|x| x * x, 0.0, 2.0, 1e-10);
        assert!((got - 8.0 / 3.0).abs() < 1e-9);
        let got = adaptive_simpson(|x| (-x * x / 2.0).exp(), -8.0, 8.0, 1e-10);
        assert!((got - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn integrates_indicators_reasonably() {
        let got = adaptive_simpson(|x| if x.abs() < 1.0 { 1.0 } else { 0.0 }, -3.0, 3.0, 1e-8);
        assert!((got - 2.0).abs() < 1e-5, "got {got}");
    }

    #[test]
    fn nested_two_dimensional_disc_area() {
        let mut f = |p: &[f64]| {
            if p[0] * p[0] + p[1] * p[1] < 1.0 {
                1.0
            } else {
                0.0
            }
        };
        let got = adaptive_box(&mut f, &[(-1.1, 1.1), (-1.1, 1.1)], 1e-6);
        assert!((got - std::f64::consts::PI).abs() < 2e-3, "got {got}");
    }
}
