//! Numerical quadrature helpers: adaptive Simpson integration and a fixed
//! composite Simpson rule for line integrals.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`, with recursion depth capped at 60.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = simpson(a, b, fa, fc, fb);
    adaptive_rec(f, a, b, fa, fc, fb, whole, tol, 60)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = simpson(a, c, fa, fd, fc);
    let right = simpson(c, b, fc, fe, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_rec(f, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)
            + adaptive_rec(f, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Composite Simpson rule with `segments` equal sub-intervals (rounded up to
/// an even count). Used for path integrals where a fixed, deterministic
/// evaluation grid is wanted.
pub fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, segments: usize) -> f64 {
    let n = segments.max(2) + segments % 2;
    let hstep = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * hstep);
    }
    acc * hstep / 3.0
}
