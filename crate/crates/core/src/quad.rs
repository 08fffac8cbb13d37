//! Adaptive Simpson quadrature with Richardson correction.

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// `f` may fail; the first error aborts the integration.
pub fn adaptive_simpson<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, E> {
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(&mut f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn recurse<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, E> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_reciprocal() {
        let v = adaptive_simpson(|x| Ok::<_, ()>(1.0 / (1.0 + x)), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-11);
    }

    #[test]
    fn propagates_errors() {
        let r = adaptive_simpson(|x| if x > 0.7 { Err("bad") } else { Ok(x) }, 0.0, 1.0, 1e-9);
        assert_eq!(r, Err("bad"));
    }
}
