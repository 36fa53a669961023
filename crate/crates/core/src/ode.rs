//! Fixed-step integration and event location helpers.

/// One classical fourth-order Runge-Kutta step of `y' = f(t, y)`.
#[inline]
pub fn rk4_step<const N: usize, F>(y: &[f64; N], t: f64, h: f64, f: F) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let half = 0.5 * h;
    let k1 = f(t, y);
    let k2 = f(t + half, &axpy(y, half, &k1));
    let k3 = f(t + half, &axpy(y, half, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

/// Locates a sign change of `g` on `(0, hi]` with the Illinois variant of
/// regula falsi. Requires `g(0) <= 0 < g(hi)`; returns an exact root if
/// one is hit, otherwise the smallest bracketing point found with
/// `g(h) > 0` (so the event has just fired).
pub fn locate_event<G>(mut g: G, g_lo: f64, hi: f64, g_hi: f64) -> f64
where
    G: FnMut(f64) -> f64,
{
    debug_assert!(g_hi > 0.0);
    let (mut a, mut fa) = (0.0_f64, g_lo.min(0.0));
    let (mut b, mut fb) = (hi, g_hi);
    let mut side = 0i8;
    for _ in 0..60 {
        if b - a <= 1e-13 * hi {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = g(c);
        if fc > 0.0 {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
        if fc == 0.0 {
            return c;
        }
    }
    b
}
