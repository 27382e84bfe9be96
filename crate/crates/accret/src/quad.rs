//! Numerical integration used by the closed-form densities and their tests:
//! adaptive Gauss-Kronrod on finite intervals, algebraic maps for half-line
//! and full-line integrals, and tanh-sinh quadrature on (0, 1) for integrands
//! with endpoint singularities (evaluated in log space to avoid overflow).

/// 15-point Kronrod abscissae (positive half, including 0).
const XK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// 15-point Kronrod weights matching `XK`.
const WK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// 7-point Gauss weights for the embedded rule (nodes XK[1], XK[3], XK[5], XK[7]).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub panels: usize,
}

/// One Gauss-Kronrod 7/15 panel; returns (integral, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut ik = WK[7] * fc;
    let mut ig = WG[3] * fc;
    for j in 0..7 {
        let x = h * XK[j];
        let fsum = f(c - x) + f(c + x);
        ik += WK[j] * fsum;
        if j % 2 == 1 {
            ig += WG[j / 2] * fsum;
        }
    }
    ik *= h;
    ig *= h;
    (ik, (ik - ig).abs())
}

/// Adaptive integration of `f` over `[a, b]`.
///
/// Splits the worst panel until the summed error estimate drops below
/// `max(rel_tol * |integral|, abs_tol)` or the panel budget is exhausted.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> QuadResult {
    const MAX_PANELS: usize = 4096;

    #[derive(Debug)]
    struct Panel {
        a: f64,
        b: f64,
        value: f64,
        err: f64,
    }

    if a == b {
        return QuadResult {
            value: 0.0,
            abs_error: 0.0,
            panels: 0,
        };
    }

    let (v, e) = gk15(&f, a, b);
    let mut panels = vec![Panel {
        a,
        b,
        value: v,
        err: e,
    }];

    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if err <= (rel_tol * total.abs()).max(abs_tol) || panels.len() >= MAX_PANELS {
            return QuadResult {
                value: total,
                abs_error: err,
                panels: panels.len(),
            };
        }
        // split the panel with the largest error estimate
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(&f, p.a, m);
        let (v2, e2) = gk15(&f, m, p.b);
        panels.push(Panel {
            a: p.a,
            b: m,
            value: v1,
            err: e1,
        });
        panels.push(Panel {
            a: m,
            b: p.b,
            value: v2,
            err: e2,
        });
    }
}

/// Integrates `f` over `[0, inf)` via the map `z = scale * u / (1 - u)`.
///
/// `scale` should be of the order of the integrand's characteristic width so
/// the mass lands well inside the unit interval.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, scale: f64, rel_tol: f64) -> QuadResult {
    assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
    let g = move |u: f64| {
        let om = 1.0 - u;
        if om <= 0.0 {
            return 0.0;
        }
        let z = scale * u / om;
        let jac = scale / (om * om);
        let v = f(z) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, rel_tol, 0.0)
}

/// Integrates `f` over the whole real line as two half-line integrals.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, scale: f64, rel_tol: f64) -> QuadResult {
    let pos = integrate_half_line(&f, scale, rel_tol);
    let neg = integrate_half_line(|z| f(-z), scale, rel_tol);
    QuadResult {
        value: pos.value + neg.value,
        abs_error: pos.abs_error + neg.abs_error,
        panels: pos.panels + neg.panels,
    }
}

/// A tanh-sinh node on (0, 1) with stable complements and logarithms.
#[derive(Debug, Clone, Copy)]
pub struct TsNode {
    pub u: f64,
    pub one_minus_u: f64,
    pub ln_u: f64,
    pub ln_one_minus_u: f64,
}

/// tanh-sinh quadrature of `exp(ln_f)` over (0, 1), carried out in log space.
///
/// Returns `ln(integral)`. The integrand may diverge (integrably) at either
/// endpoint; `ln_f` may return -inf where the integrand vanishes. Returns
/// `None` when the level refinement does not settle, which callers must treat
/// as a non-convergence error rather than a value.
pub fn tanh_sinh_ln<F: Fn(&TsNode) -> f64>(ln_f: F, rel_tol: f64) -> Option<f64> {
    const T_MAX: f64 = 6.0;
    const MAX_LEVEL: usize = 9;
    let half_pi = std::f64::consts::FRAC_PI_2;

    let mut prev: Option<f64> = None;
    for level in 0..=MAX_LEVEL {
        let h = 1.0 / (1u64 << level) as f64;
        let n = (T_MAX / h).ceil() as i64;
        let mut terms: Vec<f64> = Vec::with_capacity((2 * n + 1) as usize);
        let mut max_term = f64::NEG_INFINITY;
        for j in -n..=n {
            let t = j as f64 * h;
            let s = half_pi * t.sinh();
            // u = e^{2s} / (1 + e^{2s}), 1-u = 1 / (1 + e^{2s}); stable at both ends
            let (ln_u, ln_om) = if s >= 0.0 {
                (
                    -(-2.0 * s).exp().ln_1p(),
                    -2.0 * s - (-2.0 * s).exp().ln_1p(),
                )
            } else {
                (2.0 * s - (2.0 * s).exp().ln_1p(), -(2.0 * s).exp().ln_1p())
            };
            let node = TsNode {
                u: ln_u.exp(),
                one_minus_u: ln_om.exp(),
                ln_u,
                ln_one_minus_u: ln_om,
            };
            // ln weight: ln[(pi/4) cosh t] - 2 ln cosh s
            let ln_cosh_s = s.abs() + (-2.0 * s.abs()).exp().ln_1p() - std::f64::consts::LN_2;
            let ln_w = (half_pi * 0.5 * t.cosh()).ln() - 2.0 * ln_cosh_s;
            let v = ln_f(&node);
            if v.is_nan() {
                return None;
            }
            let term = v + ln_w;
            if term > f64::NEG_INFINITY {
                terms.push(term);
                if term > max_term {
                    max_term = term;
                }
            }
        }
        if terms.is_empty() || !max_term.is_finite() {
            return None;
        }
        let sum: f64 = terms.iter().map(|t| (t - max_term).exp()).sum();
        let ln_i = h.ln() + max_term + sum.ln();
        if let Some(p) = prev {
            let diff = (ln_i - p).abs();
            if diff < rel_tol.max(1e-15) {
                return Some(ln_i);
            }
        }
        prev = Some(ln_i);
    }
    // did not settle within the level budget
    None
}
