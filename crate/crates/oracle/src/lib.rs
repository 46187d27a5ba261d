//! Independent reference computations for the test suites.
//!
//! Nothing in here calls into `beta-evidence`. Each routine is the slow,
//! obvious way of computing a quantity the library computes fast.

/// Euler–Mascheroni constant to 20 digits.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `ln(n!)` by direct summation of logarithms.
pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ψ(n)` for a positive integer `n` via `ψ(n) = −γ + Σ_{k<n} 1/k`.
pub fn digamma_int(n: u32) -> f64 {
    -EULER_GAMMA + (1..n).map(|k| 1.0 / k as f64).sum::<f64>()
}

/// `ψ′(n)` for a positive integer `n` via `ψ′(n) = π²/6 − Σ_{k<n} 1/k²`.
pub fn trigamma_int(n: u32) -> f64 {
    std::f64::consts::PI.powi(2) / 6.0 - (1..n).map(|k| 1.0 / (k as f64).powi(2)).sum::<f64>()
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    adapt(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral over the open unit interval of a function that may be singular
/// or ill-behaved at 0 and 1.
///
/// The interval is split geometrically towards both endpoints
/// (`[2^-k-1, 2^-k]` pieces down to `2^-60` near 0 and `2^-52` near 1, the
/// last gap representable there) and each piece is integrated with
/// [`adaptive_simpson`]; the remaining slivers are dropped.
pub fn integrate_unit_interval<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let mut knots = vec![0.5];
    for k in 2..=60 {
        let h = 0.5f64.powi(k);
        knots.push(h);
        if k <= 52 {
            knots.push(1.0 - h);
        }
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let pieces = (knots.len() - 1) as f64;
    knots
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], tol / pieces))
        .sum()
}

/// Beta density evaluated naively in log space from an independent
/// log-gamma (Lanczos, g = 7, 9 terms).
pub fn beta_pdf_ref(y: f64, a: f64, b: f64) -> f64 {
    let ln_norm = ln_gamma_lanczos(a + b) - ln_gamma_lanczos(a) - ln_gamma_lanczos(b);
    (ln_norm + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()).exp()
}

/// Lanczos approximation, g = 7, n = 9; about 15 significant digits.
pub fn ln_gamma_lanczos(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_lanczos(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// `KL(Beta(a, b) ‖ Beta(1, 1)) = ∫ f ln f` by quadrature.
pub fn beta_kl_to_uniform_quad(a: f64, b: f64, tol: f64) -> f64 {
    integrate_unit_interval(
        |y| {
            let f = beta_pdf_ref(y, a, b);
            if f > 0.0 {
                f * f.ln()
            } else {
                0.0
            }
        },
        tol,
    )
}

/// ROC-AUC by counting every (positive, negative) pair; ties count one half.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero derivatives compare sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
