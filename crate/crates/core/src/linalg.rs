//! Tiny dense helpers for the 2×2 to 4×4 systems that appear in the fits.

/// Solves `a · x = b` in place by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `rel_tol` times the largest
/// absolute entry of `a`.
pub(crate) fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N], rel_tol: f64) -> Option<[f64; N]> {
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= rel_tol * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let factor = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for k in row + 1..N {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Eigen-decomposition of the real symmetric matrix `[[a, b], [b, d]]`.
///
/// Returns `(λ_lo, λ_hi, v_lo, v_hi)` with unit eigenvectors.
pub(crate) fn symmetric_eigen2(a: f64, b: f64, d: f64) -> (f64, f64, [f64; 2], [f64; 2]) {
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(b);
    let lo = mean - radius;
    let hi = mean + radius;
    // Rotation angle: tan(2θ) = 2b / (a - d); v_hi = (cos θ, sin θ).
    let theta = 0.5 * b.atan2(half_diff);
    let (s, c) = theta.sin_cos();
    (lo, hi, [-s, c], [c, s])
}

/// Least-squares polynomial of degree `N - 1` in `t = (x - x0) / scale`.
///
/// Coefficients are returned lowest order first.
pub(crate) fn polyfit<const N: usize>(x: &[f64], y: &[f64], x0: f64, scale: f64) -> Option<[f64; N]> {
    if x.len() < N {
        return None;
    }
    let mut ata = [[0.0; N]; N];
    let mut aty = [0.0; N];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - x0) / scale;
        let mut pow = [1.0; N];
        for k in 1..N {
            pow[k] = pow[k - 1] * t;
        }
        for r in 0..N {
            aty[r] += pow[r] * yi;
            for c in 0..N {
                ata[r][c] += pow[r] * pow[c];
            }
        }
    }
    solve(ata, aty, 1e-13)
}

/// Result of [`levenberg_marquardt`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOutcome<const N: usize> {
    pub params: [f64; N],
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg–Marquardt least squares with Marquardt diagonal scaling.
///
/// `model(x, p)` returns the model value and its gradient in `p`. The
/// damping starts at 1e-3 and is multiplied by 10 when a step increases
/// the residual, divided by 10 otherwise. Convergence is declared when
/// every `|Δp_i| / max(|p_i|, typical_i)` falls below `rel_step`.
/// `weights`, when given, multiply the squared residuals.
#[allow(clippy::too_many_arguments)]
pub(crate) fn levenberg_marquardt<const N: usize, F>(
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    p0: [f64; N],
    typical: [f64; N],
    rel_step: f64,
    max_iter: usize,
    model: F,
) -> LmOutcome<N>
where
    F: Fn(f64, &[f64; N]) -> (f64, [f64; N]),
{
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let ssr_of = |p: &[f64; N]| -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&xi, &yi))| {
                let r = yi - model(xi, p).0;
                weight(i) * r * r
            })
            .sum()
    };
    let mut p = p0;
    let mut ssr = ssr_of(&p);
    let mut lambda = 1e-3;
    for it in 1..=max_iter {
        let mut jtj = [[0.0; N]; N];
        let mut jtr = [0.0; N];
        for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
            let (v, g) = model(xi, &p);
            let w = weight(i);
            let r = yi - v;
            for a in 0..N {
                jtr[a] += w * g[a] * r;
                for b in 0..N {
                    jtj[a][b] += w * g[a] * g[b];
                }
            }
        }
        loop {
            let mut m = jtj;
            for k in 0..N {
                m[k][k] += lambda * jtj[k][k].max(f64::MIN_POSITIVE);
            }
            let Some(step) = solve(m, jtr, 1e-300) else {
                lambda *= 10.0;
                if lambda > 1e30 {
                    return LmOutcome { params: p, ssr, iterations: it, converged: false };
                }
                continue;
            };
            let small = (0..N).all(|k| step[k].abs() <= rel_step * p[k].abs().max(typical[k]));
            let mut trial = p;
            for k in 0..N {
                trial[k] += step[k];
            }
            let trial_ssr = ssr_of(&trial);
            if trial_ssr.is_finite() && trial_ssr <= ssr {
                p = trial;
                ssr = trial_ssr;
                lambda = (lambda / 10.0).max(1e-15);
                if small {
                    return LmOutcome { params: p, ssr, iterations: it, converged: true };
                }
                break;
            }
            if small {
                return LmOutcome { params: p, ssr, iterations: it, converged: true };
            }
            lambda *= 10.0;
            if lambda > 1e30 {
                return LmOutcome { params: p, ssr, iterations: it, converged: false };
            }
            break;
        }
    }
    LmOutcome { params: p, ssr, iterations: max_iter, converged: false }
}
