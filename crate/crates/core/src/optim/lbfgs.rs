/// Settings for [`minimize_projected_lbfgs`].
#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the infinity norm of the projected gradient drops below this.
    pub pg_tol: f64,
    /// Stop when an accepted step reduces the objective by less than this (relative).
    pub f_rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 8,
            pg_tol: 1e-6,
            f_rel_tol: 1e-11,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes `f` over the box `[lower, upper]` with a projected L-BFGS
/// iteration and Armijo backtracking along the projected path.
///
/// `f` returns `None` where the objective cannot be evaluated; such trial
/// points are treated as infinitely bad. Returns `None` only if `f` fails at
/// the (clipped) starting point. Every accepted step decreases the objective,
/// so the returned value never exceeds `f(x0)`.
pub fn minimize_projected_lbfgs<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &LbfgsConfig,
) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x).filter(|(v, g)| v.is_finite() && g.iter().all(|d| d.is_finite()))?;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.pg_tol {
            break;
        }

        let mut d = two_loop(&pg, &s_hist, &y_hist);
        d.iter_mut().for_each(|v| *v = -*v);
        for i in 0..n {
            let at_lo = x[i] <= lower[i] && d[i] < 0.0;
            let at_hi = x[i] >= upper[i] && d[i] > 0.0;
            if at_lo || at_hi || pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = pg.iter().map(|v| -v).collect();
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }

        let mut alpha = if s_hist.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dmax).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xn);
            if xn == x {
                break;
            }
            if let Some((fn_, gn)) = f(&xn) {
                let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.max(1e-300) {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }

        let rel = (fx - fn_) / fx.abs().max(fn_.abs()).max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if rel < cfg.f_rel_tol {
            break;
        }
    }

    Some(Minimum {
        x,
        value: fx,
        iterations,
    })
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| {
            if (*xi <= lower[i] && *gi > 0.0) || (*xi >= upper[i] && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

/// Applies the L-BFGS inverse-Hessian approximation to `q`.
fn two_loop(q: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let m = s_hist.len();
    let mut r = q.to_vec();
    let mut alphas = vec![0.0; m];
    for k in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
        alphas[k] = rho * dot(&s_hist[k], &r);
        for (ri, yi) in r.iter_mut().zip(&y_hist[k]) {
            *ri -= alphas[k] * yi;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for k in 0..m {
        let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
        let beta = rho * dot(&y_hist[k], &r);
        for (ri, si) in r.iter_mut().zip(&s_hist[k]) {
            *ri += (alphas[k] - beta) * si;
        }
    }
    r
}
