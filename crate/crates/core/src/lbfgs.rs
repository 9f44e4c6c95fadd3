//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The inverse Hessian is approximated from the last `memory` update pairs by
//! the standard two-loop recursion; curvature pairs are only kept when
//! `s.y > 0` holds well away from roundoff. The line search brackets and then
//! zooms until both the sufficient-decrease and strong curvature conditions
//! hold. Everything is deterministic given the objective.

/// Optimizer settings.
#[derive(Debug, Clone)]
pub struct Options {
    /// Number of stored update pairs.
    pub memory: usize,
    /// Maximum outer iterations.
    pub max_iterations: usize,
    /// Stop when the gradient norm drops below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the line search.
    pub c1: f64,
    /// Curvature constant of the line search.
    pub c2: f64,
    /// Maximum objective evaluations per line search.
    pub max_line_search: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            memory: 10,
            max_iterations: 100,
            grad_tol: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

/// One accepted iteration, for logging.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub iteration: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub fn_evals: usize,
}

/// Result of a minimization run; `x`/`f` are the best iterate seen.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub fn_evals: usize,
    pub line_search_failed: bool,
    pub history: Vec<IterationLog>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(grad: &[f64], pairs: &std::collections::VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let alpha = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (p, &alpha) in pairs.iter().zip(alphas.iter().rev()) {
        let beta = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (alpha - beta) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Minimizes `f_and_grad` starting from `x0`.
///
/// `f_and_grad(x, grad_out)` must return the objective value and fill
/// `grad_out` with its gradient; it is expected to be deterministic.
pub fn minimize(
    mut f_and_grad: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: &[f64],
    opts: &Options,
) -> Outcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut f = f_and_grad(&x, &mut grad);
    let mut fn_evals = 1;

    let mut best_x = x.clone();
    let mut best_f = f;
    let mut history = Vec::new();
    let mut pairs: std::collections::VecDeque<Pair> = std::collections::VecDeque::new();
    let mut line_search_failed = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let gnorm = norm(&grad);
        if gnorm <= opts.grad_tol || !f.is_finite() {
            break;
        }

        let mut dir = two_loop(&grad, &pairs);
        let mut dg = dot(&dir, &grad);
        if dg >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            pairs.clear();
            dir = grad.iter().map(|g| -g).collect();
            dg = dot(&dir, &grad);
            if dg >= 0.0 {
                break;
            }
        }

        // Initial trial step: unit for quasi-Newton directions, scaled on the
        // very first (steepest-descent) iteration.
        let alpha0 = if pairs.is_empty() {
            (1.0 / gnorm.max(1.0)).min(1.0)
        } else {
            1.0
        };

        // Strong Wolfe line search: bracket then zoom.
        let f0 = f;
        let dg0 = dg;
        let mut alpha_prev = 0.0;
        let mut f_prev = f0;
        let mut dg_prev = dg0;
        let mut alpha = alpha0;
        let mut ls_evals = 0;
        let mut accepted: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None; // (alpha, f, x, grad)
        let mut bracket: Option<(f64, f64, f64, f64, f64)> = None; // (lo, f_lo, dg_lo, hi, f_hi)

        let mut x_trial = vec![0.0; n];
        let mut g_trial = vec![0.0; n];
        let eval = |alpha: f64,
                    x: &[f64],
                    dir: &[f64],
                    x_trial: &mut [f64],
                    g_trial: &mut [f64],
                    f_and_grad: &mut dyn FnMut(&[f64], &mut [f64]) -> f64| {
            for ((xt, &xi), &di) in x_trial.iter_mut().zip(x).zip(dir) {
                *xt = xi + alpha * di;
            }
            f_and_grad(x_trial, g_trial)
        };

        while ls_evals < opts.max_line_search {
            let f_a = eval(alpha, &x, &dir, &mut x_trial, &mut g_trial, &mut f_and_grad);
            ls_evals += 1;
            let dg_a = dot(&g_trial, &dir);
            if !f_a.is_finite() {
                // Retreat: treat as an upper bracket at this point.
                bracket = Some((alpha_prev, f_prev, dg_prev, alpha, f64::INFINITY));
                break;
            }
            if f_a > f0 + opts.c1 * alpha * dg0 || (ls_evals > 1 && f_a >= f_prev) {
                bracket = Some((alpha_prev, f_prev, dg_prev, alpha, f_a));
                break;
            }
            if dg_a.abs() <= -opts.c2 * dg0 {
                accepted = Some((alpha, f_a, x_trial.clone(), g_trial.clone()));
                break;
            }
            if dg_a >= 0.0 {
                bracket = Some((alpha, f_a, dg_a, alpha_prev, f_prev));
                break;
            }
            alpha_prev = alpha;
            f_prev = f_a;
            dg_prev = dg_a;
            alpha *= 2.0;
        }

        if accepted.is_none() {
            if let Some((mut lo, mut f_lo, mut dg_lo, mut hi, mut f_hi)) = bracket {
                while ls_evals < opts.max_line_search {
                    // Bisection zoom; robust and deterministic.
                    let mid = 0.5 * (lo + hi);
                    let f_m = eval(mid, &x, &dir, &mut x_trial, &mut g_trial, &mut f_and_grad);
                    ls_evals += 1;
                    let dg_m = dot(&g_trial, &dir);
                    if !f_m.is_finite() || f_m > f0 + opts.c1 * mid * dg0 || f_m >= f_lo {
                        hi = mid;
                        f_hi = f_m;
                    } else {
                        if dg_m.abs() <= -opts.c2 * dg0 {
                            accepted = Some((mid, f_m, x_trial.clone(), g_trial.clone()));
                            break;
                        }
                        if dg_m * (hi - lo) >= 0.0 {
                            hi = lo;
                            f_hi = f_lo;
                        }
                        lo = mid;
                        f_lo = f_m;
                        dg_lo = dg_m;
                    }
                    if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
                        break;
                    }
                }
                // Zoom exhausted: accept the lower point if it at least
                // decreases the objective.
                if accepted.is_none() && lo > 0.0 && f_lo < f0 && f_lo.is_finite() {
                    let f_l = eval(lo, &x, &dir, &mut x_trial, &mut g_trial, &mut f_and_grad);
                    ls_evals += 1;
                    accepted = Some((lo, f_l, x_trial.clone(), g_trial.clone()));
                }
                let _ = (dg_lo, f_hi);
            }
        }

        fn_evals += ls_evals;
        match accepted {
            Some((alpha_acc, f_new, x_new, g_new)) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-10 * norm(&s) * norm(&yv) {
                    if pairs.len() == opts.memory {
                        pairs.pop_front();
                    }
                    let rho = 1.0 / sy;
                    pairs.push_back(Pair { s, y: yv, rho });
                }
                x = x_new;
                grad = g_new;
                f = f_new;
                iterations += 1;
                if f < best_f {
                    best_f = f;
                    best_x = x.clone();
                }
                history.push(IterationLog {
                    iteration: iterations,
                    f,
                    grad_norm: norm(&grad),
                    step: alpha_acc,
                    fn_evals: ls_evals,
                });
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }

    let grad_norm = norm(&grad);
    Outcome {
        x: best_x,
        f: best_f,
        grad_norm,
        iterations,
        fn_evals,
        line_search_failed,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_to_analytic_minimum() {
        // f(x) = 0.5 sum_i a_i (x_i - t_i)^2 with known minimum t.
        let a: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let t: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
        let obj = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..10 {
                let d = x[i] - t[i];
                f += 0.5 * a[i] * d * d;
                g[i] = a[i] * d;
            }
            f
        };
        let opts = Options {
            max_iterations: 50,
            ..Options::default()
        };
        let out = minimize(obj, &vec![0.0; 10], &opts);
        let dist: f64 = out
            .x
            .iter()
            .zip(&t)
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-8, "distance {dist} after {} iterations", out.iterations);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let obj = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            f
        };
        let opts = Options {
            max_iterations: 200,
            ..Options::default()
        };
        let out = minimize(obj, &[-1.2, 1.0], &opts);
        assert!(out.f < 1e-10, "f {} after {} iterations", out.f, out.iterations);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_start_returns_immediately() {
        let obj = |x: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            x.iter().map(|v| v * v).sum::<f64>() * 0.0 + 3.0
        };
        let out = minimize(obj, &[1.0, 2.0], &Options::default());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![1.0, 2.0]);
        assert_eq!(out.f, 3.0);
    }

    #[test]
    fn monotone_over_accepted_steps() {
        let obj = |x: &[f64], g: &mut [f64]| {
            let f = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.cos()).sum::<f64>();
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = -(i as f64 + 1.0) * x[i].sin();
            }
            f
        };
        let out = minimize(obj, &[0.3, 1.1, -0.7], &Options::default());
        let mut prev = f64::INFINITY;
        for log in &out.history {
            assert!(log.f <= prev + 1e-12, "non-monotone at iter {}", log.iteration);
            prev = log.f;
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let obj = |x: &[f64], g: &mut [f64]| {
            let f = (x[0] - 0.5).powi(4) + (x[1] + 0.25).powi(2) + x[0] * x[1];
            g[0] = 4.0 * (x[0] - 0.5).powi(3) + x[1];
            g[1] = 2.0 * (x[1] + 0.25) + x[0];
            f
        };
        let a = minimize(obj, &[2.0, -1.0], &Options::default());
        let b = minimize(obj, &[2.0, -1.0], &Options::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.f, b.f);
    }
}
