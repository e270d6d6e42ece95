//! Deterministic minimizers for smooth, strictly convex objectives.

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Backtracking Armijo search along a descent direction. Near the optimum
/// the objective stops resolving the decrease, so a step that leaves the
/// value flat to rounding while shrinking the gradient is also accepted.
fn line_search(
    at: &Point,
    dir: &[f64],
    eval: &mut impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> Option<Point> {
    let slope = dot(&at.g, dir);
    if slope >= 0.0 {
        return None;
    }
    let gnorm = norm(&at.g);
    let mut step = 1.0;
    for _ in 0..60 {
        let x = axpy(&at.x, step, dir);
        let (f, g) = eval(&x);
        if f.is_finite() {
            let armijo = f <= at.f + 1e-4 * step * slope;
            let flat = (f - at.f).abs() <= 1e-13 * at.f.abs().max(1.0) && norm(&g) < gnorm;
            if armijo || flat {
                return Some(Point { x, f, g });
            }
        }
        step *= 0.5;
    }
    None
}

/// In-place Cholesky of a symmetric positive definite row-major matrix,
/// then solves `A z = b`.
fn cholesky_solve(mut a: Vec<f64>, n: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i * n + k] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            z[i] -= a[k * n + i] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    Some(z)
}

/// Damped Newton. `hessian` returns the row-major Hessian at a point.
pub(crate) fn newton(
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    mut hessian: impl FnMut(&[f64]) -> Vec<f64>,
) -> Outcome {
    let n = x0.len();
    let (f, g) = eval(&x0);
    let mut at = Point { x: x0, f, g };
    for iter in 0..max_iter {
        let gn = norm(&at.g);
        if gn <= tol {
            return Outcome { x: at.x, grad_norm: gn, iterations: iter, converged: true };
        }
        let neg_g: Vec<f64> = at.g.iter().map(|v| -v).collect();
        let dir = cholesky_solve(hessian(&at.x), n, &neg_g).unwrap_or(neg_g);
        match line_search(&at, &dir, &mut eval) {
            Some(next) => at = next,
            None => break,
        }
    }
    let gn = norm(&at.g);
    Outcome { converged: gn <= tol, x: at.x, grad_norm: gn, iterations: max_iter }
}

/// Limited-memory BFGS with a history of `memory` pairs.
pub(crate) fn lbfgs(
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    memory: usize,
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> Outcome {
    let (f, g) = eval(&x0);
    let mut at = Point { x: x0, f, g };
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(memory);
    for iter in 0..max_iter {
        let gn = norm(&at.g);
        if gn <= tol {
            return Outcome { x: at.x, grad_norm: gn, iterations: iter, converged: true };
        }
        // Two-loop recursion.
        let mut q = at.g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = history.back().map_or(1.0 / gn.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &at.g) >= 0.0 {
            history.clear();
            dir = at.g.iter().map(|v| -v).collect();
        }
        let Some(next) = line_search(&at, &dir, &mut eval) else { break };
        let s: Vec<f64> = next.x.iter().zip(&at.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&at.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        at = next;
    }
    let gn = norm(&at.g);
    Outcome { converged: gn <= tol, x: at.x, grad_norm: gn, iterations: max_iter }
}
