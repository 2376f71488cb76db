//! Two-dimensional Nelder–Mead simplex minimiser.
//!
//! The objective may return `f64::INFINITY` for infeasible points; those
//! vertices simply lose every comparison and get contracted away.

pub(crate) type Point = [f64; 2];

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Minimum {
    pub x: Point,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    /// Stop once `f(worst) - f(best)` drops below this.
    pub spread_tol: f64,
    pub max_iter: usize,
}

#[inline]
fn lin(a: Point, b: Point, t: f64) -> Point {
    // a + t * (b - a)
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Minimises `f` from the simplex `{x0, x0 + step[0] e0, x0 + step[1] e1}`.
pub(crate) fn minimize<F>(mut f: F, x0: Point, f0: f64, step: Point, settings: Settings) -> Minimum
where
    F: FnMut(Point) -> f64,
{
    let v1 = [x0[0] + step[0], x0[1]];
    let v2 = [x0[0], x0[1] + step[1]];
    let mut simplex = [(x0, f0), (v1, f(v1)), (v2, f(v2))];

    let mut iterations = 0;
    loop {
        // Stable sort keeps x0 ahead of ties, so the grid start wins them.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, f_best) = simplex[0];
        let (_, f_second) = simplex[1];
        let (worst, f_worst) = simplex[2];

        if f_worst - f_best < settings.spread_tol {
            return Minimum {
                x: best,
                f: f_best,
                iterations,
                converged: true,
            };
        }
        if iterations >= settings.max_iter {
            return Minimum {
                x: best,
                f: f_best,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        let centroid = lin(simplex[0].0, simplex[1].0, 0.5);
        let reflected = lin(centroid, worst, -REFLECT);
        let f_reflected = f(reflected);

        if f_reflected < f_best {
            let expanded = lin(centroid, worst, -EXPAND);
            let f_expanded = f(expanded);
            simplex[2] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < f_second {
            simplex[2] = (reflected, f_reflected);
            continue;
        }

        let contracted = if f_reflected < f_worst {
            let x = lin(centroid, reflected, CONTRACT);
            let fx = f(x);
            (fx <= f_reflected).then_some((x, fx))
        } else {
            let x = lin(centroid, worst, CONTRACT);
            let fx = f(x);
            (fx < f_worst).then_some((x, fx))
        };
        match contracted {
            Some(v) => simplex[2] = v,
            None => {
                for vertex in simplex.iter_mut().skip(1) {
                    let x = lin(best, vertex.0, SHRINK);
                    *vertex = (x, f(x));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SETTINGS: Settings = Settings {
        spread_tol: 1e-20,
        max_iter: 2000,
    };

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: Point| (x[0] - 1.5).powi(2) + 4.0 * (x[1] + 0.25).powi(2);
        let m = minimize(f, [0.0, 0.0], f([0.0, 0.0]), [0.1, 0.1], SETTINGS);
        assert!(m.converged);
        assert!((m.x[0] - 1.5).abs() < 1e-8, "{:?}", m);
        assert!((m.x[1] + 0.25).abs() < 1e-8, "{:?}", m);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: Point| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, [-1.2, 1.0], f([-1.2, 1.0]), [0.1, 0.1], SETTINGS);
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-6, "{:?}", m);
    }

    #[test]
    fn respects_infinite_barrier() {
        // Unconstrained minimum at (2, 2) sits outside x0 + x1 <= 1.
        let f = |x: Point| {
            if x[0] + x[1] > 1.0 {
                f64::INFINITY
            } else {
                (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2)
            }
        };
        let m = minimize(f, [0.0, 0.0], f([0.0, 0.0]), [0.1, 0.1], SETTINGS);
        assert!(m.f.is_finite());
        assert!(m.x[0] + m.x[1] <= 1.0);
        assert!(
            (m.x[0] - 0.5).abs() < 1e-3 && (m.x[1] - 0.5).abs() < 1e-3,
            "{:?}",
            m
        );
    }

    #[test]
    fn iteration_budget_is_reported() {
        let f = |x: Point| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(
            f,
            [-1.2, 1.0],
            f([-1.2, 1.0]),
            [0.1, 0.1],
            Settings {
                spread_tol: 0.0,
                max_iter: 3,
            },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
