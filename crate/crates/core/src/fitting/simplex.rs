//! Nelder-Mead simplex minimizer with seeded restarts.

use rand::Rng;

use crate::rng::{keyed_stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Converged when every vertex lies within this distance of the best one.
    pub diameter_tol: f64,
    pub max_iterations: usize,
    /// Extra runs started around the best point found so far.
    pub restarts: usize,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            diameter_tol: 1e-7,
            max_iterations: 5000,
            restarts: 3,
            initial_step: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration, over all runs.
    pub history: Vec<f64>,
}

/// Minimizes `f` starting from `x0`. Non-finite objective values are treated
/// as `+inf`.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], options: &SimplexOptions) -> Minimum {
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let dim = x0.len();
    if dim == 0 {
        let value = eval(x0);
        return Minimum {
            x: Vec::new(),
            value,
            iterations: 0,
            converged: value.is_finite(),
            history: vec![value],
        };
    }

    let mut history = Vec::new();
    let steps = vec![options.initial_step; dim];
    let mut best = run(
        &mut eval,
        x0,
        &steps,
        options,
        &mut history,
        options.max_iterations,
    );
    let mut iterations = best.iterations;
    for r in 0..options.restarts {
        let budget = options.max_iterations.saturating_sub(iterations);
        if budget == 0 {
            break;
        }
        let mut rng = keyed_stream(options.seed, Domain::Restart, r as u64);
        let steps: Vec<f64> = (0..dim)
            .map(|_| {
                let s = options.initial_step * (0.25 + rng.random::<f64>());
                if rng.random::<bool>() {
                    s
                } else {
                    -s
                }
            })
            .collect();
        let start = best.x.clone();
        let next = run(&mut eval, &start, &steps, options, &mut history, budget);
        iterations += next.iterations;
        if next.value <= best.value {
            best = Minimum { iterations, ..next };
        }
    }
    best.iterations = iterations;
    best.history = history;
    best
}

fn run(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    options: &SimplexOptions,
    history: &mut Vec<f64>,
    budget: usize,
) -> Minimum {
    let dim = x0.len();
    let mut vertices: Vec<Vec<f64>> = vec![x0.to_vec()];
    for (k, s) in steps.iter().enumerate() {
        let mut v = x0.to_vec();
        v[k] += s;
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| eval(v)).collect();
    let floor = history.last().copied().unwrap_or(f64::INFINITY);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        vertices = order.iter().map(|&i| vertices[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = vertices[1..]
            .iter()
            .map(|v| distance(v, &vertices[0]))
            .fold(0.0, f64::max);
        if diameter < options.diameter_tol && values[0].is_finite() {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|k| vertices[..dim].iter().map(|v| v[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&vertices[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                vertices[dim] = expanded;
                values[dim] = fe;
            } else {
                vertices[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            vertices[dim] = reflected;
            values[dim] = fr;
        } else {
            let (contracted, fc) = if fr < values[dim] {
                let c = along(-0.5);
                let v = eval(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = eval(&c);
                (c, v)
            };
            if fc < values[dim].min(fr) {
                vertices[dim] = contracted;
                values[dim] = fc;
            } else {
                let anchor = vertices[0].clone();
                for i in 1..=dim {
                    vertices[i] = anchor
                        .iter()
                        .zip(&vertices[i])
                        .map(|(a, v)| a + 0.5 * (v - a))
                        .collect();
                    values[i] = eval(&vertices[i]);
                }
            }
        }
        let current = values.iter().copied().fold(f64::INFINITY, f64::min);
        history.push(current.min(history.last().copied().unwrap_or(floor)));
    }
    let (ib, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty simplex");
    Minimum {
        x: vertices[ib].clone(),
        value: values[ib],
        iterations,
        converged,
        history: Vec::new(),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(&mut f, &[-1.2, 1.0], &SimplexOptions::default());
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn history_never_increases() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(4) + x[2].abs();
        let m = minimize(&mut f, &[0.0, 0.0, 1.0], &SimplexOptions::default());
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*m.history.last().unwrap(), m.value);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let options = SimplexOptions {
            max_iterations: 3,
            ..SimplexOptions::default()
        };
        let m = minimize(&mut f, &[5.0, 5.0, 5.0], &options);
        assert!(!m.converged);
        assert!(m.iterations <= 3);
    }

    #[test]
    fn zero_dimensional_problem_evaluates_once() {
        let mut calls = 0;
        let mut f = |_: &[f64]| {
            calls += 1;
            2.5
        };
        let m = minimize(&mut f, &[], &SimplexOptions::default());
        assert_eq!(m.value, 2.5);
        assert_eq!(calls, 1);
    }
}
