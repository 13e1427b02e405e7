//! Box-constrained Nelder-Mead maximization in one or two dimensions.
//!
//! Probes outside the box are clamped onto it. Invalid objective values are
//! represented as `-inf` and simply rank worst, so the simplex walks away
//! from them. The best point ever evaluated is returned, which is what makes
//! the coordinate-ascent guarantee of the caller cheap to enforce.

#[derive(Debug, Clone)]
pub struct NmOptions {
    /// Stop when the simplex function-value spread falls below this.
    pub f_tol: f64,
    pub max_iters: usize,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-6,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Maximizes `f` from each start, returning the best point over every
/// evaluation made (starts included).
pub fn maximize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    starts: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    step: &[f64],
    opts: &NmOptions,
) -> NmOutcome {
    let dim = lo.len();
    let mut best = NmOutcome {
        x: Vec::new(),
        f: f64::NEG_INFINITY,
        evals: 0,
    };
    for start in starts {
        let run = run_single(&mut f, start, lo, hi, step, opts);
        best.evals += run.evals;
        if run.f > best.f {
            best.x = run.x;
            best.f = run.f;
        }
    }
    debug_assert_eq!(best.x.len(), dim.max(best.x.len().min(dim)));
    best
}

fn run_single<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    step: &[f64],
    opts: &NmOptions,
) -> NmOutcome {
    let dim = start.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..dim {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };

    let mut evals = 0usize;
    let mut best_x = start.to_vec();
    let mut best_f = f64::NEG_INFINITY;
    let mut eval = |x: &Vec<f64>, best_x: &mut Vec<f64>, best_f: &mut f64, evals: &mut usize| {
        let v = f(x);
        *evals += 1;
        if v > *best_f {
            *best_f = v;
            *best_x = x.clone();
        }
        v
    };

    // Initial simplex: start plus a step along each axis, nudged inward when
    // the start sits on a boundary.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut x0 = start.to_vec();
    clamp(&mut x0);
    simplex.push(x0.clone());
    for i in 0..dim {
        let mut v = x0.clone();
        v[i] = if v[i] + step[i] <= hi[i] {
            v[i] + step[i]
        } else {
            v[i] - step[i]
        };
        clamp(&mut v);
        if v == x0 {
            v[i] = 0.5 * (lo[i] + hi[i]);
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex
        .iter()
        .map(|x| eval(x, &mut best_x, &mut best_f, &mut evals))
        .collect();

    for _ in 0..opts.max_iters {
        // Descending by value: index 0 is best, index dim is worst.
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let reorder_simplex: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let reorder_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reorder_simplex;
        values = reorder_values;

        let spread = values[0] - values[dim];
        if spread.is_finite() && spread < opts.f_tol {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|x| x[i]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();

        let at = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + coef * (centroid[i] - worst[i]))
                .collect();
            clamp(&mut x);
            x
        };

        let reflected = at(REFLECT);
        let f_r = eval(&reflected, &mut best_x, &mut best_f, &mut evals);
        if f_r > values[0] {
            let expanded = at(EXPAND);
            let f_e = eval(&expanded, &mut best_x, &mut best_f, &mut evals);
            if f_e > f_r {
                simplex[dim] = expanded;
                values[dim] = f_e;
            } else {
                simplex[dim] = reflected;
                values[dim] = f_r;
            }
        } else if f_r > values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = f_r;
        } else {
            // Contract toward the better of worst/reflected.
            let (outside, f_ref) = if f_r > values[dim] {
                (true, f_r)
            } else {
                (false, values[dim])
            };
            let contracted = if outside { at(CONTRACT) } else { at(-CONTRACT) };
            let f_c = eval(&contracted, &mut best_x, &mut best_f, &mut evals);
            if f_c >= f_ref {
                simplex[dim] = contracted;
                values[dim] = f_c;
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[0].clone();
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..dim {
                        v[i] = anchor[i] + SHRINK * (v[i] - anchor[i]);
                    }
                }
                for j in 1..=dim {
                    values[j] = eval(&simplex[j].clone(), &mut best_x, &mut best_f, &mut evals);
                }
            }
        }
    }

    NmOutcome {
        x: best_x,
        f: best_f,
        evals,
    }
}
