//! Derivative-free maximization inside a box, used for hyperparameter fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Additive quasi-random `R_d` sequence, shifted by a seeded random offset
/// (Cranley–Patterson rotation) so distinct seeds give distinct point sets.
#[derive(Debug, Clone)]
pub struct QuasiRandom {
    alpha: Vec<f64>,
    shift: Vec<f64>,
    index: u64,
}

impl QuasiRandom {
    pub fn new(dim: usize, seed: u64) -> Self {
        // φ_d is the unique positive root of x^(d+1) = x + 1.
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|k| (1.0 / phi.powi(k as i32)).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self {
            alpha,
            shift,
            index: 0,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        let n = self.index as f64;
        self.alpha
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| (s + n * a).fract())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when every vertex is within this distance of the best one.
    pub tol: f64,
    /// Initial simplex edge as a fraction of the box width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimumPoint {
    pub x: Vec<f64>,
    pub value: f64,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Maximizes `f` with the Nelder–Mead simplex method. Trial points are
/// projected onto the box before evaluation; non-finite values count as −∞.
pub fn nelder_mead_max<F>(
    f: &mut F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> OptimumPoint
where
    F: FnMut(&[f64]) -> f64,
{
    let d = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut x0 = start.to_vec();
    project(&mut x0, lower, upper);
    let mut simplex = vec![x0.clone()];
    for i in 0..d {
        let mut x = x0.clone();
        let step = opts.initial_step * (upper[i] - lower[i]);
        x[i] = if x[i] + step <= upper[i] { x[i] + step } else { x[i] - step };
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    for _ in 0..opts.max_iter {
        // Best first; equal values keep their previous order.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size < opts.tol {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|x| x[k]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr > values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            if fe > fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr > values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
            continue;
        }
        let (contracted, fc) = if fr > values[d] {
            let c = along(0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc > values[d].max(fr) {
            simplex[d] = contracted;
            values[d] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=d).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    OptimumPoint {
        x: simplex[best].clone(),
        value: values[best],
    }
}

/// Runs [`nelder_mead_max`] from each start and keeps the best result; ties
/// go to the earliest start. Returns `None` when no start found a finite value.
pub fn multistart_max<F>(
    mut f: F,
    starts: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Option<OptimumPoint>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best: Option<OptimumPoint> = None;
    for start in starts {
        let candidate = nelder_mead_max(&mut f, start, lower, upper, opts);
        if !candidate.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| candidate.value > b.value) {
            best = Some(candidate);
        }
    }
    best
}

/// The `keep` starts with the highest objective, best first; ties keep the
/// original order and non-finite values rank last.
pub fn screen_starts<F>(mut f: F, starts: Vec<Vec<f64>>, keep: usize) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut scored: Vec<(f64, Vec<f64>)> = starts
        .into_iter()
        .map(|s| {
            let v = f(&s);
            (if v.is_finite() { v } else { f64::NEG_INFINITY }, s)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().take(keep.max(1)).map(|(_, s)| s).collect()
}

/// Box center followed by `extra` seeded quasi-random points inside the box.
pub fn box_starts(lower: &[f64], upper: &[f64], extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let center: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let mut seq = QuasiRandom::new(lower.len(), seed);
    let mut starts = vec![center];
    for _ in 0..extra {
        let u = seq.next_point();
        starts.push(
            u.iter()
                .zip(lower.iter().zip(upper))
                .map(|(t, (l, h))| l + t * (h - l))
                .collect(),
        );
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let mut f = |x: &[f64]| -(x[0] - 0.3).powi(2) - 2.0 * (x[1] + 0.5).powi(2);
        let r = nelder_mead_max(
            &mut f,
            &[0.0, 0.0],
            &[-2.0, -2.0],
            &[2.0, 2.0],
            &NelderMeadOptions {
                max_iter: 500,
                ..Default::default()
            },
        );
        assert!((r.x[0] - 0.3).abs() < 1e-5);
        assert!((r.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn respects_box() {
        let mut f = |x: &[f64]| x[0] + x[1];
        let r = nelder_mead_max(&mut f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &Default::default());
        assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.value > 1.99);
    }

    #[test]
    fn quasi_random_is_seeded_and_in_unit_cube() {
        let mut a = QuasiRandom::new(3, 9);
        let mut b = QuasiRandom::new(3, 9);
        let mut c = QuasiRandom::new(3, 10);
        for _ in 0..100 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert_ne!(p, c.next_point());
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn all_failing_starts_give_none() {
        let starts = box_starts(&[0.0], &[1.0], 3, 1);
        assert_eq!(starts.len(), 4);
        assert_eq!(starts[0], vec![0.5]);
        let r = multistart_max(|_| f64::NAN, &starts, &[0.0], &[1.0], &Default::default());
        assert!(r.is_none());
    }
}
