//! Expected improvement (maximization convention) and its maximization over
//! the unit cube.

use crate::composite::{predict_sum, SurrogateStack};
use crate::error::Result;
use crate::optim::QuasiRandom;
use crate::stats::{norm_cdf, norm_pdf};

/// Candidate points per input dimension.
pub const CANDIDATES_PER_DIM: usize = 1000;
/// Number of best candidates refined by coordinate search.
pub const REFINED_STARTS: usize = 5;
pub const REFINE_INITIAL_STEP: f64 = 0.05;
pub const REFINE_MIN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: Vec<f64>,
    pub ei: f64,
}

// Below this standardized gain the asymptotic series is accurate to ~1e-9.
const EI_TAIL: f64 = -30.0;

/// `φ(u) + uΦ(u)` for `u ≤ 0`, written to avoid the cancellation between
/// its terms.
fn ei_unit(u: f64) -> f64 {
    if u >= EI_TAIL {
        let mills = norm_cdf(u) / norm_pdf(u);
        norm_pdf(u) * (1.0 + u * mills)
    } else {
        let t = 1.0 / (u * u);
        norm_pdf(u) * t * (1.0 - t * (3.0 - t * (15.0 - 105.0 * t)))
    }
}

/// `E[max(Y − best, 0)]` for `Y ~ N(mean, variance)`.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let gain = mean - best;
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 {
        return if gain > 0.0 { gain } else { 0.0 };
    }
    let u = gain / sd;
    // φ(u) + uΦ(u) = u + φ(−u) − uΦ(−u) keeps EI ≥ gain under rounding.
    let ei = if u >= 0.0 {
        gain + sd * ei_unit(-u)
    } else {
        sd * ei_unit(u)
    };
    // Also maps -0.0 and NaN to +0.0 so candidate ordering is well defined.
    if ei > 0.0 {
        ei
    } else {
        0.0
    }
}

fn ei_at(stack: &SurrogateStack, points: &[Vec<f64>], best: f64) -> Result<Vec<f64>> {
    let p = predict_sum(stack, points)?;
    Ok(p.mean
        .iter()
        .zip(&p.variance)
        .map(|(m, v)| expected_improvement(*m, *v, best))
        .collect())
}

/// Coordinate search with step halving, accepting strict improvements only.
fn refine(stack: &SurrogateStack, start: Candidate, best: f64) -> Result<Candidate> {
    let mut current = start;
    let mut step = REFINE_INITIAL_STEP;
    while step >= REFINE_MIN_STEP {
        let mut improved = false;
        for dim in 0..current.x.len() {
            let mut trials = Vec::with_capacity(2);
            for delta in [step, -step] {
                let mut x = current.x.clone();
                x[dim] = (x[dim] + delta).clamp(0.0, 1.0);
                if x[dim] != current.x[dim] {
                    trials.push(x);
                }
            }
            if trials.is_empty() {
                continue;
            }
            let eis = ei_at(stack, &trials, best)?;
            for (x, ei) in trials.into_iter().zip(eis) {
                if ei > current.ei {
                    current = Candidate { x, ei };
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(current)
}

/// Maximizes EI of the summed surrogate: scores `1000·d` seeded quasi-random
/// candidates, refines the best few by coordinate search, and returns the
/// overall best. Ties go to the lowest candidate index.
pub fn propose_candidate(stack: &SurrogateStack, best: f64, seed: u64) -> Result<Candidate> {
    let d = stack.dim();
    let mut seq = QuasiRandom::new(d, seed);
    let points: Vec<Vec<f64>> = (0..CANDIDATES_PER_DIM * d).map(|_| seq.next_point()).collect();
    let eis = ei_at(stack, &points, best)?;

    let mut order: Vec<usize> = (0..points.len()).collect();
    // Stable sort keeps index order among equal EI values.
    order.sort_by(|&a, &b| eis[b].total_cmp(&eis[a]));

    let mut winner: Option<(usize, Candidate)> = None;
    for &idx in order.iter().take(REFINED_STARTS) {
        let refined = refine(
            stack,
            Candidate {
                x: points[idx].clone(),
                ei: eis[idx],
            },
            best,
        )?;
        let better = match &winner {
            None => true,
            Some((widx, w)) => refined.ei > w.ei || (refined.ei == w.ei && idx < *widx),
        };
        if better {
            winner = Some((idx, refined));
        }
    }
    Ok(winner.map(|(_, c)| c).expect("candidate set is never empty"))
}

pub fn propose_next(stack: &SurrogateStack, best: f64, seed: u64) -> Result<Vec<f64>> {
    Ok(propose_candidate(stack, best, seed)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bo::EvaluationRecord;
    use crate::composite::{fit_stack, ComponentSpec, Strategy};

    #[test]
    fn closed_form_reference_values() {
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((expected_improvement(1.3, 0.0, 1.0) - 0.3).abs() < 1e-15);
        assert_eq!(expected_improvement(0.7, 0.0, 1.0), 0.0);
        assert!(expected_improvement(-9.0, 0.01, 1.0) < 1e-12);
    }

    #[test]
    fn negative_gain_matches_direct_formula() {
        for k in 1..60 {
            let u = -0.5 * k as f64;
            let direct = norm_pdf(u) + u * norm_cdf(u);
            if u > -4.0 {
                assert!((ei_unit(u) - direct).abs() <= 1e-12 * direct);
            }
            assert!(ei_unit(u) >= 0.0);
        }
        // 50-digit references on both sides of the series switch.
        for (u, reference) in [
            (-10.0, 7.474_560_254_589_328e-25),
            (-30.0, 1.631_956_734_091_401_2e-199),
            (-35.0, 3.208_804_482_602_476_8e-270),
        ] {
            assert!((ei_unit(u) - reference).abs() <= 1e-8 * reference, "{u}");
        }
    }

    #[test]
    fn monotone_in_mean_and_spread() {
        for i in 0..50 {
            let sd = 0.05 + i as f64 * 0.1;
            let mut prev = expected_improvement(-3.0, sd * sd, 0.0);
            for k in 1..60 {
                let m = -3.0 + k as f64 * 0.1;
                let e = expected_improvement(m, sd * sd, 0.0);
                assert!(e >= prev && (e > prev || e < 1e-300), "sd {sd} m {m}");
                prev = e;
            }
        }
        for k in 0..40 {
            let m = -2.0 + k as f64 * 0.1;
            let mut prev = expected_improvement(m, 0.0, 0.0);
            for i in 1..50 {
                let sd = i as f64 * 0.05;
                let e = expected_improvement(m, sd * sd, 0.0);
                assert!(e >= prev || prev < 1e-300, "m {m} sd {sd}");
                prev = e;
            }
        }
    }

    fn one_point_stack() -> SurrogateStack {
        let recs = vec![EvaluationRecord::new(vec![0.3], vec![1.0])];
        let specs = vec![ComponentSpec::new("f", vec![0]).unwrap()];
        fit_stack(&recs, &specs, Strategy::Standard, 10, 0).unwrap()
    }

    #[test]
    fn proposal_matches_dense_scan() {
        let stack = one_point_stack();
        let best = 1.0;
        let grid: Vec<Vec<f64>> = (0..100_000).map(|i| vec![i as f64 / 99_999.0]).collect();
        let eis = ei_at(&stack, &grid, best).unwrap();
        let (argmax, _) = eis
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) });
        let x = propose_next(&stack, best, 42).unwrap();
        assert!((x[0] - grid[argmax][0]).abs() < 1e-3, "{x:?} vs {:?}", grid[argmax]);
    }

    #[test]
    fn proposal_is_deterministic_and_in_cube() {
        let recs = vec![
            EvaluationRecord::new(vec![0.2, 0.9], vec![0.4, 1.0]),
            EvaluationRecord::new(vec![0.6, 0.1], vec![0.1, 0.3]),
            EvaluationRecord::new(vec![0.8, 0.5], vec![0.9, -0.2]),
        ];
        let specs = vec![
            ComponentSpec::new("a", vec![1, 0]).unwrap(),
            ComponentSpec::new("b", vec![0, -1]).unwrap(),
        ];
        let stack = fit_stack(&recs, &specs, Strategy::Decomposed, 4, 1).unwrap();
        let a = propose_next(&stack, 1.4, 7).unwrap();
        let b = propose_next(&stack, 1.4, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_ei_everywhere_returns_first_candidate() {
        let stack = one_point_stack();
        let c = propose_candidate(&stack, 1e6, 3).unwrap();
        assert_eq!(c.ei, 0.0);
        let mut seq = QuasiRandom::new(1, 3);
        assert_eq!(c.x, seq.next_point());
    }
}
