use proptest::prelude::*;

use monobo::bench::{mean_square, rank_of};
use monobo::expected_improvement;
use monobo::problems::elastic::soft_threshold;
use monobo::problems::external::{Transform, TransformKind};
use monobo::problems::IllustrativeObjective;

proptest! {
    #[test]
    fn rank_is_bounded_and_falls_as_best_rises(
        mut baseline in prop::collection::vec(-10.0..10.0f64, 1..50),
        a in -12.0..12.0f64,
        b in -12.0..12.0f64,
    ) {
        baseline.sort_by(|x, y| y.total_cmp(x));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (r_lo, r_hi) = (rank_of(lo, &baseline), rank_of(hi, &baseline));
        prop_assert!((1..=baseline.len() + 1).contains(&r_lo));
        prop_assert!(r_hi <= r_lo);
    }

    #[test]
    fn mean_square_is_mean_squared_plus_variance(v in prop::collection::vec(-100.0..100.0f64, 1..40)) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        prop_assert!((mean_square(&v) - (m * m + var)).abs() <= 1e-9 * (1.0 + m * m + var));
    }

    #[test]
    fn ei_bounds(mean in -5.0..5.0f64, sd in 0.0..3.0f64, best in -5.0..5.0f64, extra in 0.0..1.0f64) {
        let ei = expected_improvement(mean, sd * sd, best);
        prop_assert!(ei >= (mean - best).max(0.0) - 1e-12);
        prop_assert!(ei <= (mean - best).max(0.0) + sd * 0.3989422804014327 + 1e-12);
        prop_assert!(expected_improvement(mean, (sd + extra).powi(2), best) >= ei - 1e-12);
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(z in -5.0..5.0f64, gamma in 0.0..5.0f64) {
        let s = soft_threshold(z, gamma);
        prop_assert!(s.abs() <= z.abs());
        prop_assert!(s == 0.0 || s.signum() == z.signum());
        prop_assert!(((z - s).abs() - gamma.min(z.abs())).abs() <= 1e-12);
    }

    #[test]
    fn illustrative_components_sum_to_objective(x in 0.0..=1.0f64) {
        let p = IllustrativeObjective::default();
        let (f1, f2) = p.components_at(x);
        prop_assert!((f1 + f2 - p.objective(x)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&f2));
    }

    #[test]
    fn log2_transform_stays_in_range(u in 0.0..=1.0f64, low in -20.0..0.0f64, width in 0.1..20.0f64) {
        let t = Transform { kind: TransformKind::Log2, low, high: low + width };
        let v = t.apply(u);
        prop_assert!(v >= low.exp2() * (1.0 - 1e-12) && v <= (low + width).exp2() * (1.0 + 1e-12));
        prop_assert!((v.log2() - (low + width * u)).abs() <= 1e-9);
    }
}
