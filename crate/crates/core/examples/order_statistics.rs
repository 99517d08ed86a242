//! Percentile bounds from sorted samples, and the binomial machinery
//! behind them.

use certsmooth::diffcore::DifferentiableMap;
use certsmooth::smoothing::{
    binomial_cdf, median_smooth, order_statistic_bounds, order_statistic_indices, percentile_pair, sample_noised_scores,
    SmoothingConfig,
};
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let (ql, qu) = percentile_pair(0.25, 0.25)?;
    println!("percentiles for eps_f = sigma_f: {ql:.6} / {qu:.6}");
    for n in [20, 200, 2000, 20000] {
        println!("N = {n:>5}: order statistics {:?}", order_statistic_indices(n, ql, qu, 0.999)?);
    }
    println!("P[Bin(2000, {ql:.4}) <= 264] = {:.3e}", binomial_cdf(264, 2000, ql)?);

    // identity scorer on one Gaussian feature: true quantiles are 0.3 ± 0.25
    let id = DifferentiableMap::identity(1)?;
    let cfg = SmoothingConfig::new(0.25, 2000, 0.999, 1)?;
    let s = sample_noised_scores(&id, &Tensor::vector(vec![0.3])?, &cfg)?;
    let b = order_statistic_bounds(&s, ql, qu, 0.999)?;
    println!("median {:.4}, bounds [{:.4}, {:.4}] vs quantiles [0.05, 0.55]", median_smooth(&s), b.s_lower, b.s_upper);
    Ok(())
}
