//! Fixtures shared by the benchmarks.

use overlap_core::objectives::make_quadratic;
use overlap_core::{Ensemble, ParamVector, Purpose, Result, RngStream};

/// A quadratic ensemble and a starting point away from its minimizer.
pub fn fixture(m: usize, d: usize, sigma: f64) -> Result<(Ensemble, ParamVector)> {
    let mut gen = RngStream::shared(1, Purpose::Generator);
    let ens = make_quadratic(m, d, 1.0, 10.0, sigma, &mut gen)?;
    Ok((Ensemble::Quadratic(ens), ParamVector::new(vec![1.0; d])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let (ens, init) = fixture(4, 16, 1.0).unwrap();
        assert_eq!((ens.m(), ens.dim(), init.dim()), (4, 16, 16));
    }
}
