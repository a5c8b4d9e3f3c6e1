//! Scalar observables evaluated on low-rank or dense states.

use crate::error::Result;
use crate::hilbert::SparseOperator;
use crate::state::Expectation;

pub trait Observable: Send + Sync {
    fn name(&self) -> &str;
    /// `None` marks an undefined value (e.g. a ratio with vanishing
    /// denominator).
    fn evaluate(&self, state: &dyn Expectation) -> Result<Option<f64>>;
}

/// `offset + scale * Re<A>`.
pub struct Expect {
    pub name: String,
    pub op: SparseOperator,
    pub scale: f64,
    pub offset: f64,
}

impl Expect {
    pub fn new(name: impl Into<String>, op: SparseOperator) -> Self {
        Self {
            name: name.into(),
            op,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn affine(name: impl Into<String>, op: SparseOperator, scale: f64, offset: f64) -> Self {
        Self {
            name: name.into(),
            op,
            scale,
            offset,
        }
    }
}

impl Observable for Expect {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, state: &dyn Expectation) -> Result<Option<f64>> {
        Ok(Some(self.offset + self.scale * state.expect(&self.op)?.re))
    }
}

/// `sqrt(max(Re<A>, 0))`.
pub struct SqrtExpect {
    pub name: String,
    pub op: SparseOperator,
}

impl Observable for SqrtExpect {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, state: &dyn Expectation) -> Result<Option<f64>> {
        Ok(Some(state.expect(&self.op)?.re.max(0.0).sqrt()))
    }
}

/// `Re(<A> / <B>)`, undefined when `|<B>|` is below `min_denominator`.
pub struct Ratio {
    pub name: String,
    pub numerator: SparseOperator,
    pub denominator: SparseOperator,
    pub min_denominator: f64,
}

impl Observable for Ratio {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, state: &dyn Expectation) -> Result<Option<f64>> {
        let den = state.expect(&self.denominator)?;
        if den.norm() < self.min_denominator {
            return Ok(None);
        }
        Ok(Some((state.expect(&self.numerator)? / den).re))
    }
}

pub fn evaluate_all(obs: &[Box<dyn Observable>], state: &dyn Expectation) -> Result<Vec<Option<f64>>> {
    obs.iter().map(|o| o.evaluate(state)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{CMat, PinvConfig, C64, ONE, ZERO};
    use crate::state::LowRankState;
    use ndarray::array;

    #[test]
    fn basic_observables() {
        let z = SparseOperator::diagonal([ONE, -ONE]);
        let up = LowRankState::pure(&array![ONE, ZERO], PinvConfig::default()).unwrap();
        let e = Expect::affine("flip", z.clone(), -0.5, 0.5);
        assert_eq!(e.evaluate(&up).unwrap(), Some(0.0));
        let s = SqrtExpect {
            name: "s".into(),
            op: z.scaled(C64::new(4.0, 0.0)),
        };
        assert_eq!(s.evaluate(&up).unwrap(), Some(2.0));
        let dense: CMat = array![[ZERO, ZERO], [ZERO, ONE]];
        let r = Ratio {
            name: "r".into(),
            numerator: z.clone(),
            denominator: SparseOperator::diagonal([ONE, ZERO]),
            min_denominator: 1e-10,
        };
        assert_eq!(r.evaluate(&dense).unwrap(), None);
        assert_eq!(r.evaluate(&up).unwrap(), Some(1.0));
    }
}
