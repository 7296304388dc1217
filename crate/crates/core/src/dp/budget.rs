use crate::error::{Error, Result};
use crate::scalar::Real;

/// Basic sequential composition: the sum of the individual budgets.
pub fn compose<T: Real>(budgets: &[T]) -> Result<T> {
    if let Some(bad) = budgets.iter().find(|&&e| !(e > T::zero())) {
        return Err(Error::param("epsilon", format!("composed budgets must be positive, got {bad}")));
    }
    Ok(budgets.iter().copied().sum())
}

/// Per-index privacy accounting with a common cap.
///
/// Every charge is checked before it is applied, so the accumulated value at
/// any index never exceeds the cap.
#[derive(Clone, Debug)]
pub struct BudgetLedger<T = f64> {
    cap: T,
    entries: Vec<Option<T>>,
}

impl<T: Real> BudgetLedger<T> {
    pub fn new(cap: T) -> Result<Self> {
        if !(cap > T::zero()) || !cap.is_finite() {
            return Err(Error::param("cap", format!("must be positive, got {cap}")));
        }
        Ok(Self { cap, entries: Vec::new() })
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn spent(&self, index: usize) -> T {
        self.entries.get(index).copied().flatten().unwrap_or_else(T::zero)
    }

    pub fn remaining(&self, index: usize) -> T {
        self.cap - self.spent(index)
    }

    pub fn would_exceed(&self, index: usize, epsilon: T) -> bool {
        // Tolerate float rounding when charges add up to the cap exactly.
        self.spent(index) + epsilon > self.cap * (T::one() + T::check_eps())
    }

    pub fn charge(&mut self, index: usize, epsilon: T) -> Result<()> {
        if epsilon < T::zero() {
            return Err(Error::param("epsilon", format!("cannot charge negative budget {epsilon}")));
        }
        if self.would_exceed(index, epsilon) {
            return Err(Error::BudgetExceeded {
                index,
                spent: self.spent(index).as_f64(),
                requested: epsilon.as_f64(),
                cap: self.cap.as_f64(),
            });
        }
        if index >= self.entries.len() {
            self.entries.resize(index + 1, None);
        }
        let slot = &mut self.entries[index];
        *slot = Some(slot.unwrap_or_else(T::zero) + epsilon);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.map(|e| (i, e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_examples() {
        assert!((compose(&[0.1f64, 0.2, 0.3]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(compose::<f64>(&[]).unwrap(), 0.0);
        assert!((compose(&[0.25f64; 8]).unwrap() - 2.0).abs() < 1e-15);
        assert!(compose(&[0.1, 0.0]).is_err());
    }

    #[test]
    fn ledger_caps_each_index() {
        let mut l = BudgetLedger::new(1.0).unwrap();
        l.charge(0, 0.5).unwrap();
        l.charge(0, 0.5).unwrap();
        assert!(matches!(l.charge(0, 0.5), Err(Error::BudgetExceeded { index: 0, .. })));
        assert_eq!(l.spent(0), 1.0);
        l.charge(1, 0.5).unwrap();
        assert_eq!(l.spent(1), 0.5);
        assert_eq!(l.remaining(2), 1.0);
    }

    proptest! {
        #[test]
        fn compose_is_order_free(mut xs in proptest::collection::vec(0.001f64..2.0, 1..20)) {
            let total = compose(&xs).unwrap();
            xs.reverse();
            prop_assert!((compose(&xs).unwrap() - total).abs() < 1e-12);
            let (a, b) = xs.split_at(xs.len() / 2);
            let nested = compose(&[a, b].iter().filter(|s| !s.is_empty()).map(|s| compose(s).unwrap()).collect::<Vec<_>>()).unwrap();
            prop_assert!((nested - total).abs() < 1e-12);
            prop_assert_eq!(compose(&xs[..1]).unwrap(), xs[0]);
        }

        #[test]
        fn ledger_never_exceeds_cap(charges in proptest::collection::vec((0usize..4, 0.0f64..0.6), 0..40)) {
            let mut l = BudgetLedger::new(1.0).unwrap();
            let mut expect = [0.0f64; 4];
            for (i, e) in charges {
                if l.charge(i, e).is_ok() {
                    expect[i] += e;
                }
                prop_assert!(l.spent(i) <= 1.0 + 1e-12);
            }
            for (i, &e) in expect.iter().enumerate() {
                prop_assert!((l.spent(i) - e).abs() < 1e-12);
            }
        }
    }
}
