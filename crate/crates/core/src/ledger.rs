//! Pass accounting.
//!
//! A pass-unit is one forward or one backward traversal of one network over
//! one sub-batch. Forward and backward traversals of the same network cost the
//! same unit, so a round's modelled time is `T_g * (gF + gB) + T_d * (dF + dB)`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub g_forward: u64,
    pub g_backward: u64,
    pub d_forward: u64,
    pub d_backward: u64,
}

impl PassCounts {
    pub fn g_units(&self) -> u64 {
        self.g_forward + self.g_backward
    }

    pub fn d_units(&self) -> u64 {
        self.d_forward + self.d_backward
    }

    pub fn total(&self) -> u64 {
        self.g_units() + self.d_units()
    }

    fn add(&mut self, o: &PassCounts) {
        self.g_forward += o.g_forward;
        self.g_backward += o.g_backward;
        self.d_forward += o.d_forward;
        self.d_backward += o.d_backward;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassLedger {
    current: PassCounts,
    cumulative: PassCounts,
    rounds: Vec<PassCounts>,
    wall_ms: Vec<f64>,
    pub unit_cost_g: f64,
    pub unit_cost_d: f64,
}

impl Default for PassLedger {
    fn default() -> Self {
        PassLedger::new(1.0, 1.0)
    }
}

impl PassLedger {
    pub fn new(unit_cost_g: f64, unit_cost_d: f64) -> PassLedger {
        PassLedger {
            current: PassCounts::default(),
            cumulative: PassCounts::default(),
            rounds: Vec::new(),
            wall_ms: Vec::new(),
            unit_cost_g,
            unit_cost_d,
        }
    }

    pub fn g_forward(&mut self, units: u64) {
        self.current.g_forward += units;
    }

    pub fn g_backward(&mut self, units: u64) {
        self.current.g_backward += units;
    }

    pub fn d_forward(&mut self, units: u64) {
        self.current.d_forward += units;
    }

    pub fn d_backward(&mut self, units: u64) {
        self.current.d_backward += units;
    }

    /// Closes the open round and returns its counts.
    pub fn end_round(&mut self, wall_ms: Option<f64>) -> PassCounts {
        let c = std::mem::take(&mut self.current);
        self.cumulative.add(&c);
        self.rounds.push(c);
        if let Some(ms) = wall_ms {
            self.wall_ms.push(ms);
        }
        c
    }

    /// Counts of the round in progress.
    pub fn open_round(&self) -> PassCounts {
        self.current
    }

    pub fn cumulative(&self) -> PassCounts {
        self.cumulative
    }

    pub fn rounds(&self) -> &[PassCounts] {
        &self.rounds
    }

    pub fn wall_ms(&self) -> &[f64] {
        &self.wall_ms
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn modelled_cost(&self, unit_cost_g: f64, unit_cost_d: f64) -> f64 {
        unit_cost_g * self.cumulative.g_units() as f64
            + unit_cost_d * self.cumulative.d_units() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speedup {
    /// Modelled two-stage cost over one-stage cost.
    pub pass_ratio: f64,
    /// Total recorded two-stage wall time over one-stage wall time.
    pub wall_ratio: Option<f64>,
}

/// Modelled speedup of `one` over `two` under the given unit costs.
///
/// When the two count vectors are proportional the unit costs cancel and the
/// ratio is returned exactly as that proportion.
pub fn ledger_speedup(
    two: &PassLedger,
    one: &PassLedger,
    unit_cost_g: f64,
    unit_cost_d: f64,
) -> Result<Speedup> {
    if !(unit_cost_g > 0.0 && unit_cost_d > 0.0) {
        return Err(Error::Usage("unit costs must be positive".into()));
    }
    if two.num_rounds() != one.num_rounds() {
        return Err(Error::Usage(format!(
            "ledgers cover {} and {} rounds",
            two.num_rounds(),
            one.num_rounds()
        )));
    }
    let (t, o) = (two.cumulative(), one.cumulative());
    if o.total() == 0 || t.total() == 0 {
        return Err(Error::Numerical("speedup undefined for empty ledgers".into()));
    }
    let (tg, td, og, od) = (t.g_units(), t.d_units(), o.g_units(), o.d_units());
    let pass_ratio = if tg * od == td * og {
        // proportional: both components share the same factor
        if og > 0 {
            tg as f64 / og as f64
        } else {
            td as f64 / od as f64
        }
    } else {
        (unit_cost_g * tg as f64 + unit_cost_d * td as f64)
            / (unit_cost_g * og as f64 + unit_cost_d * od as f64)
    };
    let wall_ratio = {
        let (a, b): (f64, f64) = (two.wall_ms().iter().sum(), one.wall_ms().iter().sum());
        (!two.wall_ms().is_empty() && !one.wall_ms().is_empty() && b > 0.0).then(|| a / b)
    };
    Ok(Speedup {
        pass_ratio,
        wall_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(rounds: usize, g: (u64, u64), d: (u64, u64)) -> PassLedger {
        let mut l = PassLedger::default();
        for _ in 0..rounds {
            l.g_forward(g.0);
            l.g_backward(g.1);
            l.d_forward(d.0);
            l.d_backward(d.1);
            l.end_round(None);
        }
        l
    }

    #[test]
    fn unit_cost_examples() {
        let two = ledger(1, (2, 1), (3, 3));
        let one = ledger(1, (1, 1), (2, 2));
        for (g, d) in [(1.0, 1.0), (2.0, 1.0), (0.001, 1000.0)] {
            assert_eq!(ledger_speedup(&two, &one, g, d).unwrap().pass_ratio, 1.5);
        }
    }

    #[test]
    fn empty_and_mismatched_ledgers_fail() {
        let e = PassLedger::default();
        assert!(ledger_speedup(&e, &e, 1.0, 1.0).is_err());
        let a = ledger(2, (2, 1), (3, 3));
        let b = ledger(1, (1, 1), (2, 2));
        assert!(ledger_speedup(&a, &b, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_is_exact_for_any_costs(n in 1usize..50, g in 1e-6f64..1e6, d in 1e-6f64..1e6) {
            let two = ledger(n, (2, 1), (3, 3));
            let one = ledger(n, (1, 1), (2, 2));
            prop_assert_eq!(ledger_speedup(&two, &one, g, d).unwrap().pass_ratio, 1.5);
            prop_assert_eq!(two.cumulative().g_units(), 3 * n as u64);
            prop_assert_eq!(one.cumulative().d_units(), 4 * n as u64);
        }
    }
}
