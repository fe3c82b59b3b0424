use crate::error::{Error, Result};

/// Per-cell PRB accounting for one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrbLedger {
    budgets: Vec<u32>,
    allocated: Vec<u32>,
    remaining: Vec<u32>,
}

impl PrbLedger {
    pub fn new(budgets: Vec<u32>) -> Self {
        let n = budgets.len();
        PrbLedger {
            remaining: budgets.clone(),
            allocated: vec![0; n],
            budgets,
        }
    }

    pub fn cells(&self) -> usize {
        self.budgets.len()
    }

    pub fn budget(&self, cell: usize) -> u32 {
        self.budgets[cell]
    }

    pub fn remaining(&self, cell: usize) -> u32 {
        self.remaining[cell]
    }

    pub fn allocated(&self, cell: usize) -> u32 {
        self.allocated[cell]
    }

    /// Fraction of the budget already handed out.
    pub fn load(&self, cell: usize) -> f64 {
        1.0 - f64::from(self.remaining[cell]) / f64::from(self.budgets[cell])
    }

    pub fn all_exhausted(&self) -> bool {
        self.remaining.iter().all(|&r| r == 0)
    }

    pub fn allocate(&mut self, cell: usize, prbs: u32) -> Result<()> {
        if cell >= self.cells() {
            return Err(Error::invariant(format!(
                "allocation on unknown cell {cell}"
            )));
        }
        if prbs == 0 || prbs > self.remaining[cell] {
            return Err(Error::invariant(format!(
                "cell {cell}: cannot allocate {prbs} PRBs with {} remaining",
                self.remaining[cell]
            )));
        }
        self.remaining[cell] -= prbs;
        self.allocated[cell] += prbs;
        self.check()
    }

    /// Allocated plus remaining equals the budget on every cell.
    pub fn check(&self) -> Result<()> {
        for c in 0..self.cells() {
            if u64::from(self.allocated[c]) + u64::from(self.remaining[c])
                != u64::from(self.budgets[c])
            {
                return Err(Error::invariant(format!(
                    "cell {c}: allocated {} + remaining {} != budget {}",
                    self.allocated[c], self.remaining[c], self.budgets[c]
                )));
            }
        }
        Ok(())
    }
}
