//! Iteration-domain, address and schedule generator units.

use crate::affine::BoxDomain;
use crate::mapping::{AgConfig, Controller};

/// Nested counters, innermost first. `step` reports the outermost level
/// that incremented, or `None` once the domain is exhausted.
#[derive(Debug, Clone)]
pub struct IdUnit {
    pub ranges: Vec<i64>,
    pub counters: Vec<i64>,
    pub done: bool,
}

impl IdUnit {
    pub fn new(ranges: Vec<i64>) -> IdUnit {
        let n = ranges.len();
        let done = ranges.iter().any(|&r| r < 1);
        IdUnit { ranges, counters: vec![0; n], done }
    }

    pub fn step(&mut self) -> Option<usize> {
        for i in 0..self.counters.len() {
            self.counters[i] += 1;
            if self.counters[i] < self.ranges[i] {
                return Some(i);
            }
            self.counters[i] = 0;
        }
        self.done = true;
        None
    }
}

/// Running value of an [`AgConfig`].
#[derive(Debug, Clone)]
pub struct AgUnit {
    pub cfg: AgConfig,
    pub value: i64,
}

impl AgUnit {
    pub fn new(cfg: &AgConfig) -> AgUnit {
        AgUnit { cfg: cfg.clone(), value: cfg.offset }
    }

    pub fn advance(&mut self, level: usize) {
        self.value = self.cfg.advance(self.value, level);
    }
}

/// A controller in flight: fires when its schedule generator equals the
/// current cycle.
#[derive(Debug, Clone)]
pub struct CtlState {
    pub id: IdUnit,
    pub addr: AgUnit,
    pub sched: AgUnit,
    los: Vec<i64>,
}

impl CtlState {
    pub fn new(c: &Controller) -> CtlState {
        CtlState::from_parts(&c.domain, &c.address_ag, &c.schedule_ag)
    }

    pub fn from_parts(domain: &BoxDomain, addr: &AgConfig, sched: &AgConfig) -> CtlState {
        let ranges: Vec<i64> = domain.dims.iter().rev().map(|d| d.extent).collect();
        let ranges = if ranges.is_empty() { vec![1] } else { ranges };
        CtlState {
            id: IdUnit::new(ranges),
            addr: AgUnit::new(addr),
            sched: AgUnit::new(sched),
            los: domain.dims.iter().map(|d| d.lo).collect(),
        }
    }

    pub fn fires(&self, cycle: i64) -> bool {
        !self.id.done && self.sched.value == cycle
    }

    /// Current iteration point, outermost first.
    pub fn point(&self) -> Vec<i64> {
        let n = self.los.len();
        (0..n).map(|k| self.los[k] + self.id.counters[n - 1 - k]).collect()
    }

    /// Innermost counter (position within the innermost loop).
    pub fn inner(&self) -> i64 {
        self.id.counters[0]
    }

    pub fn advance(&mut self) {
        if let Some(level) = self.id.step() {
            self.addr.advance(level);
            self.sched.advance(level);
        }
    }
}

/// Full value sequence of a generator, by recurrence only.
pub fn ag_replay(cfg: &AgConfig) -> Vec<i64> {
    let mut id = IdUnit::new(cfg.ranges.clone());
    let mut ag = AgUnit::new(cfg);
    let mut out = Vec::with_capacity(cfg.len());
    while !id.done {
        out.push(ag.value);
        if let Some(level) = id.step() {
            ag.advance(level);
        }
    }
    out
}

/// Replays a controller by recurrence: (schedule, address) per point.
pub fn controller_replay(c: &Controller) -> Vec<(i64, i64)> {
    let mut s = CtlState::new(c);
    let mut out = Vec::new();
    while !s.id.done {
        out.push((s.sched.value, s.addr.value));
        s.advance();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::AffineExpr;
    use proptest::prelude::*;

    #[test]
    fn replay_examples() {
        let down = crate::mapping::compile_affine_to_deltas(&[2, 16], &[4, 4], 0).unwrap();
        assert_eq!(down.deltas, vec![2, 10]);
        assert_eq!(&ag_replay(&down)[..9], &[0, 2, 4, 6, 16, 18, 20, 22, 32]);
        let one = AgConfig { ranges: vec![4], deltas: vec![1], offset: 0, modulus: None };
        assert_eq!(ag_replay(&one), vec![0, 1, 2, 3]);
        let off = AgConfig { ranges: vec![2, 2], deltas: vec![1, 1], offset: 5, modulus: None };
        assert_eq!(ag_replay(&off), vec![5, 6, 7, 8]);
    }

    proptest! {
        #[test]
        fn recurrence_matches_direct_evaluation(
            ey in 1i64..6, ex in 1i64..7, ly in -3i64..3, lx in -3i64..3,
            ay in -9i64..9, ax in -9i64..9, c in -20i64..20, sy in 0i64..40, sx in 1i64..4, m in 1i64..50,
        ) {
            let d = BoxDomain::new(vec![
                crate::affine::Dim::new("y", ly, ey),
                crate::affine::Dim::new("x", lx, ex),
            ]).unwrap();
            let addr = AffineExpr::from_terms(&[("y", ay), ("x", ax)], c);
            let sched = AffineExpr::from_terms(&[("y", sy), ("x", sx)], 5);
            let ctl = Controller::new("p", &d, addr.clone(), m, sched.clone()).unwrap();
            let got = controller_replay(&ctl);
            let want: Vec<(i64, i64)> = d.points()
                .map(|p| (sched.eval(&d, &p).unwrap(), addr.eval(&d, &p).unwrap().rem_euclid(m)))
                .collect();
            prop_assert_eq!(got, want);
        }
    }
}
