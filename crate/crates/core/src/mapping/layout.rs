//! Linearization, capacity search, banking and chaining.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::affine::{AffineExpr, PortSpec};
use crate::error::{Error, Result};

/// `expr mod modulus`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModAddr {
    pub expr: AffineExpr,
    pub modulus: i64,
}

impl ModAddr {
    pub fn of(&self, value: i64) -> i64 {
        value.rem_euclid(self.modulus)
    }
}

/// `ceil(a / b)` for positive `b`.
pub fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Row-major offsets with dimension 0 fastest, dimension 0 padded up to a
/// multiple of `align`.
pub fn row_major_offsets(dims: &[i64], align: i64) -> Vec<i64> {
    let mut out = Vec::with_capacity(dims.len());
    let mut stride = 1;
    for (k, d) in dims.iter().enumerate() {
        out.push(stride);
        let d = if k == 0 { ceil_div(*d, align) * align } else { *d };
        stride *= d;
    }
    out
}

/// Number of words of a padded row-major layout.
pub fn padded_size(dims: &[i64], align: i64) -> i64 {
    let offs = row_major_offsets(dims, align);
    match (offs.last(), dims.last()) {
        (Some(o), Some(d)) if dims.len() > 1 => o * d,
        _ => dims.first().map(|d| ceil_div(*d, align) * align).unwrap_or(1),
    }
}

/// Address `(sum_k (o_k mod C) * access_k) mod C`.
pub fn linearize(access: &[AffineExpr], capacity: i64, offsets: &[i64]) -> ModAddr {
    let mut expr = AffineExpr::constant(0);
    for (a, o) in access.iter().zip(offsets) {
        expr = expr.add(&a.scale(o.rem_euclid(capacity)));
    }
    ModAddr { expr, modulus: capacity }
}

/// Storage interval of one written value: `[write, end)`, where `end` is
/// the last read (or one past the write for values nobody reads).
#[derive(Debug, Clone)]
pub(crate) struct Lifetime {
    pub element: Vec<i64>,
    pub write: i64,
    pub end: i64,
    /// The read events served by this write: (port index, cycle).
    pub reads: Vec<(usize, i64)>,
}

pub(crate) fn lifetimes(write: &PortSpec, reads: &[PortSpec]) -> Result<Vec<Lifetime>> {
    let mut by_el: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut out: Vec<Lifetime> = Vec::new();
    for ev in write.events() {
        by_el.entry(ev.element.clone()).or_default().push(out.len());
        out.push(Lifetime { element: ev.element, write: ev.cycle, end: ev.cycle + 1, reads: vec![] });
    }
    for v in by_el.values_mut() {
        v.sort_by_key(|&i| out[i].write);
    }
    for (j, r) in reads.iter().enumerate() {
        for ev in r.events() {
            let ws = by_el
                .get(&ev.element)
                .ok_or_else(|| Error::Mapping(format!("port {} reads {:?} which is never written", r.id, ev.element)))?;
            let k = ws.partition_point(|&i| out[i].write <= ev.cycle);
            if k == 0 {
                return Err(Error::Mapping(format!(
                    "port {} reads {:?} at cycle {} before it is written",
                    r.id, ev.element, ev.cycle
                )));
            }
            let lt = &mut out[ws[k - 1]];
            lt.end = lt.end.max(ev.cycle);
            lt.reads.push((j, ev.cycle));
        }
    }
    Ok(out)
}

/// Checks that no two overlapping lifetimes share an address.
pub(crate) fn check_collisions(lts: &[Lifetime], addr: &ModAddr, elem_vars: &[String]) -> Result<()> {
    let coeffs: Vec<i64> = elem_vars.iter().map(|v| addr.expr.coeff(v)).collect();
    let base = addr.expr.constant;
    let mut iv: Vec<(i64, i64, i64, usize)> = Vec::with_capacity(lts.len());
    for (i, lt) in lts.iter().enumerate() {
        let a = addr.of(base + coeffs.iter().zip(&lt.element).map(|(c, e)| c * e).sum::<i64>());
        iv.push((a, lt.write, lt.end, i));
    }
    iv.sort_unstable();
    for w in iv.windows(2) {
        let (a0, _, e0, i0) = w[0];
        let (a1, s1, _, i1) = w[1];
        if a0 == a1 && s1 < e0 {
            return Err(Error::Mapping(format!(
                "address {a0} collision between {:?} and {:?}",
                lts[i0].element, lts[i1].element
            )));
        }
    }
    Ok(())
}

/// Element-space variables `e0, e1, ...` used to linearize elements.
pub(crate) fn elem_vars(rank: usize) -> Vec<String> {
    (0..rank).map(|k| format!("e{k}")).collect()
}

/// Smallest capacity (a multiple of `align`, at least `min`) whose
/// row-major linearization is collision-free. Tries consecutive sizes
/// first, then multiples of the row pitch, then the full buffer.
pub(crate) fn find_capacity(dims: &[i64], lts: &[Lifetime], min: i64, align: i64) -> Result<(i64, Vec<i64>, ModAddr)> {
    let vars = elem_vars(dims.len());
    let access: Vec<AffineExpr> = vars.iter().map(|v| AffineExpr::var(v)).collect();
    let offsets = row_major_offsets(dims, align);
    let full = padded_size(dims, align);
    let start = ceil_div(min.max(1), align) * align;
    let pitch = offsets.get(1).copied().unwrap_or(full);
    let mut cands: Vec<i64> = (0..64).map(|k| start + k * align).filter(|&c| c < full).collect();
    let mut m = ceil_div(start, pitch) * pitch;
    while m < full {
        cands.push(m);
        m += pitch;
    }
    cands.push(full);
    cands.sort_unstable();
    cands.dedup();
    for cap in cands {
        let addr = linearize(&access, cap, &offsets);
        if check_collisions(lts, &addr, &vars).is_ok() {
            return Ok((cap, offsets, addr));
        }
    }
    let addr = linearize(&access, full, &offsets);
    check_collisions(lts, &addr, &vars)?;
    Ok((full, offsets, addr))
}

/// Smallest cyclic bank count `B <= max_banks` on dimension 0 such that no
/// bank sees more than one read or more than one write in a cycle.
pub fn bank(write: &PortSpec, reads: &[PortSpec], max_banks: i64) -> Result<i64> {
    let mut worst = None;
    for b in 1..=max_banks.max(1) {
        match bank_conflict(write, reads, b) {
            None => return Ok(b),
            Some(c) => worst = Some(c),
        }
    }
    Err(Error::Mapping(format!(
        "no cyclic banking up to {max_banks} banks; conflicting reads at cycle {}",
        worst.unwrap_or(0)
    )))
}

fn bank_conflict(write: &PortSpec, reads: &[PortSpec], b: i64) -> Option<i64> {
    let mut seen: HashMap<(i64, i64, bool), ()> = HashMap::new();
    let evs = write.events().into_iter().map(|e| (e, true)).chain(reads.iter().flat_map(|r| r.events()).map(|e| (e, false)));
    for (ev, is_write) in evs {
        let key = (ev.cycle, ev.element[0].rem_euclid(b), is_write);
        if seen.insert(key, ()).is_some() {
            return Some(ev.cycle);
        }
    }
    None
}

/// Split of a logical word address across chained tiles of `c` words.
pub fn chain_split(address: i64, c: i64) -> (i64, i64) {
    (address.div_euclid(c), address.rem_euclid(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{BoxDomain, Direction};

    fn port(id: &str, dir: Direction, acc: Vec<AffineExpr>, sched: AffineExpr) -> PortSpec {
        PortSpec::new(id, dir, BoxDomain::zero_based(&[("y", 8), ("x", 8)]), acc, sched).unwrap()
    }

    #[test]
    fn offsets_reduce_mod_capacity() {
        let offs = row_major_offsets(&[64, 64], 1);
        assert_eq!(offs, vec![1, 64]);
        let a = linearize(&[AffineExpr::var("x"), AffineExpr::var("y")], 64, &offs);
        assert_eq!(a.expr, AffineExpr::var("x"));
        assert_eq!(row_major_offsets(&[62, 3], 4), vec![1, 64]);
        assert_eq!(padded_size(&[62, 3], 4), 192);
        assert_eq!(chain_split(40, 32), (1, 8));
    }

    #[test]
    fn two_adjacent_reads_need_two_banks() {
        let x = AffineExpr::var("x");
        let y = AffineExpr::var("y");
        let sched = AffineExpr::from_terms(&[("y", 8), ("x", 1)], 0);
        let w = port("w", Direction::Input, vec![x.clone(), y.clone()], sched.clone());
        let d = BoxDomain::zero_based(&[("y", 8), ("x", 4)]);
        let r0 = PortSpec::new("r0", Direction::Output, d.clone(), vec![x.scale(2), y.clone()], sched.offset(64)).unwrap();
        let r1 = PortSpec::new("r1", Direction::Output, d, vec![x.scale(2).offset(1), y], sched.offset(64)).unwrap();
        assert_eq!(bank(&w, std::slice::from_ref(&r0), 4).unwrap(), 1);
        assert_eq!(bank(&w, &[r0, r1], 4).unwrap(), 2);
    }
}
