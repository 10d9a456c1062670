//! Affine expressions over named loop iterators, rectangular iteration
//! domains, and the enumeration-based analyses (dependence distance,
//! liveness, strip-mining) the rest of the compiler is built on.
//!
//! Every analysis here is exact: domains are boxes and are small enough to
//! enumerate, so nothing is approximated.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Σ coeff·iter + constant` with integer coefficients.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffineExpr {
    pub coeffs: BTreeMap<String, i64>,
    pub constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn var(name: &str) -> Self {
        Self::term(name, 1)
    }

    pub fn term(name: &str, coeff: i64) -> Self {
        let mut e = Self::constant(0);
        e.add_term(name, coeff);
        e
    }

    /// Builds `Σ terms + constant`; zero coefficients are dropped.
    pub fn from_terms(terms: &[(&str, i64)], constant: i64) -> Self {
        let mut e = Self::constant(constant);
        for (n, c) in terms {
            e.add_term(n, *c);
        }
        e
    }

    pub fn add_term(&mut self, name: &str, coeff: i64) {
        let v = self.coeffs.entry(name.to_string()).or_insert(0);
        *v += coeff;
        if *v == 0 {
            self.coeffs.remove(name);
        }
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.coeffs.get(name).copied().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        for (n, c) in &other.coeffs {
            out.add_term(n, *c);
        }
        out.constant += other.constant;
        out
    }

    pub fn scale(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        AffineExpr {
            coeffs: self.coeffs.iter().map(|(n, c)| (n.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn offset(&self, k: i64) -> AffineExpr {
        let mut out = self.clone();
        out.constant += k;
        out
    }

    /// Replaces iterator `name` by `with`.
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> AffineExpr {
        let c = self.coeff(name);
        if c == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.coeffs.remove(name);
        out.add(&with.scale(c))
    }

    pub fn iterators(&self) -> impl Iterator<Item = &str> {
        self.coeffs.keys().map(|s| s.as_str())
    }

    /// Evaluates at a point of `domain` (point coordinates in domain order).
    pub fn eval(&self, domain: &BoxDomain, point: &[i64]) -> Result<i64> {
        if point.len() != domain.dims.len() {
            return Err(Error::Affine(format!(
                "point has {} coordinates, domain has {} dims",
                point.len(),
                domain.dims.len()
            )));
        }
        self.bind(domain).map(|f| f.eval(point))
    }

    /// Evaluates with a name → value environment.
    pub fn eval_env(&self, env: &HashMap<String, i64>) -> Result<i64> {
        let mut acc = self.constant;
        for (n, c) in &self.coeffs {
            let v = env
                .get(n)
                .ok_or_else(|| Error::Affine(format!("unbound iterator {n}")))?;
            acc += c * v;
        }
        Ok(acc)
    }

    /// Resolves iterator names to positions of `domain`.
    pub fn bind(&self, domain: &BoxDomain) -> Result<BoundExpr> {
        let mut coeffs = vec![0; domain.dims.len()];
        for (n, c) in &self.coeffs {
            let i = domain
                .index_of(n)
                .ok_or_else(|| Error::Affine(format!("iterator {n} not in domain {domain}")))?;
            coeffs[i] = *c;
        }
        Ok(BoundExpr { coeffs, constant: self.constant })
    }

    /// Minimum and maximum over a domain.
    pub fn range(&self, domain: &BoxDomain) -> Result<(i64, i64)> {
        let b = self.bind(domain)?;
        let (mut lo, mut hi) = (b.constant, b.constant);
        for (c, d) in b.coeffs.iter().zip(&domain.dims) {
            let a = c * d.lo;
            let z = c * (d.lo + d.extent - 1);
            lo += a.min(z);
            hi += a.max(z);
        }
        Ok((lo, hi))
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        // Print larger strides first so `64*y + x` reads naturally.
        let mut terms: Vec<_> = self.coeffs.iter().collect();
        terms.sort_by(|a, b| b.1.abs().cmp(&a.1.abs()).then(a.0.cmp(b.0)));
        for (n, c) in terms {
            let (sign, mag) = if *c < 0 { ("-", -c) } else { ("+", *c) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag == 1 {
                write!(f, "{n}")?;
            } else {
                write!(f, "{mag}*{n}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)
        } else {
            Ok(())
        }
    }
}

/// An [`AffineExpr`] with coefficients laid out in domain order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundExpr {
    pub coeffs: Vec<i64>,
    pub constant: i64,
}

impl BoundExpr {
    #[inline]
    pub fn eval(&self, point: &[i64]) -> i64 {
        self.coeffs.iter().zip(point).map(|(c, p)| c * p).sum::<i64>() + self.constant
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dim {
    #[serde(rename = "iter")]
    pub name: String,
    pub lo: i64,
    pub extent: i64,
}

impl Dim {
    pub fn new(name: &str, lo: i64, extent: i64) -> Self {
        Dim { name: name.to_string(), lo, extent }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.extent - 1
    }
}

/// A rectangular iteration domain; `dims[0]` is the outermost loop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxDomain {
    pub dims: Vec<Dim>,
}

impl BoxDomain {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        let d = BoxDomain { dims };
        d.validate()?;
        Ok(d)
    }

    /// Zero-based box from `(name, extent)` pairs, outermost first.
    pub fn zero_based(dims: &[(&str, i64)]) -> Self {
        BoxDomain { dims: dims.iter().map(|(n, e)| Dim::new(n, 0, *e)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dims.iter().enumerate() {
            if d.extent < 1 {
                return Err(Error::Affine(format!("iterator {} has extent {} < 1", d.name, d.extent)));
            }
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Affine(format!("iterator {} declared twice", d.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().map(|d| d.extent as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn dim(&self, name: &str) -> Option<&Dim> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn innermost(&self) -> Option<&Dim> {
        self.dims.last()
    }

    pub fn first_point(&self) -> Vec<i64> {
        self.dims.iter().map(|d| d.lo).collect()
    }

    pub fn last_point(&self) -> Vec<i64> {
        self.dims.iter().map(Dim::hi).collect()
    }

    /// Lexicographic enumeration, outermost iterator slowest.
    pub fn points(&self) -> PointIter<'_> {
        PointIter { domain: self, next: if self.dims.iter().all(|d| d.extent > 0) { Some(self.first_point()) } else { None } }
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        point.len() == self.dims.len()
            && self.dims.iter().zip(point).all(|(d, p)| *p >= d.lo && *p <= d.hi())
    }

    /// Row-major flat index (innermost fastest) of a point.
    pub fn flat_index(&self, point: &[i64]) -> usize {
        let mut idx = 0usize;
        for (d, p) in self.dims.iter().zip(point) {
            idx = idx * d.extent as usize + (p - d.lo) as usize;
        }
        idx
    }
}

impl fmt::Display for BoxDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{} in [{}, {}]", d.name, d.lo, d.hi())?;
        }
        write!(f, "}}")
    }
}

pub struct PointIter<'a> {
    domain: &'a BoxDomain,
    next: Option<Vec<i64>>,
}

impl Iterator for PointIter<'_> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        let cur = self.next.take()?;
        let mut nxt = cur.clone();
        let mut carried = true;
        for (i, d) in self.domain.dims.iter().enumerate().rev() {
            if nxt[i] < d.hi() {
                nxt[i] += 1;
                carried = false;
                break;
            }
            nxt[i] = d.lo;
        }
        if !carried {
            self.next = Some(nxt);
        }
        Some(cur)
    }
}

/// Maps iteration points to elements of a target buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessMap {
    pub buffer: String,
    pub domain: BoxDomain,
    pub exprs: Vec<AffineExpr>,
}

impl AccessMap {
    pub fn new(buffer: &str, domain: BoxDomain, exprs: Vec<AffineExpr>) -> Result<Self> {
        for e in &exprs {
            e.bind(&domain)?;
        }
        Ok(AccessMap { buffer: buffer.to_string(), domain, exprs })
    }

    pub fn element(&self, point: &[i64]) -> Vec<i64> {
        self.exprs
            .iter()
            .map(|e| e.bind(&self.domain).expect("validated").eval(point))
            .collect()
    }
}

/// One-dimensional cycle-accurate schedule: iteration point → cycle after reset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub domain: BoxDomain,
    pub expr: AffineExpr,
}

impl CycleSchedule {
    pub fn new(domain: BoxDomain, expr: AffineExpr) -> Result<Self> {
        expr.bind(&domain)?;
        Ok(CycleSchedule { domain, expr })
    }

    pub fn first_cycle(&self) -> i64 {
        self.expr.range(&self.domain).map(|r| r.0).unwrap_or(0)
    }

    pub fn last_cycle(&self) -> i64 {
        self.expr.range(&self.domain).map(|r| r.1).unwrap_or(0)
    }

    /// True iff distinct points get distinct cycles (checked by enumeration).
    pub fn is_injective(&self) -> bool {
        let b = match self.expr.bind(&self.domain) {
            Ok(b) => b,
            Err(_) => return false,
        };
        let mut cycles: Vec<i64> = self.domain.points().map(|p| b.eval(&p)).collect();
        cycles.sort_unstable();
        cycles.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

/// A port of a unified buffer: iteration domain, access map and schedule
/// sharing one domain. `Input` ports write into the buffer, `Output` ports
/// read from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub id: String,
    pub direction: Direction,
    pub domain: BoxDomain,
    pub access: Vec<AffineExpr>,
    pub schedule: AffineExpr,
}

/// One port event: the element touched and the cycle it happens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortEvent {
    pub cycle: i64,
    pub element: Vec<i64>,
}

impl PortSpec {
    pub fn new(
        id: &str,
        direction: Direction,
        domain: BoxDomain,
        access: Vec<AffineExpr>,
        schedule: AffineExpr,
    ) -> Result<Self> {
        domain.validate()?;
        for e in access.iter().chain(std::iter::once(&schedule)) {
            e.bind(&domain)?;
        }
        Ok(PortSpec { id: id.to_string(), direction, domain, access, schedule })
    }

    pub fn access_map(&self, buffer: &str) -> AccessMap {
        AccessMap { buffer: buffer.to_string(), domain: self.domain.clone(), exprs: self.access.clone() }
    }

    pub fn cycle_schedule(&self) -> CycleSchedule {
        CycleSchedule { domain: self.domain.clone(), expr: self.schedule.clone() }
    }

    /// All events in enumeration order.
    pub fn events(&self) -> Vec<PortEvent> {
        let sched = self.schedule.bind(&self.domain).expect("validated port");
        let acc: Vec<BoundExpr> =
            self.access.iter().map(|e| e.bind(&self.domain).expect("validated port")).collect();
        self.domain
            .points()
            .map(|p| PortEvent { cycle: sched.eval(&p), element: acc.iter().map(|a| a.eval(&p)).collect() })
            .collect()
    }

    pub fn with_schedule_offset(&self, k: i64) -> PortSpec {
        let mut p = self.clone();
        p.schedule = p.schedule.offset(k);
        p
    }

    pub fn first_cycle(&self) -> i64 {
        self.schedule.range(&self.domain).map(|r| r.0).unwrap_or(0)
    }

    pub fn last_cycle(&self) -> i64 {
        self.schedule.range(&self.domain).map(|r| r.1).unwrap_or(0)
    }
}

/// Constant cycle distance `d` such that every value on `dst` at cycle `t`
/// appeared on `src` at cycle `t - d`, with `src`'s values a superset of
/// `dst`'s. `None` when no single constant works.
pub fn dependence_distance(src: &PortSpec, dst: &PortSpec) -> Option<i64> {
    let mut seen: HashMap<Vec<i64>, Vec<i64>> = HashMap::new();
    for ev in src.events() {
        seen.entry(ev.element).or_default().push(ev.cycle);
    }
    let dst_events = dst.events();
    let first = dst_events.first()?;
    let candidates: Vec<i64> = seen.get(&first.element)?.iter().map(|c| first.cycle - c).collect();
    'cand: for d in candidates {
        for ev in &dst_events {
            match seen.get(&ev.element) {
                Some(cycles) if cycles.contains(&(ev.cycle - d)) => {}
                _ => continue 'cand,
            }
        }
        return Some(d);
    }
    None
}

/// Minimal storage capacity: the maximum over cycles `t` of the number of
/// values written at or before `t` whose last read happens after `t`.
///
/// Each read is served by the latest write of its element at or before the
/// read cycle; a read with no such write is an error.
pub fn max_live_values(write: &PortSpec, reads: &[PortSpec]) -> Result<usize> {
    let mut writes: HashMap<Vec<i64>, Vec<i64>> = HashMap::new();
    for ev in write.events() {
        writes.entry(ev.element).or_default().push(ev.cycle);
    }
    for v in writes.values_mut() {
        v.sort_unstable();
    }
    // (element, write cycle) -> last read cycle
    let mut last_read: HashMap<(Vec<i64>, i64), i64> = HashMap::new();
    for r in reads {
        for ev in r.events() {
            let ws = writes.get(&ev.element).ok_or_else(|| {
                Error::Affine(format!("port {} reads element {:?} that is never written", r.id, ev.element))
            })?;
            let idx = ws.partition_point(|&w| w <= ev.cycle);
            if idx == 0 {
                return Err(Error::Affine(format!(
                    "port {} reads element {:?} at cycle {} before it is written",
                    r.id, ev.element, ev.cycle
                )));
            }
            let w = ws[idx - 1];
            let e = last_read.entry((ev.element, w)).or_insert(ev.cycle);
            *e = (*e).max(ev.cycle);
        }
    }
    Ok(live_sweep(last_read.iter().map(|((_, w), r)| (*w, *r))))
}

/// Max number of simultaneously open half-open intervals `[start, end)`.
pub fn live_sweep(intervals: impl Iterator<Item = (i64, i64)>) -> usize {
    let mut events: Vec<(i64, i64)> = Vec::new();
    for (w, r) in intervals {
        if r > w {
            events.push((w, 1));
            events.push((r, -1));
        }
    }
    events.sort_unstable();
    let (mut cur, mut best) = (0i64, 0i64);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            cur += events[i].1;
            i += 1;
        }
        best = best.max(cur);
    }
    best as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripRole {
    Agg,
    Sram,
    Tb,
}

/// Strip-mines the innermost iterator by `fw`.
///
/// `Agg`/`Tb`: `x -> (x mod fw, floor(x/fw))`, adding an innermost lane
/// iterator so the flattened enumeration is unchanged. `Sram`: `x -> floor(x/fw)`,
/// one point per `fw`-wide vector, access maps pointing at the vector's first
/// element.
pub fn compose_strip_mine(
    domain: &BoxDomain,
    map: &AccessMap,
    fw: i64,
    which: StripRole,
) -> Result<(BoxDomain, AccessMap)> {
    if fw < 1 {
        return Err(Error::Affine(format!("fetch width {fw} < 1")));
    }
    let inner = domain
        .innermost()
        .ok_or_else(|| Error::Affine("cannot strip-mine a 0-dimensional domain".into()))?
        .clone();
    if inner.extent % fw != 0 {
        return Err(Error::Affine(format!(
            "innermost extent {} of {} is not divisible by fetch width {fw}",
            inner.extent, inner.name
        )));
    }
    if fw == 1 {
        return Ok((domain.clone(), map.clone()));
    }
    let vname = format!("{}_v", inner.name);
    let lname = format!("{}_l", inner.name);
    let mut dims = domain.dims[..domain.dims.len() - 1].to_vec();
    dims.push(Dim::new(&vname, 0, inner.extent / fw));
    let subst = match which {
        StripRole::Agg | StripRole::Tb => {
            dims.push(Dim::new(&lname, 0, fw));
            AffineExpr::from_terms(&[(&vname, fw), (&lname, 1)], inner.lo)
        }
        StripRole::Sram => AffineExpr::from_terms(&[(&vname, fw)], inner.lo),
    };
    let nd = BoxDomain::new(dims)?;
    let exprs = map.exprs.iter().map(|e| e.substitute(&inner.name, &subst)).collect();
    let nm = AccessMap::new(&map.buffer, nd.clone(), exprs)?;
    Ok((nd, nm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xy64() -> BoxDomain {
        BoxDomain::zero_based(&[("y", 64), ("x", 64)])
    }

    fn row_major() -> AffineExpr {
        AffineExpr::from_terms(&[("y", 64), ("x", 1)], 0)
    }

    #[test]
    fn eval_row_major_schedule() {
        let d = xy64();
        let s = row_major();
        // points are (y, x)
        assert_eq!(s.eval(&d, &[0, 0]).unwrap(), 0);
        assert_eq!(s.eval(&d, &[0, 1]).unwrap(), 1);
        assert_eq!(s.eval(&d, &[63, 63]).unwrap(), 4095);
        assert!(s.eval(&d, &[1]).is_err());
    }

    #[test]
    fn enumerate_order_and_counts() {
        let d = BoxDomain::zero_based(&[("y", 2), ("x", 2)]);
        let pts: Vec<_> = d.points().collect();
        assert_eq!(pts, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(BoxDomain::zero_based(&[("x", 1)]).points().count(), 1);
        let down = BoxDomain::zero_based(&[("y", 4), ("x", 4)]);
        assert_eq!(down.points().count(), 16);
    }

    #[test]
    fn display_uses_compact_notation() {
        assert_eq!(row_major().to_string(), "64*y + x");
        assert_eq!(row_major().offset(65).to_string(), "64*y + x + 65");
        assert_eq!(AffineExpr::constant(-3).to_string(), "-3");
    }

    fn port(id: &str, dir: Direction, acc: Vec<AffineExpr>, sched: AffineExpr) -> PortSpec {
        PortSpec::new(id, dir, xy64(), acc, sched).unwrap()
    }

    fn shifted(dx: i64, dy: i64) -> Vec<AffineExpr> {
        vec![AffineExpr::from_terms(&[("x", 1)], dx), AffineExpr::from_terms(&[("y", 1)], dy)]
    }

    #[test]
    fn blur_window_distances() {
        let w = port("w", Direction::Input, shifted(0, 0), row_major());
        let d63 = BoxDomain::zero_based(&[("y", 63), ("x", 63)]);
        let mk = |dx, dy| PortSpec::new("r", Direction::Output, d63.clone(), shifted(dx, dy), row_major().offset(65)).unwrap();
        let got: Vec<_> = [(1, 1), (0, 1), (1, 0), (0, 0)].iter().map(|&(dx, dy)| dependence_distance(&w, &mk(dx, dy))).collect();
        assert_eq!(got, vec![Some(0), Some(1), Some(64), Some(65)]);
        // (x+1, y+1) over a 64x64 read domain leaves the written set.
        let full = port("r", Direction::Output, shifted(1, 1), row_major().offset(65));
        assert_eq!(dependence_distance(&w, &full), None);
        assert_eq!(dependence_distance(&w, &w), Some(0));
    }

    #[test]
    fn transposed_read_has_no_constant_distance() {
        let w = port("w", Direction::Input, shifted(0, 0), row_major());
        let t = port(
            "t",
            Direction::Output,
            vec![AffineExpr::var("y"), AffineExpr::var("x")],
            row_major().offset(4096),
        );
        assert_eq!(dependence_distance(&w, &t), None);
    }

    #[test]
    fn liveness_of_delay_lines() {
        let w = port("w", Direction::Input, shifted(0, 0), row_major());
        let r64 = port("r", Direction::Output, shifted(0, 0), row_major().offset(64));
        assert_eq!(max_live_values(&w, &[r64]).unwrap(), 64);
        let r0 = port("r", Direction::Output, shifted(0, 0), row_major());
        assert_eq!(max_live_values(&w, &[r0]).unwrap(), 0);
    }

    #[test]
    fn liveness_of_2x2_window() {
        // brute-force oracle: count per cycle
        let w = port("w", Direction::Input, shifted(0, 0), row_major());
        let d63 = BoxDomain::zero_based(&[("y", 63), ("x", 63)]);
        let mk = |dx, dy| PortSpec::new("r", Direction::Output, d63.clone(), shifted(dx, dy), row_major().offset(65)).unwrap();
        let reads = vec![mk(0, 0), mk(1, 0), mk(0, 1), mk(1, 1)];
        let got = max_live_values(&w, &reads).unwrap();

        let mut last: HashMap<Vec<i64>, i64> = HashMap::new();
        for r in &reads {
            for ev in r.events() {
                let e = last.entry(ev.element).or_insert(ev.cycle);
                *e = (*e).max(ev.cycle);
            }
        }
        let wr: HashMap<Vec<i64>, i64> = w.events().into_iter().map(|e| (e.element, e.cycle)).collect();
        let mut best = 0;
        for t in 0..4200 {
            let n = last.iter().filter(|(e, r)| wr[*e] <= t && **r > t).count();
            best = best.max(n);
        }
        assert_eq!(got, best);
        assert_eq!(got, 65);
    }

    #[test]
    fn read_before_write_is_an_error() {
        let w = port("w", Direction::Input, shifted(0, 0), row_major().offset(10));
        let r = port("r", Direction::Output, shifted(0, 0), row_major());
        let err = max_live_values(&w, &[r]).unwrap_err();
        assert!(err.to_string().contains("before it is written"));
    }

    #[test]
    fn strip_mine_sram_and_agg() {
        let d = xy64();
        let m = AccessMap::new("mem", d.clone(), shifted(0, 0)).unwrap();
        let (sd, _) = compose_strip_mine(&d, &m, 4, StripRole::Sram).unwrap();
        assert_eq!(sd.dims.iter().map(|d| d.extent).collect::<Vec<_>>(), vec![64, 16]);

        let d8 = BoxDomain::zero_based(&[("x", 8)]);
        let m8 = AccessMap::new("b", d8.clone(), vec![AffineExpr::var("x")]).unwrap();
        let (ad, am) = compose_strip_mine(&d8, &m8, 4, StripRole::Agg).unwrap();
        assert_eq!(ad.dims.iter().map(|d| d.extent).collect::<Vec<_>>(), vec![2, 4]);
        let seq: Vec<i64> = ad.points().map(|p| am.element(&p)[0]).collect();
        assert_eq!(seq, (0..8).collect::<Vec<_>>());

        let (id, im) = compose_strip_mine(&d8, &m8, 1, StripRole::Agg).unwrap();
        assert_eq!((id, im), (d8.clone(), m8.clone()));
        assert!(compose_strip_mine(&BoxDomain::zero_based(&[("x", 6)]), &m8, 4, StripRole::Sram).is_err());
    }

    fn arb_domain() -> impl Strategy<Value = BoxDomain> {
        prop::collection::vec((-3i64..3, 1i64..5), 1..4).prop_map(|ds| {
            BoxDomain::new(ds.into_iter().enumerate().map(|(i, (lo, e))| Dim::new(&format!("i{i}"), lo, e)).collect())
                .unwrap()
        })
    }

    fn arb_expr(rank: usize) -> impl Strategy<Value = AffineExpr> {
        (prop::collection::vec(-9i64..9, rank), -50i64..50).prop_map(|(cs, k)| {
            let mut e = AffineExpr::constant(k);
            for (i, c) in cs.into_iter().enumerate() {
                e.add_term(&format!("i{i}"), c);
            }
            e
        })
    }

    proptest! {
        #[test]
        fn eval_is_linear((d, e) in arb_domain().prop_flat_map(|d| { let r = d.rank(); (Just(d), arb_expr(r)) }),
                          a in prop::collection::vec(-20i64..20, 3), b in prop::collection::vec(-20i64..20, 3)) {
            let r = d.rank();
            let (a, b) = (&a[..r], &b[..r]);
            let ab: Vec<i64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            prop_assert_eq!(e.eval(&d, &ab).unwrap(), e.eval(&d, a).unwrap() + e.eval(&d, b).unwrap() - e.constant);
        }

        #[test]
        fn enumeration_matches_count_and_order(d in arb_domain()) {
            let pts: Vec<_> = d.points().collect();
            prop_assert_eq!(pts.len(), d.len());
            for (i, p) in pts.iter().enumerate() {
                prop_assert_eq!(d.flat_index(p), i);
            }
        }

        #[test]
        fn liveness_shift_invariant(delay in 0i64..20, shift in 0i64..100, w in 1i64..12) {
            let d = BoxDomain::zero_based(&[("y", 4), ("x", w)]);
            let s = AffineExpr::from_terms(&[("y", w), ("x", 1)], 0);
            let acc = shifted(0, 0);
            let wp = PortSpec::new("w", Direction::Input, d.clone(), acc.clone(), s.clone()).unwrap();
            let rp = PortSpec::new("r", Direction::Output, d, acc, s.offset(delay)).unwrap();
            let base = max_live_values(&wp, std::slice::from_ref(&rp)).unwrap();
            let moved = max_live_values(&wp.with_schedule_offset(shift), &[rp.with_schedule_offset(shift)]).unwrap();
            prop_assert_eq!(base, moved);
            prop_assert_eq!(dependence_distance(&wp, &wp), Some(0));
        }

        #[test]
        fn agg_strip_mine_preserves_sequence(e in 1i64..6, fw in 1i64..5, outer in 1i64..4) {
            let d = BoxDomain::zero_based(&[("y", outer), ("x", e * fw)]);
            let m = AccessMap::new("b", d.clone(), shifted(0, 0)).unwrap();
            let (ad, am) = compose_strip_mine(&d, &m, fw, StripRole::Agg).unwrap();
            let before: Vec<_> = d.points().map(|p| m.element(&p)).collect();
            let after: Vec<_> = ad.points().map(|p| am.element(&p)).collect();
            prop_assert_eq!(before, after);
        }
    }
}
