//! Wide-fetch tiles: serial writes gather into an aggregator, which drains
//! whole vectors into the single-ported memory; fills load vectors into a
//! transpose buffer, which serves serial reads.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::layout::{ceil_div, find_capacity, Lifetime};
use super::{port_address, Controller, HardwareSpec, MemConfig, MemSpec};
use crate::affine::{AffineExpr, BoxDomain, Dim, PortSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorConfig {
    pub fetch_width: i64,
    /// Extra cycles between a vector's last serial write and its drain.
    pub drain_shift: i64,
    /// Extra cycles each fill runs ahead of its first serial read.
    pub fill_lead: Vec<i64>,
    pub drain: Controller,
    pub fills: Vec<Controller>,
}

/// Innermost iterator of a port and its lower bound.
fn inner(p: &PortSpec) -> Result<(String, i64)> {
    let d = p.domain.innermost().ok_or_else(|| Error::Mapping(format!("port {} has no loops", p.id)))?;
    Ok((d.name.clone(), d.lo))
}

/// Whether the port walks dimension 0 contiguously from an aligned start.
fn aligned(p: &PortSpec, fw: i64) -> Result<()> {
    let (x, _) = inner(p)?;
    let bad = |why: &str| Err(Error::Mapping(format!("port {} is not vectorizable: {why}", p.id)));
    let Some(a0) = p.access.first() else { return bad("0-dimensional buffer") };
    if a0.coeff(&x) != 1 {
        return bad("innermost loop does not step dimension 0 by one");
    }
    if p.access[1..].iter().any(|a| a.coeff(&x) != 0) {
        return bad("innermost loop moves an outer dimension");
    }
    if p.domain.dims.iter().any(|d| d.name != x && a0.coeff(&d.name).rem_euclid(fw) != 0) {
        return bad("outer loops shift dimension 0 off the vector grid");
    }
    if a0.eval(&p.domain, &p.domain.first_point())?.rem_euclid(fw) != 0 {
        return bad("first element is not vector aligned");
    }
    Ok(())
}

/// Domain with the innermost loop counting vectors.
fn strip(p: &PortSpec, fw: i64) -> Result<(BoxDomain, AffineExpr)> {
    let (x, lo) = inner(p)?;
    let mut dims = p.domain.dims.clone();
    let last = dims.last_mut().expect("innermost exists");
    let vx = format!("{x}_v");
    *last = Dim::new(&vx, 0, ceil_div(last.extent, fw));
    Ok((BoxDomain::new(dims)?, AffineExpr::from_terms(&[(&vx, fw)], lo)))
}

/// Vector index of every event of `p`, in enumeration order.
fn vector_ids(p: &PortSpec, fw: i64) -> Result<Vec<(i64, usize)>> {
    let (x, lo) = inner(p)?;
    let xi = p.domain.index_of(&x).expect("innermost exists");
    let sched = p.schedule.bind(&p.domain)?;
    let mut v = 0usize;
    let mut out = Vec::with_capacity(p.domain.len());
    for (n, pt) in p.domain.points().enumerate() {
        if n > 0 && (pt[xi] - lo) % fw == 0 {
            v += 1;
        }
        out.push((sched.eval(&pt), v));
    }
    Ok(out)
}

/// Per-vector (first, last) event cycles.
fn spans(ids: &[(i64, usize)]) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    for &(c, v) in ids {
        if v == out.len() {
            out.push((c, c));
        } else {
            let s = &mut out[v];
            s.0 = s.0.min(c);
            s.1 = s.1.max(c);
        }
    }
    out
}

fn cycles(domain: &BoxDomain, expr: &AffineExpr) -> Result<Vec<i64>> {
    let b = expr.bind(domain)?;
    Ok(domain.points().map(|p| b.eval(&p)).collect())
}

fn increasing(v: &[i64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

pub(crate) fn vectorize(spec: &MemSpec, lts: &[Lifetime], min: i64, hw: &HardwareSpec) -> Result<MemConfig> {
    let fw = hw.fetch_width;
    let write = spec.write.as_ref().expect("vectorize needs a write port");
    for p in std::iter::once(write).chain(&spec.reads) {
        aligned(p, fw)?;
    }
    let (capacity, offsets, addr) = find_capacity(&spec.dims, lts, min, fw)?;
    let vcap = capacity / fw;

    // aggregator side
    let (wx, _) = inner(write)?;
    let wids = vector_ids(write, fw)?;
    let wspan = spans(&wids);
    let (wdom, wsub) = strip(write, fw)?;
    let drain_base = write.schedule.substitute(&wx, &wsub.offset(fw - 1)).offset(1);
    let vaddr = |p: &PortSpec, sub: &AffineExpr, x: &str| -> AffineExpr {
        let a = port_address(&addr, &p.access).substitute(x, sub);
        let mut out = AffineExpr::constant(a.constant / fw);
        for n in a.iterators().map(str::to_string).collect::<Vec<_>>() {
            out.add_term(&n, a.coeff(&n) / fw);
        }
        out
    };
    let drain_addr = vaddr(write, &wsub, &wx);
    let wvec: HashMap<i64, usize> = wids.iter().copied().collect();

    // transpose side, per read port
    struct Side {
        dom: BoxDomain,
        base: AffineExpr,
        addr: AffineExpr,
        span: Vec<(i64, i64)>,
        vec_of: HashMap<i64, usize>,
    }
    let mut sides = Vec::new();
    for r in &spec.reads {
        let (x, _) = inner(r)?;
        let ids = vector_ids(r, fw)?;
        let (dom, sub) = strip(r, fw)?;
        let base = r.schedule.substitute(&x, &sub).offset(-1);
        let a = vaddr(r, &sub, &x);
        sides.push(Side { dom, base, addr: a, span: spans(&ids), vec_of: ids.into_iter().collect() });
    }
    // producing write vector of each read event, per port
    let mut need: Vec<Vec<(usize, usize)>> = vec![vec![]; spec.reads.len()];
    for lt in lts {
        let v = wvec[&lt.write];
        for &(j, c) in &lt.reads {
            need[j].push((sides[j].vec_of[&c], v));
        }
    }

    let mut last_err = Error::Mapping(format!("{}: no drain/fill timing within {} cycles", spec.id, 2 * fw));
    'drain: for a in 0..=2 * fw {
        let drains = cycles(&wdom, &drain_base.offset(a))?;
        if !increasing(&drains) {
            return Err(Error::Mapping(format!("{}: write stream is not in cycle order", spec.id)));
        }
        for (v, d) in drains.iter().enumerate() {
            let late = wspan.get(v + 2).is_some_and(|s| *d > s.0);
            if *d <= wspan[v].1 || late {
                last_err = Error::Mapping(format!("{}: aggregator overflow at vector {v}", spec.id));
                continue 'drain;
            }
        }
        let mut used: HashSet<i64> = drains.iter().copied().collect();
        let mut leads = Vec::new();
        let mut fills = Vec::new();
        for (j, side) in sides.iter().enumerate() {
            let found = (0..=2 * fw).find_map(|s| {
                let f = cycles(&side.dom, &side.base.offset(-s)).ok()?;
                let ok = increasing(&f)
                    && f.iter().all(|c| !used.contains(c))
                    && f.iter().enumerate().all(|(k, c)| k < 2 || *c >= side.span[k - 2].1)
                    && need[j].iter().all(|&(k, v)| drains[v] < f[k]);
                ok.then_some((s, f))
            });
            match found {
                Some((s, f)) => {
                    used.extend(f);
                    leads.push(s);
                    fills.push(Controller::new(
                        &format!("{}.fill", spec.reads[j].id),
                        &side.dom,
                        side.addr.clone(),
                        vcap,
                        side.base.offset(-s),
                    )?);
                }
                None => {
                    last_err = Error::Mapping(format!("{}: no fill timing for port {}", spec.id, spec.reads[j].id));
                    continue 'drain;
                }
            }
        }
        let drain = Controller::new(&format!("{}.drain", write.id), &wdom, drain_addr.clone(), vcap, drain_base.offset(a))?;
        let wc = Controller::new(&write.id, &write.domain, port_address(&addr, &write.access), capacity, write.schedule.clone())?;
        let reads = spec
            .reads
            .iter()
            .map(|r| Controller::new(&r.id, &r.domain, port_address(&addr, &r.access), capacity, r.schedule.clone()))
            .collect::<Result<Vec<_>>>()?;
        return Ok(MemConfig {
            id: spec.id.clone(),
            role: spec.role,
            input: spec.input,
            capacity,
            offsets,
            banks: 1,
            tile_words: hw.tile_words,
            tiles: ceil_div(capacity, hw.tile_words),
            write: Some(wc),
            reads,
            forward: false,
            vector: Some(VectorConfig { fetch_width: fw, drain_shift: a, fill_lead: leads, drain, fills }),
            contents: None,
        });
    }
    Err(last_err)
}
