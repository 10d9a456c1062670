//! Memory tile state: dual-port tiles, read-only tiles and wide-fetch tiles
//! with aggregator and transpose buffers.

use std::collections::HashSet;

use super::units::CtlState;
use super::{Trace, TraceRow};
use crate::error::{Error, Result};
use crate::mapping::{MemConfig, MemRole};

#[derive(Debug, Clone)]
struct Slot {
    tag: Option<i64>,
    lanes: Vec<Option<u16>>,
}

impl Slot {
    fn new(fw: usize) -> Slot {
        Slot { tag: None, lanes: vec![None; fw] }
    }

    fn is_empty(&self) -> bool {
        self.lanes.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone)]
struct VecState {
    fw: i64,
    agg: [Slot; 2],
    agg_slot: usize,
    agg_started: bool,
    drain: CtlState,
    drain_slot: usize,
    fills: Vec<CtlState>,
    tb: Vec<[Slot; 2]>,
    tb_slot: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct MemState {
    pub cfg: MemConfig,
    data: Vec<Option<u16>>,
    write: Option<CtlState>,
    reads: Vec<CtlState>,
    /// Value each read port presents: valid cycle, address and data.
    pub out: Vec<Option<(i64, i64, Option<u16>)>>,
    vec: Option<VecState>,
    pub accesses: u64,
}

impl MemState {
    pub fn new(cfg: &MemConfig) -> MemState {
        let mut data = vec![None; cfg.capacity as usize];
        if let Some(c) = &cfg.contents {
            for (d, v) in data.iter_mut().zip(c) {
                *d = Some(*v);
            }
        }
        let vec = cfg.vector.as_ref().map(|v| {
            let fw = v.fetch_width as usize;
            VecState {
                fw: v.fetch_width,
                agg: [Slot::new(fw), Slot::new(fw)],
                agg_slot: 0,
                agg_started: false,
                drain: CtlState::new(&v.drain),
                drain_slot: 0,
                fills: v.fills.iter().map(CtlState::new).collect(),
                tb: v.fills.iter().map(|_| [Slot::new(fw), Slot::new(fw)]).collect(),
                tb_slot: vec![0; v.fills.len()],
            }
        });
        MemState {
            cfg: cfg.clone(),
            data,
            write: cfg.write.as_ref().map(CtlState::new),
            reads: cfg.reads.iter().map(CtlState::new).collect(),
            out: vec![None; cfg.reads.len()],
            vec,
            accesses: 0,
        }
    }

    pub fn done(&self) -> bool {
        let ctl_done = self.write.as_ref().is_none_or(|w| w.id.done) && self.reads.iter().all(|r| r.id.done);
        ctl_done && self.vec.as_ref().is_none_or(|v| v.drain.id.done && v.fills.iter().all(|f| f.id.done))
    }

    /// Address written this cycle, if any.
    pub fn write_addr(&self, t: i64) -> Option<i64> {
        self.write.as_ref().filter(|w| w.fires(t)).map(|w| w.addr.value)
    }

    /// Serial transpose-buffer reads, visible in the cycle they fire.
    pub fn tb_reads(&mut self, t: i64, trace: &mut Trace) -> Result<()> {
        let Some(v) = &mut self.vec else { return Ok(()) };
        for (j, r) in self.reads.iter_mut().enumerate() {
            if !r.fires(t) {
                continue;
            }
            let a = r.addr.value;
            let (va, lane) = (a / v.fw, (a % v.fw) as usize);
            let newest = v.tb_slot[j] ^ 1;
            let slot = [newest, newest ^ 1].into_iter().find(|&s| v.tb[j][s].tag == Some(va));
            let val = slot.and_then(|s| v.tb[j][s].lanes[lane]).ok_or_else(|| {
                Error::sim(t, &self.cfg.reads[j].port, format!("transpose buffer underflow: word {a} not fetched"))
            })?;
            trace.push(TraceRow::new(t, &self.cfg.id, &self.cfg.reads[j].port, "tb_read", Some(a), Some(val)));
            self.out[j] = Some((t, a, Some(val)));
            r.advance();
        }
        Ok(())
    }

    /// End-of-cycle updates: writes, vector moves and read issues.
    pub fn commit(&mut self, t: i64, input: Option<u16>, trace: &mut Trace) -> Result<()> {
        if self.vec.is_some() {
            return self.commit_vector(t, input, trace);
        }
        if let Some(w) = &mut self.write {
            if w.fires(t) {
                let val = input.ok_or_else(|| Error::sim(t, &self.cfg.id, "write without valid input data"))?;
                let a = w.addr.value;
                self.data[a as usize] = Some(val);
                self.accesses += 1;
                trace.push(TraceRow::new(t, &self.cfg.id, &w_port(&self.cfg), "write", Some(a), Some(val)));
                w.advance();
            }
        }
        let mut banks = HashSet::new();
        for (j, r) in self.reads.iter_mut().enumerate() {
            if !r.fires(t) {
                continue;
            }
            let a = r.addr.value;
            let port = &self.cfg.reads[j].port;
            // read-only tiles are replicated per read port
            if self.cfg.role != MemRole::Rom && !banks.insert(a % self.cfg.banks) {
                return Err(Error::sim(t, port, format!("port conflict on bank {}", a % self.cfg.banks)));
            }
            let val = self.data[a as usize];
            self.accesses += 1;
            trace.push(TraceRow::new(t, &self.cfg.id, port, "read", Some(a), val));
            self.out[j] = Some((t + 1, a, val));
            r.advance();
        }
        Ok(())
    }

    fn commit_vector(&mut self, t: i64, input: Option<u16>, trace: &mut Trace) -> Result<()> {
        let id = self.cfg.id.clone();
        let v = self.vec.as_mut().expect("vector tile");
        let fw = v.fw;
        let drains = v.drain.fires(t);
        let nfills = v.fills.iter().filter(|f| f.fires(t)).count();
        if usize::from(drains) + nfills > 1 {
            return Err(Error::sim(t, &id, "port conflict on the single-ported memory"));
        }
        if drains {
            let va = v.drain.addr.value;
            let slot = &mut v.agg[v.drain_slot];
            if slot.tag.is_some_and(|tag| tag != va) {
                return Err(Error::sim(t, &id, format!("aggregator holds vector {:?}, drain expects {va}", slot.tag)));
            }
            for (lane, val) in slot.lanes.iter_mut().enumerate() {
                if let Some(x) = val.take() {
                    self.data[(va * fw) as usize + lane] = Some(x);
                }
            }
            slot.tag = None;
            v.drain_slot ^= 1;
            self.accesses += 1;
            trace.push(TraceRow::new(t, &id, &format!("{}.drain", w_port(&self.cfg)), "drain", Some(va), None));
            v.drain.advance();
        }
        for (j, f) in v.fills.iter_mut().enumerate() {
            if !f.fires(t) {
                continue;
            }
            let va = f.addr.value;
            let slot = &mut v.tb[j][v.tb_slot[j]];
            slot.tag = Some(va);
            for (lane, x) in slot.lanes.iter_mut().enumerate() {
                *x = self.data[(va * fw) as usize + lane];
            }
            v.tb_slot[j] ^= 1;
            self.accesses += 1;
            trace.push(TraceRow::new(t, &id, &format!("{}.fill", self.cfg.reads[j].port), "fill", Some(va), None));
            f.advance();
        }
        if let Some(w) = &mut self.write {
            if w.fires(t) {
                let val = input.ok_or_else(|| Error::sim(t, &id, "write without valid input data"))?;
                let a = w.addr.value;
                if w.inner() % fw == 0 {
                    if v.agg_started {
                        v.agg_slot ^= 1;
                    }
                    v.agg_started = true;
                    if !v.agg[v.agg_slot].is_empty() {
                        return Err(Error::sim(t, &id, "aggregator overflow"));
                    }
                }
                let slot = &mut v.agg[v.agg_slot];
                slot.tag = Some(a / fw);
                slot.lanes[(a % fw) as usize] = Some(val);
                trace.push(TraceRow::new(t, &id, &w_port(&self.cfg), "agg_write", Some(a), Some(val)));
                w.advance();
            }
        }
        Ok(())
    }
}

fn w_port(cfg: &MemConfig) -> String {
    cfg.write.as_ref().map(|w| w.port.clone()).unwrap_or_default()
}
