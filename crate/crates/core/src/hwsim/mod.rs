//! Cycle-level simulation of a mapped design.

mod mem;
mod units;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use units::{ag_replay, controller_replay, AgUnit, CtlState, IdUnit};

use crate::affine::{AffineExpr, BoundExpr, BoxDomain};
use crate::error::{Error, Result};
use crate::extraction::{PortRole, UnifiedBuffer};
use crate::frontend::{BufferKind, Program, StmtKind};
use crate::mapping::{AgConfig, Design, MemConfig, Node, Serve};
use crate::scheduler::ScheduleSet;
use mem::MemState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle: i64,
    pub unit: String,
    pub port: String,
    pub op: String,
    pub address: Option<i64>,
    pub data: Option<u16>,
}

impl TraceRow {
    pub fn new(cycle: i64, unit: &str, port: &str, op: &str, address: Option<i64>, data: Option<u16>) -> TraceRow {
        TraceRow { cycle, unit: unit.into(), port: port.into(), op: op.into(), address, data }
    }
}

/// Event log; rows are only kept when enabled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub enabled: bool,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn push(&mut self, row: TraceRow) {
        if self.enabled {
            self.rows.push(row);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle,unit,port,op,address,data\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.cycle,
                r.unit,
                r.port,
                r.op,
                opt(r.address.map(|a| a.to_string())),
                opt(r.data.map(|d| d.to_string()))
            );
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Give up after this many cycles (default: twice the scheduled
    /// completion plus slack).
    pub max_cycles: Option<i64>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub outputs: BTreeMap<String, Vec<u16>>,
    /// One past the last cycle a value was produced or drained.
    pub cycles: i64,
    pub memory_accesses: u64,
    pub shift_register_words: i64,
    pub trace: Trace,
}

struct SrState {
    input: Node,
    regs: VecDeque<Option<u16>>,
}

struct BufState {
    src: Option<u16>,
    srs: Vec<SrState>,
    mems: Vec<MemState>,
    serve: BTreeMap<String, Serve>,
}

impl BufState {
    fn node(&self, n: Node, t: i64) -> Option<u16> {
        match n {
            Node::Source => self.src,
            Node::Sr(i) => self.srs[i].regs.front().copied().flatten(),
            Node::Delay(i) => self.mem_out(i, 0, t),
        }
    }

    /// Read port output, forwarding data written to the same address in
    /// the same cycle.
    fn mem_out(&self, mem: usize, read: usize, t: i64) -> Option<u16> {
        let m = &self.mems[mem];
        let (c, a, v) = m.out[read]?;
        if c != t {
            return None;
        }
        if m.cfg.forward && m.write_addr(t) == Some(a) {
            return m.cfg.input.and_then(|n| self.node(n, t));
        }
        v
    }

    fn port(&self, port: &str, t: i64) -> Option<u16> {
        match self.serve.get(port)? {
            Serve::Chain { node } => self.node(*node, t),
            Serve::Mem { mem, read } => self.mem_out(*mem, *read, t),
        }
    }
}

/// A stream-driven endpoint: program input source or output sink.
struct Endpoint {
    buf: usize,
    port: String,
    ctl: CtlState,
    access: Vec<BoundExpr>,
    decl: usize,
}

struct StageState {
    ctl: CtlState,
    target: usize,
    /// Buffer index and port id of each read, in evaluation order.
    reads: Vec<(usize, String)>,
    reg: u16,
    pending: VecDeque<(i64, u16)>,
    first_red: Vec<usize>,
    last_rolled: Vec<usize>,
}

fn zero_ag(domain: &BoxDomain) -> AgConfig {
    AgConfig::for_expr(&AffineExpr::constant(0), domain).expect("constant expression")
}

fn endpoint(prog: &Program, ub: &UnifiedBuffer, b: usize, spec: &crate::affine::PortSpec) -> Result<Endpoint> {
    let sched = AgConfig::for_expr(&spec.schedule, &spec.domain)?;
    Ok(Endpoint {
        buf: b,
        port: spec.id.clone(),
        ctl: CtlState::from_parts(&spec.domain, &zero_ag(&spec.domain), &sched),
        access: spec.access.iter().map(|a| a.bind(&spec.domain)).collect::<Result<_>>()?,
        decl: prog.buffers.iter().position(|d| d.name == ub.name).expect("extracted from program"),
    })
}

/// Runs `design` on `inputs` until every sink has drained.
pub fn simulate(
    prog: &Program,
    set: &ScheduleSet,
    ubs: &[UnifiedBuffer],
    design: &Design,
    inputs: &BTreeMap<String, Vec<u16>>,
    opts: &SimOptions,
) -> Result<SimResult> {
    let bidx: HashMap<&str, usize> = ubs.iter().enumerate().map(|(i, u)| (u.name.as_str(), i)).collect();
    let mut bufs: Vec<BufState> = design
        .buffers
        .iter()
        .map(|pc| BufState {
            src: None,
            srs: pc
                .shift_registers
                .iter()
                .map(|s| SrState { input: s.input, regs: vec![None; s.depth as usize].into() })
                .collect(),
            mems: pc.mems.iter().map(MemState::new).collect(),
            serve: pc.serve.clone(),
        })
        .collect();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for (b, ub) in ubs.iter().enumerate() {
        if ub.kind == BufferKind::Input {
            let data = inputs.get(&ub.name).ok_or_else(|| Error::sim(0, &ub.name, "missing input data"))?;
            if data.len() != ub.logical_size() {
                return Err(Error::sim(0, &ub.name, format!("input has {} values, expected {}", data.len(), ub.logical_size())));
            }
            sources.push(endpoint(prog, ub, b, &ub.inputs[0].spec)?);
        }
        for p in ub.outputs.iter().filter(|p| p.role == PortRole::Sink) {
            sinks.push(endpoint(prog, ub, b, &p.spec)?);
        }
    }
    let mut stages = Vec::new();
    for s in &prog.stages {
        let ss = set.stage(&s.name).ok_or_else(|| Error::sim(0, &s.name, "stage is unscheduled"))?;
        let sched = AgConfig::for_expr(&ss.op, &ss.domain)?;
        let mut reads = Vec::new();
        for ub in ubs {
            for p in ub.reads().filter(|p| p.stage.as_deref() == Some(&s.name)) {
                reads.push((p.reference.unwrap_or(0), bidx[ub.name.as_str()], p.spec.id.clone()));
            }
        }
        reads.sort();
        let target = *bidx
            .get(s.target())
            .ok_or_else(|| Error::sim(0, &s.name, format!("target {} has no buffer", s.target())))?;
        stages.push(StageState {
            ctl: CtlState::from_parts(&ss.domain, &zero_ag(&ss.domain), &sched),
            target,
            reads: reads.into_iter().map(|(_, b, p)| (b, p)).collect(),
            reg: 0,
            pending: VecDeque::new(),
            first_red: (0..s.loops.len()).filter(|&i| s.loops[i].reduce).collect(),
            last_rolled: (0..s.loops.len()).filter(|&i| s.loops[i].reduce && !s.loops[i].unroll).collect(),
        });
    }
    let mut outputs: BTreeMap<String, Vec<u16>> =
        prog.outputs().map(|b| (b.name.clone(), vec![0; b.len()])).collect();
    let mut trace = Trace { enabled: opts.trace, rows: vec![] };
    let mem_first = design.buffers.iter().flat_map(|b| &b.mems).flat_map(|m| {
        let fills = m.vector.iter().flat_map(|v| &v.fills);
        m.reads.iter().chain(fills).map(|c| c.schedule.range(&c.domain).map_or(0, |r| r.0))
    });
    let start = set
        .stages
        .iter()
        .map(|s| s.first_cycle())
        .chain(set.inputs.iter().map(|i| i.cycle_schedule().first_cycle()))
        .chain(mem_first)
        .min()
        .unwrap_or(0)
        .min(0);
    let limit = opts.max_cycles.unwrap_or(2 * set.completion + 1024);
    let mut t = start;
    let mut last_active = start;
    loop {
        let finished = sources.iter().all(|e| e.ctl.id.done)
            && sinks.iter().all(|e| e.ctl.id.done)
            && stages.iter().all(|s| s.ctl.id.done && s.pending.is_empty())
            && bufs.iter().all(|b| b.mems.iter().all(|m| m.done()));
        if finished {
            break;
        }
        if t >= limit {
            return Err(Error::Timeout {
                cycles: t,
                sinks: sinks.iter().filter(|e| !e.ctl.id.done).map(|e| e.port.clone()).collect(),
            });
        }
        // phase A: values visible during cycle t
        for b in &mut bufs {
            b.src = None;
            for m in &mut b.mems {
                m.tb_reads(t, &mut trace)?;
            }
        }
        for e in &mut sources {
            if e.ctl.fires(t) {
                let p = e.ctl.point();
                let el: Vec<i64> = e.access.iter().map(|a| a.eval(&p)).collect();
                let decl = &prog.buffers[e.decl];
                let v = inputs[&decl.name][decl.flat(&el).expect("in bounds")];
                bufs[e.buf].src = Some(v);
                trace.push(TraceRow::new(t, &decl.name, &e.port, "source", None, Some(v)));
                e.ctl.advance();
                last_active = t;
            }
        }
        for (si, st) in stages.iter_mut().enumerate() {
            let s = &prog.stages[si];
            while st.pending.front().is_some_and(|p| p.0 <= t) {
                let (c, v) = st.pending.pop_front().expect("non-empty");
                if c < t {
                    return Err(Error::sim(t, &s.name, "missed write-back slot"));
                }
                bufs[st.target].src = Some(v);
                last_active = t;
            }
            if !st.ctl.fires(t) {
                continue;
            }
            let p = st.ctl.point();
            let first_red = !st.first_red.is_empty() && st.first_red.iter().all(|&i| p[i] == s.loops[i].lo);
            let last = st.last_rolled.iter().all(|&i| p[i] == s.loops[i].lo + s.loops[i].extent - 1);
            let mut k = 0;
            let mut missing = None;
            for (n, stmt) in s.body.iter().enumerate() {
                let v = stmt.value.eval_with(&mut |_| {
                    let (b, port) = &st.reads[k];
                    k += 1;
                    bufs[*b].port(port, t).unwrap_or_else(|| {
                        missing.get_or_insert_with(|| port.clone());
                        0
                    })
                });
                st.reg = match stmt.kind {
                    StmtKind::Assign => v,
                    StmtKind::Accumulate => {
                        let earlier = s.body[..n].iter().any(|o| o.target.buffer == stmt.target.buffer);
                        let base = if first_red && !earlier { 0 } else { st.reg };
                        base.wrapping_add(v)
                    }
                };
            }
            if let Some(port) = missing {
                return Err(Error::sim(t, port, format!("no valid data for stage {} at {:?}", s.name, p)));
            }
            if last {
                if s.latency == 0 {
                    bufs[st.target].src = Some(st.reg);
                    last_active = t;
                } else {
                    st.pending.push_back((t + s.latency, st.reg));
                }
            }
            st.ctl.advance();
        }
        for e in &mut sinks {
            if e.ctl.fires(t) {
                let v = bufs[e.buf].port(&e.port, t).ok_or_else(|| Error::sim(t, &e.port, "sink has no valid data"))?;
                let p = e.ctl.point();
                let el: Vec<i64> = e.access.iter().map(|a| a.eval(&p)).collect();
                let decl = &prog.buffers[e.decl];
                let f = decl.flat(&el[..decl.dims.len()]).expect("in bounds");
                outputs.get_mut(&decl.name).expect("output")[f] = v;
                trace.push(TraceRow::new(t, &decl.name, &e.port, "sink", Some(f as i64), Some(v)));
                e.ctl.advance();
                last_active = t;
            }
        }
        // phase B: commit
        for b in &mut bufs {
            let sr_in: Vec<Option<u16>> = b.srs.iter().map(|s| b.node(s.input, t)).collect();
            let mem_in: Vec<Option<u16>> = b.mems.iter().map(|m| m.cfg.input.and_then(|n| b.node(n, t))).collect();
            for (m, v) in b.mems.iter_mut().zip(mem_in) {
                m.commit(t, v, &mut trace)?;
            }
            for (s, v) in b.srs.iter_mut().zip(sr_in) {
                s.regs.push_back(v);
                s.regs.pop_front();
            }
        }
        t += 1;
    }
    Ok(SimResult {
        outputs,
        cycles: last_active + 1,
        memory_accesses: bufs.iter().flat_map(|b| &b.mems).map(|m| m.accesses).sum(),
        shift_register_words: design.buffers.iter().flat_map(|b| &b.shift_registers).map(|s| s.depth).sum(),
        trace,
    })
}

/// Output of one read port: the cycle a value is presented and the value.
pub type PortStream = Vec<(i64, u16)>;

/// Drives a single memory with `input` (cycle -> value presented to its
/// write port) and collects what each read port presents.
pub fn run_storage(cfg: &MemConfig, input: &BTreeMap<i64, u16>, opts: &SimOptions) -> Result<(Vec<PortStream>, Trace)> {
    let mut m = MemState::new(cfg);
    let mut trace = Trace { enabled: opts.trace, rows: vec![] };
    let mut outs: Vec<PortStream> = vec![vec![]; cfg.reads.len()];
    let fills = cfg.vector.iter().flat_map(|v| &v.fills);
    let starts = cfg.reads.iter().chain(fills).chain(&cfg.write).map(|c| c.schedule.range(&c.domain).map_or(0, |r| r.0));
    let mut t = starts.min().unwrap_or(0);
    let limit = opts.max_cycles.unwrap_or(i64::MAX);
    while !m.done() {
        if t >= limit {
            return Err(Error::Timeout { cycles: t, sinks: cfg.reads.iter().map(|r| r.port.clone()).collect() });
        }
        m.tb_reads(t, &mut trace)?;
        let v = input.get(&t).copied();
        for (j, o) in outs.iter_mut().enumerate() {
            let Some((c, a, val)) = m.out[j] else { continue };
            if c != t {
                continue;
            }
            let val = if cfg.forward && m.write_addr(t) == Some(a) { v } else { val };
            let val = val.ok_or_else(|| Error::sim(t, &cfg.reads[j].port, "read of unwritten address"))?;
            o.push((t, val));
        }
        m.commit(t, v, &mut trace)?;
        t += 1;
    }
    // a dual-port read issued in the final cycle lands one cycle later
    for (j, o) in outs.iter_mut().enumerate() {
        if let Some((c, _, Some(val))) = m.out[j] {
            if c == t {
                o.push((t, val));
            }
        }
    }
    Ok((outs, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_buffers;
    use crate::frontend::parse_program;
    use crate::golden;
    use crate::mapping::{map_design, HardwareSpec};
    use crate::scheduler::{schedule_sequential, schedule_stencil, tests::BB};

    fn run(seq: bool, hw: HardwareSpec) -> (SimResult, ScheduleSet) {
        let p = parse_program(BB).unwrap();
        let s = if seq { schedule_sequential(&p).unwrap() } else { schedule_stencil(&p).unwrap() };
        let ubs = extract_buffers(&p, &s).unwrap();
        let d = map_design(&p, &s, &ubs, &hw).unwrap();
        let img: Vec<u16> = (0..4096u32).map(|i| (i * 7 % 251) as u16).collect();
        let inputs = BTreeMap::from([("input".to_string(), img)]);
        let r = simulate(&p, &s, &ubs, &d, &inputs, &SimOptions { trace: true, ..Default::default() }).unwrap();
        let g = golden::run(&p, &inputs).unwrap();
        let rep = golden::diff_outputs(&p, &g, &r.outputs).unwrap();
        assert!(rep.pass, "{rep}");
        (r, s)
    }

    #[test]
    fn stencil_matches_golden_on_both_targets() {
        for hw in [HardwareSpec::dual_port(512), HardwareSpec::wide_fetch(512, 4), HardwareSpec::dual_port(32)] {
            let (r, s) = run(false, hw);
            assert_eq!(r.cycles, s.completion);
            assert!(r.trace.to_csv().starts_with("cycle,unit,port,op,address,data\n"));
        }
    }

    #[test]
    fn sequential_matches_golden() {
        let (r, s) = run(true, HardwareSpec::dual_port(512));
        assert_eq!(r.cycles, s.completion);
    }
}
