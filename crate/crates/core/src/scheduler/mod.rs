//! Cycle-level scheduling: sequential baseline, fused stencil pipelines and
//! coarse-grained DNN pipelines.
//!
//! Timing convention: a stage's `op` schedule gives the cycle its reads
//! happen; the value leaves the compute pipeline `latency` cycles later,
//! which is the cycle of the write. A read may observe a write in the same
//! cycle (a wire), so legality is `write_cycle <= read_cycle`.

mod dnn;
mod fuse;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::affine::{AffineExpr, BoxDomain, CycleSchedule};
use crate::error::{Error, Result};
use crate::frontend::{BufferKind, Program, Stage};

pub use dnn::{coarse_pipeline, schedule_dnn};
pub use fuse::schedule_stencil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Sequential,
    Stencil,
    Dnn,
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PipelineKind::Sequential => "sequential",
            PipelineKind::Stencil => "stencil",
            PipelineKind::Dnn => "dnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stage: String,
    pub domain: BoxDomain,
    /// Cycle at which the reads of each iteration happen.
    pub op: AffineExpr,
    pub latency: i64,
    /// Domain of the final writes (rolled reduction loops removed).
    pub write_domain: BoxDomain,
    /// Cycle of the final write of each output point.
    pub write: AffineExpr,
}

impl StageSchedule {
    pub fn new(stage: &Stage, op: AffineExpr) -> StageSchedule {
        let mut write = op.clone();
        for l in stage.loops.iter().filter(|l| l.reduce) {
            write = write.substitute(&l.name, &AffineExpr::constant(l.lo + l.extent - 1));
        }
        StageSchedule {
            stage: stage.name.clone(),
            domain: stage.domain(),
            op,
            latency: stage.latency,
            write_domain: stage.write_domain(),
            write: write.offset(stage.latency),
        }
    }

    pub fn op_schedule(&self) -> CycleSchedule {
        CycleSchedule { domain: self.domain.clone(), expr: self.op.clone() }
    }

    pub fn write_schedule(&self) -> CycleSchedule {
        CycleSchedule { domain: self.write_domain.clone(), expr: self.write.clone() }
    }

    pub fn first_cycle(&self) -> i64 {
        self.op_schedule().first_cycle()
    }

    pub fn last_write(&self) -> i64 {
        self.write_schedule().last_cycle()
    }

    pub fn shifted(&self, k: i64) -> StageSchedule {
        StageSchedule { op: self.op.offset(k), write: self.write.offset(k), ..self.clone() }
    }
}

/// Schedule of the source stream feeding an input buffer; each element is
/// pushed once, iterating the buffer's own domain (`d0` innermost).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSchedule {
    pub buffer: String,
    pub domain: BoxDomain,
    pub schedule: AffineExpr,
}

impl InputSchedule {
    pub fn cycle_schedule(&self) -> CycleSchedule {
        CycleSchedule { domain: self.domain.clone(), expr: self.schedule.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub kind: PipelineKind,
    pub stages: Vec<StageSchedule>,
    pub inputs: Vec<InputSchedule>,
    pub coarse_ii: Option<i64>,
    /// One past the last write cycle.
    pub completion: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ScheduleSet {
    pub fn new(kind: PipelineKind, stages: Vec<StageSchedule>, inputs: Vec<InputSchedule>) -> ScheduleSet {
        let completion = stages
            .iter()
            .map(|s| s.last_write() + 1)
            .chain(inputs.iter().map(|i| i.cycle_schedule().last_cycle() + 1))
            .max()
            .unwrap_or(0);
        ScheduleSet { kind, stages, inputs, coarse_ii: None, completion, warnings: Vec::new() }
    }

    pub fn stage(&self, name: &str) -> Option<&StageSchedule> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn input(&self, buffer: &str) -> Option<&InputSchedule> {
        self.inputs.iter().find(|s| s.buffer == buffer)
    }
}

/// `stencil` iff every reduction loop is unrolled.
pub fn classify_pipeline(prog: &Program) -> PipelineKind {
    if prog.stages.iter().all(|s| !s.has_rolled_reduction()) {
        PipelineKind::Stencil
    } else {
        PipelineKind::Dnn
    }
}

/// Dense pipelined schedule of `stage` at initiation interval `ii`, first
/// iteration at cycle 0.
pub fn schedule_stage(stage: &Stage, ii: i64) -> Result<CycleSchedule> {
    if ii < 1 {
        return Err(Error::Schedule(format!("stage {}: initiation interval {ii} < 1", stage.name)));
    }
    let dom = stage.domain();
    Ok(CycleSchedule { expr: dense(&dom, ii), domain: dom })
}

/// Row-major dense schedule over `dom` with innermost stride `ii`.
pub(crate) fn dense(dom: &BoxDomain, ii: i64) -> AffineExpr {
    let mut e = AffineExpr::constant(0);
    let mut stride = ii;
    for d in dom.dims.iter().rev() {
        e.add_term(&d.name, stride);
        e = e.offset(-stride * d.lo);
        stride *= d.extent;
    }
    e
}

pub(crate) fn input_streams(prog: &Program, ii: i64) -> Vec<InputSchedule> {
    prog.inputs()
        .map(|b| {
            let domain = b.domain();
            InputSchedule { buffer: b.name.clone(), schedule: dense(&domain, ii), domain }
        })
        .collect()
}

/// Per-element cycle of the most recent write, for offset computation.
pub(crate) struct WriteTable<'a> {
    prog: &'a Program,
    cycles: HashMap<String, Vec<i64>>,
}

impl<'a> WriteTable<'a> {
    pub(crate) fn new(prog: &'a Program) -> Self {
        WriteTable { prog, cycles: HashMap::new() }
    }

    fn slot(&mut self, buffer: &str) -> &mut Vec<i64> {
        let len = self.prog.buffer(buffer).map(|b| b.len()).unwrap_or(0);
        self.cycles.entry(buffer.to_string()).or_insert_with(|| vec![i64::MIN; len])
    }

    pub(crate) fn record_input(&mut self, inp: &InputSchedule) -> Result<()> {
        let b = self.prog.buffer(&inp.buffer).unwrap().clone();
        let sched = inp.schedule.bind(&inp.domain)?;
        let slot = self.slot(&inp.buffer);
        for p in inp.domain.points() {
            slot[b.flat(&b.element_at(&p)).unwrap()] = sched.eval(&p);
        }
        Ok(())
    }

    pub(crate) fn record_stage(&mut self, stage: &Stage, s: &StageSchedule) -> Result<()> {
        let sched = s.write.bind(&s.write_domain)?;
        for st in &stage.body {
            let b = self.prog.buffer(&st.target.buffer).unwrap().clone();
            let idx = st.target.idx.iter().map(|e| e.bind(&s.write_domain)).collect::<Result<Vec<_>>>()?;
            let slot = self.slot(&b.name);
            for p in s.write_domain.points() {
                let el: Vec<i64> = idx.iter().map(|e| e.eval(&p)).collect();
                slot[b.flat(&el).unwrap()] = sched.eval(&p);
            }
        }
        Ok(())
    }

    /// Smallest constant `k` such that `base + k` reads every element no
    /// earlier than it is written; `None` without recorded producers.
    pub(crate) fn required_offset(&self, stage: &Stage, dom: &BoxDomain, base: &AffineExpr) -> Result<Option<i64>> {
        let base = base.bind(dom)?;
        let mut reads = Vec::new();
        for st in &stage.body {
            for r in st.value.reads() {
                let Some(slot) = self.cycles.get(&r.buffer) else { continue };
                let b = self.prog.buffer(&r.buffer).unwrap();
                let idx = r.idx.iter().map(|e| e.bind(dom)).collect::<Result<Vec<_>>>()?;
                reads.push((b, slot, idx));
            }
        }
        let mut need: Option<i64> = None;
        for p in dom.points() {
            let t = base.eval(&p);
            for (b, slot, idx) in &reads {
                let el: Vec<i64> = idx.iter().map(|e| e.eval(&p)).collect();
                let w = slot[b.flat(&el).unwrap()];
                if w != i64::MIN {
                    need = Some(need.map_or(w - t, |n| n.max(w - t)));
                }
            }
        }
        Ok(need)
    }
}

/// Stages back to back, each dense at II=1; input streams dense from 0.
pub fn schedule_sequential(prog: &Program) -> Result<ScheduleSet> {
    let inputs = input_streams(prog, 1);
    let mut table = WriteTable::new(prog);
    for i in &inputs {
        table.record_input(i)?;
    }
    let mut stages = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < prog.stages.len() {
        let g = prog.stages[i].group;
        let end = match g {
            None => i + 1,
            Some(_) => (i..prog.stages.len()).find(|&j| prog.stages[j].group != g).unwrap_or(prog.stages.len()),
        };
        let unit = &prog.stages[i..end];
        let outer = unit[0].outer;
        // each stage starts once the previous one has finished writing
        let (inner, _, total) = dnn::layout(unit, outer, |n, l| n + l);
        let coarse = dnn::coarse_term(&unit[0].loops[..outer], total);
        let bases: Vec<AffineExpr> = inner.iter().map(|e| coarse.add(e)).collect();
        let mut need = 0;
        for (s, e) in unit.iter().zip(&bases) {
            need = need.max(table.required_offset(s, &s.domain(), e)?.unwrap_or(0));
        }
        let k = start.max(need);
        for (s, e) in unit.iter().zip(&bases) {
            let sched = StageSchedule::new(s, e.offset(k));
            table.record_stage(s, &sched)?;
            start = start.max(sched.last_write() + 1);
            stages.push(sched);
        }
        i = end;
    }
    Ok(ScheduleSet::new(PipelineKind::Sequential, stages, inputs))
}

/// Dispatches on [`classify_pipeline`].
pub fn schedule_optimized(prog: &Program) -> Result<ScheduleSet> {
    match classify_pipeline(prog) {
        PipelineKind::Dnn => schedule_dnn(prog),
        _ => schedule_stencil(prog),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    /// Read before the value it needs is written.
    ReadBeforeWrite,
    /// A write lands in a double-buffered slot before its old value was read.
    Overwrite,
    /// A stage issues two iterations in one cycle.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub buffer: String,
    pub stage: String,
    pub element: Vec<i64>,
    pub producer_cycle: i64,
    pub consumer_cycle: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalityReport {
    pub ok: bool,
    pub checked: usize,
    /// Worst violation (largest lateness; earliest in program order on ties).
    pub violation: Option<Violation>,
    /// Read slack (read cycle - write cycle) -> count.
    pub slack_histogram: BTreeMap<i64, usize>,
}

impl std::fmt::Display for LegalityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.violation {
            None => write!(f, "legal: {} dependences checked", self.checked),
            Some(v) => write!(
                f,
                "illegal ({:?}): {}{:?} in stage {}: producer cycle {}, consumer cycle {}",
                v.kind, v.buffer, v.element, v.stage, v.producer_cycle, v.consumer_cycle
            ),
        }
    }
}

#[derive(Clone, Copy)]
struct Slot {
    write: i64,
    reads_cur: i64,
    reads_prev: i64,
}

/// Replays the program in its sequential order, pairing each read with the
/// latest preceding write of that element and checking the cycles.
pub fn verify_schedule(prog: &Program, set: &ScheduleSet) -> LegalityReport {
    let mut rep = LegalityReport { ok: true, checked: 0, violation: None, slack_histogram: BTreeMap::new() };
    let mut worst = i64::MIN;
    let mut flag = |rep: &mut LegalityReport, v: Violation, lateness: i64| {
        rep.ok = false;
        if lateness > worst {
            worst = lateness;
            rep.violation = Some(v);
        }
    };
    let empty = Slot { write: i64::MIN, reads_cur: i64::MIN, reads_prev: i64::MIN };
    let mut mem: HashMap<&str, Vec<Slot>> =
        prog.buffers.iter().filter(|b| b.kind != BufferKind::Const).map(|b| (b.name.as_str(), vec![empty; b.len()])).collect();
    let missing = |what: &str| LegalityReport {
        ok: false,
        checked: 0,
        violation: Some(Violation {
            kind: ViolationKind::ReadBeforeWrite,
            buffer: what.to_string(),
            stage: String::new(),
            element: vec![],
            producer_cycle: 0,
            consumer_cycle: 0,
        }),
        slack_histogram: BTreeMap::new(),
    };
    for b in prog.inputs() {
        let Some(inp) = set.input(&b.name) else { return missing(&b.name) };
        let Ok(sched) = inp.schedule.bind(&inp.domain) else { return missing(&b.name) };
        let slots = mem.get_mut(b.name.as_str()).unwrap();
        for p in inp.domain.points() {
            slots[b.flat(&b.element_at(&p)).unwrap()].write = sched.eval(&p);
        }
    }
    let mut per_stage = Vec::new();
    for s in &prog.stages {
        let Some(ss) = set.stage(&s.name) else { return missing(&s.name) };
        if !ss.op_schedule().is_injective() {
            let v = Violation {
                kind: ViolationKind::Overlap,
                buffer: s.target().to_string(),
                stage: s.name.clone(),
                element: vec![],
                producer_cycle: 0,
                consumer_cycle: 0,
            };
            flag(&mut rep, v, i64::MAX);
        }
        let (Ok(op), Ok(wr)) = (ss.op.bind(&ss.domain), ss.write.bind(&ss.write_domain)) else {
            return missing(&s.name);
        };
        per_stage.push((ss, op, wr));
    }
    let _ = prog.visit(&mut |si, p| {
        let s = &prog.stages[si];
        let (ss, op, wr) = &per_stage[si];
        let dom = &ss.domain;
        let t = op.eval(p);
        for st in &s.body {
            for r in st.value.reads() {
                let Some(slots) = mem.get_mut(r.buffer.as_str()) else { continue };
                let el: Vec<i64> = r.idx.iter().map(|e| e.eval(dom, p).unwrap()).collect();
                let b = prog.buffer(&r.buffer).unwrap();
                let slot = &mut slots[b.flat(&el).unwrap()];
                rep.checked += 1;
                *rep.slack_histogram.entry(t - slot.write).or_insert(0) += 1;
                if slot.write > t {
                    let v = Violation {
                        kind: ViolationKind::ReadBeforeWrite,
                        buffer: r.buffer.clone(),
                        stage: s.name.clone(),
                        element: el,
                        producer_cycle: slot.write,
                        consumer_cycle: t,
                    };
                    flag(&mut rep, v, slot.write - t);
                } else {
                    slot.reads_cur = slot.reads_cur.max(t);
                }
            }
        }
        let last_rolled = s
            .loops
            .iter()
            .zip(p)
            .all(|(l, v)| !(l.reduce && !l.unroll) || *v == l.lo + l.extent - 1);
        if !last_rolled {
            return Ok(());
        }
        let wp: Vec<i64> = s.loops.iter().zip(p).filter(|(l, _)| !l.reduce).map(|(_, v)| *v).collect();
        let w = wr.eval(&wp);
        for st in &s.body {
            let el: Vec<i64> = st.target.idx.iter().map(|e| e.eval(dom, p).unwrap()).collect();
            let b = prog.buffer(&st.target.buffer).unwrap();
            let slot = &mut mem.get_mut(b.name.as_str()).unwrap()[b.flat(&el).unwrap()];
            if slot.reads_prev > w {
                let v = Violation {
                    kind: ViolationKind::Overwrite,
                    buffer: b.name.clone(),
                    stage: s.name.clone(),
                    element: el,
                    producer_cycle: w,
                    consumer_cycle: slot.reads_prev,
                };
                flag(&mut rep, v, slot.reads_prev - w);
            }
            *slot = Slot { write: w, reads_cur: i64::MIN, reads_prev: slot.reads_cur };
        }
        Ok(())
    });
    rep
}
