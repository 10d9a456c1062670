use crate::affine::{AffineExpr, BoxDomain};
use crate::error::{Error, Result};
use crate::frontend::{Loop, Program, Stage};

use super::{dense, input_streams, schedule_sequential, verify_schedule, PipelineKind, ScheduleSet, StageSchedule, WriteTable};

/// Loops of the single top-level group enclosing every stage, if any.
pub(crate) fn coarse_loops(prog: &Program) -> Vec<Loop> {
    match prog.stages.first() {
        Some(first) if first.group.is_some() && prog.stages.iter().all(|s| s.group == first.group) => {
            first.loops[..first.outer].to_vec()
        }
        _ => vec![],
    }
}

/// `stride * (linear index of the coarse iteration)`.
pub(crate) fn coarse_term(coarse: &[Loop], stride: i64) -> AffineExpr {
    let mut e = AffineExpr::constant(0);
    let mut stride = stride;
    for l in coarse.iter().rev() {
        e.add_term(&l.name, stride);
        e = e.offset(-stride * l.lo);
        stride *= l.extent;
    }
    e
}

/// Per-stage dense inner schedules laid out back to back, with `gap(n, L)`
/// cycles reserved for a stage of `n` inner iterations and latency `L`.
/// Returns the schedules and the total duration.
pub(crate) fn layout(stages: &[Stage], outer: usize, gap: impl Fn(i64, i64) -> i64) -> (Vec<AffineExpr>, Vec<i64>, i64) {
    let mut exprs = Vec::new();
    let mut durs = Vec::new();
    let mut total = 0;
    for s in stages {
        let dom = BoxDomain { dims: s.domain().dims[outer..].to_vec() };
        let d = gap(dom.len() as i64, s.latency);
        exprs.push(dense(&dom, 1).offset(total));
        durs.push(d);
        total += d;
    }
    (exprs, durs, total)
}

/// Coarse-grained pipeline with iterations every `ii` cycles and stage `k`
/// starting `starts[k]` cycles into each iteration, running densely.
pub fn coarse_pipeline(prog: &Program, ii: i64, starts: &[i64]) -> Result<ScheduleSet> {
    let coarse = coarse_loops(prog);
    if coarse.is_empty() || starts.len() != prog.stages.len() {
        return Err(Error::Schedule("coarse pipeline needs one enclosing loop group and a start per stage".into()));
    }
    let coarse_expr = coarse_term(&coarse, ii);
    let stages = prog
        .stages
        .iter()
        .zip(starts)
        .map(|(s, &k)| {
            let dom = BoxDomain { dims: s.domain().dims[coarse.len()..].to_vec() };
            StageSchedule::new(s, coarse_expr.add(&dense(&dom, 1)).offset(k))
        })
        .collect();
    let mut set = ScheduleSet::new(PipelineKind::Dnn, stages, input_streams(prog, 1));
    set.coarse_ii = Some(ii);
    Ok(set)
}

/// Coarse-grained pipeline: stages run back to back inside one iteration
/// of the shared outer loops, and iterations start every `II` cycles. `II`
/// is the smallest value found by binary search that keeps the schedule
/// legal under double buffering, and never below the longest stage.
pub fn schedule_dnn(prog: &Program) -> Result<ScheduleSet> {
    if !prog.stages.iter().any(|s| s.has_rolled_reduction()) {
        let mut s = schedule_sequential(prog)?;
        s.warnings.push("no rolled reduction stage; using the sequential schedule".into());
        return Ok(s);
    }
    let coarse = coarse_loops(prog);
    if coarse.is_empty() {
        let mut s = schedule_sequential(prog)?;
        s.warnings.push("stages do not share one enclosing loop group; using the sequential schedule".into());
        return Ok(s);
    }
    let (inner, durs, total) = layout(&prog.stages, coarse.len(), |n, l| n - 1 + l.max(1));
    let longest = durs.iter().copied().max().unwrap_or(1);
    let build = |ii: i64| -> Result<ScheduleSet> {
        let coarse_expr = coarse_term(&coarse, ii);
        let mut table = WriteTable::new(prog);
        for i in &input_streams(prog, 1) {
            table.record_input(i)?;
        }
        let mut lag = 0;
        for (s, e) in prog.stages.iter().zip(&inner) {
            if let Some(k) = table.required_offset(s, &s.domain(), &coarse_expr.add(e))? {
                lag = lag.max(k);
            }
        }
        let starts: Vec<i64> = inner.iter().map(|e| e.constant + lag).collect();
        coarse_pipeline(prog, ii, &starts)
    };
    let feasible = |ii: i64| -> Result<bool> { Ok(verify_schedule(prog, &build(ii)?).ok) };
    if !feasible(total)? {
        let mut s = schedule_sequential(prog)?;
        s.warnings.push("no legal coarse-grained pipeline; using the sequential schedule".into());
        return Ok(s);
    }
    let (mut lo, mut hi) = (longest.min(total), total);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    build(lo)
}
