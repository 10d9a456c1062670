use crate::affine::{AffineExpr, Dim};
use crate::error::{Error, Result};
use crate::frontend::Program;

use super::{InputSchedule, PipelineKind, ScheduleSet, StageSchedule, WriteTable};

struct Member {
    name: String,
    /// Outermost first.
    loops: Vec<Dim>,
    /// Fused level for each loop (the innermost one for a split loop).
    level: Vec<usize>,
    /// Whether the loop spans several fused levels whose extents multiply
    /// to its own.
    split: Vec<bool>,
}

/// Fuses all stages (and input streams) into one loop nest issued at II=1,
/// then delays each stage by the smallest offset that keeps every read at
/// or after its write.
pub fn schedule_stencil(prog: &Program) -> Result<ScheduleSet> {
    let mut members: Vec<Member> = prog
        .inputs()
        .map(|b| Member { name: b.name.clone(), loops: b.domain().dims, level: vec![], split: vec![] })
        .chain(prog.stages.iter().map(|s| Member { name: s.name.clone(), loops: s.domain().dims, level: vec![], split: vec![] }))
        .collect();
    if prog.stages.iter().any(|s| s.has_rolled_reduction()) {
        return Err(Error::Schedule("stencil fusion needs every reduction loop unrolled".into()));
    }
    let skel = (0..members.len())
        .max_by_key(|&i| {
            let m = &members[i];
            (m.loops.len(), m.loops.iter().map(|d| d.extent).product::<i64>(), std::cmp::Reverse(i))
        })
        .ok_or_else(|| Error::Schedule("empty program".into()))?;
    let mut extents: Vec<i64> = members[skel].loops.iter().map(|d| d.extent).collect();
    let n = extents.len();
    for m in &mut members {
        let mut level = vec![0; m.loops.len()];
        let mut split = vec![false; m.loops.len()];
        if m.loops.len() == n {
            level = (0..n).collect();
        } else {
            let mut i = n;
            for j in (0..m.loops.len()).rev() {
                loop {
                    if i == 0 {
                        return Err(Error::Schedule(format!(
                            "stage {} cannot be embedded in the fused loop nest",
                            m.name
                        )));
                    }
                    i -= 1;
                    if extents[i] >= m.loops[j].extent || i == j {
                        level[j] = i;
                        break;
                    }
                    // a loop may also cover several consecutive levels
                    let mut prod = extents[i];
                    let mut k = i;
                    while prod < m.loops[j].extent && k > j {
                        k -= 1;
                        prod *= extents[k];
                    }
                    if prod == m.loops[j].extent {
                        level[j] = i;
                        split[j] = true;
                        i = k;
                        break;
                    }
                }
            }
        }
        m.level = level;
        m.split = split;
    }
    for m in &members {
        for ((d, &l), &sp) in m.loops.iter().zip(&m.level).zip(&m.split) {
            if !sp {
                extents[l] = extents[l].max(d.extent);
            }
        }
    }
    let mut inner = vec![1i64; n];
    for i in (0..n.saturating_sub(1)).rev() {
        inner[i] = inner[i + 1] * extents[i + 1];
    }
    let mut base = Vec::with_capacity(members.len());
    for m in &members {
        let mut e = AffineExpr::constant(0);
        for ((d, &l), &sp) in m.loops.iter().zip(&m.level).zip(&m.split) {
            let big = extents[l];
            let rate = if sp || big < 2 * d.extent {
                1
            } else if big % d.extent == 0 {
                big / d.extent
            } else {
                return Err(Error::Schedule(format!(
                    "{}: loop {} of extent {} has a non-integer rate against fused extent {big}",
                    m.name, d.name, d.extent
                )));
            };
            let c = rate * inner[l];
            e.add_term(&d.name, c);
            e = e.offset(-c * d.lo);
        }
        base.push(e);
    }

    let n_in = prog.inputs().count();
    let inputs: Vec<InputSchedule> = members[..n_in]
        .iter()
        .zip(&base)
        .map(|(m, e)| InputSchedule {
            buffer: m.name.clone(),
            domain: prog.buffer(&m.name).unwrap().domain(),
            schedule: e.clone(),
        })
        .collect();
    let mut table = WriteTable::new(prog);
    for i in &inputs {
        table.record_input(i)?;
    }
    let mut stages = Vec::new();
    for (s, e) in prog.stages.iter().zip(&base[n_in..]) {
        let dom = s.domain();
        let k = table.required_offset(s, &dom, e)?.unwrap_or(0).max(0);
        let sched = StageSchedule::new(s, e.offset(k));
        table.record_stage(s, &sched)?;
        stages.push(sched);
    }
    Ok(ScheduleSet::new(PipelineKind::Stencil, stages, inputs))
}
