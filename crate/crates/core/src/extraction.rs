//! Unified buffer extraction: one buffer per program array, one port per
//! memory reference.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::affine::{dependence_distance, max_live_values, AffineExpr, Direction, PortSpec};
use crate::error::{Error, Result};
use crate::frontend::{BufferKind, Program};
use crate::scheduler::ScheduleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortRole {
    /// Source stream of a program input.
    Stream,
    /// Final write of a stage.
    Write,
    /// Read by a stage.
    Read,
    /// Program output drain.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    #[serde(flatten)]
    pub spec: PortSpec,
    pub role: PortRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    /// Position among the stage's reads, in evaluation order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    /// Constant cycle distance from the input port, when one exists.
    #[serde(default)]
    pub distance: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedBuffer {
    pub name: String,
    pub kind: BufferKind,
    pub logical_dims: Vec<i64>,
    /// Logical dims, plus one per enclosing group loop when the buffer is
    /// rewritten on every group iteration.
    pub dims: Vec<i64>,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub min_capacity: usize,
    /// Contents of a read-only buffer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rom: Option<Vec<u16>>,
}

impl UnifiedBuffer {
    pub fn write_port(&self) -> Option<&Port> {
        self.inputs.first()
    }

    pub fn reads(&self) -> impl Iterator<Item = &Port> {
        self.outputs.iter().filter(|p| p.role == PortRole::Read)
    }

    pub fn sink(&self) -> Option<&Port> {
        self.outputs.iter().find(|p| p.role == PortRole::Sink)
    }

    pub fn logical_size(&self) -> usize {
        self.logical_dims.iter().product::<i64>() as usize
    }
}

/// Builds one unified buffer per program array that is written or read.
pub fn extract_buffers(prog: &Program, set: &ScheduleSet) -> Result<Vec<UnifiedBuffer>> {
    let mut out = Vec::new();
    for b in &prog.buffers {
        let mut ub = UnifiedBuffer {
            name: b.name.clone(),
            kind: b.kind,
            logical_dims: b.dims.clone(),
            dims: b.dims.clone(),
            inputs: vec![],
            outputs: vec![],
            min_capacity: 0,
            rom: b.data.clone(),
        };
        let mut extra: Vec<AffineExpr> = Vec::new();
        let mut group = None;
        if b.kind == BufferKind::Input {
            let inp = set
                .input(&b.name)
                .ok_or_else(|| Error::Extraction(format!("input {} has no source schedule", b.name)))?;
            ub.inputs.push(port(
                format!("{}.in0", b.name),
                Direction::Input,
                PortSpec::new("", Direction::Input, inp.domain.clone(), b.identity_access(), inp.schedule.clone())?,
                PortRole::Stream,
                None,
                None,
            ));
        }
        if let Some(wi) = prog.writer_of(&b.name) {
            let s = &prog.stages[wi];
            let ss = set.stage(&s.name).ok_or_else(|| Error::Extraction(format!("stage {} is unscheduled", s.name)))?;
            let targets: Vec<_> = s.body.iter().filter(|st| st.target.buffer == b.name).collect();
            if targets.len() > 1 && targets.iter().any(|t| t.target != targets[0].target) {
                return Err(Error::Extraction(format!("stage {} writes {} through several references", s.name, b.name)));
            }
            let mut access = targets[0].target.idx.clone();
            let spec = PortSpec::new("", Direction::Input, ss.write_domain.clone(), access.clone(), ss.write.clone())?;
            let distinct: HashSet<Vec<i64>> = spec.events().into_iter().map(|e| e.element).collect();
            if distinct.len() < ss.write_domain.len() {
                if s.group.is_none() || s.outer == 0 {
                    return Err(Error::Extraction(format!(
                        "stage {} rewrites elements of {} outside a loop group",
                        s.name, b.name
                    )));
                }
                for l in &s.loops[..s.outer] {
                    extra.push(AffineExpr::var(&l.name).offset(-l.lo));
                    ub.dims.push(l.extent);
                }
                group = s.group;
                access.extend(extra.iter().cloned());
            }
            ub.inputs.push(port(
                format!("{}.in{}", b.name, ub.inputs.len()),
                Direction::Input,
                PortSpec { access, ..spec },
                PortRole::Write,
                Some(s.name.clone()),
                None,
            ));
        }
        for s in &prog.stages {
            let mut reference = 0;
            let ss = set.stage(&s.name).ok_or_else(|| Error::Extraction(format!("stage {} is unscheduled", s.name)))?;
            for st in &s.body {
                for r in st.value.reads() {
                    if r.buffer == b.name {
                        if !extra.is_empty() && s.group != group {
                            return Err(Error::Extraction(format!(
                                "{} is rewritten per group iteration but read by stage {} outside the group",
                                b.name, s.name
                            )));
                        }
                        let mut access = r.idx.clone();
                        access.extend(extra.iter().cloned());
                        let spec = PortSpec::new("", Direction::Output, ss.domain.clone(), access, ss.op.clone())?;
                        ub.outputs.push(port(
                            format!("{}.out{}", b.name, ub.outputs.len()),
                            Direction::Output,
                            spec,
                            PortRole::Read,
                            Some(s.name.clone()),
                            Some(reference),
                        ));
                    }
                    reference += 1;
                }
            }
        }
        if b.kind == BufferKind::Output {
            let w = ub.inputs.first().ok_or_else(|| Error::Extraction(format!("output {} is never written", b.name)))?;
            let mut sink = w.clone();
            sink.spec.id = format!("{}.sink", b.name);
            sink.spec.direction = Direction::Output;
            sink.role = PortRole::Sink;
            sink.reference = None;
            ub.outputs.push(sink);
        }
        if ub.inputs.is_empty() && ub.outputs.is_empty() {
            continue;
        }
        if ub.inputs.is_empty() && b.kind != BufferKind::Const {
            return Err(Error::Extraction(format!("buffer {} is read but never written", b.name)));
        }
        ub.min_capacity = match ub.inputs.first() {
            Some(w) => {
                let reads: Vec<PortSpec> = ub.outputs.iter().map(|p| p.spec.clone()).collect();
                max_live_values(&w.spec, &reads)?
            }
            None => b.len(),
        };
        out.push(annotate_distances(ub));
    }
    Ok(out)
}

fn port(
    id: String,
    direction: Direction,
    spec: PortSpec,
    role: PortRole,
    stage: Option<String>,
    reference: Option<usize>,
) -> Port {
    Port { spec: PortSpec { id, direction, ..spec }, role, stage, reference, distance: None }
}

/// Sets each output port's constant distance to the input port, if any.
pub fn annotate_distances(mut ub: UnifiedBuffer) -> UnifiedBuffer {
    let Some(w) = ub.inputs.first().map(|p| p.spec.clone()) else { return ub };
    for p in &mut ub.outputs {
        p.distance = dependence_distance(&w, &p.spec);
    }
    ub
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;
    use crate::scheduler::schedule_stencil;

    const BB: &str = "buffer input[64][64] : input\nbuffer brighten[64][64] : intermediate\nbuffer blur[63][63] : output\n\
        stage brighten for y in [0,64] for x in [0,64] { brighten(x,y) = input(x,y) * 2 }\n\
        stage blur for y in [0,63] for x in [0,63] { blur(x,y) = (brighten(x,y) + brighten(x+1,y) + brighten(x,y+1) + brighten(x+1,y+1)) / 4 } latency 2\n";

    #[test]
    fn brighten_has_four_reads_at_expected_distances() {
        let p = parse_program(BB).unwrap();
        let s = schedule_stencil(&p).unwrap();
        let ubs = extract_buffers(&p, &s).unwrap();
        let br = ubs.iter().find(|u| u.name == "brighten").unwrap();
        assert_eq!(br.inputs.len(), 1);
        assert_eq!(br.outputs.len(), 4);
        let mut d: Vec<i64> = br.outputs.iter().map(|p| p.distance.unwrap()).collect();
        d.sort();
        assert_eq!(d, vec![0, 1, 64, 65]);
        assert_eq!(br.min_capacity, 65);
        let inp = ubs.iter().find(|u| u.name == "input").unwrap();
        assert_eq!(inp.outputs[0].distance, Some(0));
        let blur = ubs.iter().find(|u| u.name == "blur").unwrap();
        assert_eq!(blur.inputs.len(), 1);
        assert_eq!(blur.sink().unwrap().distance, Some(0));
        assert_eq!(blur.reads().count(), 0);
    }

    #[test]
    fn transposed_reader_has_no_distance() {
        let p = parse_program(
            "buffer a[8][8] : input\nbuffer b[8][8] : output\nstage s for y in [0,8] for x in [0,8] { b(x,y) = a(y,x) }",
        )
        .unwrap();
        let s = crate::scheduler::schedule_sequential(&p).unwrap();
        let ubs = extract_buffers(&p, &s).unwrap();
        assert_eq!(ubs[0].outputs[0].distance, None);
    }
}
