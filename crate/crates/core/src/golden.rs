//! Schedule-free reference interpreter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{BufferKind, Program, StmtKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub element: Vec<i64>,
    pub stage: usize,
    pub point: Vec<i64>,
    pub write: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenResult {
    /// Dense contents of every buffer, dim 0 fastest.
    pub buffers: BTreeMap<String, Vec<u16>>,
    /// Reads and final writes per buffer, in execution order. Partial sums
    /// of rolled reductions stay in the compute unit and are not listed.
    pub events: BTreeMap<String, Vec<Event>>,
}

impl GoldenResult {
    pub fn output(&self, name: &str) -> Option<&[u16]> {
        self.buffers.get(name).map(|v| v.as_slice())
    }

    /// Events on `buffer` in order, as (element, is_write).
    pub fn stream(&self, buffer: &str) -> Vec<(&[i64], bool)> {
        self.events.get(buffer).map(|v| v.iter().map(|e| (e.element.as_slice(), e.write)).collect()).unwrap_or_default()
    }
}

/// Runs `prog` on `inputs` (keyed by input buffer name, dim 0 fastest).
pub fn interpret(prog: &Program, inputs: &BTreeMap<String, Vec<u16>>) -> Result<GoldenResult> {
    interpret_impl(prog, inputs, true)
}

/// Like [`interpret`] without recording events.
pub fn run(prog: &Program, inputs: &BTreeMap<String, Vec<u16>>) -> Result<GoldenResult> {
    interpret_impl(prog, inputs, false)
}

fn interpret_impl(prog: &Program, inputs: &BTreeMap<String, Vec<u16>>, record: bool) -> Result<GoldenResult> {
    let mut res = GoldenResult::default();
    for b in &prog.buffers {
        let data = match b.kind {
            BufferKind::Input => {
                let d = inputs.get(&b.name).ok_or_else(|| Error::Golden(format!("missing input {}", b.name)))?;
                if d.len() != b.len() {
                    return Err(Error::Golden(format!("input {} has {} values, expected {}", b.name, d.len(), b.len())));
                }
                d.clone()
            }
            BufferKind::Const => b.data.clone().unwrap_or_default(),
            _ => vec![0; b.len()],
        };
        res.buffers.insert(b.name.clone(), data);
        res.events.insert(b.name.clone(), Vec::new());
    }
    for name in inputs.keys() {
        if !prog.inputs().any(|b| &b.name == name) {
            return Err(Error::Golden(format!("{name} is not an input buffer")));
        }
    }
    let doms: Vec<_> = prog.stages.iter().map(|s| s.domain()).collect();
    prog.visit(&mut |si, p| {
        let s = &prog.stages[si];
        let dom = &doms[si];
        let reduced = |i: &usize| s.loops[*i].reduce;
        let first_red = s.loops.iter().any(|l| l.reduce)
            && (0..p.len()).filter(reduced).all(|i| p[i] == s.loops[i].lo);
        let last_rolled = (0..p.len())
            .filter(|&i| s.loops[i].reduce && !s.loops[i].unroll)
            .all(|i| p[i] == s.loops[i].lo + s.loops[i].extent - 1);
        for (k, st) in s.body.iter().enumerate() {
            let mut err = None;
            let value = st.value.eval_with(&mut |a| {
                let idx: Vec<i64> = a.idx.iter().map(|e| e.eval(dom, p).unwrap_or(-1)).collect();
                let decl = prog.buffer(&a.buffer).unwrap();
                match decl.flat(&idx) {
                    Some(f) => {
                        if record {
                            res.events.get_mut(&a.buffer).unwrap().push(Event {
                                element: idx,
                                stage: si,
                                point: p.to_vec(),
                                write: false,
                            });
                        }
                        res.buffers[&a.buffer][f]
                    }
                    None => {
                        err.get_or_insert_with(|| format!("stage {} reads {}{:?} out of bounds", s.name, a.buffer, idx));
                        0
                    }
                }
            });
            if let Some(e) = err {
                return Err(Error::Golden(e));
            }
            let t = &st.target;
            let idx: Vec<i64> = t.idx.iter().map(|e| e.eval(dom, p).unwrap_or(-1)).collect();
            let decl = prog.buffer(&t.buffer).unwrap();
            let f = decl
                .flat(&idx)
                .ok_or_else(|| Error::Golden(format!("stage {} writes {}{:?} out of bounds", s.name, t.buffer, idx)))?;
            let mem = res.buffers.get_mut(&t.buffer).unwrap();
            let v = match st.kind {
                StmtKind::Assign => value,
                StmtKind::Accumulate => {
                    let earlier = s.body[..k].iter().any(|o| o.target.buffer == t.buffer);
                    let base = if first_red && !earlier { 0 } else { mem[f] };
                    base.wrapping_add(value)
                }
            };
            mem[f] = v;
            let final_write = last_rolled && !s.body[k + 1..].iter().any(|o| o.target == *t);
            if record && final_write {
                res.events.get_mut(&t.buffer).unwrap().push(Event { element: idx, stage: si, point: p.to_vec(), write: true });
            }
        }
        Ok(())
    })?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub buffer: String,
    pub element: Vec<i64>,
    pub expected: u16,
    pub actual: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub pass: bool,
    pub compared: usize,
    pub mismatches: usize,
    pub first: Option<Mismatch>,
}

impl std::fmt::Display for DiffReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.first {
            None => write!(f, "pass: {} values match", self.compared),
            Some(m) => write!(
                f,
                "FAIL: {} of {} values differ; first at {}{:?}: expected {}, got {}",
                self.mismatches, self.compared, m.buffer, m.element, m.expected, m.actual
            ),
        }
    }
}

/// Compares every output buffer of `prog` against `outputs`.
pub fn diff_outputs(prog: &Program, golden: &GoldenResult, outputs: &BTreeMap<String, Vec<u16>>) -> Result<DiffReport> {
    let mut rep = DiffReport { pass: true, compared: 0, mismatches: 0, first: None };
    for b in prog.outputs() {
        let want = golden.output(&b.name).ok_or_else(|| Error::Golden(format!("golden has no buffer {}", b.name)))?;
        let got = outputs.get(&b.name).ok_or_else(|| Error::Golden(format!("no output stream for {}", b.name)))?;
        if got.len() != want.len() {
            return Err(Error::Golden(format!(
                "shape mismatch on {}: {} values, expected {}",
                b.name,
                got.len(),
                want.len()
            )));
        }
        for (i, (w, g)) in want.iter().zip(got).enumerate() {
            rep.compared += 1;
            if w != g {
                rep.pass = false;
                rep.mismatches += 1;
                if rep.first.is_none() {
                    let mut el = Vec::with_capacity(b.dims.len());
                    let mut r = i as i64;
                    for d in &b.dims {
                        el.push(r % d);
                        r /= d;
                    }
                    rep.first = Some(Mismatch { buffer: b.name.clone(), element: el, expected: *w, actual: *g });
                }
            }
        }
    }
    Ok(rep)
}

/// Image file encodings: flat little-endian 16-bit words, or PGM-style
/// text (`P2`, width, height, maxval, then values). Dimension 0 is the
/// width; outer dimensions fold into the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Binary,
    Text,
}

pub fn encode_image(data: &[u16], dims: &[i64], fmt: ImageFormat) -> Vec<u8> {
    match fmt {
        ImageFormat::Binary => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ImageFormat::Text => {
            let w = dims.first().copied().unwrap_or(1).max(1) as usize;
            let h = data.len().div_ceil(w);
            let mut out = format!("P2\n{w} {h}\n65535\n");
            for row in data.chunks(w) {
                let line: Vec<String> = row.iter().map(u16::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}

/// Decodes either format, detected from the `P2` magic, and checks the size.
pub fn decode_image(bytes: &[u8], dims: &[i64]) -> Result<Vec<u16>> {
    let want: i64 = dims.iter().product();
    let data = if bytes.starts_with(b"P2") {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?;
        let nums = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .skip(1)
            .map(|t| t.parse::<u32>().map_err(|e| Error::Io(format!("bad pixel {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() < 3 {
            return Err(Error::Io("truncated P2 header".into()));
        }
        let (w, h, max) = (nums[0] as i64, nums[1] as i64, nums[2]);
        if w * h != want {
            return Err(Error::Io(format!("image is {w}x{h}, buffer needs {want} values")));
        }
        nums[3..]
            .iter()
            .map(|&v| u16::try_from(v.min(max)).map_err(|_| Error::Io(format!("pixel {v} exceeds 16 bits"))))
            .collect::<Result<Vec<_>>>()?
    } else {
        if !bytes.len().is_multiple_of(2) {
            return Err(Error::Io("binary image has an odd byte count".into()));
        }
        bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    };
    if data.len() as i64 != want {
        return Err(Error::Io(format!("image has {} values, buffer needs {want}", data.len())));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_round_trip_in_both_formats() {
        let data: Vec<u16> = (0..12).map(|v| v * 5000).collect();
        for fmt in [ImageFormat::Binary, ImageFormat::Text] {
            let bytes = encode_image(&data, &[4, 3], fmt);
            assert_eq!(decode_image(&bytes, &[4, 3]).unwrap(), data);
            assert!(decode_image(&bytes, &[4, 4]).is_err());
        }
        assert_eq!(decode_image(b"P2 # c\n2 1\n255\n7 300", &[2, 1]).unwrap(), vec![7, 255]);
    }
    use crate::frontend::parse_program;

    const BB: &str = "buffer input[8][8] : input\nbuffer brighten[8][8] : intermediate\nbuffer blur[7][7] : output\n\
        stage brighten for y in [0,8] for x in [0,8] { brighten(x,y) = input(x,y) * 2 }\n\
        stage blur for y in [0,7] for x in [0,7] { blur(x,y) = (brighten(x,y) + brighten(x+1,y) + brighten(x,y+1) + brighten(x+1,y+1)) / 4 }\n";

    fn inputs(v: Vec<u16>) -> BTreeMap<String, Vec<u16>> {
        BTreeMap::from([("input".to_string(), v)])
    }

    #[test]
    fn brighten_doubles_and_blur_preserves_constants() {
        let p = parse_program(BB).unwrap();
        let g = interpret(&p, &inputs(vec![7; 64])).unwrap();
        assert!(g.output("brighten").unwrap().iter().all(|&v| v == 14));
        assert!(g.output("blur").unwrap().iter().all(|&v| v == 14));
        assert_eq!(g.events["brighten"].iter().filter(|e| e.write).count(), 64);
        assert_eq!(g.events["brighten"].iter().filter(|e| !e.write).count(), 4 * 49);
    }

    #[test]
    fn box_sum_on_ramp() {
        let p = parse_program(
            "buffer a[10][10] : input\nbuffer b[8][8] : output\n\
             stage s for y in [0,8] for x in [0,8] for j in [0,3] for i in [0,3] { b(x,y) += a(x+i,y+j) } reduce j, i",
        )
        .unwrap();
        let ramp: Vec<u16> = (0..100).map(|k| (k % 10) as u16).collect();
        let g = interpret(&p, &inputs_named("a", ramp.clone())).unwrap();
        let out = g.output("b").unwrap();
        for y in 0..8 {
            for x in 0..8 {
                // window over columns x..x+2 of a ramp in x
                let r = &ramp;
                let direct: u16 = (0..3).flat_map(|j| (0..3).map(move |i| r[(y + j) * 10 + x + i])).sum();
                assert_eq!(out[y * 8 + x], direct);
                assert_eq!(out[y * 8 + x] as usize, 9 * (x + 1));
            }
        }
        // one final write per output element
        assert_eq!(g.events["b"].len(), 64);
    }

    fn inputs_named(n: &str, v: Vec<u16>) -> BTreeMap<String, Vec<u16>> {
        BTreeMap::from([(n.to_string(), v)])
    }

    #[test]
    fn arithmetic_wraps() {
        let p = parse_program("buffer a[2] : input\nbuffer b[2] : output\nstage s for x in [0,2] { b(x) = a(x) * 2 + 1 }").unwrap();
        let g = run(&p, &inputs_named("a", vec![0x8000, 3])).unwrap();
        assert_eq!(g.output("b").unwrap(), &[1, 7]);
    }

    #[test]
    fn diff_reports_first_mismatch() {
        let p = parse_program(BB).unwrap();
        let g = run(&p, &inputs((0..64).collect())).unwrap();
        let mut outs = BTreeMap::from([("blur".to_string(), g.output("blur").unwrap().to_vec())]);
        assert!(diff_outputs(&p, &g, &outs).unwrap().pass);
        outs.get_mut("blur").unwrap()[7 * 2 + 3] ^= 1;
        let r = diff_outputs(&p, &g, &outs).unwrap();
        assert!(!r.pass);
        assert_eq!(r.first.unwrap().element, vec![3, 2]);
        outs.get_mut("blur").unwrap().pop();
        assert!(diff_outputs(&p, &g, &outs).is_err());
    }
}
