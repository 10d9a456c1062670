//! End-to-end driver behind the `ubc` binary: compile, simulate, compare.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extraction::{extract_buffers, UnifiedBuffer};
use crate::frontend::{expand_unrolled, inline_constant_arrays, normalize_updates, parse_program, Program};
use crate::golden::{self, DiffReport};
use crate::hwsim::{simulate, SimOptions, SimResult};
use crate::mapping::{map_design, Design, HardwareSpec};
use crate::scheduler::{schedule_dnn, schedule_optimized, schedule_stencil, schedule_sequential, verify_schedule, LegalityReport, ScheduleSet};

pub const ARTIFACT_FORMAT: &str = "ubc-artifact/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Stencil fusion or coarse-grained pipelining, by pipeline shape.
    Auto,
    Sequential,
    Stencil,
    Dnn,
}

/// Everything produced by one compilation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compiled {
    /// Program after normalization.
    pub program: Program,
    pub schedule: ScheduleSet,
    pub legality: LegalityReport,
    pub buffers: Vec<UnifiedBuffer>,
    pub design: Design,
    pub warnings: Vec<String>,
}

/// Parses and normalizes a program.
pub fn frontend(src: &str) -> Result<(Program, Vec<String>)> {
    let p = parse_program(src)?;
    let (p, mut warnings) = normalize_updates(&p);
    let p = expand_unrolled(&p);
    let (p, w) = inline_constant_arrays(&p);
    warnings.extend(w);
    p.validate()?;
    Ok((p, warnings))
}

pub fn schedule(prog: &Program, strategy: Strategy) -> Result<ScheduleSet> {
    match strategy {
        Strategy::Auto => schedule_optimized(prog),
        Strategy::Sequential => schedule_sequential(prog),
        Strategy::Stencil => schedule_stencil(prog),
        Strategy::Dnn => schedule_dnn(prog),
    }
}

pub fn compile(src: &str, strategy: Strategy, hw: &HardwareSpec) -> Result<Compiled> {
    let (program, mut warnings) = frontend(src)?;
    let schedule = schedule(&program, strategy)?;
    let legality = verify_schedule(&program, &schedule);
    if !legality.ok {
        return Err(Error::Schedule(format!("illegal schedule: {legality}")));
    }
    warnings.extend(schedule.warnings.iter().cloned());
    let buffers = extract_buffers(&program, &schedule)?;
    let design = map_design(&program, &schedule, &buffers, hw)?;
    warnings.extend(design.buffers.iter().flat_map(|b| b.warnings.iter().cloned()));
    Ok(Compiled { program, schedule, legality, buffers, design, warnings })
}

impl Compiled {
    pub fn simulate(&self, inputs: &BTreeMap<String, Vec<u16>>, opts: &SimOptions) -> Result<SimResult> {
        simulate(&self.program, &self.schedule, &self.buffers, &self.design, inputs, opts)
    }

    /// Simulates and diffs every output against the reference interpreter.
    pub fn check(&self, inputs: &BTreeMap<String, Vec<u16>>, opts: &SimOptions) -> Result<(SimResult, DiffReport)> {
        let sim = self.simulate(inputs, opts)?;
        let gold = golden::run(&self.program, inputs)?;
        let rep = golden::diff_outputs(&self.program, &gold, &sim.outputs)?;
        Ok((sim, rep))
    }
}

/// Serialized compile output with an integrity digest over `compiled`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub format: String,
    pub digest: String,
    pub compiled: Compiled,
}

fn digest(c: &Compiled) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(c)?)))
}

impl Artifact {
    pub fn new(compiled: Compiled) -> Result<Artifact> {
        Ok(Artifact { format: ARTIFACT_FORMAT.into(), digest: digest(&compiled)?, compiled })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Artifact> {
        let a: Artifact = serde_json::from_str(text)?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::Io(format!("unsupported artifact format {}", a.format)));
        }
        if digest(&a.compiled)? != a.digest {
            return Err(Error::Io("artifact digest mismatch".into()));
        }
        Ok(a)
    }
}

/// Seed for generated test inputs: `UBC_SEED` if set, else 0.
pub fn seed_from_env() -> u64 {
    std::env::var("UBC_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

/// Uniform 8-bit pixels for every input buffer.
pub fn random_inputs(prog: &Program, seed: u64) -> BTreeMap<String, Vec<u16>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    prog.inputs().map(|b| (b.name.clone(), (0..b.len()).map(|_| rng.gen_range(0..256)).collect())).collect()
}

/// Human-readable compile report.
pub fn summary(c: &Compiled) -> String {
    let s = &c.design.stats;
    let srs: usize = c.design.buffers.iter().map(|b| b.shift_registers.len()).sum();
    let mut out = format!(
        "schedule: {:?}, completion {} cycles{}\n\
         PEs {}, MEM tiles {} ({} units), SRAM words {}, ROM words {}, shift registers {srs} ({} words)\n",
        s.kind,
        s.completion_cycles,
        s.coarse_ii.map(|ii| format!(", coarse II {ii}")).unwrap_or_default(),
        s.pe_count,
        s.mem_tiles,
        s.mem_units,
        s.total_sram_words,
        s.rom_words,
        s.shift_register_words,
    );
    for b in &c.design.buffers {
        out.push_str(&format!(
            "  {}: {} shift registers, {} memories, {} SRAM words\n",
            b.buffer,
            b.shift_registers.len(),
            b.mems.len(),
            b.sram_words()
        ));
    }
    for w in &c.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Process exit status for a failed command: 3 on timeout, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Timeout { .. } => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub app: String,
    pub seq_cycles: i64,
    pub opt_cycles: i64,
    pub speedup: f64,
    pub seq_sram_words: i64,
    pub opt_sram_words: i64,
    pub reduction: f64,
}

impl CompareRow {
    pub const HEADER: &'static str = "app,seq_cycles,opt_cycles,speedup,seq_sram_words,opt_sram_words,reduction";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.2},{},{},{:.2}",
            self.app, self.seq_cycles, self.opt_cycles, self.speedup, self.seq_sram_words, self.opt_sram_words, self.reduction
        )
    }
}

/// Compiles under the sequential and the automatic strategy, simulates both
/// against the reference interpreter and reports simulated cycles and SRAM.
pub fn compare_schedules(app: &str, src: &str, hw: &HardwareSpec, seed: u64) -> Result<CompareRow> {
    let mut res = Vec::new();
    for strategy in [Strategy::Sequential, Strategy::Auto] {
        let c = compile(src, strategy, hw)?;
        let inputs = random_inputs(&c.program, seed);
        let (sim, rep) = c.check(&inputs, &SimOptions::default())?;
        if !rep.pass {
            return Err(Error::Golden(format!("{app} ({strategy:?}): {rep}")));
        }
        res.push((sim.cycles, c.design.stats.total_sram_words));
    }
    let ((sc, sw), (oc, ow)) = (res[0], res[1]);
    let ratio = |a: i64, b: i64| if b == 0 { if a == 0 { 1.0 } else { f64::INFINITY } } else { a as f64 / b as f64 };
    Ok(CompareRow {
        app: app.into(),
        seq_cycles: sc,
        opt_cycles: oc,
        speedup: ratio(sc, oc),
        seq_sram_words: sw,
        opt_sram_words: ow,
        reduction: ratio(sw, ow),
    })
}
