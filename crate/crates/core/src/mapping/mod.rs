//! Mapping of unified buffers onto shift registers and memory tiles.

mod ag;
mod layout;
mod shift;
mod vector;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ag::{compile_affine_to_deltas, AgConfig, MAX_AG_DIMS};
pub use layout::{bank, ceil_div, chain_split, linearize, padded_size, row_major_offsets, ModAddr};
pub use shift::{introduce_shift_registers, DelayLine, Node, ShiftPlan, ShiftRegister};
pub use vector::VectorConfig;

use crate::affine::{max_live_values, AffineExpr, BoxDomain, PortSpec};
use crate::error::{Error, Result};
use crate::extraction::UnifiedBuffer;
use crate::frontend::Program;
use crate::scheduler::{PipelineKind, ScheduleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// One write and one read per cycle per tile.
    #[value(name = "dualport")]
    DualPort,
    /// One single-ported wide access per cycle, with aggregator and
    /// transpose buffers on each side.
    #[value(name = "widefetch")]
    WideFetch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub target: Target,
    /// Words per physical tile.
    pub tile_words: i64,
    pub fetch_width: i64,
    /// Longest shift register before a delay memory is used instead.
    pub sr_threshold: i64,
    pub max_banks: i64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec { target: Target::WideFetch, tile_words: 512, fetch_width: 4, sr_threshold: 32, max_banks: 8 }
    }
}

impl HardwareSpec {
    pub fn dual_port(tile_words: i64) -> Self {
        HardwareSpec { target: Target::DualPort, tile_words, ..Default::default() }
    }

    pub fn wide_fetch(tile_words: i64, fetch_width: i64) -> Self {
        HardwareSpec { target: Target::WideFetch, tile_words, fetch_width, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_words < 1 || self.fetch_width < 1 || self.max_banks < 1 || self.sr_threshold < 1 {
            return Err(Error::Mapping("hardware parameters must be positive".into()));
        }
        if self.target == Target::WideFetch && self.tile_words % self.fetch_width != 0 {
            return Err(Error::Mapping(format!(
                "tile size {} is not a multiple of fetch width {}",
                self.tile_words, self.fetch_width
            )));
        }
        Ok(())
    }
}

/// Iteration-domain controller: an address generator and a schedule
/// generator sharing one domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controller {
    pub port: String,
    pub domain: BoxDomain,
    /// Address before the modulus.
    pub address: AffineExpr,
    pub modulus: i64,
    pub schedule: AffineExpr,
    pub address_ag: AgConfig,
    pub schedule_ag: AgConfig,
}

impl Controller {
    pub fn new(port: &str, domain: &BoxDomain, address: AffineExpr, modulus: i64, schedule: AffineExpr) -> Result<Self> {
        let address_ag = AgConfig::for_expr(&address, domain)?.with_modulus(modulus);
        let schedule_ag = AgConfig::for_expr(&schedule, domain)?;
        Ok(Controller { port: port.to_string(), domain: domain.clone(), address, modulus, schedule, address_ag, schedule_ag })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemRole {
    Delay,
    Residual,
    Rom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemConfig {
    pub id: String,
    pub role: MemRole,
    /// Chain node feeding the write port (`Source` for residual memories).
    pub input: Option<Node>,
    pub capacity: i64,
    pub offsets: Vec<i64>,
    pub banks: i64,
    pub tile_words: i64,
    pub tiles: i64,
    pub write: Option<Controller>,
    /// Word reads. On a dual-port tile the schedule is the issue cycle,
    /// one before the value is needed; on a wide-fetch tile these are the
    /// serial transpose-buffer reads.
    pub reads: Vec<Controller>,
    /// A read may return the value written to its address in the same
    /// cycle.
    #[serde(default)]
    pub forward: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<VectorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contents: Option<Vec<u16>>,
}

/// Where a buffer port's values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Serve {
    Chain { node: Node },
    Mem { mem: usize, read: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    pub buffer: String,
    pub shift_registers: Vec<ShiftRegister>,
    pub mems: Vec<MemConfig>,
    pub serve: BTreeMap<String, Serve>,
    pub warnings: Vec<String>,
}

impl PhysicalConfig {
    /// Ports wired straight to the source stream.
    pub fn wires(&self) -> Vec<&str> {
        self.serve
            .iter()
            .filter(|(_, s)| **s == Serve::Chain { node: Node::Source })
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn sram_words(&self) -> i64 {
        self.mems.iter().filter(|m| m.role != MemRole::Rom).map(|m| m.capacity).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignStats {
    pub kind: PipelineKind,
    pub total_sram_words: i64,
    pub rom_words: i64,
    pub shift_register_words: i64,
    pub mem_units: usize,
    pub mem_tiles: i64,
    pub pe_count: usize,
    pub completion_cycles: i64,
    pub coarse_ii: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub hardware: HardwareSpec,
    pub buffers: Vec<PhysicalConfig>,
    pub stats: DesignStats,
}

/// Storage request: one write stream and its reads.
#[derive(Debug, Clone)]
pub(crate) struct MemSpec {
    pub id: String,
    pub role: MemRole,
    pub input: Option<Node>,
    pub dims: Vec<i64>,
    pub write: Option<PortSpec>,
    pub reads: Vec<PortSpec>,
    pub contents: Option<Vec<u16>>,
}

/// Address of each access in terms of the port iterators.
pub(crate) fn port_address(addr: &ModAddr, access: &[AffineExpr]) -> AffineExpr {
    let mut out = AffineExpr::constant(addr.expr.constant);
    for (k, a) in access.iter().enumerate() {
        out = out.add(&a.scale(addr.expr.coeff(&format!("e{k}"))));
    }
    out
}

fn tiles(capacity: i64, banks: i64, c: i64) -> i64 {
    banks * ceil_div(capacity / banks, c)
}

/// Maps one storage request onto tiles of the requested target.
pub(crate) fn map_mem(spec: &MemSpec, hw: &HardwareSpec, warnings: &mut Vec<String>) -> Result<MemConfig> {
    let Some(write) = &spec.write else { return map_rom(spec, hw) };
    let mut lts = layout::lifetimes(write, &spec.reads)?;
    let min = max_live_values(write, &spec.reads)? as i64;
    if hw.target == Target::WideFetch {
        match vector::vectorize(spec, &lts, min, hw) {
            Ok(m) => return Ok(m),
            Err(e) => warnings.push(format!("{}: dual-port fallback ({e})", spec.id)),
        }
    }
    // same-cycle reads are forwarded from the write port, so an address
    // stays occupied through the cycle of its last read
    let forward = lts.iter().any(|lt| lt.reads.iter().any(|r| r.1 == lt.write));
    if forward {
        for lt in &mut lts {
            lt.end = lt.reads.iter().map(|r| r.1 + 1).fold(lt.end, i64::max);
        }
    }
    let banks = bank(write, &spec.reads, hw.max_banks)?;
    let (capacity, offsets, addr) = layout::find_capacity(&spec.dims, &lts, min, banks)?;
    let wc = Controller::new(&write.id, &write.domain, port_address(&addr, &write.access), capacity, write.schedule.clone())?;
    let reads = spec
        .reads
        .iter()
        .map(|r| Controller::new(&r.id, &r.domain, port_address(&addr, &r.access), capacity, r.schedule.offset(-1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MemConfig {
        id: spec.id.clone(),
        role: spec.role,
        input: spec.input,
        capacity,
        offsets,
        banks,
        tile_words: hw.tile_words,
        tiles: tiles(capacity, banks, hw.tile_words),
        write: Some(wc),
        reads,
        forward,
        vector: None,
        contents: None,
    })
}

fn map_rom(spec: &MemSpec, hw: &HardwareSpec) -> Result<MemConfig> {
    let capacity: i64 = spec.dims.iter().product();
    let offsets = row_major_offsets(&spec.dims, 1);
    let vars = layout::elem_vars(spec.dims.len());
    let access: Vec<AffineExpr> = vars.iter().map(|v| AffineExpr::var(v)).collect();
    let addr = linearize(&access, capacity, &offsets);
    let reads = spec
        .reads
        .iter()
        .map(|r| Controller::new(&r.id, &r.domain, port_address(&addr, &r.access), capacity, r.schedule.offset(-1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MemConfig {
        id: spec.id.clone(),
        role: MemRole::Rom,
        input: None,
        capacity,
        offsets,
        banks: 1,
        tile_words: hw.tile_words,
        tiles: tiles(capacity, 1, hw.tile_words) * reads.len().max(1) as i64,
        write: None,
        reads,
        forward: false,
        vector: None,
        contents: spec.contents.clone(),
    })
}

/// Maps a standalone storage request: one write stream and its reads.
/// Returns the memory and any fallback notes.
pub fn map_storage(
    id: &str,
    dims: &[i64],
    write: &PortSpec,
    reads: &[PortSpec],
    hw: &HardwareSpec,
) -> Result<(MemConfig, Vec<String>)> {
    hw.validate()?;
    let spec = MemSpec {
        id: id.to_string(),
        role: MemRole::Delay,
        input: Some(Node::Source),
        dims: dims.to_vec(),
        write: Some(write.clone()),
        reads: reads.to_vec(),
        contents: None,
    };
    let mut notes = Vec::new();
    let m = map_mem(&spec, hw, &mut notes)?;
    Ok((m, notes))
}

fn renamed(p: &PortSpec, id: String) -> PortSpec {
    PortSpec { id, ..p.clone() }
}

/// Maps one unified buffer: delay chain first, addressed storage for the
/// remaining ports, replicated per read port when they cannot share.
pub fn map_buffer(ub: &UnifiedBuffer, hw: &HardwareSpec) -> Result<PhysicalConfig> {
    hw.validate()?;
    let mut cfg = PhysicalConfig {
        buffer: ub.name.clone(),
        shift_registers: vec![],
        mems: vec![],
        serve: BTreeMap::new(),
        warnings: vec![],
    };
    let Some(w) = ub.write_port() else {
        let spec = MemSpec {
            id: format!("{}.rom", ub.name),
            role: MemRole::Rom,
            input: None,
            dims: ub.dims.clone(),
            write: None,
            reads: ub.outputs.iter().map(|p| p.spec.clone()).collect(),
            contents: ub.rom.clone(),
        };
        cfg.mems.push(map_mem(&spec, hw, &mut cfg.warnings)?);
        for (j, p) in ub.outputs.iter().enumerate() {
            cfg.serve.insert(p.spec.id.clone(), Serve::Mem { mem: 0, read: j });
        }
        return Ok(cfg);
    };
    let plan = introduce_shift_registers(ub, hw.sr_threshold);
    for (k, dl) in plan.delays.iter().enumerate() {
        let id = format!("{}.delay{k}", ub.name);
        let spec = MemSpec {
            id: id.clone(),
            role: MemRole::Delay,
            input: Some(dl.input),
            dims: ub.dims.clone(),
            write: Some(renamed(&w.spec.with_schedule_offset(dl.from), format!("{id}.w"))),
            reads: vec![renamed(&w.spec.with_schedule_offset(dl.to), format!("{id}.r"))],
            contents: None,
        };
        cfg.mems.push(map_mem(&spec, hw, &mut cfg.warnings)?);
    }
    cfg.shift_registers = plan.registers;
    for (port, node) in plan.taps {
        cfg.serve.insert(port, Serve::Chain { node });
    }
    if !plan.residual.is_empty() {
        let spec = MemSpec {
            id: format!("{}.mem", ub.name),
            role: MemRole::Residual,
            input: Some(Node::Source),
            dims: ub.dims.clone(),
            write: Some(w.spec.clone()),
            reads: plan.residual.iter().map(|p| p.spec.clone()).collect(),
            contents: None,
        };
        match map_mem(&spec, hw, &mut cfg.warnings) {
            Ok(m) => {
                let mi = cfg.mems.len();
                cfg.mems.push(m);
                for (j, p) in plan.residual.iter().enumerate() {
                    cfg.serve.insert(p.spec.id.clone(), Serve::Mem { mem: mi, read: j });
                }
            }
            Err(e) => {
                cfg.warnings.push(format!("{}: replicated per read port ({e})", spec.id));
                for (j, p) in plan.residual.iter().enumerate() {
                    let one = MemSpec { id: format!("{}.mem{j}", ub.name), reads: vec![p.spec.clone()], ..spec.clone() };
                    let mi = cfg.mems.len();
                    cfg.mems.push(map_mem(&one, hw, &mut cfg.warnings)?);
                    cfg.serve.insert(p.spec.id.clone(), Serve::Mem { mem: mi, read: 0 });
                }
            }
        }
    }
    Ok(cfg)
}

/// Maps every buffer and gathers design statistics.
pub fn map_design(prog: &Program, set: &ScheduleSet, ubs: &[UnifiedBuffer], hw: &HardwareSpec) -> Result<Design> {
    let buffers = ubs.iter().map(|u| map_buffer(u, hw)).collect::<Result<Vec<_>>>()?;
    let mems = buffers.iter().flat_map(|b| &b.mems);
    let stats = DesignStats {
        kind: set.kind,
        total_sram_words: buffers.iter().map(|b| b.sram_words()).sum(),
        rom_words: mems.clone().filter(|m| m.role == MemRole::Rom).map(|m| m.capacity).sum(),
        shift_register_words: buffers.iter().flat_map(|b| &b.shift_registers).map(|s| s.depth).sum(),
        mem_units: mems.clone().count(),
        mem_tiles: mems.map(|m| m.tiles).sum(),
        pe_count: prog.op_count(),
        completion_cycles: set.completion,
        coarse_ii: set.coarse_ii,
    };
    Ok(Design { hardware: hw.clone(), buffers, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_buffers;
    use crate::frontend::parse_program;
    use crate::scheduler::{schedule_sequential, schedule_stencil, tests::BB};

    fn design(seq: bool, hw: &HardwareSpec) -> Design {
        let p = parse_program(BB).unwrap();
        let s = if seq { schedule_sequential(&p).unwrap() } else { schedule_stencil(&p).unwrap() };
        let ubs = extract_buffers(&p, &s).unwrap();
        map_design(&p, &s, &ubs, hw).unwrap()
    }

    #[test]
    fn stencil_uses_one_row_of_storage() {
        for hw in [HardwareSpec::dual_port(512), HardwareSpec::wide_fetch(512, 4)] {
            let d = design(false, &hw);
            let br = d.buffers.iter().find(|b| b.buffer == "brighten").unwrap();
            assert_eq!(br.shift_registers.len(), 2);
            assert_eq!(br.mems.len(), 1);
            assert_eq!(br.mems[0].capacity, 64);
            assert_eq!(d.stats.total_sram_words, 64, "{:?}", hw.target);
            assert_eq!(br.wires().len(), 1);
            assert_eq!(br.mems[0].vector.is_some(), hw.target == Target::WideFetch);
        }
    }

    #[test]
    fn sequential_buffers_whole_frame() {
        let d = design(true, &HardwareSpec::dual_port(512));
        let br = d.buffers.iter().find(|b| b.buffer == "brighten").unwrap();
        assert!(br.sram_words() >= 4096 - 64, "{}", br.sram_words());
        assert!(br.mems.iter().all(|m| m.tiles >= 8));
    }

    #[test]
    fn small_tiles_chain() {
        let d = design(false, &HardwareSpec::dual_port(32));
        let br = d.buffers.iter().find(|b| b.buffer == "brighten").unwrap();
        assert_eq!(br.mems[0].tiles, 2);
    }
}
