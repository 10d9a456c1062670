//! One pass/fail line per acceptance criterion. Exits nonzero if any fail.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubc_core::affine::{AffineExpr, BoxDomain, Direction, PortSpec};
use ubc_core::cli::{compile, frontend, random_inputs, Compiled, Strategy};
use ubc_core::hwsim::{ag_replay, controller_replay, run_storage, SimOptions};
use ubc_core::mapping::{ceil_div, chain_split, compile_affine_to_deltas, linearize, map_storage, AgConfig, HardwareSpec, MemRole};
use ubc_core::scheduler::{coarse_pipeline, schedule_dnn, verify_schedule};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn corpus(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../programs/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn run_checked(c: &Compiled, seed: u64, trace: bool) -> Result<ubc_core::hwsim::SimResult, String> {
    let inputs = random_inputs(&c.program, seed);
    let (sim, rep) = c.check(&inputs, &SimOptions { trace, ..Default::default() }).map_err(|e| e.to_string())?;
    ensure(rep.pass, rep.to_string())?;
    Ok(sim)
}

fn brighten_blur() -> Check {
    let t0 = Instant::now();
    let c = compile(&corpus("brighten_blur.ub"), Strategy::Auto, &HardwareSpec::wide_fetch(512, 4)).map_err(|e| e.to_string())?;
    let input = c.schedule.inputs.iter().find(|i| i.buffer == "input").ok_or("no input stream")?;
    // iterator d<k> walks buffer dimension k, so d0 is x and d1 is y
    let want = AffineExpr::from_terms(&[("d1", 64), ("d0", 1)], 0);
    ensure(input.schedule == want, format!("input schedule {:?}", input.schedule))?;

    let ub = c.buffers.iter().find(|b| b.name == "brighten").ok_or("no brighten buffer")?;
    let mut dist: Vec<Option<i64>> = ub.outputs.iter().map(|p| p.distance).collect();
    dist.sort();
    ensure(dist == [Some(0), Some(1), Some(64), Some(65)], format!("distances {dist:?}"))?;

    let phys = c.design.buffers.iter().find(|b| b.buffer == "brighten").ok_or("no brighten mapping")?;
    let delays: Vec<i64> = phys.mems.iter().filter(|m| m.role == MemRole::Delay).map(|m| m.capacity).collect();
    ensure(phys.shift_registers.len() == 2 && delays == [64] && phys.mems.len() == 1, format!(
        "{} shift registers, delay memories {delays:?}",
        phys.shift_registers.len()
    ))?;

    let sim = run_checked(&c, 1, true)?;
    let blur = c.schedule.stages.iter().find(|s| s.stage == "blur").ok_or("no blur schedule")?;
    let lat: i64 = c.program.stages.iter().map(|s| s.latency).sum();
    let offset = blur.write.constant - 65;
    ensure(offset == lat, format!("pipeline offset {offset}, stage latencies sum to {lat}"))?;
    let first = sim.trace.rows.iter().find(|r| r.unit == "blur" && r.op == "sink").map(|r| r.cycle).ok_or("no blur output")?;
    ensure(first == 65 + offset, format!("first blur output at {first}, expected {}", 65 + offset))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("schedule 64y+x, distances 0/1/64/65, 2 SRs + 64-word delay, first output at {first}, {secs:.2} s"))
}

fn gaussian() -> Check {
    let src = corpus("gaussian.ub");
    let hw = HardwareSpec::wide_fetch(512, 4);
    let opt = compile(&src, Strategy::Auto, &hw).map_err(|e| e.to_string())?;
    let seq = compile(&src, Strategy::Sequential, &hw).map_err(|e| e.to_string())?;
    let (so, ss) = (run_checked(&opt, 2, false)?, run_checked(&seq, 2, false)?);
    let words = opt.design.stats.total_sram_words;
    ensure(words == 128, format!("SRAM {words} words"))?;
    ensure((4096..=4300).contains(&so.cycles), format!("optimized completion {}", so.cycles))?;
    ensure(ss.cycles >= 3 * so.cycles, format!("sequential {} vs optimized {}", ss.cycles, so.cycles))?;
    Ok(format!("SRAM 128 words, completion {} (sequential {})", so.cycles, ss.cycles))
}

const TILED: &str = "buffer in[2][6] : input\nbuffer buf[2] : intermediate\nbuffer acc[2] : intermediate\nbuffer out[2][6] : output\n\
     const w[2] = {1, 2}\n\
     for t in [0,6] {\n\
       stage load for i in [0,2] { buf(i) = in(i, t) * 3 } latency 1\n\
       stage mac for j in [0,2] for r in [0,2] { acc(j) += w(r) * buf(r) } reduce r latency 1\n\
       stage store for j in [0,2] { out(j, t) = acc(j) } latency 1\n\
     }\n";

fn dnn_ii() -> Check {
    let (p, _) = frontend(TILED).map_err(|e| e.to_string())?;
    let s = schedule_dnn(&p).map_err(|e| e.to_string())?;
    ensure(s.coarse_ii == Some(4), format!("coarse II {:?}", s.coarse_ii))?;
    ensure(verify_schedule(&p, &s).ok, "II=4 schedule is illegal")?;
    // stage durations: iterations - 1 + latency
    let durs: Vec<i64> = p.stages.iter().map(|s| s.trip_count() / 6 - 1 + s.latency).collect();
    ensure(durs == [2, 4, 2], format!("stage durations {durs:?}"))?;
    // every start placement within a generous window fails at II <= 3
    let mut tried = 0;
    for ii in 1..=3 {
        for a in 0..=16 {
            for b in 0..=16 {
                for c in 0..=16 {
                    let set = coarse_pipeline(&p, ii, &[a, b, c]).map_err(|e| e.to_string())?;
                    tried += 1;
                    ensure(!verify_schedule(&p, &set).ok, format!("II={ii} legal with starts {a},{b},{c}"))?;
                }
            }
        }
    }
    let c = compile(TILED, Strategy::Dnn, &HardwareSpec::dual_port(512)).map_err(|e| e.to_string())?;
    run_checked(&c, 3, false)?;
    Ok(format!("coarse II 4; {tried} placements at II 1..3 all illegal"))
}

/// Explicit evaluation of `offset + sum strides[i] * counter[i]` over the
/// box, innermost level first.
fn direct(strides: &[i64], ranges: &[i64], offset: i64) -> Vec<i64> {
    let mut out = Vec::new();
    let mut idx = vec![0i64; ranges.len()];
    loop {
        out.push(offset + strides.iter().zip(&idx).map(|(s, i)| s * i).sum::<i64>());
        let mut k = 0;
        loop {
            if k == ranges.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < ranges[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn recurrence() -> Check {
    let t0 = Instant::now();
    let down = compile_affine_to_deltas(&[2, 16], &[4, 4], 0).map_err(|e| e.to_string())?;
    ensure(down.deltas == [2, 10], format!("downsample deltas {:?}", down.deltas))?;
    ensure(ag_replay(&down) == direct(&[2, 16], &[4, 4], 0), "downsample sequence")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000;
    let mut points = 0;
    for case in 0..n {
        let dims = rng.gen_range(1..=4);
        let ranges: Vec<i64> = (0..dims).map(|_| rng.gen_range(1..=16)).collect();
        let strides: Vec<i64> = (0..dims).map(|_| rng.gen_range(-64..=64)).collect();
        let offset = rng.gen_range(-1024..=1024);
        let cfg: AgConfig = compile_affine_to_deltas(&strides, &ranges, offset).map_err(|e| e.to_string())?;
        let got = ag_replay(&cfg);
        let want = direct(&strides, &ranges, offset);
        ensure(got == want, format!("case {case}: strides {strides:?} ranges {ranges:?} offset {offset}"))?;
        points += got.len();
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("{n} random generators, {points} points equal, {secs:.2} s"))
}

fn port(id: &str, dir: Direction, extent: i64, sched: AffineExpr) -> PortSpec {
    let dom = BoxDomain::zero_based(&[("x", extent)]);
    PortSpec::new(id, dir, dom, vec![AffineExpr::from_terms(&[("x", 1)], 0)], sched).unwrap()
}

fn vectorization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 120;
    for case in 0..n {
        let fw = [1, 2, 4, 8][case % 4];
        // a single-ported memory needs two slots per word at FW = 1
        let ii = if fw == 1 { 2 } else { 1 };
        let e = rng.gen_range(1..=256);
        let min_delay = (fw + 2) * ii;
        let delay = rng.gen_range(min_delay..=min_delay + ii * e);
        let ws = AffineExpr::from_terms(&[("x", ii)], 0);
        let wp = port("w", Direction::Input, e, ws.clone());
        let rp = port("r", Direction::Output, e, ws.offset(delay));
        let what = format!("case {case}: fw {fw} extent {e} delay {delay}");
        let (cfg, notes) = map_storage("d", &[e], &wp, &[rp], &HardwareSpec::wide_fetch(512, fw))
            .map_err(|e| format!("{what}: {e}"))?;
        let v = cfg.vector.as_ref().ok_or_else(|| format!("{what}: not vectorized: {notes:?}"))?;
        ensure(v.fetch_width == fw, format!("{what}: width {}", v.fetch_width))?;

        let input: BTreeMap<i64, u16> = (0..e).map(|k| (k * ii, rng.gen())).collect();
        let (outs, trace) = run_storage(&cfg, &input, &SimOptions { trace: true, max_cycles: Some(100_000) })
            .map_err(|e| format!("{what}: {e}"))?;
        let want: Vec<(i64, u16)> = input.iter().map(|(c, v)| (c + delay, *v)).collect();
        ensure(outs[0] == want, format!("{what}: output stream differs"))?;

        let sram: Vec<_> = trace.rows.iter().filter(|r| matches!(r.op.as_str(), "drain" | "fill" | "read" | "write")).collect();
        ensure(sram.iter().all(|r| r.op == "drain" || r.op == "fill"), format!("{what}: serial SRAM access"))?;
        let vectors = ceil_div(e, fw);
        let drains = sram.iter().filter(|r| r.op == "drain").count() as i64;
        ensure(drains == vectors && sram.len() as i64 == 2 * vectors, format!("{what}: {} SRAM ops for {vectors} vectors", sram.len()))?;
        let mut cycles: HashMap<i64, usize> = HashMap::new();
        for r in &sram {
            *cycles.entry(r.cycle).or_default() += 1;
        }
        ensure(cycles.values().all(|&k| k == 1), format!("{what}: two SRAM ops in one cycle"))?;
    }
    Ok(format!("{n} delay buffers, FW 1/2/4/8, streams equal up to the delay, one FW-wide op per cycle"))
}

fn chaining() -> Check {
    let c = compile(&corpus("brighten_blur.ub"), Strategy::Auto, &HardwareSpec::dual_port(32)).map_err(|e| e.to_string())?;
    let phys = c.design.buffers.iter().find(|b| b.buffer == "brighten").ok_or("no brighten mapping")?;
    let mem = phys.mems.iter().find(|m| m.role == MemRole::Delay).ok_or("no delay memory")?;
    ensure(mem.capacity == 64 && mem.tiles == 2, format!("capacity {} in {} tiles", mem.capacity, mem.tiles))?;
    let wc = mem.write.as_ref().ok_or("delay memory has no write")?;
    let writes = controller_replay(wc);
    for (pt, (_, a)) in wc.domain.points().zip(&writes) {
        let x = pt[1];
        ensure(*a == x, format!("write address {a} at x={x}"))?;
        ensure(chain_split(*a, 32) == (x / 32, x % 32), format!("split of {a}"))?;
    }

    let dom = BoxDomain::zero_based(&[("y", 64), ("x", 64)]);
    let access = [AffineExpr::from_terms(&[("x", 1)], 0), AffineExpr::from_terms(&[("y", 1)], 0)];
    let lin = linearize(&access, 64, &[1, 64]);
    for p in dom.points() {
        let a = lin.of(lin.expr.eval(&dom, &p).map_err(|e| e.to_string())?);
        ensure(a == p[1], format!("linearized {p:?} to {a}"))?;
    }

    // every value lives at its address from write to read; the k-th write
    // of a delay line is the k-th value read
    let reads = controller_replay(&mem.reads[0]);
    ensure(reads.len() == writes.len(), "read and write counts differ")?;
    let mut live: HashMap<i64, Vec<(i64, i64)>> = HashMap::new();
    for ((w, a), (r, b)) in writes.iter().zip(&reads) {
        ensure(a == b && r >= w, format!("value written at {w} to {a} read at {r} from {b}"))?;
        live.entry(*a).or_default().push((*w, *r));
    }
    let mut checked = 0;
    for (a, mut spans) in live {
        spans.sort();
        for pair in spans.windows(2) {
            ensure(pair[1].0 > pair[0].1, format!("address {a}: {:?} overlaps {:?}", pair[0], pair[1]))?;
            checked += 1;
        }
    }
    Ok(format!("2 tiles of 32, address = x, {checked} reuses without collision"))
}

fn corpus_trends() -> Check {
    let dir = format!("{}/../../programs", env!("CARGO_MANIFEST_DIR"));
    let mut files: Vec<_> = std::fs::read_dir(&dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    files.sort();
    ensure(files.len() >= 6, format!("{} programs", files.len()))?;
    let mut report = Vec::new();
    for f in &files {
        let name = f.file_stem().unwrap().to_string_lossy().into_owned();
        let src = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        let mut res = BTreeMap::new();
        for hw in [HardwareSpec::dual_port(512), HardwareSpec::wide_fetch(512, 4)] {
            for s in [Strategy::Sequential, Strategy::Auto] {
                let c = compile(&src, s, &hw).map_err(|e| format!("{name} {s:?}: {e}"))?;
                let sim = run_checked(&c, 6, false).map_err(|e| format!("{name} {s:?} {:?}: {e}", hw.target))?;
                res.insert((format!("{:?}", hw.target), s == Strategy::Auto), (sim.cycles, c.design.stats.total_sram_words, c.design.stats.kind, c.program.stages.len()));
            }
        }
        let (sc, sw, _, _) = res[&("WideFetch".to_string(), false)];
        let (oc, ow, kind, stages) = res[&("WideFetch".to_string(), true)];
        let speedup = sc as f64 / oc as f64;
        let reduction = if ow == 0 { f64::INFINITY } else { sw as f64 / ow as f64 };
        // fusing k stages can at best divide sequential time by about k
        let member = format!("{kind:?}") == "Stencil" && stages >= 3;
        if member {
            ensure(speedup >= 3.0 && reduction >= 10.0, format!("{name}: speedup {speedup:.2}, reduction {reduction:.1}"))?;
        }
        report.push(format!("{name} {speedup:.2}x/{reduction:.0}x{}", if member { "" } else { " (not gated)" }));
    }
    Ok(report.join(", "))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("brighten+blur reproduction", brighten_blur),
        ("gaussian storage", gaussian),
        ("coarse pipeline II", dnn_ii),
        ("recurrence equivalence", recurrence),
        ("vectorization preservation", vectorization),
        ("chaining and linearization", chaining),
        ("end-to-end corpus", corpus_trends),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
