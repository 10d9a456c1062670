use std::collections::BTreeMap;

use ubc_core::cli::{compile, Strategy};
use ubc_core::hwsim::SimOptions;
use ubc_core::mapping::HardwareSpec;

const TILED: &str = "buffer in[2][6] : input\nbuffer buf[2] : intermediate\nbuffer acc[2] : intermediate\nbuffer out[2][6] : output\n\
     const w[2] = {1, 2}\n\
     for t in [0,6] {\n\
       stage load for i in [0,2] { buf(i) = in(i, t) * 3 } latency 1\n\
       stage mac for j in [0,2] for r in [0,2] { acc(j) += w(r) * buf(r) } reduce r latency 1\n\
       stage store for j in [0,2] { out(j, t) = acc(j) } latency 1\n\
     }\n";

#[test]
fn grouped_pipeline_matches_golden() {
    let inputs = BTreeMap::from([("in".to_string(), (1..=12).collect::<Vec<u16>>())]);
    for mode in [Strategy::Sequential, Strategy::Auto] {
        for hw in [HardwareSpec::dual_port(512), HardwareSpec::wide_fetch(512, 4)] {
            let c = compile(TILED, mode, &hw).unwrap_or_else(|e| panic!("{mode:?} {:?}: {e}", hw.target));
            let (sim, rep) = c.check(&inputs, &SimOptions::default()).unwrap_or_else(|e| panic!("{mode:?} {:?}: {e}", hw.target));
            assert!(rep.pass, "{mode:?} {:?}: {rep}", hw.target);
            assert_eq!(sim.cycles, c.schedule.completion);
        }
    }
}
