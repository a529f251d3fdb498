use etclab::lmi::blocks::TriggerWeights;
use etclab::lmi::theorems::{build_box, Condition};
use etclab::presets;
use etclab::sdp::{self, Objective};
use etclab::sysmodel::DelaySamplingBounds;
use std::time::Instant;

fn main() {
    let sys = presets::example1_plant();
    let k = presets::example1_gain();
    let trig = TriggerWeights { sigma1: 0.4, sigma2: 0.1 };
    let backend = sdp::default_backend();
    let cond = Condition::ModelBased { sys: &sys, gain: &k };
    for (h, d) in [(0.2, 0.1), (1.0, 0.0), (1.2, 0.0), (1.3, 0.0), (1.5, 0.0)] {
        let bounds = DelaySamplingBounds::new(0.0, d, 1e-5, h).unwrap();
        let built = build_box(&cond, trig, &bounds, 1e-7).unwrap();
        let t0 = Instant::now();
        let out = sdp::solve(&built.problem, Objective::Feasibility, &backend);
        println!("h={h} d={d}: {:?} in {:.2?} | {}", out.status, t0.elapsed(), out.detail);
    }
}
