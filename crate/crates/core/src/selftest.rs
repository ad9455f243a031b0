//! Randomized property suites that run from the command line, without a
//! Rust toolchain. Each suite draws its instances from a seeded generator,
//! so a failing case can be replayed from the seed alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exchange::{DownstreamMsg, UpstreamMsg, FIXED_POINT_SCALE};
use crate::fairness::{is_laminar, solve_maxmin_qp, verify_maxmin, water_filling, FairnessProblem};
use crate::model::{is_feasible, Circuit, CircuitId, LinkSpec, NetworkTopology, NodeId, NodeSpec};
use crate::ocp::{solve_node_step, ControllerConfig, ControllerInputs};
use crate::sim::TokenBucket;

/// Overlay with `1..=max_nodes` relays of capacity drawn from `caps` and
/// `1..=max_circuits` circuits of one to three distinct relays each.
pub fn random_topology<R: Rng>(rng: &mut R, max_nodes: usize, max_circuits: usize, caps: (f64, f64)) -> NetworkTopology<f64> {
    let n = rng.gen_range(1..=max_nodes);
    let p = rng.gen_range(1..=max_circuits);
    let nodes = (0..n)
        .map(|i| {
            let c = rng.gen_range(caps.0..=caps.1);
            NodeSpec {
                id: NodeId(i as u16),
                capacity_in: c,
                capacity_out: c,
                queue_limit: 50.0,
            }
        })
        .collect();
    let ids: Vec<u16> = (0..n as u16).collect();
    let mut links: Vec<LinkSpec<f64>> = Vec::new();
    let circuits = (0..p)
        .map(|i| {
            let len = rng.gen_range(1..=n.min(3));
            let path: Vec<u16> = ids.choose_multiple(rng, len).copied().collect();
            for w in path.windows(2) {
                if !links.iter().any(|l| l.from.0 == w[0] && l.to.0 == w[1]) {
                    links.push(LinkSpec {
                        from: NodeId(w[0]),
                        to: NodeId(w[1]),
                        delay: 0.04,
                    });
                }
            }
            Circuit {
                id: CircuitId(i),
                path: path.into_iter().map(NodeId).collect(),
            }
        })
        .collect();
    NetworkTopology { nodes, links, circuits }
}

/// Controller inputs with every trajectory drawn independently, so
/// neighbours need not agree with each other.
pub fn random_inputs<R: Rng>(rng: &mut R, p: usize, horizon: usize, r_max: f64) -> ControllerInputs<f64> {
    let mut traj = |hi: f64| -> Vec<Vec<f64>> { (0..p).map(|_| (0..horizon).map(|_| rng.gen_range(0.0..hi)).collect()).collect() };
    let pred_out_rate = traj(r_max);
    let pred_queue = traj(80.0);
    let succ_in_rate = traj(r_max);
    ControllerInputs {
        node: NodeId(1),
        step: 0,
        circuits: (0..p).map(CircuitId).collect(),
        s_init: (0..p).map(|_| rng.gen_range(0.0..50.0)).collect(),
        pred_out_rate,
        pred_queue,
        succ_in_rate,
        capacity_in: rng.gen_range(0.1 * r_max..r_max),
        capacity_out: rng.gen_range(0.1 * r_max..r_max),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, when there is one.
    pub first_failure: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn suite<R: Rng>(name: &'static str, cases: usize, rng: &mut R, mut check: impl FnMut(&mut R) -> Result<(), String>) -> SuiteResult {
    let mut failures = 0;
    let mut first_failure = None;
    for i in 0..cases {
        if let Err(e) = check(rng) {
            failures += 1;
            first_failure.get_or_insert_with(|| format!("case {i}: {e}"));
        }
    }
    SuiteResult {
        name,
        cases,
        failures,
        first_failure,
    }
}

pub fn run_all(seed: u64, cases: usize) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(suite("water filling yields a max-min allocation", cases, &mut rng, |rng| {
        let t = random_topology(rng, 6, 5, (1.0, 100.0));
        let p = FairnessProblem::new(t, 100.0);
        let r = water_filling(&p);
        let loads_ok = p.topology.nodes.iter().all(|n| r.load(&p.topology, n.id) <= n.capacity() * (1.0 + 1e-12));
        if (is_feasible(&r, &p.topology) || loads_ok) && verify_maxmin(&r, &p.topology) {
            Ok(())
        } else {
            Err(format!("rates {:?}", r.rates))
        }
    }));

    out.push(suite("fairness QP matches water filling on laminar overlays", cases, &mut rng, |rng| {
        let t = loop {
            let t = random_topology(rng, 6, 5, (1.0, 100.0));
            if is_laminar(&t) {
                break t;
            }
        };
        let p = FairnessProblem::new(t, 100.0);
        let qp = solve_maxmin_qp(&p).map_err(|e| e.to_string())?;
        let wf = water_filling(&p);
        let d = qp.rates.linf_distance(&wf);
        if qp.residuals.certified() && d <= 1e-4 * p.r_max {
            Ok(())
        } else {
            Err(format!("L-inf {d:.3e}, residuals {:?}", qp.residuals))
        }
    }));

    out.push(suite("controller plans are certified and within capacity", cases, &mut rng, |rng| {
        let p = rng.gen_range(1..=4);
        let mut cfg = ControllerConfig::new(0.04, 1000.0, 50.0);
        cfg.horizon = 10;
        let inputs = random_inputs(rng, p, cfg.horizon, cfg.r_max);
        let sol = solve_node_step(&cfg, &inputs, None).map_err(|e| e.to_string())?;
        if !sol.residuals.certified() {
            return Err(format!("residuals {:?}", sol.residuals));
        }
        let tol = 1e-6 * cfg.r_max;
        for k in 0..cfg.horizon {
            let sum_in: f64 = sol.r_in.iter().map(|r| r[k]).sum();
            let sum_out: f64 = sol.r_out.iter().map(|r| r[k]).sum();
            if sum_in > inputs.capacity_in + tol || sum_out > inputs.capacity_out + tol {
                return Err(format!("step {k}: in {sum_in}, out {sum_out}"));
            }
            for c in 0..p {
                if sol.r_out[c][k] > inputs.succ_in_rate[c][k] + tol || sol.r_in[c][k] < -tol {
                    return Err(format!("circuit {c} step {k} out of bounds"));
                }
            }
        }
        Ok(())
    }));

    out.push(suite("control messages survive encoding", cases, &mut rng, |rng| {
        let p = rng.gen_range(1..=5);
        let n = rng.gen_range(1..=30);
        let circuits: Vec<CircuitId> = (0..p).map(CircuitId).collect();
        let grid = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..p)
                .map(|_| (0..n).map(|_| rng.gen_range(0..1_000_000u32) as f64 / FIXED_POINT_SCALE).collect())
                .collect()
        };
        let down = DownstreamMsg {
            sender: NodeId(rng.gen()),
            receiver: NodeId(9),
            step: rng.gen::<u32>() as u64,
            circuits: circuits.clone(),
            r_out: grid(rng),
            s_queue: grid(rng),
        };
        let up = UpstreamMsg {
            sender: NodeId(rng.gen()),
            receiver: NodeId(9),
            step: rng.gen::<u32>() as u64,
            circuits: circuits.clone(),
            r_in: grid(rng),
        };
        let d = DownstreamMsg::decode(&down.encode().map_err(|e| e.to_string())?, NodeId(9), &circuits).map_err(|e| e.to_string())?;
        let u = UpstreamMsg::decode(&up.encode().map_err(|e| e.to_string())?, NodeId(9), &circuits).map_err(|e| e.to_string())?;
        if d == down && u == up {
            Ok(())
        } else {
            Err("decoded message differs".into())
        }
    }));

    out.push(suite("token bucket holds its long-run rate", cases, &mut rng, |rng| {
        let rate = rng.gen_range(0.5..5000.0);
        let dt = 0.04;
        let ticks = 2000;
        let mut b = TokenBucket::new(rate, dt);
        let sent: usize = (0..ticks).map(|_| b.forward(usize::MAX, dt)).sum();
        let expected = rate * dt * ticks as f64;
        if (sent as f64 - expected).abs() <= 1.0 {
            Ok(())
        } else {
            Err(format!("rate {rate}: sent {sent}, expected {expected:.1}"))
        }
    }));
    out
}
