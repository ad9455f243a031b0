//! Max-min fair rate allocation.
//!
//! [`solve_maxmin_qp`] obtains rates `r = r_max − Δr` by minimising `Σ Δr²`
//! over the feasible set. [`water_filling`] is the classical progressive
//! filling construction and serves as an independent reference, and
//! [`verify_maxmin`] checks the bottleneck characterisation directly.
//!
//! The quadratic program recovers the max-min fair vector when the sets of
//! circuits sharing a relay are laminar (any two are nested or disjoint),
//! which covers single-bottleneck and tree-like overlays. On general
//! overlays it trades fairness for total throughput; the classic
//! counterexample is a "parking lot" where one long circuit crosses two
//! relays that each also carry a short circuit. See [`is_laminar`].

use thiserror::Error;

use crate::model::{CircuitId, NetworkTopology, NodeId, RateVector};
use crate::qp::{self, KktResiduals, QpInstance, QpStatus, QuadraticCost};
use crate::scalar::Scalar;

/// Relative saturation tolerance for bottleneck checks.
pub const FAIRNESS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FairnessProblem<T> {
    pub topology: NetworkTopology<T>,
    /// Upper limit for every circuit rate.
    pub r_max: T,
}

impl<T: Scalar> FairnessProblem<T> {
    pub fn new(topology: NetworkTopology<T>, r_max: T) -> Self {
        Self { topology, r_max }
    }

    /// Smallest `r_max` for which the quadratic formulation is exact.
    pub fn required_r_max(&self) -> T {
        self.topology
            .nodes
            .iter()
            .fold(T::zero(), |m, n| m.max(n.capacity_in.max(n.capacity_out)))
    }

    pub fn satisfies_bound(&self) -> bool {
        self.r_max >= self.required_r_max()
    }
}

#[derive(Debug, Clone)]
pub struct FairnessSolution<T> {
    pub rates: RateVector<T>,
    /// `Σ Δr²` in (packets/s)².
    pub objective: T,
    pub residuals: KktResiduals<T>,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FairnessError {
    #[error("QP solver returned {status:?} after {iterations} iterations")]
    Solver { status: QpStatus, iterations: usize },
    #[error(transparent)]
    Instance(#[from] qp::QpError),
}

/// Builds the quadratic program over normalised offsets `u = Δr / r_max`.
pub fn maxmin_instance<T: Scalar>(p: &FairnessProblem<T>) -> QpInstance<T> {
    let t = &p.topology;
    let n = t.num_circuits();
    let mut q = QpInstance::new(n);
    q.quadratic = QuadraticCost::Diagonal(vec![T::lit(2.0); n]);
    q.var_lower = vec![T::zero(); n];
    q.var_upper = vec![T::one(); n];
    for node in &t.nodes {
        let cs = t.circuits_at(node.id);
        if cs.is_empty() {
            continue;
        }
        // Σ (1 − uᵢ) ≤ C / r_max
        let row = cs.iter().map(|c| (c.0, -T::one())).collect();
        let count = T::from_usize(cs.len()).unwrap();
        q.push_row(row, T::neg_infinity(), node.capacity() / p.r_max - count);
    }
    q
}

pub fn solve_maxmin_qp<T: Scalar>(p: &FairnessProblem<T>) -> Result<FairnessSolution<T>, FairnessError> {
    let q = maxmin_instance(p);
    let sol = qp::solve(&q, None)?;
    if sol.status != QpStatus::Optimal {
        return Err(FairnessError::Solver {
            status: sol.status,
            iterations: sol.iterations,
        });
    }
    let sol = qp::polish(&q, &sol).unwrap_or(sol);
    let residuals = qp::kkt_residuals(&q, &sol);
    let rates = sol
        .x
        .iter()
        .map(|u| (p.r_max * (T::one() - *u)).max(T::zero()))
        .collect();
    let objective = sol
        .x
        .iter()
        .fold(T::zero(), |s, u| s + (*u * p.r_max) * (*u * p.r_max));
    Ok(FairnessSolution {
        rates: RateVector::new(rates),
        objective,
        residuals,
        iterations: sol.iterations,
    })
}

/// Progressive filling: raise all unfrozen rates together and freeze the
/// circuits of every relay that saturates. Relays saturating at the same
/// level are frozen in the same round.
pub fn water_filling<T: Scalar>(p: &FairnessProblem<T>) -> RateVector<T> {
    let t = &p.topology;
    let n = t.num_circuits();
    let mut rate = vec![T::zero(); n];
    let mut frozen = vec![false; n];
    let members: Vec<(NodeId, T, Vec<CircuitId>)> = t
        .nodes
        .iter()
        .map(|nd| (nd.id, nd.capacity(), t.circuits_at(nd.id)))
        .filter(|(_, _, cs)| !cs.is_empty())
        .collect();
    let tol = T::epsilon() * T::lit(64.0);
    let mut level = T::zero();

    while frozen.iter().any(|f| !f) {
        let mut step = p.r_max - level;
        let mut headroom = Vec::with_capacity(members.len());
        for (_, cap, cs) in &members {
            let unfrozen = cs.iter().filter(|c| !frozen[c.0]).count();
            if unfrozen == 0 {
                headroom.push(None);
                continue;
            }
            let used = cs.iter().fold(T::zero(), |s, c| s + rate[c.0]);
            let h = ((*cap - used) / T::from_usize(unfrozen).unwrap()).max(T::zero());
            step = step.min(h);
            headroom.push(Some(h));
        }
        level += step;
        for c in 0..n {
            if !frozen[c] {
                rate[c] = level;
            }
        }
        let mut any = false;
        for ((_, cap, cs), h) in members.iter().zip(&headroom) {
            if let Some(h) = h {
                if *h - step <= tol * (T::one() + *cap) {
                    for c in cs {
                        if !frozen[c.0] {
                            frozen[c.0] = true;
                            any = true;
                        }
                    }
                }
            }
        }
        if level >= p.r_max || !any {
            // Either everything hit r_max or only r_max bounded the step.
            frozen.iter_mut().for_each(|f| *f = true);
        }
    }
    for (c, r) in rate.iter().enumerate() {
        if *r == T::zero() {
            log::warn!("circuit c{c} crosses a relay with no remaining capacity; rate 0");
        }
    }
    RateVector::new(rate)
}

/// For each circuit, a bottleneck relay if it has one: saturated, and the
/// circuit's rate is maximal among the relay's circuits.
pub fn bottlenecks<T: Scalar>(r: &RateVector<T>, t: &NetworkTopology<T>) -> Vec<Option<NodeId>> {
    let eps = T::lit(FAIRNESS_TOLERANCE);
    t.circuits
        .iter()
        .map(|c| {
            c.path.iter().copied().find(|node| {
                let spec = t.node(*node).expect("validated topology");
                let cap = spec.capacity();
                let slack = eps * cap;
                let saturated = (r.load(t, *node) - cap).abs() <= slack;
                saturated
                    && t
                        .circuits_at(*node)
                        .iter()
                        .all(|other| r.get(c.id) >= r.get(*other) - slack)
            })
        })
        .collect()
}

/// Every circuit has a bottleneck.
pub fn verify_maxmin<T: Scalar>(r: &RateVector<T>, t: &NetworkTopology<T>) -> bool {
    bottlenecks(r, t).iter().all(Option::is_some)
}

/// True when any two relays' circuit sets are nested or disjoint.
pub fn is_laminar<T: Scalar>(t: &NetworkTopology<T>) -> bool {
    let sets: Vec<Vec<CircuitId>> = t.nodes.iter().map(|n| t.circuits_at(n.id)).collect();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            let inter = a.iter().filter(|c| b.contains(c)).count();
            if inter != 0 && inter != a.len() && inter != b.len() {
                return false;
            }
        }
    }
    true
}
