//! Per-node optimal control problem solved every control step.
//!
//! Decision variables are normalised offsets `u = Δr / r_max` for the incoming
//! and outgoing rate of every circuit at every horizon step. Queue levels and
//! predecessor offsets are affine in the rates and are eliminated from the QP:
//! their bounds become inequality rows over prefix sums of `u`. Each
//! circuit's variables form one block of the solver's Newton system; only the
//! per-step capacity rows couple circuits.

use thiserror::Error;

use crate::model::{CircuitId, NodeId};
use crate::qp::{self, KktResiduals, QpError, QpInstance, QpSettings, QpSolution, QpStatus, QuadraticCost};
use crate::scalar::Scalar;

/// Per-step rate plan, one entry per horizon step, in packets/s.
pub type RateTrajectory<T> = Vec<T>;

pub const DEFAULT_HORIZON: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T> {
    pub horizon: usize,
    /// Control period in seconds.
    pub dt: T,
    /// Discount base, in (0, 1/3].
    pub d0: T,
    pub r_max: T,
    /// Per-circuit queue limit in packets.
    pub queue_limit: T,
    /// Packets of the queue limit held back from planning to absorb the lag
    /// between the model and packet-granular forwarding.
    pub queue_margin: T,
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn new(dt: T, r_max: T, queue_limit: T) -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            dt,
            d0: T::one() / T::lit(3.0),
            r_max,
            queue_limit,
            queue_margin: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        let third = T::one() / T::lit(3.0);
        if self.horizon < 2 {
            return Err(OcpError::Config(format!("horizon {} < 2", self.horizon)));
        }
        if !(self.dt > T::zero()) {
            return Err(OcpError::Config(format!("dt {} must be positive", self.dt)));
        }
        // Allow the rounding of 1/3 written as a decimal literal.
        if !(self.d0 > T::zero()) || self.d0 > third * (T::one() + T::lit(1e-6)) {
            return Err(OcpError::Config(format!("d0 {} outside (0, 1/3]", self.d0)));
        }
        if !(self.r_max > T::zero()) {
            return Err(OcpError::Config(format!("r_max {} must be positive", self.r_max)));
        }
        if !(self.queue_limit > T::zero()) || self.queue_margin < T::zero() {
            return Err(OcpError::Config(format!(
                "queue limit {} / margin {} invalid",
                self.queue_limit, self.queue_margin
            )));
        }
        Ok(())
    }

    /// Queue level the plan may reach.
    pub fn planning_limit(&self) -> T {
        (self.queue_limit - self.queue_margin).max(T::zero())
    }
}

/// Measurements and neighbour predictions for one node at one step. All
/// per-circuit vectors are indexed like `circuits`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerInputs<T> {
    pub node: NodeId,
    pub step: u64,
    pub circuits: Vec<CircuitId>,
    /// Measured queue per circuit.
    pub s_init: Vec<T>,
    /// Predecessor's planned outgoing rate, steps `0..N`.
    pub pred_out_rate: Vec<RateTrajectory<T>>,
    /// Predecessor's planned queue after each step: element `j` is the level
    /// at step `j + 1`.
    pub pred_queue: Vec<Vec<T>>,
    /// Outgoing-rate cap per step, already aligned to this step's horizon.
    pub succ_in_rate: Vec<RateTrajectory<T>>,
    pub capacity_in: T,
    pub capacity_out: T,
}

impl<T: Scalar> ControllerInputs<T> {
    pub fn num_circuits(&self) -> usize {
        self.circuits.len()
    }

    pub fn validate(&self, cfg: &ControllerConfig<T>) -> Result<(), OcpError> {
        let p = self.circuits.len();
        let n = cfg.horizon;
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(OcpError::Dimension(format!("{what}: {got} entries, expected {want}")))
            }
        };
        dim("s_init", self.s_init.len(), p)?;
        dim("pred_out_rate", self.pred_out_rate.len(), p)?;
        dim("pred_queue", self.pred_queue.len(), p)?;
        dim("succ_in_rate", self.succ_in_rate.len(), p)?;
        for c in 0..p {
            dim("pred_out_rate trajectory", self.pred_out_rate[c].len(), n)?;
            dim("pred_queue trajectory", self.pred_queue[c].len(), n)?;
            dim("succ_in_rate trajectory", self.succ_in_rate[c].len(), n)?;
        }
        let all = self
            .s_init
            .iter()
            .chain(self.pred_out_rate.iter().flatten())
            .chain(self.pred_queue.iter().flatten())
            .chain(self.succ_in_rate.iter().flatten())
            .chain([&self.capacity_in, &self.capacity_out]);
        for v in all {
            if !(v.is_finite() && *v >= T::zero()) {
                return Err(OcpError::Dimension(format!("input entry {v} is negative or not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("controller input mismatch: {0}")]
    Dimension(String),
    #[error("node {node} step {step}: solver returned {status:?} after {iterations} iterations")]
    Solver {
        node: NodeId,
        step: u64,
        status: QpStatus,
        iterations: usize,
    },
    #[error(transparent)]
    Instance(#[from] QpError),
}

/// `[1, d0, d0², …]` of length `n`.
pub fn discount_sequence<T: Scalar>(d0: T, n: usize) -> Vec<T> {
    let mut d = Vec::with_capacity(n);
    let mut w = T::one();
    for _ in 0..n {
        d.push(w);
        w *= d0;
    }
    d
}

/// `Σ_c Σ_k d^k ((Δr_in,c^k)² + (Δr_out,c^k)²)` for rate offsets
/// `Δr = r_max − r`, one trajectory per circuit.
pub fn plan_cost<T: Scalar>(d0: T, offsets_in: &[Vec<T>], offsets_out: &[Vec<T>]) -> T {
    let mut cost = T::zero();
    for traj in offsets_in.iter().chain(offsets_out) {
        let mut w = T::one();
        for dr in traj {
            cost += w * *dr * *dr;
            w *= d0;
        }
    }
    cost
}

/// Variable counts of the uncondensed problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    /// `Δr_in` and `Δr_out` per circuit and step.
    pub rate_vars: usize,
    /// Queue and predecessor offset per circuit and step, excluding the
    /// fixed initial values. Eliminated from the QP.
    pub state_vars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub circuits: usize,
    pub horizon: usize,
}

impl Layout {
    #[inline]
    pub fn u_in(&self, c: usize, k: usize) -> usize {
        c * self.horizon + k
    }

    #[inline]
    pub fn u_out(&self, c: usize, k: usize) -> usize {
        (self.circuits + c) * self.horizon + k
    }

    pub fn num_vars(&self) -> usize {
        2 * self.circuits * self.horizon
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem<T> {
    pub qp: QpInstance<T>,
    pub layout: Layout,
    pub census: Census,
}

pub fn build_ocp<T: Scalar>(cfg: &ControllerConfig<T>, inputs: &ControllerInputs<T>) -> Result<OcpProblem<T>, OcpError> {
    cfg.validate()?;
    inputs.validate(cfg)?;
    let p = inputs.num_circuits();
    let n = cfg.horizon;
    let layout = Layout { circuits: p, horizon: n };
    let r_max = cfg.r_max;
    let unit = cfg.dt * r_max;
    let weights = discount_sequence(cfg.d0, n);

    let mut q = QpInstance::new(layout.num_vars());
    let mut diag = vec![T::zero(); layout.num_vars()];
    let mut blocks = vec![0; layout.num_vars()];
    for c in 0..p {
        for k in 0..n {
            let (i, o) = (layout.u_in(c, k), layout.u_out(c, k));
            diag[i] = T::lit(2.0) * weights[k];
            diag[o] = T::lit(2.0) * weights[k];
            blocks[i] = c;
            blocks[o] = c;
            q.var_lower[i] = T::zero();
            q.var_upper[i] = T::one();
            let cap = inputs.succ_in_rate[c][k];
            q.var_lower[o] = (T::one() - cap / r_max).clamp(T::zero(), T::one());
            q.var_upper[o] = T::one();
        }
    }
    q.quadratic = QuadraticCost::Diagonal(diag);
    q.blocks = Some(blocks);

    let pf = T::from_usize(p).unwrap();
    if p > 0 {
        for k in 0..n {
            let row = (0..p).map(|c| (layout.u_in(c, k), -T::one())).collect();
            q.push_row(row, T::neg_infinity(), inputs.capacity_in / r_max - pf);
            let row = (0..p).map(|c| (layout.u_out(c, k), -T::one())).collect();
            q.push_row(row, T::neg_infinity(), inputs.capacity_out / r_max - pf);
        }
    }

    let limit = cfg.planning_limit();
    let tiny = T::epsilon() * T::lit(64.0) * unit;
    for c in 0..p {
        let s0 = inputs.s_init[c];
        let upper = limit.max(s0);
        pin_forced_rates(&mut q, &layout, inputs, c, upper, cfg.dt, tiny);
        let mut pred_sent = T::zero();
        for k in 1..=n {
            // s^k = s0 + unit · Σ_{j<k} (u_out − u_in)
            let mut row = Vec::with_capacity(2 * k);
            for j in 0..k {
                row.push((layout.u_in(c, j), -T::one()));
            }
            for j in 0..k {
                row.push((layout.u_out(c, j), T::one()));
            }
            q.push_row(row, -s0 / unit, (upper - s0) / unit);

            // s_β^k − dt Σ_{j<k} (r_in − r_out,β) ≥ 0
            pred_sent += inputs.pred_out_rate[c][k - 1] / r_max;
            let row = (0..k).map(|j| (layout.u_in(c, j), -T::one())).collect();
            let k_f = T::from_usize(k).unwrap();
            q.push_row(row, T::neg_infinity(), inputs.pred_queue[c][k - 1] / unit + pred_sent - k_f);
        }
    }

    Ok(OcpProblem {
        qp: q,
        layout,
        census: Census {
            rate_vars: 2 * p * n,
            state_vars: 2 * p * n,
        },
    })
}

/// Fixes rates that the constraints force to zero. Such steps leave the
/// feasible set without interior, which an interior-point solver cannot
/// approach stably. Fixed variables are eliminated by the solver.
fn pin_forced_rates<T: Scalar>(
    q: &mut QpInstance<T>,
    layout: &Layout,
    inputs: &ControllerInputs<T>,
    c: usize,
    upper: T,
    dt: T,
    tiny: T,
) {
    let n = layout.horizon;
    // Nothing is available from the predecessor before step `starved`.
    let mut supply = T::zero();
    let mut starved = 0;
    for k in 1..=n {
        supply += dt * inputs.pred_out_rate[c][k - 1];
        if inputs.pred_queue[c][k - 1] + supply <= tiny {
            starved = k;
        }
    }
    let pin = |q: &mut QpInstance<T>, j: usize| {
        q.var_lower[j] = T::one();
        q.var_upper[j] = T::one();
    };
    for k in 0..starved {
        pin(q, layout.u_in(c, k));
    }
    // While both rates are pinned the queue stays at its initial level.
    let s0 = inputs.s_init[c];
    for k in 0..n {
        let (i, o) = (layout.u_in(c, k), layout.u_out(c, k));
        let mut in_zero = q.var_lower[i] == T::one();
        let mut out_zero = q.var_lower[o] == T::one();
        if s0 <= tiny && in_zero {
            out_zero = true;
        }
        if s0 >= upper - tiny && out_zero {
            in_zero = true;
        }
        if in_zero {
            pin(q, i);
        }
        if out_zero {
            pin(q, o);
        }
        if !(in_zero && out_zero) {
            break;
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpSolution<T> {
    pub circuits: Vec<CircuitId>,
    pub r_in: Vec<RateTrajectory<T>>,
    pub r_out: Vec<RateTrajectory<T>>,
    /// Planned queue, steps `0..=N`; element 0 is the measurement.
    pub s_pred: Vec<Vec<T>>,
    /// Predecessor offset, steps `0..=N`; element 0 is zero.
    pub delta_s: Vec<Vec<T>>,
    /// `Σ d^k (Δr_in² + Δr_out²)` in (packets/s)².
    pub objective: T,
    pub residuals: KktResiduals<T>,
    pub iterations: usize,
    /// Normalised solver variables, kept for warm starts.
    pub x: Vec<T>,
}

impl<T: Scalar> OcpSolution<T> {
    /// Rate applied this step for each circuit.
    pub fn applied_out(&self) -> Vec<T> {
        self.r_out.iter().map(|r| r[0]).collect()
    }

    /// Estimated predecessor queue after each step, `s_β^{k} − Δs^{k}` for
    /// `k = 1..=N`.
    pub fn predecessor_estimate(&self, inputs: &ControllerInputs<T>) -> Vec<Vec<T>> {
        self.delta_s
            .iter()
            .zip(&inputs.pred_queue)
            .map(|(ds, sb)| sb.iter().zip(&ds[1..]).map(|(s, d)| *s - *d).collect())
            .collect()
    }
}

fn shifted_warm_start<T: Scalar>(prev: &OcpSolution<T>, layout: Layout) -> Option<Vec<T>> {
    if prev.x.len() != layout.num_vars() {
        return None;
    }
    let n = layout.horizon;
    let mut x = vec![T::zero(); prev.x.len()];
    for block in 0..2 * layout.circuits {
        let src = &prev.x[block * n..(block + 1) * n];
        let dst = &mut x[block * n..(block + 1) * n];
        dst[..n - 1].copy_from_slice(&src[1..]);
        dst[n - 1] = src[n - 1];
    }
    Some(x)
}

pub fn solve_node_step<T: Scalar>(
    cfg: &ControllerConfig<T>,
    inputs: &ControllerInputs<T>,
    warm_start: Option<&OcpSolution<T>>,
) -> Result<OcpSolution<T>, OcpError> {
    let prob = build_ocp(cfg, inputs)?;
    let layout = prob.layout;
    let warm = warm_start.and_then(|w| shifted_warm_start(w, layout)).map(|x| QpSolution {
        x,
        row_duals: Vec::new(),
        bound_duals: Vec::new(),
        status: QpStatus::Optimal,
        iterations: 0,
    });
    let sol = qp::solve_with(&prob.qp, warm.as_ref(), &QpSettings::default())?;
    if sol.status != QpStatus::Optimal {
        return Err(OcpError::Solver {
            node: inputs.node,
            step: inputs.step,
            status: sol.status,
            iterations: sol.iterations,
        });
    }
    let residuals = qp::kkt_residuals(&prob.qp, &sol);
    let (p, n) = (layout.circuits, layout.horizon);
    let r_max = cfg.r_max;
    // Project onto the variable bounds so decoded rates respect the caps
    // exactly; the interior-point iterate may sit outside by round-off.
    let u = |i: usize| sol.x[i].max(prob.qp.var_lower[i]).min(prob.qp.var_upper[i]);
    let mut r_in = Vec::with_capacity(p);
    let mut r_out = Vec::with_capacity(p);
    let mut s_pred = Vec::with_capacity(p);
    let mut delta_s = Vec::with_capacity(p);
    for c in 0..p {
        let ri: Vec<T> = (0..n).map(|k| r_max * (T::one() - u(layout.u_in(c, k)))).collect();
        let ro: Vec<T> = (0..n).map(|k| r_max * (T::one() - u(layout.u_out(c, k)))).collect();
        let mut s = vec![inputs.s_init[c]];
        let mut ds = vec![T::zero()];
        for k in 0..n {
            s.push(s[k] + cfg.dt * (ri[k] - ro[k]));
            ds.push(ds[k] + cfg.dt * (ri[k] - inputs.pred_out_rate[c][k]));
        }
        r_in.push(ri);
        r_out.push(ro);
        s_pred.push(s);
        delta_s.push(ds);
    }
    let offsets = |r: &Vec<Vec<T>>| -> Vec<Vec<T>> { r.iter().map(|t| t.iter().map(|v| r_max - *v).collect()).collect() };
    let objective = plan_cost(cfg.d0, &offsets(&r_in), &offsets(&r_out));
    Ok(OcpSolution {
        circuits: inputs.circuits.clone(),
        r_in,
        r_out,
        s_pred,
        delta_s,
        objective,
        residuals,
        iterations: sol.iterations,
        x: sol.x,
    })
}

/// Predecessor queue as seen from this node: `s̃^k = s_β^k − Δs^k` with
/// `Δs^{k+1} = Δs^k + dt (r_in^k − r_out,β^k)` and `Δs^0 = 0`.
pub fn predict_predecessor_queue<T: Scalar>(s_beta: &[T], r_in: &[T], r_out_beta: &[T], dt: T) -> Vec<T> {
    assert_eq!(s_beta.len(), r_in.len());
    assert_eq!(s_beta.len(), r_out_beta.len());
    let mut offset = T::zero();
    let mut out = Vec::with_capacity(s_beta.len());
    for k in 0..s_beta.len() {
        out.push(s_beta[k] - offset);
        offset += dt * (r_in[k] - r_out_beta[k]);
    }
    out
}
