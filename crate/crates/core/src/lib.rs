//! Predictive per-circuit rate control for relay overlays: a max-min fair
//! allocation written as a quadratic program, a per-relay receding-horizon
//! controller that plans incoming and outgoing rates from its neighbours'
//! forecasts, and a deterministic tick-based simulator that runs it against
//! a greedy round-robin baseline.
//!
//! The numerical code is generic over [`scalar::Scalar`]; the aliases below
//! fix it to `f64`, which is what the simulator and the command line use.

pub mod cli;
pub mod exchange;
pub mod fairness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod ocp;
pub mod qp;
pub mod scalar;
pub mod scenario;
pub mod selftest;
pub mod sim;

pub type Topology = model::NetworkTopology<f64>;
pub type Node = model::NodeSpec<f64>;
pub type Link = model::LinkSpec<f64>;
pub type Rates = model::RateVector<f64>;
pub type Problem = fairness::FairnessProblem<f64>;
pub type Controller = ocp::ControllerConfig<f64>;
pub type Plan = ocp::OcpSolution<f64>;
pub type Qp = qp::QpInstance<f64>;
pub type QpResult = qp::QpSolution<f64>;
