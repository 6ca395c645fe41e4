//! Robust barrier-function safety filter for node frequencies.
//!
//! For node `i` the barriers are `h1 = ω̂_i + ω_l` and `h2 = ω_h - ω̂_i`.
//! Requiring `ḣ + η h ≥ 0` under every disturbance `|d_i| ≤ d_s` gives two
//! affine bounds on the scalar control `u_i`, so the per-node QP
//! `min |u_i - u⁰_i|` is a projection onto an interval.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{LinearModel, NetworkSpec};
use crate::units::hz_to_rad;

/// Safety band and barrier parameters. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEnvelope {
    pub omega_l: f64,
    pub omega_h: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Disturbance bound in p.u.
    pub d_s: f64,
}

impl SafetyEnvelope {
    pub fn from_hz(band_l_hz: f64, band_h_hz: f64, eta1: f64, eta2: f64, d_s: f64) -> Result<Self> {
        Self {
            omega_l: hz_to_rad(band_l_hz),
            omega_h: hz_to_rad(band_h_hz),
            eta1,
            eta2,
            d_s,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = self.omega_l > 0.0
            && self.omega_h > 0.0
            && self.eta1 > 0.0
            && self.eta2 > 0.0
            && self.d_s >= 0.0
            && [self.omega_l, self.omega_h, self.eta1, self.eta2, self.d_s]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidParameter {
                entity: "safety envelope".into(),
                reason: format!("need ω_l, ω_h, η1, η2 > 0 and d_s >= 0, got {self:?}"),
            })
        }
    }

    /// Band scaled by `factor`, other parameters unchanged.
    pub fn widened(self, factor: f64) -> Self {
        Self {
            omega_l: self.omega_l * factor,
            omega_h: self.omega_h * factor,
            ..self
        }
    }
}

/// Admissible control interval for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub node: usize,
    pub lo: f64,
    pub hi: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStatus {
    Inactive,
    ClampedLo,
    ClampedHi,
    InfeasibleFallback,
}

impl FilterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterStatus::Inactive => "inactive",
            FilterStatus::ClampedLo => "clamped-lo",
            FilterStatus::ClampedHi => "clamped-hi",
            FilterStatus::InfeasibleFallback => "infeasible-fallback",
        }
    }
}

pub fn barrier_values(omega: f64, env: &SafetyEnvelope) -> (f64, f64) {
    (omega + env.omega_l, env.omega_h - omega)
}

/// Bounds from the robust conditions, without the feasibility check.
///
/// With `ḣ1 = (-D ω̂ - (Lθ̂)_i + u + v² d) / M`:
/// `lo = D ω̂ + (Lθ̂)_i + v² d_s - M η1 (ω̂ + ω_l)` and
/// `hi = D ω̂ + (Lθ̂)_i - v² d_s + M η2 (ω_h - ω̂)`.
pub fn control_bounds(
    model: &LinearModel,
    x: &DVector<f64>,
    i: usize,
    env: &SafetyEnvelope,
) -> ControlBounds {
    let n = model.n;
    let omega = x[n + i];
    let coupling: f64 = (0..n).map(|j| model.l[(i, j)] * x[j]).sum();
    let (m, d, v2) = (model.m[i], model.d[i], model.v[i] * model.v[i]);
    let drift = d * omega + coupling;
    let lo = drift + v2 * env.d_s - m * env.eta1 * (omega + env.omega_l);
    let hi = drift - v2 * env.d_s + m * env.eta2 * (env.omega_h - omega);
    ControlBounds {
        node: i,
        lo,
        hi,
        feasible: lo <= hi,
    }
}

/// As [`control_bounds`], failing with `CbfConflict` when the interval is empty.
pub fn safe_control_bounds(
    model: &LinearModel,
    x: &DVector<f64>,
    i: usize,
    env: &SafetyEnvelope,
) -> Result<ControlBounds> {
    let b = control_bounds(model, x, i, env);
    if b.feasible {
        Ok(b)
    } else {
        Err(Error::CbfConflict {
            node: i,
            gap: b.hi - b.lo,
        })
    }
}

pub fn nominal_control(k: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    -(k * x)
}

/// Minimizer of `|u - u⁰|` over `[lo, hi]`.
pub fn qp_filter(u0: f64, bounds: &ControlBounds) -> Result<f64> {
    if !bounds.feasible {
        return Err(Error::CbfConflict {
            node: bounds.node,
            gap: bounds.hi - bounds.lo,
        });
    }
    Ok(u0.clamp(bounds.lo, bounds.hi))
}

/// Filtered control with its status. Empty intervals fall back to the
/// midpoint, which minimizes the larger of the two constraint violations.
pub fn filter_with_fallback(u0: f64, bounds: &ControlBounds) -> (f64, FilterStatus) {
    if !bounds.feasible {
        return (0.5 * (bounds.lo + bounds.hi), FilterStatus::InfeasibleFallback);
    }
    if u0 < bounds.lo {
        (bounds.lo, FilterStatus::ClampedLo)
    } else if u0 > bounds.hi {
        (bounds.hi, FilterStatus::ClampedHi)
    } else {
        (u0, FilterStatus::Inactive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkSource {
    Gain,
    Power,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborLink {
    pub node: usize,
    pub via: LinkSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInformation {
    pub node: usize,
    pub neighbors: Vec<NeighborLink>,
}

/// Information each node's filtered control depends on: the states read by
/// its row of the gain united with its power-network neighbors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub nodes: Vec<NodeInformation>,
    /// Undirected links implied by the gain pattern.
    pub gain_links: usize,
    /// Lines of the power network.
    pub power_links: usize,
    /// Undirected links of the cross-layer union.
    pub union_links: usize,
}

impl TopologyReport {
    pub fn union_set(&self, i: usize) -> BTreeSet<usize> {
        self.nodes[i].neighbors.iter().map(|l| l.node).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology report serializes")
    }
}

pub fn cross_layer_topology(pattern: &DMatrix<bool>, spec: &NetworkSpec) -> Result<TopologyReport> {
    let n = spec.n();
    if pattern.shape() != (n, 2 * n) {
        return Err(Error::Dimension(format!(
            "pattern is {:?}, expected ({n}, {})",
            pattern.shape(),
            2 * n
        )));
    }
    let power = spec.neighbor_sets();
    let gain: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && (pattern[(i, j)] || pattern[(i, n + j)]))
                .collect()
        })
        .collect();

    let nodes = (0..n)
        .map(|i| {
            let neighbors = gain[i]
                .union(&power[i])
                .map(|&j| {
                    let via = match (gain[i].contains(&j), power[i].contains(&j)) {
                        (true, true) => LinkSource::Both,
                        (true, false) => LinkSource::Gain,
                        _ => LinkSource::Power,
                    };
                    NeighborLink { node: j, via }
                })
                .collect();
            NodeInformation { node: i, neighbors }
        })
        .collect();

    let undirected = |sets: &dyn Fn(usize, usize) -> bool| {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| sets(i, j) || sets(j, i))
            .count()
    };
    let gain_links = undirected(&|i, j| gain[i].contains(&j));
    let power_links = undirected(&|i, j| power[i].contains(&j));
    let union_links = undirected(&|i, j| gain[i].contains(&j) || power[i].contains(&j));
    Ok(TopologyReport {
        nodes,
        gain_links,
        power_links,
        union_links,
    })
}
