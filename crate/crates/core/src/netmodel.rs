//! Network description and the linearized swing-dynamics plant.
//!
//! Each bus obeys `θ̇ = ω`, `M ω̇ = -D (ω - ω_d) + P_set - P` with the active
//! power injection coupled through line susceptances. Lines are stored as a
//! positive coupling strength `b = X / (R² + X²)`, so the assembled Laplacian
//! is a standard (positive semidefinite) weighted graph Laplacian.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::hz_to_rad;

/// The reference 4-bus microgrid: one synchronous generator and three droop inverters.
pub const FOUR_BUS_TOML: &str = include_str!("../data/four_bus.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    SynchronousGenerator,
    DroopInverter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    /// Droop coefficient in Hz per p.u. power (inverters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_p_hz_per_pu: Option<f64>,
    /// Power measurement filter time constant in seconds (inverters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    /// Inertia, given directly (generators).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    /// Damping, given directly (generators).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default = "one")]
    pub voltage_pu: f64,
    #[serde(default)]
    pub g_shunt_pu: f64,
    #[serde(default)]
    pub theta0_rad: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub desired_frequency_hz: f64,
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub lines: Vec<LineSpec>,
}

/// Linear plant `ẋ = A x + B2 u + B1 d` with `x = [θ̂; ω̂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub n: usize,
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    /// Diagonal of M.
    pub m: DVector<f64>,
    /// Diagonal of D.
    pub d: DVector<f64>,
    pub l: DMatrix<f64>,
    /// Diagonal of V.
    pub v: DVector<f64>,
}

impl LinearModel {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b2.ncols()
    }

    /// Power-network neighbors of node `i` (nonzero off-diagonal Laplacian entries).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| j != i && self.l[(i, j)] != 0.0)
            .collect()
    }
}

/// Parses and validates a TOML network document.
pub fn parse_network(document: &str) -> Result<NetworkSpec> {
    let spec: NetworkSpec = toml::from_str(document).map_err(|e| Error::Config(e.to_string()))?;
    spec.validated()
}

impl NetworkSpec {
    pub fn four_bus_case() -> Self {
        parse_network(FOUR_BUS_TOML).expect("bundled 4-bus document is valid")
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("network spec serializes")
    }

    /// Checks every invariant and returns the network with buses sorted by id.
    pub fn validated(mut self) -> Result<Self> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::Config("no buses".into()));
        }
        if !(self.desired_frequency_hz > 0.0) {
            return Err(Error::InvalidParameter {
                entity: "desired_frequency_hz".into(),
                reason: format!("must be > 0, got {}", self.desired_frequency_hz),
            });
        }
        self.buses.sort_by_key(|b| b.id);
        for (k, bus) in self.buses.iter().enumerate() {
            if bus.id != k {
                return Err(Error::Config(format!(
                    "bus ids must be 0..{} without gaps or repeats (found id {} at position {k})",
                    n - 1,
                    bus.id
                )));
            }
            validate_bus(bus)?;
        }

        let mut seen = BTreeSet::new();
        for line in &self.lines {
            let entity = format!("line ({}, {})", line.from, line.to);
            if line.from >= n || line.to >= n {
                return Err(Error::InvalidParameter {
                    entity,
                    reason: format!("endpoint outside 0..{}", n - 1),
                });
            }
            if line.from == line.to {
                return Err(Error::InvalidParameter {
                    entity,
                    reason: "self loop".into(),
                });
            }
            if !(line.x_pu > 0.0) {
                return Err(Error::InvalidParameter {
                    entity,
                    reason: format!("reactance must be > 0, got {}", line.x_pu),
                });
            }
            if !(line.r_pu >= 0.0) {
                return Err(Error::InvalidParameter {
                    entity,
                    reason: format!("resistance must be >= 0, got {}", line.r_pu),
                });
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                return Err(Error::DuplicateLine {
                    from: line.from,
                    to: line.to,
                });
            }
        }

        if let Some(bus) = self.unreachable_bus() {
            return Err(Error::Disconnected { bus });
        }
        Ok(self)
    }

    fn unreachable_bus(&self) -> Option<usize> {
        let n = self.n();
        let mut adjacency = vec![Vec::new(); n];
        for line in &self.lines {
            adjacency[line.from].push(line.to);
            adjacency[line.to].push(line.from);
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        visited.iter().position(|v| !v)
    }

    /// Neighbor sets of the power network, sorted.
    pub fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = vec![BTreeSet::new(); self.n()];
        for line in &self.lines {
            sets[line.from].insert(line.to);
            sets[line.to].insert(line.from);
        }
        sets
    }
}

fn validate_bus(bus: &BusSpec) -> Result<()> {
    let entity = format!("bus {}", bus.id);
    let positive = |name: &str, value: Option<f64>| -> Result<()> {
        match value {
            None => Err(Error::InvalidParameter {
                entity: entity.clone(),
                reason: format!("missing field `{name}`"),
            }),
            Some(v) if !(v > 0.0) || !v.is_finite() => Err(Error::InvalidParameter {
                entity: entity.clone(),
                reason: format!("`{name}` must be > 0, got {v}"),
            }),
            Some(_) => Ok(()),
        }
    };
    match bus.kind {
        BusKind::DroopInverter => {
            positive("lambda_p_hz_per_pu", bus.lambda_p_hz_per_pu)?;
            positive("tau_s", bus.tau_s)?;
        }
        BusKind::SynchronousGenerator => {
            positive("inertia", bus.inertia)?;
            positive("damping", bus.damping)?;
        }
    }
    positive("voltage_pu", Some(bus.voltage_pu))?;
    if !bus.g_shunt_pu.is_finite() || !bus.theta0_rad.is_finite() {
        return Err(Error::InvalidParameter {
            entity,
            reason: "non-finite load or initial angle".into(),
        });
    }
    Ok(())
}

/// Magnitude of the imaginary part of `1 / (R + jX)`.
pub fn line_coupling(line: &LineSpec) -> f64 {
    line.x_pu / (line.r_pu * line.r_pu + line.x_pu * line.x_pu)
}

/// `(M, D)` of a bus in internal units. Inverters: `M = τ/λ`, `D = 1/λ` with
/// `λ` converted from Hz/p.u. to rad/s per p.u.
pub fn inertia_damping(bus: &BusSpec) -> (f64, f64) {
    match bus.kind {
        BusKind::DroopInverter => {
            let lambda = hz_to_rad(bus.lambda_p_hz_per_pu.unwrap_or(f64::NAN));
            let tau = bus.tau_s.unwrap_or(f64::NAN);
            (tau / lambda, 1.0 / lambda)
        }
        BusKind::SynchronousGenerator => (
            bus.inertia.unwrap_or(f64::NAN),
            bus.damping.unwrap_or(f64::NAN),
        ),
    }
}

pub fn assemble_laplacian(spec: &NetworkSpec) -> DMatrix<f64> {
    let n = spec.n();
    let mut l = DMatrix::zeros(n, n);
    for line in &spec.lines {
        let (i, j) = (line.from, line.to);
        let w = line_coupling(line) * spec.buses[i].voltage_pu * spec.buses[j].voltage_pu;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

pub fn assemble_state_space(spec: &NetworkSpec) -> LinearModel {
    let n = spec.n();
    let (m, d): (Vec<f64>, Vec<f64>) = spec.buses.iter().map(inertia_damping).unzip();
    let m = DVector::from_vec(m);
    let d = DVector::from_vec(d);
    let v = DVector::from_iterator(n, spec.buses.iter().map(|b| b.voltage_pu));
    let l = assemble_laplacian(spec);

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b1 = DMatrix::zeros(2 * n, n);
    let mut b2 = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        for j in 0..n {
            a[(n + i, j)] = -l[(i, j)] / m[i];
        }
        a[(n + i, n + i)] = -d[i] / m[i];
        b2[(n + i, i)] = 1.0 / m[i];
        b1[(n + i, i)] = v[i] * v[i] / m[i];
    }
    LinearModel {
        n,
        a,
        b1,
        b2,
        m,
        d,
        l,
        v,
    }
}

/// Constant `c_i` such that `P_set = u - c_i` turns the small-angle dynamics
/// into `M ω̇ = -D ω̂ - (L θ̂)_i + u + v² d`.
pub fn setpoint_offset(spec: &NetworkSpec, i: usize) -> f64 {
    let bus = &spec.buses[i];
    let vi = bus.voltage_pu;
    let mut c = -bus.g_shunt_pu * vi * vi;
    for line in &spec.lines {
        let j = if line.from == i {
            line.to
        } else if line.to == i {
            line.from
        } else {
            continue;
        };
        let other = &spec.buses[j];
        c -= line_coupling(line) * vi * other.voltage_pu * (bus.theta0_rad - other.theta0_rad);
    }
    c
}
