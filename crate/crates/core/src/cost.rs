//! Cost-matrix computation: qualifies interface pairs against the most
//! matching policy's requirement condition and assigns costs from its
//! evaluation item.
//!
//! Rows are the local host's interfaces in ascending index order; columns are
//! the remote host's interfaces, or a single column when the policy uses
//! local factors only.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{EndToEndQoS, HostContextView, InterfaceSnapshot};
use crate::policy::{EvaluationItem, FactorName, Metric, Policy, RequirementCondition, Target};

/// Finite "usable but unranked" cost.
pub const MAX: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub const MAX: Cost = Cost::Finite(MAX);
    pub const ZERO: Cost = Cost::Finite(0.0);

    /// Clamps into `[0, MAX]`.
    pub fn finite(v: f64) -> Cost {
        Cost::Finite(v.clamp(0.0, MAX))
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Ordering::Less,
            (Cost::Infinite, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infinite, Cost::Infinite) => Ordering::Equal,
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("INFINITE"),
        }
    }
}

impl Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cost::Finite(v) => s.serialize_f64(*v),
            Cost::Infinite => s.serialize_str("INFINITE"),
        }
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if (0.0..=MAX).contains(&v) => Ok(Cost::Finite(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("cost {v} outside [0, MAX]"))),
            Raw::Str(s) if s == "INFINITE" => Ok(Cost::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad cost {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Matrix,
    Vector,
}

/// Row-major cost structure. A vector has a single column that applies to
/// every remote interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    shape: Shape,
    entries: Vec<Cost>,
}

impl CostMatrix {
    pub fn vector(entries: Vec<Cost>) -> Self {
        assert!(!entries.is_empty(), "cost vector needs at least one row");
        Self {
            rows: entries.len(),
            cols: 1,
            shape: Shape::Vector,
            entries,
        }
    }

    pub fn matrix(rows: usize, cols: usize, entries: Vec<Cost>) -> Self {
        assert!(rows >= 1 && cols >= 1, "cost matrix needs at least one row and column");
        assert_eq!(entries.len(), rows * cols, "entry count must be rows * cols");
        Self {
            rows,
            cols,
            shape: Shape::Matrix,
            entries,
        }
    }

    pub fn from_rows(rows: Vec<Vec<Cost>>) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n), "ragged cost matrix");
        Self::matrix(m, n, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Entry `(i, j)`; a vector ignores `j`.
    pub fn get(&self, i: usize, j: usize) -> Cost {
        match self.shape {
            Shape::Vector => self.entries[i],
            Shape::Matrix => self.entries[i * self.cols + j],
        }
    }

    pub fn row(&self, i: usize) -> &[Cost] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[Cost] {
        &self.entries
    }

    /// Expands a vector to `rows × cols` with identical columns. Matrices are
    /// returned unchanged.
    pub fn broadcast(&self, cols: usize) -> CostMatrix {
        match self.shape {
            Shape::Matrix => self.clone(),
            Shape::Vector => {
                let entries = self
                    .entries
                    .iter()
                    .flat_map(|c| std::iter::repeat_n(*c, cols))
                    .collect();
                CostMatrix::matrix(self.rows, cols, entries)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Better {
    #[serde(rename = "lower")]
    LowerIsBetter,
    #[serde(rename = "higher")]
    HigherIsBetter,
}

/// Fixed normalization range of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub factor: FactorName,
    pub lo: f64,
    pub hi: f64,
    pub direction: Better,
    pub end_to_end: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorCatalog {
    specs: BTreeMap<FactorName, FactorSpec>,
}

impl FactorCatalog {
    pub fn new(specs: Vec<FactorSpec>) -> Result<Self, CostError> {
        let mut map = BTreeMap::new();
        for s in specs {
            if !(s.lo.is_finite() && s.hi.is_finite() && s.lo < s.hi) {
                return Err(CostError::Catalog(format!(
                    "{:?}: lo {} must be below hi {}",
                    s.factor, s.lo, s.hi
                )));
            }
            if s.end_to_end != s.factor.is_end_to_end() {
                return Err(CostError::Catalog(format!(
                    "{:?}: end_to_end must be {}",
                    s.factor,
                    s.factor.is_end_to_end()
                )));
            }
            if map.insert(s.factor, s.clone()).is_some() {
                return Err(CostError::Catalog(format!("{:?} listed twice", s.factor)));
            }
        }
        Ok(Self { specs: map })
    }

    pub fn get(&self, f: FactorName) -> Option<&FactorSpec> {
        self.specs.get(&f)
    }

    pub fn specs(&self) -> impl Iterator<Item = &FactorSpec> {
        self.specs.values()
    }

    pub fn is_end_to_end(&self, f: FactorName) -> bool {
        self.get(f).map_or(f.is_end_to_end(), |s| s.end_to_end)
    }
}

impl Default for FactorCatalog {
    fn default() -> Self {
        use Better::*;
        let spec = |factor, lo, hi, direction| FactorSpec {
            factor,
            lo,
            hi,
            direction,
            end_to_end: FactorName::is_end_to_end(factor),
        };
        Self::new(vec![
            spec(FactorName::ChargeRate, 0.0, 10.0, LowerIsBetter),
            spec(FactorName::RttMs, 0.0, 500.0, LowerIsBetter),
            spec(FactorName::PacketLoss, 0.0, 1.0, LowerIsBetter),
            spec(FactorName::SignalDbm, -100.0, -40.0, HigherIsBetter),
            spec(FactorName::BandwidthKbps, 0.0, 10_000.0, HigherIsBetter),
            spec(FactorName::PowerMw, 0.0, 2_000.0, LowerIsBetter),
            spec(FactorName::SpeedKbps, 0.0, 54_000.0, HigherIsBetter),
        ])
        .expect("default catalog is well formed")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("missing end-to-end context for {0:?}")]
    MissingContext(Metric),
    #[error("missing reading for factor {0:?}")]
    MissingReading(FactorName),
    #[error("policy {0} references end-to-end factors but no remote interfaces were given")]
    ShapeError(String),
    #[error("factor catalog: {0}")]
    Catalog(String),
}

/// Raw reading of a requirement metric.
pub fn metric_reading(
    metric: Metric,
    local: &InterfaceSnapshot,
    e2e: Option<&EndToEndQoS>,
) -> Result<f64, CostError> {
    let path = || e2e.ok_or(CostError::MissingContext(metric));
    Ok(match metric {
        Metric::SignalDbm => local.signal_strength,
        Metric::ChargeRate => local.charge_rate,
        Metric::SpeedKbps => local.current_speed,
        Metric::RttMs => path()?.rtt,
        Metric::BandwidthUpKbps => path()?.bandwidth_up,
        Metric::BandwidthDownKbps => path()?.bandwidth_down,
        Metric::PacketLoss => path()?.packet_loss_rate,
    })
}

pub fn requirement_satisfied(
    rc: &RequirementCondition,
    local: &InterfaceSnapshot,
    e2e: Option<&EndToEndQoS>,
) -> Result<bool, CostError> {
    for p in &rc.predicates {
        if !p.holds(metric_reading(p.metric, local, e2e)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Maps a raw reading to `[0, 1]`, where 0 is the best value.
pub fn normalize_factor(spec: &FactorSpec, raw: f64) -> f64 {
    let t = ((raw - spec.lo) / (spec.hi - spec.lo)).clamp(0.0, 1.0);
    match spec.direction {
        Better::LowerIsBetter => t,
        Better::HigherIsBetter => 1.0 - t,
    }
}

/// Raw factor readings for one interface, plus path readings when `e2e` is
/// given. Bandwidth is the smaller of the two directions.
pub fn factor_readings(
    local: &InterfaceSnapshot,
    e2e: Option<&EndToEndQoS>,
) -> BTreeMap<FactorName, f64> {
    let mut r = BTreeMap::from([
        (FactorName::ChargeRate, local.charge_rate),
        (FactorName::SignalDbm, local.signal_strength),
        (FactorName::PowerMw, local.power_draw),
        (FactorName::SpeedKbps, local.current_speed),
    ]);
    if let Some(q) = e2e {
        r.insert(FactorName::RttMs, q.rtt);
        r.insert(FactorName::PacketLoss, q.packet_loss_rate);
        r.insert(FactorName::BandwidthKbps, q.bandwidth_up.min(q.bandwidth_down));
    }
    r
}

/// `Σ w · normalize(raw)` over the weight entries.
pub fn weight_cost(
    entries: &[(FactorName, f64)],
    readings: &BTreeMap<FactorName, f64>,
    catalog: &FactorCatalog,
) -> Result<f64, CostError> {
    let mut sum = 0.0;
    for (factor, w) in entries {
        let spec = catalog.get(*factor).ok_or(CostError::MissingReading(*factor))?;
        let raw = readings.get(factor).ok_or(CostError::MissingReading(*factor))?;
        sum += w * normalize_factor(spec, *raw);
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Builds the cost structure of `local` under `mmp`.
///
/// `remote` lists the peer's interface indices in ascending order; it is
/// required when the policy references end-to-end factors, in which case an
/// `m × n` matrix is produced, otherwise an `m`-vector.
pub fn compute_cost_matrix(
    mmp: &Policy,
    local: &HostContextView,
    remote: Option<&[u32]>,
    catalog: &FactorCatalog,
) -> Result<CostMatrix, CostError> {
    let m = local.interfaces.len();
    let e2e = mmp.references_end_to_end(|f| catalog.is_end_to_end(f));
    let columns: Vec<Option<u32>> = if e2e {
        match remote {
            Some(r) if !r.is_empty() => r.iter().map(|j| Some(*j)).collect(),
            _ => return Err(CostError::ShapeError(mmp.id.clone())),
        }
    } else {
        vec![None]
    };
    let n = columns.len();
    let mut entries = vec![Cost::Infinite; m * n];

    for (col, remote_idx) in columns.iter().enumerate() {
        let path = |iface: &InterfaceSnapshot| remote_idx.and_then(|j| local.e2e(iface.index(), j));

        // qualification
        let mut qualified = Vec::with_capacity(m);
        for (row, iface) in local.interfaces.iter().enumerate() {
            if !iface.usable() {
                continue;
            }
            let ok = match &mmp.rc {
                None => true,
                // a pair with no path readings cannot prove the requirement
                Some(rc) => requirement_satisfied(rc, iface, path(iface)).unwrap_or(false),
            };
            if ok {
                entries[row * n + col] = Cost::MAX;
                qualified.push(row);
            }
        }

        match &mmp.ei {
            EvaluationItem::Use(target) | EvaluationItem::Default(target) => {
                if let Some(&row) = qualified
                    .iter()
                    .find(|&&row| target.matches(&local.interfaces[row]))
                {
                    entries[row * n + col] = Cost::ZERO;
                }
            }
            EvaluationItem::Priority(list) => {
                for &row in &qualified {
                    if let Some(v) = priority_of(list, &local.interfaces[row]) {
                        entries[row * n + col] = Cost::finite(v as f64);
                    }
                }
            }
            EvaluationItem::Weight(weights) => {
                for &row in &qualified {
                    let iface = &local.interfaces[row];
                    let readings = factor_readings(iface, path(iface));
                    entries[row * n + col] = match weight_cost(weights, &readings, catalog) {
                        Ok(c) => Cost::finite(c),
                        Err(_) => Cost::Infinite,
                    };
                }
            }
        }
    }

    Ok(if e2e {
        CostMatrix::matrix(m, n, entries)
    } else {
        CostMatrix::vector(entries)
    })
}

/// An index target beats a technology target for the same interface.
fn priority_of(list: &[(Target, i64)], iface: &InterfaceSnapshot) -> Option<i64> {
    list.iter()
        .find(|(t, _)| matches!(t, Target::Index(_)) && t.matches(iface))
        .or_else(|| list.iter().find(|(t, _)| t.matches(iface)))
        .map(|(_, v)| *v)
}

/// Cost vector used when no policy matched: the lowest-index usable
/// interface costs 0, other usable interfaces MAX, the rest INFINITE.
pub fn os_fallback_costs(local: &HostContextView) -> CostMatrix {
    let mut picked = false;
    let entries = local
        .interfaces
        .iter()
        .map(|iface| {
            if !iface.usable() {
                Cost::Infinite
            } else if !picked {
                picked = true;
                Cost::ZERO
            } else {
                Cost::MAX
            }
        })
        .collect();
    CostMatrix::vector(entries)
}
