//! Paired payment/incurred claims triangles.
//!
//! A triangle with maximal development index `J` holds cumulative payments
//! `P(i,j)` and incurred losses `I(i,j)` for accident years `0..=J` and
//! development years `0..=J-i`. Storage is dense row-major over the full
//! `(J+1)x(J+1)` grid; a cell is observed iff `i + j <= J`.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    /// Cumulative payments.
    P,
    /// Incurred losses.
    I,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::P => "P",
            Source::I => "I",
        })
    }
}

/// Address of one cell of a paired triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub accident: usize,
    pub development: usize,
    pub source: Source,
}

impl Cell {
    pub const fn new(accident: usize, development: usize, source: Source) -> Self {
        Self { accident, development, source }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.accident, self.development, self.source)
    }
}

/// One row of the CSV ingestion format.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCell {
    pub accident: usize,
    pub development: usize,
    pub source: Source,
    pub value: f64,
}

impl RawCell {
    pub fn cell(&self) -> Cell {
        Cell::new(self.accident, self.development, self.source)
    }
}

/// Validated pair of cumulative triangles sharing the same `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClaimsTriangle {
    dev_max: usize,
    payments: Vec<f64>,
    incurred: Vec<f64>,
}

impl ClaimsTriangle {
    /// Builds a triangle from ragged rows: row `i` must hold `J+1-i` values.
    pub fn from_rows(payments: &[Vec<f64>], incurred: &[Vec<f64>]) -> Result<Self> {
        let mut raw = Vec::new();
        for (rows, source) in [(payments, Source::P), (incurred, Source::I)] {
            for (i, row) in rows.iter().enumerate() {
                for (j, &value) in row.iter().enumerate() {
                    raw.push(RawCell { accident: i, development: j, source, value });
                }
            }
        }
        validate_triangle(&raw)
    }

    /// Maximal development index `J`.
    pub fn dev_max(&self) -> usize {
        self.dev_max
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        i <= self.dev_max && j <= self.dev_max - i
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.is_observed(i, j).then(|| i * (self.dev_max + 1) + j)
    }

    pub fn payment(&self, i: usize, j: usize) -> Option<f64> {
        self.slot(i, j).map(|k| self.payments[k])
    }

    pub fn incurred(&self, i: usize, j: usize) -> Option<f64> {
        self.slot(i, j).map(|k| self.incurred[k])
    }

    /// Latest observed cumulative payment `P(i, J-i)`.
    pub fn latest_payment(&self, i: usize) -> f64 {
        self.payments[i * (self.dev_max + 1) + self.dev_max - i]
    }

    /// Latest observed incurred loss `I(i, J-i)`.
    pub fn latest_incurred(&self, i: usize) -> f64 {
        self.incurred[i * (self.dev_max + 1) + self.dev_max - i]
    }

    /// All observed cells in CSV order (payments first, row-major).
    pub fn cells(&self) -> Vec<RawCell> {
        let n = self.dev_max;
        let mut out = Vec::with_capacity((n + 1) * (n + 2));
        for source in [Source::P, Source::I] {
            for i in 0..=n {
                for j in 0..=n - i {
                    let value = match source {
                        Source::P => self.payments[i * (n + 1) + j],
                        Source::I => self.incurred[i * (n + 1) + j],
                    };
                    out.push(RawCell { accident: i, development: j, source, value });
                }
            }
        }
        out
    }

    /// Log payments and log incurred, row `i` of length `J+1-i`.
    pub fn log_levels(&self) -> LogLevels {
        let n = self.dev_max;
        let rows = |v: &[f64]| -> Vec<Vec<f64>> {
            (0..=n)
                .map(|i| (0..=n - i).map(|j| v[i * (n + 1) + j].ln()).collect())
                .collect()
        };
        LogLevels { log_p: rows(&self.payments), log_i: rows(&self.incurred) }
    }
}

/// Validates raw cells and assembles a [`ClaimsTriangle`].
///
/// Every violating cell is reported, not just the first one.
pub fn validate_triangle(raw_cells: &[RawCell]) -> Result<ClaimsTriangle> {
    let extent = |src: Source| {
        raw_cells
            .iter()
            .filter(|c| c.source == src)
            .map(|c| c.accident.max(c.development))
            .max()
    };
    let (jp, ji) = match (extent(Source::P), extent(Source::I)) {
        (Some(p), Some(i)) => (p, i),
        (p, i) => {
            let mut missing = Vec::new();
            if p.is_none() {
                missing.push(Cell::new(0, 0, Source::P));
            }
            if i.is_none() {
                missing.push(Cell::new(0, 0, Source::I));
            }
            return Err(Error::MissingCell(missing));
        }
    };
    if jp != ji {
        return Err(Error::ShapeMismatch { payments: jp, incurred: ji });
    }
    let n = jp;

    let outside: Vec<Cell> = raw_cells
        .iter()
        .filter(|c| c.accident + c.development > n)
        .map(RawCell::cell)
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutOfTriangle(outside));
    }

    let mut seen = BTreeSet::new();
    let dups: BTreeSet<Cell> =
        raw_cells.iter().map(RawCell::cell).filter(|c| !seen.insert(*c)).collect();
    if !dups.is_empty() {
        return Err(Error::DuplicateCell(dups.into_iter().collect()));
    }

    let bad: Vec<(Cell, f64)> = raw_cells
        .iter()
        .filter(|c| !(c.value > 0.0 && c.value.is_finite()))
        .map(|c| (c.cell(), c.value))
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonPositiveValue(bad));
    }

    let mut payments = vec![f64::NAN; (n + 1) * (n + 1)];
    let mut incurred = vec![f64::NAN; (n + 1) * (n + 1)];
    for c in raw_cells {
        let k = c.accident * (n + 1) + c.development;
        match c.source {
            Source::P => payments[k] = c.value,
            Source::I => incurred[k] = c.value,
        }
    }
    let mut missing = Vec::new();
    for (store, source) in [(&payments, Source::P), (&incurred, Source::I)] {
        for i in 0..=n {
            for j in 0..=n - i {
                if store[i * (n + 1) + j].is_nan() {
                    missing.push(Cell::new(i, j, source));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCell(missing));
    }

    for k in 0..payments.len() {
        if payments[k].is_nan() {
            payments[k] = 0.0;
            incurred[k] = 0.0;
        }
    }
    let (p0, i0) = (payments[n], incurred[n]);
    if p0 != i0 {
        return Err(Error::TerminalMismatch { payment: p0, incurred: i0 });
    }
    Ok(ClaimsTriangle { dev_max: n, payments, incurred })
}

/// Log cumulative levels on the observed cells, row `i` of length `J+1-i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLevels {
    pub log_p: Vec<Vec<f64>>,
    pub log_i: Vec<Vec<f64>>,
}

/// Log development ratios of a triangle.
///
/// `xi[i][j] = log P(i,j) - log P(i,j-1)` with `xi[i][0] = log P(i,0)`, and
/// `zeta[i][j] = log I(i,j) - log I(i,j+1)` for `j < J-i`. Under the model
/// `zeta[i][j]` has mean `-Psi_j`. The latest log incurred per year anchors
/// the backward incurred recursion so that the ratios determine the levels.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDevelopmentRatios {
    pub dev_max: usize,
    pub xi: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub log_incurred_latest: Vec<f64>,
}

impl LogDevelopmentRatios {
    pub fn from_levels(levels: &LogLevels) -> Self {
        let n = levels.log_p.len() - 1;
        let xi = levels
            .log_p
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(row.len());
                out.push(row[0]);
                out.extend(row.windows(2).map(|w| w[1] - w[0]));
                out
            })
            .collect();
        let zeta = levels
            .log_i
            .iter()
            .map(|row| row.windows(2).map(|w| w[0] - w[1]).collect())
            .collect();
        let log_incurred_latest = levels.log_i.iter().map(|r| r[r.len() - 1]).collect();
        Self { dev_max: n, xi, zeta, log_incurred_latest }
    }

    /// Inverse of [`LogDevelopmentRatios::from_levels`].
    pub fn cumulate(&self) -> LogLevels {
        let log_p = self
            .xi
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let log_i = self
            .zeta
            .iter()
            .zip(&self.log_incurred_latest)
            .map(|(row, &last)| {
                let mut out = vec![0.0; row.len() + 1];
                out[row.len()] = last;
                for j in (0..row.len()).rev() {
                    out[j] = out[j + 1] + row[j];
                }
                out
            })
            .collect();
        LogLevels { log_p, log_i }
    }

    /// Latest log payment `log P(i, J-i)`.
    pub fn log_payment_latest(&self, i: usize) -> f64 {
        self.xi[i].iter().sum()
    }

    /// Diagonal ratio `log(I(i,J-i) / P(i,J-i))`.
    pub fn diagonal_ratio(&self, i: usize) -> f64 {
        self.log_incurred_latest[i] - self.log_payment_latest(i)
    }
}

pub fn log_ratios(tri: &ClaimsTriangle) -> LogDevelopmentRatios {
    LogDevelopmentRatios::from_levels(&tri.log_levels())
}

/// Reordering of a flat vector: output `k` is input `order[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationPlan {
    order: Vec<usize>,
    labels: Vec<Cell>,
}

impl PermutationPlan {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut hit = vec![false; n];
        for &k in &order {
            if k >= n || std::mem::replace(&mut hit[k], true) {
                return Err(Error::InvalidPermutation(format!(
                    "index {k} repeated or out of range for length {n}"
                )));
            }
        }
        Ok(Self { order, labels: Vec::new() })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect(), labels: Vec::new() }
    }

    pub fn reversal(n: usize) -> Self {
        Self { order: (0..n).rev().collect(), labels: Vec::new() }
    }

    /// Plan taking a vector laid out as `layout` into the order `target`.
    pub fn from_cells(layout: &[Cell], target: &[Cell]) -> Result<Self> {
        if layout.len() != target.len() {
            return Err(Error::LengthMismatch { expected: layout.len(), got: target.len() });
        }
        let order = target
            .iter()
            .map(|t| {
                layout.iter().position(|c| c == t).ok_or_else(|| {
                    Error::InvalidPermutation(format!("cell {t} not present in the layout"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut plan = Self::new(order)?;
        plan.labels = target.to_vec();
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Cell labels in target order (empty for anonymous plans).
    pub fn labels(&self) -> &[Cell] {
        &self.labels
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (k, &src) in self.order.iter().enumerate() {
            inv[src] = k;
        }
        Self { order: inv, labels: Vec::new() }
    }

    /// Plan equivalent to applying `self` and then `then`.
    pub fn then(&self, then: &PermutationPlan) -> Result<Self> {
        if self.len() != then.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: then.len() });
        }
        Ok(Self {
            order: then.order.iter().map(|&k| self.order[k]).collect(),
            labels: then.labels.clone(),
        })
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.order.len() {
            return Err(Error::LengthMismatch { expected: self.order.len(), got: n });
        }
        Ok(())
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(v.len())?;
        Ok(DVector::from_iterator(v.len(), self.order.iter().map(|&k| v[k])))
    }

    /// Conjugates a square matrix: rows and columns follow the same plan.
    pub fn apply_symmetric(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m.nrows())?;
        self.check(m.ncols())?;
        let n = m.nrows();
        Ok(DMatrix::from_fn(n, n, |r, c| m[(self.order[r], self.order[c])]))
    }
}

pub fn apply_permutation(vec: &[f64], plan: &PermutationPlan) -> Result<Vec<f64>> {
    plan.check(vec.len())?;
    Ok(plan.order.iter().map(|&k| vec[k]).collect())
}

/// Canonical layout of the full ratio vector of accident year `i`:
/// `xi_0..xi_J` followed by `zeta_0..zeta_{J-1}`.
pub fn ratio_layout(dev_max: usize, i: usize) -> Vec<Cell> {
    (0..=dev_max)
        .map(|j| Cell::new(i, j, Source::P))
        .chain((0..dev_max).map(|j| Cell::new(i, j, Source::I)))
        .collect()
}

/// All payment ratios then all incurred ratios (the canonical layout).
pub fn blocked_plan(dev_max: usize, i: usize) -> PermutationPlan {
    let layout = ratio_layout(dev_max, i);
    PermutationPlan::from_cells(&layout, &layout).expect("layout is a permutation of itself")
}

/// Interleaved order `xi_0, xi_1, zeta_0, xi_2, zeta_1, ..., xi_J, zeta_{J-1}`.
pub fn interleaved_plan(dev_max: usize, i: usize) -> PermutationPlan {
    let mut target = vec![Cell::new(i, 0, Source::P)];
    for j in 1..=dev_max {
        target.push(Cell::new(i, j, Source::P));
        target.push(Cell::new(i, j - 1, Source::I));
    }
    PermutationPlan::from_cells(&ratio_layout(dev_max, i), &target)
        .expect("interleaved order covers the layout")
}

/// Unobserved ratios first, then observed ones, for accident year `i`.
///
/// Observed: `xi_j` for `j <= J-i` and `zeta_j` for `j < J-i`.
pub fn unobserved_first_plan(dev_max: usize, i: usize) -> PermutationPlan {
    let k = dev_max - i;
    let layout = ratio_layout(dev_max, i);
    let observed = |c: &Cell| match c.source {
        Source::P => c.development <= k,
        Source::I => c.development < k,
    };
    let target: Vec<Cell> = layout
        .iter()
        .filter(|c| !observed(c))
        .chain(layout.iter().filter(|c| observed(c)))
        .copied()
        .collect();
    PermutationPlan::from_cells(&layout, &target).expect("partition covers the layout")
}

/// Observed / augmented split of the per-year log-loss cells.
///
/// Cells `(i, J, I)` for `i >= 1` are neither observed nor free: they equal
/// the payment ultimate and are listed in `pinned_incurred`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentationPartition {
    pub dev_max: usize,
    pub observed_payment: Vec<Cell>,
    pub observed_incurred: Vec<Cell>,
    pub aux_payment: Vec<Cell>,
    pub aux_incurred: Vec<Cell>,
    pub pinned_incurred: Vec<Cell>,
}

impl AugmentationPartition {
    /// Development indices of the augmented payment cells of year `i`.
    pub fn aux_payment_range(&self, i: usize) -> Range<usize> {
        self.dev_max - i + 1..self.dev_max + 1
    }

    /// Development indices of the augmented incurred cells of year `i`.
    pub fn aux_incurred_range(&self, i: usize) -> Range<usize> {
        (self.dev_max - i + 1).min(self.dev_max)..self.dev_max
    }

    /// Number of augmented cells of year `i` (payments then incurred).
    pub fn year_len(&self, i: usize) -> usize {
        self.aux_payment_range(i).len() + self.aux_incurred_range(i).len()
    }

    /// Slot of year `i` inside the year-blocked augmented vector.
    pub fn year_block(&self, i: usize) -> Range<usize> {
        let start: usize = (0..i).map(|k| self.year_len(k)).sum();
        start..start + self.year_len(i)
    }

    pub fn aux_len(&self) -> usize {
        self.aux_payment.len() + self.aux_incurred.len()
    }

    /// Augmented cells in year-blocked order (payments then incurred per year).
    pub fn aux_cells(&self) -> Vec<Cell> {
        (0..=self.dev_max)
            .flat_map(|i| {
                self.aux_payment_range(i)
                    .map(move |j| Cell::new(i, j, Source::P))
                    .chain(self.aux_incurred_range(i).map(move |j| Cell::new(i, j, Source::I)))
            })
            .collect()
    }
}

pub fn partition_observed_aux(dev_max: usize) -> Result<AugmentationPartition> {
    if dev_max < 1 {
        return Err(Error::InvalidIndex("augmentation needs J >= 1".into()));
    }
    let n = dev_max;
    let mut part = AugmentationPartition {
        dev_max: n,
        observed_payment: Vec::new(),
        observed_incurred: Vec::new(),
        aux_payment: Vec::new(),
        aux_incurred: Vec::new(),
        pinned_incurred: Vec::new(),
    };
    for i in 0..=n {
        for j in 0..=n {
            let p = Cell::new(i, j, Source::P);
            let c = Cell::new(i, j, Source::I);
            if j <= n - i {
                part.observed_payment.push(p);
                part.observed_incurred.push(c);
            } else {
                part.aux_payment.push(p);
                if j < n {
                    part.aux_incurred.push(c);
                } else {
                    part.pinned_incurred.push(c);
                }
            }
        }
    }
    Ok(part)
}
