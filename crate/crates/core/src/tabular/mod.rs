//! Typed tabular data and its mapping to the continuous encoded space.
//!
//! Numeric columns occupy one encoded dimension; a categorical column with
//! `C` categories occupies `⌈log2 C⌉` dimensions holding the big-endian
//! binary code of the category index ("analog bits"). Every encoded
//! dimension is then standardized with the mean and population standard
//! deviation of its observed entries, and missing entries start at 0.

mod csvio;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ndcore::{Mask, Matrix};
use crate::{Error, Result};

pub use csvio::{
    read_csv, read_csv_from_reader, read_mask_csv, read_schema, write_csv, write_mask_csv,
    write_schema,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Column name, kind and (for categoricals) the ordered category list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    /// Encoded width: 1 for numerics, `⌈log2 C⌉` for categoricals.
    pub fn encoded_width(&self) -> usize {
        match self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => bit_width(self.categories.len()),
        }
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_categorical() {
            if self.categories.len() < 2 {
                return Err(Error::Data(format!(
                    "categorical column '{}' needs at least 2 categories, has {}",
                    self.name,
                    self.categories.len()
                )));
            }
            for (i, c) in self.categories.iter().enumerate() {
                if self.categories[..i].contains(c) {
                    return Err(Error::Data(format!(
                        "categorical column '{}' lists category '{c}' twice",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Numeric(f64),
    Category(usize),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Rows of typed cells under a column schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub specs: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Cell>>,
}

impl TabularDataset {
    pub fn new(specs: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let ds = Self { specs, rows };
        ds.validate()?;
        Ok(ds)
    }

    /// All-numeric dataset from a matrix; NaN entries become missing.
    pub fn from_numeric(names: &[String], values: &Matrix) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::shape("TabularDataset::from_numeric", "one name per column"));
        }
        let specs = names.iter().map(ColumnSpec::numeric).collect();
        let rows = (0..values.rows())
            .map(|r| {
                values
                    .row(r)
                    .iter()
                    .map(|&v| if v.is_nan() { Cell::Missing } else { Cell::Numeric(v) })
                    .collect()
            })
            .collect();
        Self::new(specs, rows)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.specs {
            s.validate()?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.specs.len() {
                return Err(Error::Data(format!(
                    "row {r} has {} cells for {} columns",
                    row.len(),
                    self.specs.len()
                )));
            }
            for (cell, spec) in row.iter().zip(&self.specs) {
                match (cell, spec.kind) {
                    (Cell::Missing, _) => {}
                    (Cell::Numeric(v), ColumnKind::Numeric) if v.is_finite() => {}
                    (Cell::Category(i), ColumnKind::Categorical) if *i < spec.categories.len() => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "row {r}, column '{}': cell {cell:?} does not fit a {:?} column",
                            spec.name, spec.kind
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.specs.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Cell-level mask of the cells that are currently missing.
    pub fn missing_mask(&self) -> Mask {
        let bits = self.rows.iter().flatten().map(Cell::is_missing).collect();
        Mask::from_vec(self.n_rows(), self.n_cols(), bits).expect("rows validated")
    }

    /// Copy with every cell flagged in `mask` turned into [`Cell::Missing`].
    pub fn with_missing(&self, mask: &Mask) -> Result<Self> {
        if mask.shape() != (self.n_rows(), self.n_cols()) {
            return Err(Error::shape(
                "TabularDataset::with_missing",
                format!("mask {:?} vs data {}x{}", mask.shape(), self.n_rows(), self.n_cols()),
            ));
        }
        let mut out = self.clone();
        for (r, row) in out.rows.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                if mask.is_missing(r, c) {
                    *cell = Cell::Missing;
                }
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            specs: self.specs.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Numeric view for mask models: numeric cells as-is, categorical cells
    /// as their index, missing as NaN.
    pub fn numeric_view(&self) -> Matrix {
        let data = self
            .rows
            .iter()
            .flatten()
            .map(|c| match c {
                Cell::Missing => f64::NAN,
                Cell::Numeric(v) => *v,
                Cell::Category(i) => *i as f64,
            })
            .collect();
        Matrix::from_vec(self.n_rows(), self.n_cols(), data).expect("rows validated")
    }

    /// Re-expresses categorical cells under `specs` (matched by column name
    /// and category label). Fails on a category the target schema lacks.
    pub fn conform_to(&self, specs: &[ColumnSpec]) -> Result<Self> {
        if specs.len() != self.specs.len() {
            return Err(Error::Data(format!(
                "schema has {} columns, data has {}",
                specs.len(),
                self.specs.len()
            )));
        }
        let mut rows = self.rows.clone();
        for (c, (mine, theirs)) in self.specs.iter().zip(specs).enumerate() {
            if mine.name != theirs.name || mine.kind != theirs.kind {
                return Err(Error::Data(format!(
                    "column {c}: '{}' ({:?}) does not match schema column '{}' ({:?})",
                    mine.name, mine.kind, theirs.name, theirs.kind
                )));
            }
            if !mine.is_categorical() {
                continue;
            }
            for row in rows.iter_mut() {
                if let Cell::Category(i) = row[c] {
                    let label = &mine.categories[i];
                    let j = theirs.category_index(label).ok_or_else(|| {
                        Error::Data(format!(
                            "column '{}': category '{label}' was not seen in training",
                            mine.name
                        ))
                    })?;
                    row[c] = Cell::Category(j);
                }
            }
        }
        Self::new(specs.to_vec(), rows)
    }
}

/// `⌈log2 c⌉` for `c >= 2` (and 0 for `c <= 1`).
pub fn bit_width(c: usize) -> usize {
    if c <= 1 {
        0
    } else {
        (usize::BITS - (c - 1).leading_zeros()) as usize
    }
}

/// Big-endian binary code of `index`, `⌈log2 C⌉` entries of 0.0/1.0.
pub fn analog_bits(index: usize, c: usize) -> Result<Vec<f64>> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!("analog bits need C >= 2, got {c}")));
    }
    if index >= c {
        return Err(Error::InvalidArgument(format!("category index {index} out of range for C = {c}")));
    }
    let w = bit_width(c);
    Ok((0..w).rev().map(|b| ((index >> b) & 1) as f64).collect())
}

/// Thresholds each entry at 0.5, reads the bits big-endian and clamps the
/// result to `C − 1`.
pub fn analog_bits_decode(bits: &[f64], c: usize) -> usize {
    let raw = bits
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | usize::from(b > 0.5));
    raw.min(c.saturating_sub(1))
}

/// Per-encoded-dimension statistics plus the column → span map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub spans: Vec<Range<usize>>,
    pub col_means: Vec<f64>,
    pub col_stds: Vec<f64>,
}

impl Standardization {
    pub fn width(&self) -> usize {
        self.col_means.len()
    }
}

/// Standardized encoded values, the encoded-space mask (true = missing) and
/// the statistics used to produce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub values: Matrix,
    pub mask: Mask,
    pub stats: Standardization,
}

impl EncodedMatrix {
    pub fn spans(&self) -> &[Range<usize>] {
        &self.stats.spans
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            values: self.values.select_rows(idx),
            mask: self.mask.select_rows(idx),
            stats: self.stats.clone(),
        }
    }

    /// Same encoding with the values replaced (e.g. by an imputation).
    pub fn with_values(&self, values: Matrix) -> Result<EncodedMatrix> {
        if values.shape() != self.values.shape() {
            return Err(Error::shape(
                "EncodedMatrix::with_values",
                format!("{:?} vs {:?}", values.shape(), self.values.shape()),
            ));
        }
        Ok(EncodedMatrix {
            values,
            mask: self.mask.clone(),
            stats: self.stats.clone(),
        })
    }
}

fn spans_for(specs: &[ColumnSpec]) -> Vec<Range<usize>> {
    let mut start = 0;
    specs
        .iter()
        .map(|s| {
            let r = start..start + s.encoded_width();
            start = r.end;
            r
        })
        .collect()
}

/// Unstandardized encoded values (NaN where missing) and the encoded mask.
fn raw_encoding(ds: &TabularDataset, spans: &[Range<usize>]) -> Result<(Matrix, Mask)> {
    let width = spans.last().map_or(0, |s| s.end);
    let mut values = Matrix::zeros(ds.n_rows(), width);
    let mut mask = Mask::none(ds.n_rows(), width);
    for (r, row) in ds.rows.iter().enumerate() {
        for ((cell, spec), span) in row.iter().zip(&ds.specs).zip(spans) {
            match *cell {
                Cell::Missing => {
                    for j in span.clone() {
                        values.set(r, j, f64::NAN);
                        mask.set(r, j, true);
                    }
                }
                Cell::Numeric(v) => values.set(r, span.start, v),
                Cell::Category(i) => {
                    for (j, b) in span.clone().zip(analog_bits(i, spec.categories.len())?) {
                        values.set(r, j, b);
                    }
                }
            }
        }
    }
    Ok((values, mask))
}

/// Analog-bit encoding, standardization with observed-entry statistics and
/// zero initialization of missing entries.
pub fn encode(ds: &TabularDataset) -> Result<EncodedMatrix> {
    ds.validate()?;
    let spans = spans_for(&ds.specs);
    let (raw, mask) = raw_encoding(ds, &spans)?;
    let width = raw.cols();
    let mut means = vec![0.0; width];
    let mut stds = vec![1.0; width];
    for (spec, span) in ds.specs.iter().zip(&spans) {
        for j in span.clone() {
            let observed: Vec<f64> = (0..raw.rows())
                .filter(|&r| !mask.is_missing(r, j))
                .map(|r| raw.get(r, j))
                .collect();
            if observed.is_empty() {
                return Err(Error::Data(format!("column '{}' has no observed cells", spec.name)));
            }
            let n = observed.len() as f64;
            let mean = observed.iter().sum::<f64>() / n;
            let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            means[j] = mean;
            stds[j] = if std > 1e-12 * mean.abs().max(1.0) {
                std
            } else {
                log::warn!(
                    "column '{}' (encoded dim {j}) has zero spread among observed cells; using std = 1",
                    spec.name
                );
                1.0
            };
        }
    }
    let stats = Standardization {
        spans,
        col_means: means,
        col_stds: stds,
    };
    standardize(raw, mask, stats)
}

/// Encodes `ds` with statistics fitted elsewhere (e.g. on the training split).
pub fn encode_with(ds: &TabularDataset, stats: &Standardization) -> Result<EncodedMatrix> {
    ds.validate()?;
    let spans = spans_for(&ds.specs);
    if spans != stats.spans {
        return Err(Error::Data(
            "dataset columns do not match the reference encoding spans".into(),
        ));
    }
    let (raw, mask) = raw_encoding(ds, &spans)?;
    standardize(raw, mask, stats.clone())
}

fn standardize(mut raw: Matrix, mask: Mask, stats: Standardization) -> Result<EncodedMatrix> {
    let width = raw.cols();
    for r in 0..raw.rows() {
        for j in 0..width {
            let v = if mask.is_missing(r, j) {
                0.0
            } else {
                (raw.get(r, j) - stats.col_means[j]) / stats.col_stds[j]
            };
            raw.set(r, j, v);
        }
    }
    Ok(EncodedMatrix {
        values: raw,
        mask,
        stats,
    })
}

/// Inverse of [`encode`]: de-standardizes, reads numerics back and
/// threshold-decodes categoricals. Every cell of the result is filled.
pub fn decode(em: &EncodedMatrix, specs: &[ColumnSpec]) -> Result<TabularDataset> {
    let spans = spans_for(specs);
    if spans != em.stats.spans || em.values.cols() != em.stats.width() {
        return Err(Error::Data("column specs do not match the encoding spans".into()));
    }
    let mut rows = Vec::with_capacity(em.rows());
    for r in 0..em.rows() {
        let raw = |j: usize| em.values.get(r, j) * em.stats.col_stds[j] + em.stats.col_means[j];
        let row = specs
            .iter()
            .zip(&spans)
            .map(|(spec, span)| match spec.kind {
                ColumnKind::Numeric => Cell::Numeric(raw(span.start)),
                ColumnKind::Categorical => {
                    let bits: Vec<f64> = span.clone().map(raw).collect();
                    Cell::Category(analog_bits_decode(&bits, spec.categories.len()))
                }
            })
            .collect();
        rows.push(row);
    }
    TabularDataset::new(specs.to_vec(), rows)
}

/// Expands a cell-level mask to encoded dimensions using `spans`.
pub fn expand_mask(cell_mask: &Mask, spans: &[Range<usize>]) -> Result<Mask> {
    if cell_mask.cols() != spans.len() {
        return Err(Error::shape("expand_mask", "one span per mask column"));
    }
    let width = spans.last().map_or(0, |s| s.end);
    let mut out = Mask::none(cell_mask.rows(), width);
    for r in 0..cell_mask.rows() {
        for (c, span) in spans.iter().enumerate() {
            if cell_mask.is_missing(r, c) {
                for j in span.clone() {
                    out.set(r, j, true);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn num(v: f64) -> Cell {
        Cell::Numeric(v)
    }

    fn mixed() -> TabularDataset {
        TabularDataset::new(
            vec![
                ColumnSpec::numeric("x"),
                ColumnSpec::categorical("c", ["a", "b", "c"]),
            ],
            vec![
                vec![num(1.0), Cell::Category(0)],
                vec![num(2.5), Cell::Category(2)],
                vec![Cell::Missing, Cell::Category(1)],
                vec![num(-4.0), Cell::Missing],
                vec![num(7.0), Cell::Category(2)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn analog_bit_examples() {
        assert_eq!(analog_bits(5, 14).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(analog_bits(0, 2).unwrap(), vec![0.0]);
        assert_eq!(analog_bits(7, 8).unwrap(), vec![1.0, 1.0, 1.0]);
        assert!(analog_bits(3, 3).is_err());
        assert!(analog_bits(0, 1).is_err());
    }

    #[test]
    fn analog_decode_examples() {
        assert_eq!(analog_bits_decode(&[0.49, 0.51], 4), 1);
        assert_eq!(analog_bits_decode(&[1.0, 1.0, 1.0, 1.0], 14), 13);
        assert_eq!(analog_bits_decode(&[0.6, 0.2], 3), 2);
        for c in 2..=64 {
            for i in 0..c {
                assert_eq!(analog_bits_decode(&analog_bits(i, c).unwrap(), c), i);
            }
        }
    }

    #[test]
    fn widths() {
        assert_eq!(bit_width(2), 1);
        assert_eq!(bit_width(3), 2);
        assert_eq!(bit_width(4), 2);
        assert_eq!(bit_width(14), 4);
        assert_eq!(bit_width(64), 6);
        assert_eq!(bit_width(65), 7);
        let em = encode(&mixed()).unwrap();
        assert_eq!(em.width(), 1 + 2);
        assert_eq!(em.spans(), &[0..1, 1..3]);
    }

    #[test]
    fn encode_fills_missing_with_observed_mean() {
        let ds = TabularDataset::new(
            vec![ColumnSpec::numeric("v")],
            vec![vec![num(10.0)], vec![num(20.0)], vec![Cell::Missing], vec![num(30.0)]],
        )
        .unwrap();
        let em = encode(&ds).unwrap();
        assert_eq!(em.values.get(2, 0), 0.0);
        assert!(em.mask.is_missing(2, 0));
        let back = decode(&em, &ds.specs).unwrap();
        match back.rows[2][0] {
            Cell::Numeric(v) => assert!((v - 20.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fully_observed_has_empty_mask_and_unit_stats() {
        let ds = TabularDataset::new(
            vec![ColumnSpec::numeric("a")],
            (0..50).map(|i| vec![num(i as f64 * 0.37 - 3.0)]).collect(),
        )
        .unwrap();
        let em = encode(&ds).unwrap();
        assert_eq!(em.mask.count_missing(), 0);
        let col: Vec<f64> = (0..50).map(|r| em.values.get(r, 0)).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_spans_are_coherent() {
        let em = encode(&mixed()).unwrap();
        for r in 0..em.rows() {
            for span in em.spans() {
                let first = em.mask.is_missing(r, span.start);
                assert!(span.clone().all(|j| em.mask.is_missing(r, j) == first));
            }
        }
        assert!(em.mask.is_missing(3, 1) && em.mask.is_missing(3, 2));
    }

    #[test]
    fn encode_errors() {
        let ds = TabularDataset::new(
            vec![ColumnSpec::numeric("a"), ColumnSpec::numeric("b")],
            vec![vec![num(1.0), Cell::Missing], vec![num(2.0), Cell::Missing]],
        )
        .unwrap();
        assert!(matches!(encode(&ds), Err(Error::Data(_))));

        let flat = TabularDataset::new(
            vec![ColumnSpec::numeric("a")],
            vec![vec![num(3.0)], vec![num(3.0)]],
        )
        .unwrap();
        let em = encode(&flat).unwrap();
        assert_eq!(em.stats.col_stds, vec![1.0]);
    }

    #[test]
    fn decode_threshold_example() {
        let spec = ColumnSpec::categorical("c", ["p", "q", "r"]);
        // Identity standardization so the bits are read verbatim.
        let em = EncodedMatrix {
            values: Matrix::from_rows(&[vec![0.6, 0.2]]).unwrap(),
            mask: Mask::none(1, 2),
            stats: Standardization {
                spans: vec![0..2],
                col_means: vec![0.0, 0.0],
                col_stds: vec![1.0, 1.0],
            },
        };
        let ds = decode(&em, &[spec.clone()]).unwrap();
        assert_eq!(ds.rows[0][0], Cell::Category(2));
        assert_eq!(spec.categories[2], "r");
        assert!(decode(&em, &[ColumnSpec::numeric("x")]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ColumnSpec::categorical("c", ["only"]).validate().is_err());
        assert!(ColumnSpec::categorical("c", ["a", "a"]).validate().is_err());
        assert!(TabularDataset::new(vec![ColumnSpec::numeric("x")], vec![vec![num(f64::INFINITY)]]).is_err());
        assert!(TabularDataset::new(
            vec![ColumnSpec::categorical("c", ["a", "b"])],
            vec![vec![Cell::Category(2)]]
        )
        .is_err());
    }

    #[test]
    fn conform_rejects_unseen_category() {
        let train = vec![ColumnSpec::categorical("c", ["a", "b"])];
        let test = TabularDataset::new(
            vec![ColumnSpec::categorical("c", ["b", "z"])],
            vec![vec![Cell::Category(0)], vec![Cell::Category(1)]],
        )
        .unwrap();
        let err = test.conform_to(&train).unwrap_err().to_string();
        assert!(err.contains("'z'") && err.contains("'c'"), "{err}");
        let ok = test.select_rows(&[0]).conform_to(&train).unwrap();
        assert_eq!(ok.rows[0][0], Cell::Category(1));
    }

    fn dataset_strategy() -> impl Strategy<Value = TabularDataset> {
        (2usize..7, 3usize..20).prop_flat_map(|(c, n)| {
            let numeric = prop::collection::vec(prop::option::weighted(0.8, -1e3f64..1e3), n);
            let cats = prop::collection::vec(prop::option::weighted(0.8, 0..c), n);
            (numeric, cats).prop_map(move |(nums, cats)| {
                let mut rows: Vec<Vec<Cell>> = nums
                    .iter()
                    .zip(&cats)
                    .map(|(a, b)| {
                        vec![
                            a.map_or(Cell::Missing, Cell::Numeric),
                            b.map_or(Cell::Missing, Cell::Category),
                        ]
                    })
                    .collect();
                // Every column needs an observed cell.
                rows[0] = vec![Cell::Numeric(1.5), Cell::Category(0)];
                let names: Vec<String> = (0..c).map(|i| format!("k{i}")).collect();
                TabularDataset::new(
                    vec![ColumnSpec::numeric("n"), ColumnSpec::categorical("k", names)],
                    rows,
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn decode_encode_restores_observed_cells(ds in dataset_strategy()) {
            let em = encode(&ds).unwrap();
            let back = decode(&em, &ds.specs).unwrap();
            for (orig, got) in ds.rows.iter().zip(&back.rows) {
                for (a, b) in orig.iter().zip(got) {
                    match (a, b) {
                        (Cell::Missing, _) => {}
                        (Cell::Numeric(x), Cell::Numeric(y)) => {
                            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                        }
                        (Cell::Category(i), Cell::Category(j)) => prop_assert_eq!(i, j),
                        _ => prop_assert!(false, "kind changed"),
                    }
                }
            }
            // Observed entries standardized per encoded dim.
            for j in 0..em.width() {
                let obs: Vec<f64> = (0..em.rows()).filter(|&r| !em.mask.is_missing(r, j)).map(|r| em.values.get(r, j)).collect();
                let n = obs.len() as f64;
                let mean = obs.iter().sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                if em.stats.col_stds[j] != 1.0 || obs.iter().any(|v| v.abs() > 1e-12) {
                    let std = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((std - 1.0).abs() < 1e-9 || std == 0.0);
                }
            }
        }
    }
}
