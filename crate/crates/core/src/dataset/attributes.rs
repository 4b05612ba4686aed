use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::interactions::Delimiter;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

/// One schema entry. Categorical columns may pin their vocabulary; otherwise
/// it is taken from the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: None,
        }
    }

    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub id_column: String,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableLayout {
    pub delimiter: Delimiter,
    pub has_header: bool,
    /// Column names for headerless files.
    pub column_names: Vec<String>,
}

impl Default for TableLayout {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Pipe,
            has_header: true,
            column_names: Vec::new(),
        }
    }
}

/// Untyped attribute table as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} fields, table has {} columns",
                rows[bad].len(),
                columns.len()
            )));
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("attribute table has no column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

pub fn parse_table(text: &str, source: &str, layout: &TableLayout) -> Result<RawTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let columns: Vec<String> = if layout.has_header {
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Empty(format!("attribute file {source} has no header")))?;
        layout.delimiter.split(header).map(str::to_owned).collect()
    } else if layout.column_names.is_empty() {
        return Err(Error::Config(format!(
            "{source}: headerless attribute files need `column_names`"
        )));
    } else {
        layout.column_names.clone()
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<String> = layout.delimiter.split(line).map(str::to_owned).collect();
        if fields.len() < columns.len() {
            return Err(Error::Parse {
                path: source.into(),
                line: lineno + 1,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        rows.push(fields[..columns.len()].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("no attribute rows in {source}")));
    }
    RawTable::new(columns, rows)
}

pub fn load_table(path: &Path, layout: &TableLayout) -> Result<RawTable> {
    // MovieLens item files are latin-1
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    };
    parse_table(&text, &path.display().to_string(), layout)
}

/// A fitted schema column: its block position in the encoded row and what
/// it needs to encode new values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub offset: usize,
    pub categories: Vec<String>,
    pub min: f64,
    pub max: f64,
}

impl EncodedColumn {
    pub fn cardinality(&self) -> usize {
        match self.kind {
            ColumnKind::Categorical => self.categories.len(),
            ColumnKind::Numeric => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeEncoder {
    pub id_column: String,
    pub columns: Vec<EncodedColumn>,
    pub dim: usize,
}

fn parse_numeric(column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidArgument(format!("column `{column}`: {raw:?} is not numeric")))
}

impl AttributeEncoder {
    /// Fits category vocabularies on the whole table and numeric ranges on
    /// `range_rows` (all rows when `None`).
    pub fn fit(table: &RawTable, schema: &AttributeSchema, range_rows: Option<&[usize]>) -> Result<Self> {
        table.column_index(&schema.id_column)?;
        let all: Vec<usize> = (0..table.rows.len()).collect();
        let range_rows = range_rows.unwrap_or(&all);
        if range_rows.is_empty() {
            return Err(Error::Empty("no rows to fit attribute ranges on".into()));
        }
        let mut columns = Vec::with_capacity(schema.columns.len());
        let mut offset = 0;
        for spec in &schema.columns {
            let k = table.column_index(&spec.name)?;
            let column = match spec.kind {
                ColumnKind::Categorical => {
                    let categories = match &spec.categories {
                        Some(c) => c.clone(),
                        None => table
                            .rows
                            .iter()
                            .map(|r| r[k].as_str())
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .map(str::to_owned)
                            .collect(),
                    };
                    if categories.is_empty() {
                        return Err(Error::Empty(format!("column `{}` has no categories", spec.name)));
                    }
                    EncodedColumn {
                        name: spec.name.clone(),
                        kind: ColumnKind::Categorical,
                        offset,
                        categories,
                        min: 0.0,
                        max: 0.0,
                    }
                }
                ColumnKind::Numeric => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for &r in range_rows {
                        let v = parse_numeric(&spec.name, &table.rows[r][k])?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    EncodedColumn {
                        name: spec.name.clone(),
                        kind: ColumnKind::Numeric,
                        offset,
                        categories: Vec::new(),
                        min,
                        max,
                    }
                }
            };
            offset += column.cardinality();
            columns.push(column);
        }
        Ok(Self {
            id_column: schema.id_column.clone(),
            columns,
            dim: offset,
        })
    }

    /// Encodes one row given values in schema-column order.
    pub fn encode_values<T: Scalar>(&self, values: &[&str]) -> Result<Vec<T>> {
        if values.len() != self.columns.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} schema columns",
                values.len(),
                self.columns.len()
            )));
        }
        let mut out = vec![T::zero(); self.dim];
        for (col, &raw) in self.columns.iter().zip(values) {
            match col.kind {
                ColumnKind::Categorical => {
                    let k = col.categories.iter().position(|c| c == raw).ok_or_else(|| {
                        Error::UnseenCategory {
                            column: col.name.clone(),
                            value: raw.to_owned(),
                        }
                    })?;
                    out[col.offset + k] = T::one();
                }
                ColumnKind::Numeric => {
                    let v = parse_numeric(&col.name, raw)?;
                    let span = col.max - col.min;
                    let scaled = if span > 0.0 {
                        ((v - col.min) / span).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    out[col.offset] = T::of(scaled);
                }
            }
        }
        Ok(out)
    }

    pub fn encode<T: Scalar>(&self, table: &RawTable) -> Result<AttributeMatrix<T>> {
        let id_k = table.column_index(&self.id_column)?;
        let idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| table.column_index(&c.name))
            .collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(table.rows.len());
        let mut ids = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let values: Vec<&str> = idx.iter().map(|&k| row[k].as_str()).collect();
            rows.push(self.encode_values(&values)?);
            ids.push(row[id_k].clone());
        }
        let values = if rows.is_empty() {
            Matrix::zeros(0, self.dim)
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(AttributeMatrix {
            ids,
            values,
            schema: self.columns.clone(),
        })
    }

    /// Recovers the category label of each categorical block and the scaled
    /// value of each numeric column.
    pub fn decode_row<T: Scalar>(&self, row: &[T]) -> Vec<String> {
        self.columns
            .iter()
            .map(|col| match col.kind {
                ColumnKind::Categorical => {
                    let block = &row[col.offset..col.offset + col.categories.len()];
                    let hot = block
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                        .map_or(0, |(k, _)| k);
                    col.categories[hot].clone()
                }
                ColumnKind::Numeric => row[col.offset].to_string(),
            })
            .collect()
    }
}

/// Encoded attribute rows keyed by external entity id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttributeMatrix<T> {
    ids: Vec<String>,
    values: Matrix<T>,
    schema: Vec<EncodedColumn>,
}

impl<T: Scalar> AttributeMatrix<T> {
    pub fn from_parts(ids: Vec<String>, values: Matrix<T>, schema: Vec<EncodedColumn>) -> Result<Self> {
        if ids.len() != values.rows() {
            return Err(Error::Dimension("ids and attribute rows differ in length".into()));
        }
        Ok(Self { ids, values, schema })
    }

    pub fn num_entities(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, k: usize) -> &[T] {
        self.values.row(k)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn schema(&self) -> &[EncodedColumn] {
        &self.schema
    }

    /// Reorders rows to follow `ids`; every id must be present.
    pub fn align(&self, ids: &[String], kind: &'static str) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        let mut values = Matrix::zeros(ids.len(), self.dim());
        for (r, id) in ids.iter().enumerate() {
            let k = *index.get(id.as_str()).ok_or_else(|| Error::MissingAttributes {
                kind,
                id: id.clone(),
            })?;
            values.row_mut(r).copy_from_slice(self.values.row(k));
        }
        Ok(Self {
            ids: ids.to_vec(),
            values,
            schema: self.schema.clone(),
        })
    }
}

/// Fits on the whole table and encodes it.
pub fn encode_attributes<T: Scalar>(table: &RawTable, schema: &AttributeSchema) -> Result<AttributeMatrix<T>> {
    AttributeEncoder::fit(table, schema, None)?.encode(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[&str]]) -> RawTable {
        RawTable::new(
            vec!["id".into(), "age".into(), "gender".into()],
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
        .unwrap()
    }

    fn schema() -> AttributeSchema {
        AttributeSchema {
            id_column: "id".into(),
            columns: vec![ColumnSpec::numeric("age"), {
                let mut c = ColumnSpec::categorical("gender");
                c.categories = Some(vec!["M".into(), "F".into()]);
                c
            }],
        }
    }

    #[test]
    fn one_hot_block_for_gender() {
        let t = table(&[&["1", "18", "M"], &["2", "68", "F"], &["3", "25", "M"]]);
        let m: AttributeMatrix<f64> = encode_attributes(&t, &schema()).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(&m.row(0)[1..], &[1.0, 0.0]);
        assert_eq!(&m.row(1)[1..], &[0.0, 1.0]);
    }

    #[test]
    fn min_max_scales_age() {
        let t = table(&[&["1", "18", "M"], &["2", "68", "F"], &["3", "25", "M"]]);
        let m: AttributeMatrix<f64> = encode_attributes(&t, &schema()).unwrap();
        assert!((m.row(2)[0] - 0.14).abs() < 1e-12);
        assert_eq!(m.row(0)[0], 0.0);
        assert_eq!(m.row(1)[0], 1.0);
    }

    #[test]
    fn ranges_fit_on_subset_clamp_outliers() {
        let t = table(&[&["1", "20", "M"], &["2", "30", "F"], &["3", "50", "M"]]);
        let enc = AttributeEncoder::fit(&t, &schema(), Some(&[0, 1])).unwrap();
        let m: AttributeMatrix<f64> = enc.encode(&t).unwrap();
        assert_eq!(m.row(2)[0], 1.0);
    }

    #[test]
    fn unseen_category_names_value() {
        let t = table(&[&["1", "20", "X"]]);
        let err = encode_attributes::<f64>(&t, &schema()).unwrap_err();
        match err {
            Error::UnseenCategory { column, value } => {
                assert_eq!(column, "gender");
                assert_eq!(value, "X");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn width_is_sum_of_cardinalities() {
        let cols = ["a", "b", "c"];
        let cards = [2usize, 21, 7];
        let rows: Vec<Vec<String>> = (0..21)
            .map(|r| {
                let mut row = vec![r.to_string()];
                row.extend(cards.iter().map(|&c| (r % c).to_string()));
                row
            })
            .collect();
        let mut names = vec!["id".to_string()];
        names.extend(cols.iter().map(|s| s.to_string()));
        let t = RawTable::new(names, rows).unwrap();
        let schema = AttributeSchema {
            id_column: "id".into(),
            columns: cols.iter().map(|c| ColumnSpec::categorical(c)).collect(),
        };
        let m: AttributeMatrix<f64> = encode_attributes(&t, &schema).unwrap();
        assert_eq!(m.dim(), 30);
        for r in 0..m.num_entities() {
            let row = m.row(r);
            assert_eq!(row[0..2].iter().sum::<f64>(), 1.0);
            assert_eq!(row[2..23].iter().sum::<f64>(), 1.0);
            assert_eq!(row[23..30].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn headerless_pipe_table() {
        let layout = TableLayout {
            delimiter: Delimiter::Pipe,
            has_header: false,
            column_names: vec!["id".into(), "age".into(), "gender".into(), "occupation".into(), "zip".into()],
        };
        let t = parse_table("1|24|M|technician|85711\n2|53|F|other|94043\n", "u.user", &layout).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.column("occupation").unwrap(), vec!["technician", "other"]);
    }

    #[test]
    fn align_reorders_and_reports_missing() {
        let t = table(&[&["1", "18", "M"], &["2", "68", "F"]]);
        let m: AttributeMatrix<f64> = encode_attributes(&t, &schema()).unwrap();
        let a = m.align(&["2".into(), "1".into()], "user").unwrap();
        assert_eq!(a.row(0), m.row(1));
        assert!(matches!(
            m.align(&["3".into()], "user"),
            Err(Error::MissingAttributes { .. })
        ));
    }
}
