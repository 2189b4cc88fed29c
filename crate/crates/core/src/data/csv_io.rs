use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{CellClass, DataError, FeatureTable, Sample};
use crate::Real;

/// Column layout of a feature CSV: the feature columns in model order plus
/// the class column. Extra header columns (ids, file names) are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub feature_columns: Vec<String>,
    pub class_column: String,
}

/// The twenty Herlev morphological features, nucleus first then cytoplasm
/// for each measurement family.
pub const HERLEV_COLUMNS: [&str; 20] = [
    "nucleus_area",
    "cytoplasm_area",
    "nc_ratio",
    "nucleus_brightness",
    "cytoplasm_brightness",
    "nucleus_shortest_diameter",
    "nucleus_longest_diameter",
    "nucleus_elongation",
    "nucleus_roundness",
    "cytoplasm_shortest_diameter",
    "cytoplasm_longest_diameter",
    "cytoplasm_elongation",
    "cytoplasm_roundness",
    "nucleus_perimeter",
    "cytoplasm_perimeter",
    "nucleus_position",
    "nucleus_maxima",
    "nucleus_minima",
    "cytoplasm_maxima",
    "cytoplasm_minima",
];

impl Schema {
    pub fn herlev() -> Self {
        Schema {
            feature_columns: HERLEV_COLUMNS.iter().map(|s| s.to_string()).collect(),
            class_column: "class".to_string(),
        }
    }

    pub fn new(feature_columns: Vec<String>, class_column: impl Into<String>) -> Self {
        Schema {
            feature_columns,
            class_column: class_column.into(),
        }
    }
}

impl Default for Schema {
    fn default() -> Self {
        Schema::herlev()
    }
}

pub fn load_feature_table<F: Real>(
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<FeatureTable<F>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_feature_table(file, schema)
}

/// Parses a feature CSV. Every row must have as many fields as the header;
/// errors carry the 1-based file line of the offending row.
pub fn read_feature_table<F: Real, R: Read>(
    mut reader: R,
    schema: &Schema,
) -> Result<FeatureTable<F>, DataError> {
    // the csv reader undercounts lines after CRLF terminators
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| DataError::Csv(e.into()))?;
    let mut text = Vec::with_capacity(raw.len());
    for (i, &b) in raw.iter().enumerate() {
        if !(b == b'\r' && raw.get(i + 1) == Some(&b'\n')) {
            text.push(b);
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let class_idx = find(&schema.class_column)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DataError::FieldCount {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut features = Vec::with_capacity(feature_idx.len());
        for (col, &j) in schema.feature_columns.iter().zip(&feature_idx) {
            let raw = &record[j];
            let value: f64 = raw.parse().map_err(|_| DataError::NonNumeric {
                line,
                column: col.clone(),
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    line,
                    column: col.clone(),
                });
            }
            features.push(F::lit(value));
        }
        let raw_class = &record[class_idx];
        let class: CellClass = raw_class.parse().map_err(|_| DataError::UnknownClass {
            line,
            value: raw_class.to_string(),
        })?;
        rows.push(Sample::from_class(features, class));
    }
    FeatureTable::new(schema.feature_columns.clone(), rows)
}

/// Writes a table with its class column last. Rows without a Herlev class
/// are written with the first class of their binary group.
pub fn write_feature_table<F: Real, W: Write>(
    table: &FeatureTable<F>,
    class_column: &str,
    writer: W,
) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.column_names().iter().map(String::as_str).collect();
    header.push(class_column);
    wtr.write_record(&header)?;
    for row in table.rows() {
        let class = row.cell_class.unwrap_or(match row.label {
            super::BinaryLabel::Normal => CellClass::SuperficialSquamous,
            super::BinaryLabel::Abnormal => CellClass::MildDysplasia,
        });
        let mut fields: Vec<String> = row.features.iter().map(|v| format!("{v}")).collect();
        fields.push(class.name().to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BinaryLabel;

    fn header() -> String {
        let mut h = HERLEV_COLUMNS.join(",");
        h.push_str(",class");
        h
    }

    fn row(class: &str) -> String {
        let vals: Vec<String> = (0..20).map(|i| format!("{}.5", i)).collect();
        format!("{},{}", vals.join(","), class)
    }

    #[test]
    fn single_valid_row() {
        let csv = format!("{}\n{}\n", header(), row("severe dysplasia"));
        let t: FeatureTable<f64> = read_feature_table(csv.as_bytes(), &Schema::herlev()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows()[0].label, BinaryLabel::Abnormal);
        assert_eq!(t.rows()[0].features[3], 3.5);
        assert_eq!(t.class_counts()[&CellClass::SevereDysplasia], 1);
    }

    #[test]
    fn integer_class_codes_accepted() {
        let csv = format!("{}\n{}\n{}\n", header(), row("1"), row("7"));
        let t: FeatureTable<f32> = read_feature_table(csv.as_bytes(), &Schema::herlev()).unwrap();
        assert_eq!(t.labels(), vec![BinaryLabel::Normal, BinaryLabel::Abnormal]);
    }

    #[test]
    fn short_row_is_reported_with_its_line() {
        let mut short = row("3");
        // drop one feature value
        short = short.split_once(',').unwrap().1.to_string();
        for eol in ["\n", "\r\n"] {
            let csv = [header(), row("3"), short.clone(), row("3")].join(eol);
            let err = read_feature_table::<f64, _>(csv.as_bytes(), &Schema::herlev()).unwrap_err();
            match err {
                DataError::FieldCount {
                    line,
                    expected,
                    found,
                } => {
                    assert_eq!((line, expected, found), (3, 21, 20), "{eol:?}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn bad_cells_are_rejected() {
        let csv = format!("{}\n{}\n", header(), row("normal"));
        assert!(matches!(
            read_feature_table::<f64, _>(csv.as_bytes(), &Schema::herlev()),
            Err(DataError::UnknownClass { line: 2, .. })
        ));
        let csv = format!("{}\n{}\n", header(), row("2").replacen("0.5", "abc", 1));
        assert!(matches!(
            read_feature_table::<f64, _>(csv.as_bytes(), &Schema::herlev()),
            Err(DataError::NonNumeric { line: 2, .. })
        ));
        let csv = format!("{}\n{}\n", header().replace("nc_ratio", "ratio"), row("2"));
        assert!(matches!(
            read_feature_table::<f64, _>(csv.as_bytes(), &Schema::herlev()),
            Err(DataError::MissingColumn(c)) if c == "nc_ratio"
        ));
        let csv = format!("{}\n{}\n", header(), row("2").replacen("0.5", "inf", 1));
        assert!(matches!(
            read_feature_table::<f64, _>(csv.as_bytes(), &Schema::herlev()),
            Err(DataError::NonFinite { .. })
        ));
    }

    #[test]
    fn write_then_read_preserves_rows() {
        let csv = format!("{}\n{}\n{}\n", header(), row("4"), row("2"));
        let t: FeatureTable<f64> = read_feature_table(csv.as_bytes(), &Schema::herlev()).unwrap();
        let mut buf = Vec::new();
        write_feature_table(&t, "class", &mut buf).unwrap();
        let back: FeatureTable<f64> = read_feature_table(&buf[..], &Schema::herlev()).unwrap();
        assert_eq!(t, back);
    }
}
