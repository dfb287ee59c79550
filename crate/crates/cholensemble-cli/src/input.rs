//! CSV ingestion for observation matrices and return series.

use std::path::Path;

/// A parsed numeric table: data rows, the header labels for the numeric
/// columns, and row labels when the file carries a leading label column.
#[derive(Debug)]
pub struct Table {
    pub rows: Vec<Vec<f64>>,
    pub column_labels: Vec<String>,
    pub row_labels: Option<Vec<String>>,
}

/// Reads a headed CSV file. If the first cell of the first data row does not
/// parse as a number, the first column is treated as row labels (periods for
/// return series) and the remaining columns as data.
pub fn read_table(path: &Path) -> Result<Table, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(format!("{}: empty header row", path.display()));
    }

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }

    let labeled = records[0]
        .get(0)
        .map(|cell| cell.parse::<f64>().is_err())
        .unwrap_or(false);
    if labeled && headers.len() < 2 {
        return Err(format!(
            "{}: label column found but no numeric columns follow it",
            path.display()
        ));
    }
    let skip = usize::from(labeled);
    let column_labels: Vec<String> = headers[skip..].to_vec();

    let mut rows = Vec::with_capacity(records.len());
    let mut row_labels = labeled.then(|| Vec::with_capacity(records.len()));
    for record in &records {
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".to_string());
        if record.len() != headers.len() {
            return Err(format!(
                "{} line {line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                record.len()
            ));
        }
        if let Some(labels) = row_labels.as_mut() {
            labels.push(record[0].to_string());
        }
        let mut row = Vec::with_capacity(headers.len() - skip);
        for (j, cell) in record.iter().enumerate().skip(skip) {
            let value: f64 = cell.parse().map_err(|_| {
                format!(
                    "{} line {line}: column {:?} has non-numeric value {cell:?}",
                    path.display(),
                    headers[j]
                )
            })?;
            row.push(value);
        }
        rows.push(row);
    }

    Ok(Table {
        rows,
        column_labels,
        row_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn reads_plain_numeric_table() {
        let file = write_temp("a,b\n1,2\n3.5,-4\n");
        let table = read_table(file.path()).unwrap();
        assert_eq!(table.column_labels, vec!["a", "b"]);
        assert_eq!(table.rows, vec![vec![1.0, 2.0], vec![3.5, -4.0]]);
        assert!(table.row_labels.is_none());
    }

    #[test]
    fn detects_leading_label_column() {
        let file = write_temp("week,x,y\nw1,1,2\nw2,3,4\n");
        let table = read_table(file.path()).unwrap();
        assert_eq!(table.column_labels, vec!["x", "y"]);
        assert_eq!(
            table.row_labels,
            Some(vec!["w1".to_string(), "w2".to_string()])
        );
        assert_eq!(table.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn non_numeric_cell_error_names_the_line() {
        let file = write_temp("a,b\n1,2\n3,oops\n");
        let err = read_table(file.path()).unwrap_err();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("oops"), "{err}");
    }

    #[test]
    fn ragged_row_error_names_the_line() {
        // The csv crate itself rejects ragged rows; the error carries the line.
        let file = write_temp("a,b\n1,2\n3\n");
        let err = read_table(file.path()).unwrap_err();
        assert!(err.contains('3'), "{err}");
    }

    #[test]
    fn empty_data_is_rejected() {
        let file = write_temp("a,b\n");
        let err = read_table(file.path()).unwrap_err();
        assert!(err.contains("no data rows"), "{err}");
    }
}
