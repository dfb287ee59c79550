//! Number and CSV rendering shared by every report writer.
//!
//! All numeric report fields go through [`float17`] so that files are
//! byte-reproducible and values round-trip exactly through `str::parse`.

/// Renders `v` with 17 significant digits (1 before the exponent point, 16
/// after), enough for `f64` round-tripping.
pub fn float17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Joins already-rendered fields into one CSV record.
pub fn csv_record<I: IntoIterator<Item = String>>(fields: I) -> String {
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&csv_field(&f));
    }
    line.push('\n');
    line
}
