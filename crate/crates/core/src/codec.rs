//! Shared text codec: 17-significant-digit floats and the sectioned matrix
//! format used by prior and affine-map files (rows are tab-separated).
//!
//! ```text
//! NVPRIOR1
//! [meta] dim=2 r_s=1.0000000000000000e0 r_n=1.0000000000000000e0
//! [mu_n]
//! 0.0000000000000000e0 0.0000000000000000e0
//! [B]
//! ...
//! ```

use crate::error::{Error, Result};

/// Formats with 17 significant digits, which round-trips every finite f64.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(token: &str, context: &str, location: impl FnOnce() -> String) -> Result<f64> {
    match token.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::parse(context, location(), format!("non-finite value {token:?}"))),
        Err(_) => Err(Error::parse(context, location(), format!("invalid number {token:?}"))),
    }
}

/// Joins a row of floats with tabs.
pub fn format_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_f64).collect::<Vec<_>>().join("\t")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionedDoc {
    pub magic: String,
    pub meta: Vec<(String, String)>,
    pub sections: Vec<Section>,
}

impl SectionedDoc {
    pub fn new(magic: &str) -> Self {
        Self {
            magic: magic.to_string(),
            meta: Vec::new(),
            sections: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push_section(&mut self, name: &str, rows: Vec<Vec<f64>>) {
        self.sections.push(Section {
            name: name.to_string(),
            rows,
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.magic);
        out.push('\n');
        out.push_str("[meta]");
        for (k, v) in &self.meta {
            out.push(' ');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        out.push('\n');
        for section in &self.sections {
            out.push('[');
            out.push_str(&section.name);
            out.push_str("]\n");
            for row in &section.rows {
                out.push_str(&format_row(row.iter().copied()));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, context: &str, magic: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let at = |n: usize| format!("line {}", n + 1);

        match lines.next() {
            Some((_, l)) if l.trim_end() == magic => {}
            _ => return Err(Error::parse(context, at(0), format!("expected magic {magic:?}"))),
        }
        let mut doc = SectionedDoc::new(magic);
        match lines.next() {
            Some((n, l)) => {
                let rest = l
                    .strip_prefix("[meta]")
                    .ok_or_else(|| Error::parse(context, at(n), "expected [meta] line"))?;
                for field in rest.split_whitespace() {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| Error::parse(context, at(n), format!("bad meta field {field:?}")))?;
                    doc.push_meta(k, v);
                }
            }
            None => return Err(Error::parse(context, at(1), "missing [meta] line")),
        }
        for (n, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                doc.push_section(name, Vec::new());
                continue;
            }
            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| Error::parse(context, at(n), "data before first section"))?;
            let row = line
                .split('\t')
                .enumerate()
                .map(|(c, tok)| parse_f64(tok, context, || format!("line {} column {}", n + 1, c + 1)))
                .collect::<Result<Vec<_>>>()?;
            section.rows.push(row);
        }
        Ok(doc)
    }

    pub fn meta_value(&self, key: &str, context: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::parse(context, "[meta]", format!("missing key {key:?}")))
    }

    pub fn meta_usize(&self, key: &str, context: &str) -> Result<usize> {
        let v = self.meta_value(key, context)?;
        v.parse()
            .map_err(|_| Error::parse(context, "[meta]", format!("{key}={v:?} is not a count")))
    }

    pub fn meta_f64(&self, key: &str, context: &str) -> Result<f64> {
        let v = self.meta_value(key, context)?;
        parse_f64(v, context, || "[meta]".to_string())
    }

    /// Returns the named section, checking it is `rows` x `cols`.
    pub fn matrix(&self, name: &str, rows: usize, cols: usize, context: &str) -> Result<&[Vec<f64>]> {
        let section = self
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::parse(context, format!("[{name}]"), "missing section"))?;
        if section.rows.len() != rows {
            return Err(Error::parse(
                context,
                format!("[{name}]"),
                format!("expected {rows} rows, found {}", section.rows.len()),
            ));
        }
        if let Some((i, row)) = section.rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::parse(
                context,
                format!("[{name}] row {}", i + 1),
                format!("expected {cols} columns, found {}", row.len()),
            ));
        }
        Ok(&section.rows)
    }

    pub fn vector(&self, name: &str, len: usize, context: &str) -> Result<&[f64]> {
        Ok(&self.matrix(name, 1, len, context)?[0])
    }
}
