use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::quarter::Quarter;

/// Canonical header, in the order written by [`write_csv`].
pub const COLUMNS: [&str; 9] = [
    "Drugname",
    "Price",
    "Date",
    "Form",
    "Company",
    "Region",
    "SalesVolume",
    "Effectiveness",
    "UserEvaluate",
];

/// Placeholder the source data uses for a missing numeric value.
pub const SENTINEL: f64 = -99.0;

/// One CSV row as typed as it could be; `None` marks a missing or unparseable field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRow {
    pub line: usize,
    pub drugname: Option<String>,
    pub price: Option<f64>,
    pub date: Option<Quarter>,
    pub form: Option<String>,
    pub company: Option<String>,
    pub region: Option<String>,
    pub sales_volume: Option<f64>,
    pub effectiveness: Option<f64>,
    pub user_evaluate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalesRecord {
    pub drugname: String,
    pub price: f64,
    pub date: Quarter,
    pub form: String,
    pub company: String,
    pub region: String,
    pub sales_volume: f64,
    pub effectiveness: f64,
    pub user_evaluate: f64,
}

impl From<&SalesRecord> for RawRow {
    fn from(r: &SalesRecord) -> Self {
        RawRow {
            line: 0,
            drugname: Some(r.drugname.clone()),
            price: Some(r.price),
            date: Some(r.date),
            form: Some(r.form.clone()),
            company: Some(r.company.clone()),
            region: Some(r.region.clone()),
            sales_volume: Some(r.sales_volume),
            effectiveness: Some(r.effectiveness),
            user_evaluate: Some(r.user_evaluate),
        }
    }
}

fn header_key(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_missing_marker(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") || s.parse::<f64>() == Ok(SENTINEL)
}

fn parse_num(s: &str) -> Option<f64> {
    if is_missing_marker(s) {
        return None;
    }
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite() && *v != SENTINEL)
}

fn parse_text(s: &str) -> Option<String> {
    (!is_missing_marker(s)).then(|| s.trim().to_string())
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<RawRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file)
}

pub fn parse_csv_reader(reader: impl Read) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Schema("empty file: no header row".into()));
    }
    let keys: Vec<String> = headers.iter().map(header_key).collect();
    let mut idx = [0usize; 9];
    let mut absent = Vec::new();
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        match keys.iter().position(|k| *k == header_key(name)) {
            Some(i) => *slot = i,
            None => absent.push(name),
        }
    }
    if !absent.is_empty() {
        return Err(Error::Schema(format!("missing required columns: {}", absent.join(", "))));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        rows.push(RawRow {
            line: n + 2,
            drugname: parse_text(field(0)),
            price: parse_num(field(1)),
            date: (!is_missing_marker(field(2))).then(|| field(2).parse().ok()).flatten(),
            form: parse_text(field(3)),
            company: parse_text(field(4)),
            region: parse_text(field(5)),
            sales_volume: parse_num(field(6)),
            effectiveness: parse_num(field(7)),
            user_evaluate: parse_num(field(8)),
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema("file has a header but no data rows".into()));
    }
    Ok(rows)
}

/// Why rows were dropped, tallied per offending column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub by_column: BTreeMap<&'static str, usize>,
}

impl DropReport {
    pub fn dropped(&self) -> usize {
        self.rows_in - self.rows_kept
    }

    pub fn is_empty(&self) -> bool {
        self.by_column.is_empty()
    }
}

impl fmt::Display for DropReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_in {}", self.rows_in)?;
        writeln!(f, "rows_kept {}", self.rows_kept)?;
        for (col, n) in &self.by_column {
            writeln!(f, "dropped {col} {n}")?;
        }
        Ok(())
    }
}

/// Drop every row with a missing, sentinel, or negative field.
pub fn clean(rows: &[RawRow]) -> Result<(Vec<SalesRecord>, DropReport)> {
    let mut report = DropReport {
        rows_in: rows.len(),
        ..DropReport::default()
    };
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut bad: Vec<&'static str> = Vec::new();
        let check_text = |v: &Option<String>, name| v.as_ref().filter(|s| !s.is_empty()).is_none().then(|| name);
        let text_fails = [
            check_text(&row.drugname, "drugname"),
            check_text(&row.form, "form"),
            check_text(&row.company, "company"),
            check_text(&row.region, "region"),
        ];
        bad.extend(text_fails.into_iter().flatten());
        if row.date.is_none() {
            bad.push("date");
        }
        let num_ok = |v: Option<f64>, nonneg: bool| {
            v.is_some_and(|x| x.is_finite() && x != SENTINEL && (!nonneg || x >= 0.0))
        };
        for (v, name, nonneg) in [
            (row.price, "price", true),
            (row.sales_volume, "sales_volume", true),
            (row.effectiveness, "effectiveness", false),
            (row.user_evaluate, "user_evaluate", false),
        ] {
            if !num_ok(v, nonneg) {
                bad.push(name);
            }
        }
        if bad.is_empty() {
            out.push(SalesRecord {
                drugname: row.drugname.clone().unwrap(),
                price: row.price.unwrap(),
                date: row.date.unwrap(),
                form: row.form.clone().unwrap(),
                company: row.company.clone().unwrap(),
                region: row.region.clone().unwrap(),
                sales_volume: row.sales_volume.unwrap(),
                effectiveness: row.effectiveness.unwrap(),
                user_evaluate: row.user_evaluate.unwrap(),
            });
        } else {
            for name in bad {
                *report.by_column.entry(name).or_default() += 1;
            }
        }
    }
    report.rows_kept = out.len();
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("all {} rows dropped during cleaning", rows.len())));
    }
    Ok((out, report))
}

/// Write records in the canonical schema. Numbers use shortest round-trip formatting.
pub fn write_csv(records: &[SalesRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record([
            r.drugname.clone(),
            r.price.to_string(),
            r.date.to_string(),
            r.form.clone(),
            r.company.clone(),
            r.region.clone(),
            r.sales_volume.to_string(),
            r.effectiveness.to_string(),
            r.user_evaluate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
