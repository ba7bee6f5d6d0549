//! Tabular plot-data emitters and their reference parsers.
//!
//! All outputs are tab-separated UTF-8 with one header line, stable row
//! order, and floats printed in Rust's shortest round-trip form, so a
//! fixed input always produces byte-identical output. The parsers exist
//! so tests (and downstream tooling) can reconsume emitted tables.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::model::AnomalyKind;

use super::{
    AsDiversity, AvailabilityMark, AvailabilityMatrix, CentralizationLabel, CentralizationScore,
    CountryFractions,
};

fn parse_err(line: usize, what: &str) -> String {
    format!("line {line}: {what}")
}

fn kind_from_str(s: &str) -> Result<AnomalyKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|e| format!("bad anomaly kind `{s}`: {e}"))
}

/// Columns: country, tested, censored, total, method, method_fraction.
/// Countries without censored targets emit one row with method `-`.
pub fn emit_fractions(rows: &[CountryFractions]) -> String {
    let mut out = String::from("country\ttested\tcensored\ttotal\tmethod\tmethod_fraction\n");
    for f in rows {
        if f.per_method.is_empty() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t-\t-\n",
                f.country, f.tested, f.censored, f.total
            ));
        } else {
            for (kind, fraction) in &f.per_method {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    f.country, f.tested, f.censored, f.total, kind, fraction
                ));
            }
        }
    }
    out
}

pub fn parse_fractions(text: &str) -> Result<Vec<CountryFractions>, String> {
    let mut rows: Vec<CountryFractions> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(parse_err(i + 1, "expected 6 columns"));
        }
        let country = cols[0].to_string();
        let tested: usize = cols[1].parse().map_err(|_| parse_err(i + 1, "tested"))?;
        let censored: usize = cols[2].parse().map_err(|_| parse_err(i + 1, "censored"))?;
        let total: f64 = cols[3].parse().map_err(|_| parse_err(i + 1, "total"))?;
        let current_matches = rows
            .last()
            .is_some_and(|r: &CountryFractions| r.country == country);
        if !current_matches {
            rows.push(CountryFractions {
                country: country.clone(),
                tested,
                censored,
                total,
                per_method: BTreeMap::new(),
                marginal: total < super::MARGINAL_THRESHOLD,
            });
        }
        if cols[4] != "-" {
            let kind = kind_from_str(cols[4]).map_err(|e| parse_err(i + 1, &e))?;
            let fraction: f64 = cols[5]
                .parse()
                .map_err(|_| parse_err(i + 1, "method_fraction"))?;
            rows.last_mut().unwrap().per_method.insert(kind, fraction);
        }
    }
    Ok(rows)
}

/// Columns: country, fraction. Rows already ranked.
pub fn emit_ranking(rows: &[(String, f64)]) -> String {
    let mut out = String::from("country\tfraction\n");
    for (country, fraction) in rows {
        out.push_str(&format!("{country}\t{fraction}\n"));
    }
    out
}

pub fn parse_ranking(text: &str) -> Result<Vec<(String, f64)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (country, fraction) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected 2 columns"))?;
        out.push((
            country.to_string(),
            fraction.parse().map_err(|_| parse_err(i + 1, "fraction"))?,
        ));
    }
    Ok(out)
}

/// Columns: url, vantage_points. Rows already ranked.
pub fn emit_rst(rows: &[(String, usize)]) -> String {
    let mut out = String::from("url\tvantage_points\n");
    for (url, count) in rows {
        out.push_str(&format!("{url}\t{count}\n"));
    }
    out
}

pub fn parse_rst(text: &str) -> Result<Vec<(String, usize)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (url, count) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected 2 columns"))?;
        out.push((
            url.to_string(),
            count.parse().map_err(|_| parse_err(i + 1, "count"))?,
        ));
    }
    Ok(out)
}

/// Columns: country, distinct_asn; final row `*mean*` carries the mean.
pub fn emit_diversity(d: &AsDiversity) -> String {
    let mut out = String::from("country\tdistinct_asn\n");
    for (country, count) in &d.per_country {
        out.push_str(&format!("{country}\t{count}\n"));
    }
    out.push_str(&format!("*mean*\t{}\n", d.mean));
    out
}

pub fn parse_diversity(text: &str) -> Result<AsDiversity, String> {
    let mut per_country = BTreeMap::new();
    let mut mean = 0.0;
    for (i, line) in text.lines().enumerate().skip(1) {
        let (country, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected 2 columns"))?;
        if country == "*mean*" {
            mean = value.parse().map_err(|_| parse_err(i + 1, "mean"))?;
        } else {
            per_country.insert(
                country.to_string(),
                value.parse().map_err(|_| parse_err(i + 1, "count"))?,
            );
        }
    }
    Ok(AsDiversity { per_country, mean })
}

fn mark_str(mark: AvailabilityMark) -> &'static str {
    match mark {
        AvailabilityMark::None => "-",
        AvailabilityMark::Fleet => "F",
        AvailabilityMark::Volunteer => "V",
        AvailabilityMark::Both => "B",
    }
}

fn mark_from_str(s: &str) -> Result<AvailabilityMark, String> {
    match s {
        "-" => Ok(AvailabilityMark::None),
        "F" => Ok(AvailabilityMark::Fleet),
        "V" => Ok(AvailabilityMark::Volunteer),
        "B" => Ok(AvailabilityMark::Both),
        other => Err(format!("bad mark `{other}`")),
    }
}

/// First column country, one column per day; cells -/F/V/B.
pub fn emit_matrix(m: &AvailabilityMatrix) -> String {
    let mut out = String::from("country");
    for day in &m.days {
        out.push('\t');
        out.push_str(&day.format("%Y-%m-%d").to_string());
    }
    out.push('\n');
    for (country, marks) in &m.rows {
        out.push_str(country);
        for mark in marks {
            out.push('\t');
            out.push_str(mark_str(*mark));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<AvailabilityMatrix, String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty matrix")?;
    let days: Vec<NaiveDate> = header
        .split('\t')
        .skip(1)
        .map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("bad date: {e}")))
        .collect::<Result<_, _>>()?;
    let mut rows = BTreeMap::new();
    for (i, line) in lines {
        let mut cols = line.split('\t');
        let country = cols.next().ok_or_else(|| parse_err(i + 1, "country"))?;
        let marks: Vec<AvailabilityMark> = cols
            .map(mark_from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(i + 1, &e))?;
        if marks.len() != days.len() {
            return Err(parse_err(i + 1, "row width differs from day count"));
        }
        rows.insert(country.to_string(), marks);
    }
    Ok(AvailabilityMatrix { days, rows })
}

fn label_str(label: CentralizationLabel) -> &'static str {
    match label {
        CentralizationLabel::CentralizedIndicative => "centralized-indicative",
        CentralizationLabel::DecentralizedIndicative => "decentralized-indicative",
        CentralizationLabel::NoSignal => "no-signal",
    }
}

/// Columns: country, share, dominant_method, label.
pub fn emit_centralization(rows: &[CentralizationScore]) -> String {
    let mut out = String::from("country\tshare\tdominant_method\tlabel\n");
    for s in rows {
        let share = s.share.map_or("-".to_string(), |v| v.to_string());
        let dominant = s.dominant.map_or("-".to_string(), |k| k.to_string());
        out.push_str(&format!(
            "{}\t{share}\t{dominant}\t{}\n",
            s.country,
            label_str(s.label)
        ));
    }
    out
}

pub fn parse_centralization(text: &str) -> Result<Vec<CentralizationScore>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_err(i + 1, "expected 4 columns"));
        }
        let share = match cols[1] {
            "-" => None,
            v => Some(v.parse().map_err(|_| parse_err(i + 1, "share"))?),
        };
        let dominant = match cols[2] {
            "-" => None,
            v => Some(kind_from_str(v).map_err(|e| parse_err(i + 1, &e))?),
        };
        let label = match cols[3] {
            "centralized-indicative" => CentralizationLabel::CentralizedIndicative,
            "decentralized-indicative" => CentralizationLabel::DecentralizedIndicative,
            "no-signal" => CentralizationLabel::NoSignal,
            other => return Err(parse_err(i + 1, &format!("bad label `{other}`"))),
        };
        out.push(CentralizationScore {
            country: cols[0].to_string(),
            share,
            dominant,
            label,
        });
    }
    Ok(out)
}

/// Columns: url, status (kept|discarded).
pub fn emit_dead_sites(kept: &[String], discarded: &[String]) -> String {
    let mut out = String::from("url\tstatus\n");
    for url in kept {
        out.push_str(&format!("{url}\tkept\n"));
    }
    for url in discarded {
        out.push_str(&format!("{url}\tdiscarded\n"));
    }
    out
}

pub fn parse_dead_sites(text: &str) -> Result<(Vec<String>, Vec<String>), String> {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (url, status) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected 2 columns"))?;
        match status {
            "kept" => kept.push(url.to_string()),
            "discarded" => discarded.push(url.to_string()),
            other => return Err(parse_err(i + 1, &format!("bad status `{other}`"))),
        }
    }
    Ok((kept, discarded))
}
