//! Country-level analyses over stored verdicts: dead-site filtering,
//! censorship fractions by method, least-free rankings, availability
//! matrices, AS diversity, RST rankings, and centralization inference.
//!
//! Everything here is a pure batch computation over immutable inputs,
//! invariant under record reordering. Aggregations other than the
//! dead-site filter expect dead targets to have been filtered already;
//! [`live_verdicts`] does both steps.

mod plot;

pub use plot::{
    emit_centralization, emit_dead_sites, emit_diversity, emit_fractions, emit_matrix,
    emit_ranking, emit_rst, parse_centralization, parse_dead_sites, parse_diversity,
    parse_fractions, parse_matrix, parse_ranking, parse_rst,
};

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::model::{AnomalyKind, Outcome, ReportRecord, VantageKind, VantagePoint, Verdict};

/// Countries whose total fraction is below this are labeled marginal.
pub const MARGINAL_THRESHOLD: f64 = 0.05;
/// Default dominant-method share above which censorship looks centrally
/// operated rather than ISP-by-ISP.
pub const CENTRALIZATION_THRESHOLD: f64 = 0.6;

/// Vantage-point registry keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    by_id: BTreeMap<String, VantagePoint>,
}

impl Registry {
    pub fn new(points: impl IntoIterator<Item = VantagePoint>) -> Self {
        Registry {
            by_id: points.into_iter().map(|vp| (vp.id.clone(), vp)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&VantagePoint> {
        self.by_id.get(id)
    }

    pub fn country_of(&self, vantage: &str) -> Option<&str> {
        self.by_id.get(vantage).map(|vp| vp.country.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &VantagePoint> {
        self.by_id.values()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// A verdict counts as a successful load when the page demonstrably
/// arrived: an ok outcome, or a censored one (a served blockpage proves
/// the site resolvable).
fn successful_load(v: &Verdict) -> bool {
    matches!(v.outcome, Outcome::Ok | Outcome::Censored)
}

/// Splits targets into kept and discarded: a target is discarded when no
/// vantage point anywhere produced a successful load.
pub fn dead_site_filter(verdicts: &[Verdict]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut loaded: BTreeSet<String> = BTreeSet::new();
    for v in verdicts {
        seen.insert(v.target.url.clone());
        if successful_load(v) {
            loaded.insert(v.target.url.clone());
        }
    }
    let discarded: BTreeSet<String> = seen.difference(&loaded).cloned().collect();
    (loaded, discarded)
}

/// Verdicts with dead targets removed; the form every downstream
/// statistic consumes.
pub fn live_verdicts(verdicts: &[Verdict]) -> Vec<Verdict> {
    let (kept, _) = dead_site_filter(verdicts);
    verdicts
        .iter()
        .filter(|v| kept.contains(&v.target.url))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryFractions {
    pub country: String,
    pub tested: usize,
    pub censored: usize,
    /// censored targets / tested targets; a URL censored by several
    /// methods counts once.
    pub total: f64,
    /// Fraction of censored targets whose method set contains each
    /// method. Sums can exceed 1 when verdicts carry multiple methods.
    pub per_method: BTreeMap<AnomalyKind, f64>,
    pub marginal: bool,
}

fn methods_by_target(
    verdicts: &[Verdict],
    country: &str,
    registry: &Registry,
) -> (BTreeSet<String>, BTreeMap<String, BTreeSet<AnomalyKind>>) {
    let mut tested: BTreeSet<String> = BTreeSet::new();
    let mut censored: BTreeMap<String, BTreeSet<AnomalyKind>> = BTreeMap::new();
    for v in verdicts {
        if registry.country_of(&v.vantage) != Some(country) {
            continue;
        }
        tested.insert(v.target.url.clone());
        if v.outcome == Outcome::Censored {
            censored
                .entry(v.target.url.clone())
                .or_default()
                .extend(v.methods.iter().copied());
        }
    }
    (tested, censored)
}

/// Censored-target fraction for one country, with per-method breakdown.
/// "Censored in country" means censored on at least one vantage point
/// there.
pub fn censorship_fraction(
    verdicts: &[Verdict],
    registry: &Registry,
    country: &str,
) -> CountryFractions {
    let (tested, censored) = methods_by_target(verdicts, country, registry);
    let total = if tested.is_empty() {
        0.0
    } else {
        censored.len() as f64 / tested.len() as f64
    };
    let mut per_method: BTreeMap<AnomalyKind, f64> = BTreeMap::new();
    if !censored.is_empty() {
        let mut counts: BTreeMap<AnomalyKind, usize> = BTreeMap::new();
        for methods in censored.values() {
            for m in methods {
                *counts.entry(*m).or_insert(0) += 1;
            }
        }
        for (kind, count) in counts {
            per_method.insert(kind, count as f64 / censored.len() as f64);
        }
    }
    CountryFractions {
        country: country.to_string(),
        tested: tested.len(),
        censored: censored.len(),
        total,
        per_method,
        marginal: total < MARGINAL_THRESHOLD,
    }
}

/// Countries ordered by descending total censorship fraction; ties break
/// by country code ascending.
pub fn least_free_ranking(verdicts: &[Verdict], registry: &Registry) -> Vec<(String, f64)> {
    let countries: BTreeSet<String> = verdicts
        .iter()
        .filter_map(|v| registry.country_of(&v.vantage).map(String::from))
        .collect();
    let mut rows: Vec<(String, f64)> = countries
        .into_iter()
        .map(|c| {
            let f = censorship_fraction(verdicts, registry, &c);
            (c, f.total)
        })
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    rows
}

/// Who reported from a country on a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvailabilityMark {
    None,
    Fleet,
    Volunteer,
    Both,
}

impl AvailabilityMark {
    fn add(&mut self, kind: VantageKind) {
        let incoming = match kind {
            VantageKind::Volunteer => AvailabilityMark::Volunteer,
            VantageKind::Vpn | VantageKind::Device => AvailabilityMark::Fleet,
        };
        *self = match (*self, incoming) {
            (AvailabilityMark::None, x) => x,
            (x, y) if x == y => x,
            _ => AvailabilityMark::Both,
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityMatrix {
    pub days: Vec<NaiveDate>,
    /// country code -> one mark per day
    pub rows: BTreeMap<String, Vec<AvailabilityMark>>,
}

/// Country-by-day presence grid over the UTC day range [from, to],
/// marking which collection mode (centralized fleet, volunteers, both)
/// submitted at least one report.
pub fn availability_matrix(
    reports: &[ReportRecord],
    registry: &Registry,
    from: NaiveDate,
    to: NaiveDate,
) -> AvailabilityMatrix {
    let mut days = Vec::new();
    let mut d = from;
    while d <= to {
        days.push(d);
        d = d.succ_opt().expect("date range");
    }
    let mut rows: BTreeMap<String, Vec<AvailabilityMark>> = BTreeMap::new();
    for record in reports {
        let m = &record.measurement;
        let Some(vp) = registry.get(&m.vantage) else {
            continue;
        };
        let day = m.started_at.date_naive();
        let Some(idx) = days.iter().position(|d| *d == day) else {
            continue;
        };
        let row = rows
            .entry(vp.country.clone())
            .or_insert_with(|| vec![AvailabilityMark::None; days.len()]);
        row[idx].add(vp.kind);
    }
    AvailabilityMatrix { days, rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsDiversity {
    /// Distinct ASNs among reporting vantage points, per country.
    pub per_country: BTreeMap<String, usize>,
    /// Mean over countries with at least one reporting vantage point.
    pub mean: f64,
}

/// Network (AS) diversity of the vantage points that actually reported.
pub fn as_diversity(registry: &Registry, reports: &[ReportRecord]) -> AsDiversity {
    let reporting: BTreeSet<&str> = reports
        .iter()
        .map(|r| r.measurement.vantage.as_str())
        .collect();
    let mut per_country_sets: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for id in reporting {
        if let Some(vp) = registry.get(id) {
            per_country_sets
                .entry(vp.country.clone())
                .or_default()
                .insert(vp.asn);
        }
    }
    let per_country: BTreeMap<String, usize> = per_country_sets
        .into_iter()
        .map(|(c, set)| (c, set.len()))
        .collect();
    let mean = if per_country.is_empty() {
        0.0
    } else {
        per_country.values().sum::<usize>() as f64 / per_country.len() as f64
    };
    AsDiversity { per_country, mean }
}

/// Targets ordered by how many distinct vantage points observed a
/// premature-RST finding for them, descending; ties break by URL
/// ascending.
pub fn rst_ranking(verdicts: &[Verdict]) -> Vec<(String, usize)> {
    let mut per_target: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for v in verdicts {
        if v.evidence.iter().any(|a| a.kind == AnomalyKind::TcpRst) {
            per_target
                .entry(v.target.url.clone())
                .or_default()
                .insert(v.vantage.clone());
        }
    }
    let mut rows: Vec<(String, usize)> = per_target
        .into_iter()
        .map(|(url, vps)| (url, vps.len()))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentralizationLabel {
    CentralizedIndicative,
    DecentralizedIndicative,
    NoSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizationScore {
    pub country: String,
    /// Share of censored targets carrying the dominant method; None when
    /// nothing was censored.
    pub share: Option<f64>,
    pub dominant: Option<AnomalyKind>,
    pub label: CentralizationLabel,
}

/// One clearly dominant blocking method suggests a central censorship
/// apparatus; evenly mixed methods suggest ISP-level implementations.
pub fn centralization_score(
    verdicts: &[Verdict],
    registry: &Registry,
    country: &str,
    threshold: f64,
) -> CentralizationScore {
    let fractions = censorship_fraction(verdicts, registry, country);
    let dominant = fractions
        .per_method
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
        .map(|(k, v)| (*k, *v));
    match dominant {
        None => CentralizationScore {
            country: country.to_string(),
            share: None,
            dominant: None,
            label: CentralizationLabel::NoSignal,
        },
        Some((kind, share)) => CentralizationScore {
            country: country.to_string(),
            share: Some(share),
            dominant: Some(kind),
            label: if share >= threshold {
                CentralizationLabel::CentralizedIndicative
            } else {
                CentralizationLabel::DecentralizedIndicative
            },
        },
    }
}
