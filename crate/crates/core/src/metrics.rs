//! Vulnerability metrics for morphing attacks: FMR thresholds, score
//! quadrants and the Generalized Morphing Attack Potential (G-MAP) family.
//!
//! A G-MAP cell is one (morph type, morph, probe attempt). It scores
//! `min over FRS l` of `[every subject score > tau_l] * (1 - FTAR(attempt, l))`
//! and G-MAP is the cell mean per morph type, averaged over types, in percent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no scores supplied")]
    EmptyScores,

    #[error("FMR target {0} must lie strictly between 0 and 1")]
    InvalidFmr(f64),

    #[error("invalid score record: {0}")]
    InvalidRecord(String),

    #[error("FTAR value {value} for FRS `{frs_id}` attempt {attempt} is outside [0, 1]")]
    InvalidFtar { frs_id: String, attempt: u32, value: f64 },

    #[error("no threshold for FRS `{0}`")]
    MissingThreshold(String),

    #[error("no score records for FRS `{0}`")]
    NoRecords(String),

    #[error("score table is ragged: morph `{morph_id}` ({morph_type}) lacks attempt {attempt} under FRS `{frs_id}`")]
    RaggedData {
        morph_type: String,
        morph_id: String,
        attempt: u32,
        frs_id: String,
    },

    #[error("duplicate record for morph `{morph_id}` attempt {attempt} under FRS `{frs_id}`")]
    DuplicateCell {
        morph_id: String,
        attempt: u32,
        frs_id: String,
    },

    #[error("quadrants are defined for two-subject morphs, got {0} scores")]
    UnsupportedArity(usize),

    #[error("cross-FRS G-MAP needs at least two FRS, got {0}")]
    InsufficientFrs(usize),
}

/// One comparison outcome: a morph enrolled in one FRS and probed, in one
/// attempt, with each contributing subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub morph_id: String,
    pub morph_type: String,
    pub frs_id: String,
    pub attempt: u32,
    pub subject_scores: Vec<f64>,
}

impl ScoreRecord {
    pub fn new(
        morph_id: impl Into<String>,
        morph_type: impl Into<String>,
        frs_id: impl Into<String>,
        attempt: u32,
        subject_scores: Vec<f64>,
    ) -> Result<Self, MetricsError> {
        let record = Self {
            morph_id: morph_id.into(),
            morph_type: morph_type.into(),
            frs_id: frs_id.into(),
            attempt,
            subject_scores,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.subject_scores.len() < 2 {
            return Err(MetricsError::InvalidRecord(format!(
                "morph `{}` has {} subject scores, need at least 2",
                self.morph_id,
                self.subject_scores.len()
            )));
        }
        if self.attempt == 0 {
            return Err(MetricsError::InvalidRecord(format!(
                "morph `{}` has attempt index 0; attempts start at 1",
                self.morph_id
            )));
        }
        if !self.subject_scores.iter().all(|s| s.is_finite()) {
            return Err(MetricsError::InvalidRecord(format!(
                "morph `{}` has a non-finite score",
                self.morph_id
            )));
        }
        Ok(())
    }

    /// Every contributing subject scores strictly above `tau`.
    pub fn all_above(&self, tau: f64) -> bool {
        self.subject_scores.iter().all(|&s| s > tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrsThreshold {
    pub frs_id: String,
    pub tau: f64,
    pub fmr_target: f64,
    /// The target FMR was not attainable on the observed scores; `tau` is
    /// the maximum non-mated score.
    pub saturated: bool,
}

/// Smallest observed non-mated score `tau` whose tail fraction
/// `#{score >= tau} / total` does not exceed `fmr_target`.
pub fn threshold_at_fmr(
    frs_id: &str,
    nonmated_scores: &[f64],
    fmr_target: f64,
) -> Result<FrsThreshold, MetricsError> {
    if nonmated_scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    if !(fmr_target > 0.0 && fmr_target < 1.0) {
        return Err(MetricsError::InvalidFmr(fmr_target));
    }
    if !nonmated_scores.iter().all(|s| s.is_finite()) {
        return Err(MetricsError::InvalidRecord(format!(
            "non-finite non-mated score for FRS `{frs_id}`"
        )));
    }
    let total = nonmated_scores.len();
    if (total as f64) * fmr_target < 1.0 {
        log::warn!(
            "FRS `{frs_id}`: {total} non-mated scores cannot resolve FMR {fmr_target}; \
             at least {} recommended",
            (1.0 / fmr_target).ceil()
        );
    }
    let mut sorted = nonmated_scores.to_vec();
    sorted.sort_by(f64::total_cmp);

    // ascending scan; the tail fraction shrinks as tau grows
    let mut start = 0;
    while start < total {
        let value = sorted[start];
        let tail = total - start;
        if tail as f64 / total as f64 <= fmr_target {
            return Ok(FrsThreshold {
                frs_id: frs_id.to_string(),
                tau: value,
                fmr_target,
                saturated: false,
            });
        }
        while start < total && sorted[start] == value {
            start += 1;
        }
    }
    log::warn!("FRS `{frs_id}`: FMR {fmr_target} unattainable, threshold saturated at the maximum score");
    Ok(FrsThreshold {
        frs_id: frs_id.to_string(),
        tau: sorted[total - 1],
        fmr_target,
        saturated: true,
    })
}

/// Failure-to-acquire rate per (attempt, FRS). Absent entries are 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FtarTable {
    rates: HashMap<(u32, String), f64>,
}

impl FtarTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, attempt: u32, frs_id: &str, value: f64) -> Result<(), MetricsError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::InvalidFtar {
                frs_id: frs_id.to_string(),
                attempt,
                value,
            });
        }
        self.rates.insert((attempt, frs_id.to_string()), value);
        Ok(())
    }

    pub fn get(&self, attempt: u32, frs_id: &str) -> f64 {
        self.rates
            .get(&(attempt, frs_id.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quadrant {
    /// Both subjects above threshold: a successful attack.
    I,
    /// Only the second subject above threshold.
    II,
    /// Neither subject above threshold.
    III,
    /// Only the first subject above threshold.
    IV,
}

impl Quadrant {
    pub fn index(self) -> usize {
        match self {
            Quadrant::I => 0,
            Quadrant::II => 1,
            Quadrant::III => 2,
            Quadrant::IV => 3,
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::I => "I",
            Quadrant::II => "II",
            Quadrant::III => "III",
            Quadrant::IV => "IV",
        })
    }
}

pub fn quadrant_classify(record: &ScoreRecord, threshold: &FrsThreshold) -> Result<Quadrant, MetricsError> {
    let [s1, s2] = record.subject_scores[..] else {
        return Err(MetricsError::UnsupportedArity(record.subject_scores.len()));
    };
    let tau = threshold.tau;
    Ok(match (s1 > tau, s2 > tau) {
        (true, true) => Quadrant::I,
        (false, true) => Quadrant::II,
        (false, false) => Quadrant::III,
        (true, false) => Quadrant::IV,
    })
}

type MorphKey = (String, String);
type AttemptCells<'a> = BTreeMap<u32, BTreeMap<&'a str, &'a ScoreRecord>>;
type TypeCells<'a> = BTreeMap<&'a str, BTreeMap<MorphKey, AttemptCells<'a>>>;

/// Records arranged as type -> morph -> attempt -> FRS.
struct CellTable<'a> {
    frs: BTreeSet<&'a str>,
    types: TypeCells<'a>,
}

fn build_cells(records: &[ScoreRecord], single_type: bool) -> Result<CellTable<'_>, MetricsError> {
    let mut frs = BTreeSet::new();
    let mut types: TypeCells<'_> = BTreeMap::new();
    for r in records {
        r.validate()?;
        frs.insert(r.frs_id.as_str());
        let type_key = if single_type { "" } else { r.morph_type.as_str() };
        let slot = types
            .entry(type_key)
            .or_default()
            .entry((r.morph_type.clone(), r.morph_id.clone()))
            .or_default()
            .entry(r.attempt)
            .or_default();
        if slot.insert(r.frs_id.as_str(), r).is_some() {
            return Err(MetricsError::DuplicateCell {
                morph_id: r.morph_id.clone(),
                attempt: r.attempt,
                frs_id: r.frs_id.clone(),
            });
        }
    }
    if records.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    Ok(CellTable { frs, types })
}

fn evaluate(
    cells: &CellTable<'_>,
    thresholds: &[FrsThreshold],
    ftar: &FtarTable,
) -> Result<f64, MetricsError> {
    let mut taus = BTreeMap::new();
    for &l in &cells.frs {
        let t = thresholds
            .iter()
            .find(|t| t.frs_id == l)
            .ok_or_else(|| MetricsError::MissingThreshold(l.to_string()))?;
        taus.insert(l, t.tau);
    }

    let mut type_total = 0.0;
    for morphs in cells.types.values() {
        let attempts: BTreeSet<u32> = morphs.values().flat_map(|a| a.keys().copied()).collect();
        let mut sum = 0.0;
        for ((morph_type, morph_id), by_attempt) in morphs {
            for &i in &attempts {
                let ragged = |l: &str| MetricsError::RaggedData {
                    morph_type: morph_type.clone(),
                    morph_id: morph_id.clone(),
                    attempt: i,
                    frs_id: l.to_string(),
                };
                let by_frs = by_attempt
                    .get(&i)
                    .ok_or_else(|| ragged(cells.frs.first().copied().unwrap_or_default()))?;
                let mut cell = f64::INFINITY;
                for (&l, &tau) in &taus {
                    let record = by_frs.get(l).ok_or_else(|| ragged(l))?;
                    let success = if record.all_above(tau) { 1.0 } else { 0.0 };
                    cell = cell.min(success * (1.0 - ftar.get(i, l)));
                }
                sum += cell;
            }
        }
        type_total += sum / (attempts.len() as f64 * morphs.len() as f64);
    }
    Ok(100.0 * type_total / cells.types.len() as f64)
}

/// Full G-MAP over every morph type, attempt and FRS in `records`.
pub fn gmap(records: &[ScoreRecord], thresholds: &[FrsThreshold], ftar: &FtarTable) -> Result<f64, MetricsError> {
    evaluate(&build_cells(records, false)?, thresholds, ftar)
}

/// G-MAP with multiple attempts for one FRS: one morph type, no FTAR.
/// Records of other FRS are ignored.
pub fn gmap_ma(records: &[ScoreRecord], threshold: &FrsThreshold) -> Result<f64, MetricsError> {
    let subset: Vec<ScoreRecord> = records
        .iter()
        .filter(|r| r.frs_id == threshold.frs_id)
        .cloned()
        .collect();
    if subset.is_empty() {
        return Err(MetricsError::NoRecords(threshold.frs_id.clone()));
    }
    evaluate(
        &build_cells(&subset, true)?,
        std::slice::from_ref(threshold),
        &FtarTable::new(),
    )
}

/// G-MAP with multiple attempts and the per-cell minimum across all FRS
/// present, one morph type.
pub fn gmap_mamf(records: &[ScoreRecord], thresholds: &[FrsThreshold], ftar: &FtarTable) -> Result<f64, MetricsError> {
    let cells = build_cells(records, true)?;
    if cells.frs.len() < 2 {
        return Err(MetricsError::InsufficientFrs(cells.frs.len()));
    }
    evaluate(&cells, thresholds, ftar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmapReport {
    /// G-MAP-MA per FRS, percent.
    pub per_frs: BTreeMap<String, f64>,
    /// G-MAP-MAMF, percent; `None` with fewer than two FRS.
    pub cross_frs: Option<f64>,
    /// Counts of quadrants I..IV per FRS.
    pub quadrant_counts: BTreeMap<String, [usize; 4]>,
    pub n_morphs: usize,
    pub n_attempts: usize,
}

impl GmapReport {
    pub fn compute(
        records: &[ScoreRecord],
        thresholds: &[FrsThreshold],
        ftar: &FtarTable,
    ) -> Result<Self, MetricsError> {
        let cells = build_cells(records, true)?;
        let mut per_frs = BTreeMap::new();
        let mut quadrant_counts = BTreeMap::new();
        for &l in &cells.frs {
            let threshold = thresholds
                .iter()
                .find(|t| t.frs_id == l)
                .ok_or_else(|| MetricsError::MissingThreshold(l.to_string()))?;
            per_frs.insert(l.to_string(), gmap_ma(records, threshold)?);
            let mut counts = [0usize; 4];
            for r in records.iter().filter(|r| r.frs_id == l) {
                counts[quadrant_classify(r, threshold)?.index()] += 1;
            }
            quadrant_counts.insert(l.to_string(), counts);
        }
        let cross_frs = if cells.frs.len() >= 2 {
            Some(evaluate(&cells, thresholds, ftar)?)
        } else {
            None
        };
        let n_morphs = cells.types.values().map(|m| m.len()).sum();
        let n_attempts = records.iter().map(|r| r.attempt).collect::<BTreeSet<_>>().len();
        Ok(Self {
            per_frs,
            cross_frs,
            quadrant_counts,
            n_morphs,
            n_attempts,
        })
    }
}
