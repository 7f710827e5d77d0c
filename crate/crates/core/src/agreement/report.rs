//! Per-technologist agreement tables.
//!
//! An assignment layout CSV (`psg_id,st1,st2,...`) says, per recording, which
//! technologist scored it with the default automatic scoring (`X`) and which
//! with gray-area assistance (`O`). Each scoring is compared with the
//! consensus raters of that recording, overall and on gray epochs only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{build_rating_matrix, summarize, AgreementError, KappaReport, Result, Summary};
use crate::gray::{read_mask_csv, GrayMask};
use crate::staging::{read_hypnogram_csv, Hypnogram};

pub type CellSummary = Summary;

fn bad(message: String) -> AgreementError {
    AgreementError::InvalidLayout(message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `X`: default automatic scoring, every epoch reviewed.
    WithoutAi,
    /// `O`: automatic scoring with gray areas.
    WithAi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentLayout {
    pub technologists: Vec<String>,
    /// `(psg_id, condition per technologist)`; `None` when not assigned.
    pub rows: Vec<(String, Vec<Option<Condition>>)>,
}

impl AssignmentLayout {
    /// Reads either orientation: `psg_id,<technologist>,...` with one row per
    /// recording, or `technologist,<psg_id>,...` with one row per technologist.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .has_headers(false)
            .from_reader(r);
        let grid = reader
            .records()
            .map(|rec| {
                rec.map(|r| r.iter().map(str::to_string).collect::<Vec<_>>())
                    .map_err(|e| bad(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let Some(header) = grid.first() else {
            return Err(bad("empty layout".into()));
        };
        if header.len() < 2 {
            return Err(bad("layout needs at least one assignment column".into()));
        }
        let by_technologist = match header[0].to_ascii_lowercase().as_str() {
            "psg_id" => false,
            "technologist" => true,
            _ => {
                return Err(bad(
                    "first header cell must be `psg_id` or `technologist`".into(),
                ))
            }
        };
        let names = |rows: &[Vec<String>]| rows.iter().map(|r| r[0].clone()).collect::<Vec<_>>();
        let (technologists, psgs) = if by_technologist {
            (names(&grid[1..]), header[1..].to_vec())
        } else {
            (header[1..].to_vec(), names(&grid[1..]))
        };
        let cell = |p: usize, t: usize| {
            let (row, col) = if by_technologist { (t + 1, p + 1) } else { (p + 1, t + 1) };
            grid[row][col].as_str()
        };
        if psgs.is_empty() || technologists.is_empty() {
            return Err(bad("no assignments listed".into()));
        }
        if let Some(name) = psgs.iter().chain(&technologists).find(|n| n.is_empty()) {
            return Err(bad(format!("empty name {name:?}")));
        }
        let mut rows = Vec::new();
        for (p, psg) in psgs.iter().enumerate() {
            let cells = (0..technologists.len())
                .map(|t| match cell(p, t).to_ascii_uppercase().as_str() {
                    "X" => Ok(Some(Condition::WithoutAi)),
                    "O" => Ok(Some(Condition::WithAi)),
                    "" | "-" => Ok(None),
                    other => Err(bad(format!("psg {psg}: unknown cell {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((psg.clone(), cells));
        }
        Ok(AssignmentLayout {
            technologists,
            rows,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(open(path)?)
    }
}

/// Everything scored for one recording.
#[derive(Debug, Clone)]
pub struct PsgScorings {
    pub psg_id: String,
    pub consensus: Vec<Hypnogram>,
    pub technologists: BTreeMap<String, Hypnogram>,
    pub gray_mask: Option<GrayMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsgKappa {
    pub psg_id: String,
    pub technologist: String,
    pub condition: Condition,
    #[serde(flatten)]
    pub report: KappaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub complete: Option<CellSummary>,
    pub gray_only: Option<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologistSummary {
    pub technologist: String,
    pub without_ai: ConditionSummary,
    pub with_ai: ConditionSummary,
}

/// Technologist × {without, with AI} × {complete, gray only}, mean ± sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaTable {
    pub technologists: Vec<TechnologistSummary>,
    pub psgs: Vec<PsgKappa>,
}

impl KappaTable {
    /// Plain-text rendering with one row per technologist.
    pub fn to_text(&self) -> String {
        let cell = |s: &Option<CellSummary>| match s {
            Some(s) => format!("{:.2}±{:.2}", s.mean, s.sd),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>12} {:>12}",
            "", "complete", "complete", "gray only", "gray only"
        );
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>12} {:>12}",
            "technologist", "without AI", "with AI", "without AI", "with AI"
        );
        for t in &self.technologists {
            let _ = writeln!(
                out,
                "{:<12} {:>12} {:>12} {:>12} {:>12}",
                t.technologist,
                cell(&t.without_ai.complete),
                cell(&t.with_ai.complete),
                cell(&t.without_ai.gray_only),
                cell(&t.with_ai.gray_only),
            );
        }
        out
    }
}

/// Each assigned scoring is rated jointly with the consensus raters.
pub fn kappa_report(layout: &AssignmentLayout, scorings: &[PsgScorings]) -> Result<KappaTable> {
    let by_id: BTreeMap<&str, &PsgScorings> =
        scorings.iter().map(|s| (s.psg_id.as_str(), s)).collect();
    let mut psgs = Vec::new();
    for (psg_id, cells) in &layout.rows {
        for (tech, cell) in layout.technologists.iter().zip(cells) {
            let Some(condition) = cell else { continue };
            let missing = |what: &str| AgreementError::Input {
                path: psg_id.clone(),
                message: format!("no {what}"),
            };
            let s = by_id
                .get(psg_id.as_str())
                .ok_or_else(|| missing("scorings"))?;
            let scoring = s
                .technologists
                .get(tech)
                .ok_or_else(|| missing(&format!("scoring by {tech}")))?;
            let mut raters = s.consensus.clone();
            raters.push(scoring.clone());
            let matrix = build_rating_matrix(&raters)?;
            psgs.push(PsgKappa {
                psg_id: psg_id.clone(),
                technologist: tech.clone(),
                condition: *condition,
                report: KappaReport::compute(&matrix, s.gray_mask.as_ref())?,
            });
        }
    }

    let summary = |tech: &str, condition: Condition| -> Result<ConditionSummary> {
        let cell: Vec<&KappaReport> = psgs
            .iter()
            .filter(|p| p.technologist == tech && p.condition == condition)
            .map(|p| &p.report)
            .collect();
        let complete: Vec<f64> = cell.iter().map(|r| r.overall_kappa).collect();
        let gray: Vec<f64> = cell.iter().filter_map(|r| r.gray_only_kappa).collect();
        Ok(ConditionSummary {
            complete: optional_summary(&complete)?,
            gray_only: optional_summary(&gray)?,
        })
    };
    let technologists = layout
        .technologists
        .iter()
        .map(|t| {
            Ok(TechnologistSummary {
                technologist: t.clone(),
                without_ai: summary(t, Condition::WithoutAi)?,
                with_ai: summary(t, Condition::WithAi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KappaTable {
        technologists,
        psgs,
    })
}

fn optional_summary(values: &[f64]) -> Result<Option<Summary>> {
    if values.is_empty() {
        Ok(None)
    } else {
        summarize(values).map(Some)
    }
}

/// Loads scorings laid out as
/// `ratings/<psg_id>/consensus/*.csv` and `ratings/<psg_id>/<technologist>.csv`,
/// with optional gray masks at `masks/<psg_id>.csv`.
pub fn load_scorings(
    ratings_dir: &Path,
    masks_dir: Option<&Path>,
    layout: &AssignmentLayout,
    epoch_length_s: f64,
) -> Result<Vec<PsgScorings>> {
    layout
        .rows
        .iter()
        .map(|(psg_id, cells)| {
            let dir = ratings_dir.join(psg_id);
            let consensus = csv_files(&dir.join("consensus"))?
                .iter()
                .map(|p| load_hypnogram(p, epoch_length_s))
                .collect::<Result<Vec<_>>>()?;
            let mut technologists = BTreeMap::new();
            for (tech, cell) in layout.technologists.iter().zip(cells) {
                if cell.is_some() {
                    let path = dir.join(format!("{tech}.csv"));
                    technologists.insert(tech.clone(), load_hypnogram(&path, epoch_length_s)?);
                }
            }
            let gray_mask = match masks_dir.map(|m| m.join(format!("{psg_id}.csv"))) {
                Some(p) if p.exists() => Some(load_mask(&p)?),
                _ => None,
            };
            Ok(PsgScorings {
                psg_id: psg_id.clone(),
                consensus,
                technologists,
                gray_mask,
            })
        })
        .collect()
}

/// Treats every `*.csv` hypnogram in `dir` as one rater of the same recording.
pub fn kappa_for_directory(
    dir: &Path,
    mask: Option<&Path>,
    epoch_length_s: f64,
) -> Result<KappaReport> {
    let hypnograms = csv_files(dir)?
        .iter()
        .map(|p| load_hypnogram(p, epoch_length_s))
        .collect::<Result<Vec<_>>>()?;
    let matrix = build_rating_matrix(&hypnograms)?;
    let mask = mask.map(load_mask).transpose()?;
    KappaReport::compute(&matrix, mask.as_ref())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| input_error(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| input_error(path, e))
}

fn load_hypnogram(path: &Path, epoch_length_s: f64) -> Result<Hypnogram> {
    read_hypnogram_csv(open(path)?, epoch_length_s, NaiveDateTime::default())
        .map_err(|e| input_error(path, e))
}

fn load_mask(path: &Path) -> Result<GrayMask> {
    read_mask_csv(open(path)?).map_err(|e| input_error(path, e))
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> AgreementError {
    AgreementError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_parses_x_and_o() {
        let csv = "psg_id,st1,st2,st3\n1,X,O,O\n2,O,X,\n";
        let l = AssignmentLayout::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(l.technologists, ["st1", "st2", "st3"]);
        assert_eq!(
            l.rows[1].1,
            vec![Some(Condition::WithAi), Some(Condition::WithoutAi), None]
        );
        assert!(AssignmentLayout::from_csv("psg_id,st1\n1,Z\n".as_bytes()).is_err());
        assert!(AssignmentLayout::from_csv("id,st1\n1,X\n".as_bytes()).is_err());
    }
}
