//! Per-sample demographics, split assignment, and condition labels.
//!
//! The on-disk form is a comma-separated table with the exact header
//! `id,sex,age,race,split,cardiomegaly,lung_opacity,edema,pleural_effusion`,
//! label cells in `{0,1,-1}` where `-1` means missing.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const DEFAULT_CONDITIONS: [&str; 4] =
    ["cardiomegaly", "lung_opacity", "edema", "pleural_effusion"];

const HEADER: &str = "id,sex,age,race,split,cardiomegaly,lung_opacity,edema,pleural_effusion";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Asian,
    Black,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Binary age grouping derived from age in years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    Young,
    Old,
}

/// Ages of 70 and above are grouped as old.
pub fn derive_age_group(age_years: u32) -> AgeGroup {
    if age_years >= 70 {
        AgeGroup::Old
    } else {
        AgeGroup::Young
    }
}

/// Per-condition label state. `-1` cells parse to `Missing`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
    Missing,
}

impl Label {
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Label::Negative => Some(0),
            Label::Positive => Some(1),
            Label::Missing => None,
        }
    }
}

/// Demographic axes along which subgroup performance is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Sex,
    Age,
    Race,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Sex, Axis::Age, Axis::Race];

    /// Group names carried into fairness metrics for this axis. Race `other`
    /// is deliberately absent: those rows train the model but are excluded
    /// from race-axis deltas.
    pub fn metric_groups(self) -> &'static [&'static str] {
        match self {
            Axis::Sex => &["female", "male"],
            Axis::Age => &["young", "old"],
            Axis::Race => &["white", "asian", "black"],
        }
    }

    /// All group names an axis can take, including ones excluded from metrics.
    pub fn all_groups(self) -> &'static [&'static str] {
        match self {
            Axis::Sex => &["female", "male"],
            Axis::Age => &["young", "old"],
            Axis::Race => &["white", "asian", "black", "other"],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Sex => "sex",
            Axis::Age => "age",
            Axis::Race => "race",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sex" => Ok(Axis::Sex),
            "age" => Ok(Axis::Age),
            "race" => Ok(Axis::Race),
            other => Err(format!("unknown axis `{other}` (expected sex|age|race)")),
        }
    }
}

/// Demographics, split assignment, and condition labels for a cohort,
/// row-aligned with an [`super::EmbeddingMatrix`] when paired.
#[derive(Debug, Clone)]
pub struct SampleTable {
    ids: Vec<String>,
    sex: Vec<Sex>,
    age_years: Vec<u32>,
    race: Vec<Race>,
    split: Vec<Split>,
    condition_names: Vec<String>,
    /// labels[condition][sample]
    labels: Vec<Vec<Label>>,
}

impl SampleTable {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ids: Vec<String>,
        sex: Vec<Sex>,
        age_years: Vec<u32>,
        race: Vec<Race>,
        split: Vec<Split>,
        condition_names: Vec<String>,
        labels: Vec<Vec<Label>>,
    ) -> Result<Self, DataError> {
        let n = ids.len();
        assert!(
            sex.len() == n && age_years.len() == n && race.len() == n && split.len() == n,
            "column length mismatch"
        );
        assert_eq!(condition_names.len(), labels.len(), "label column mismatch");
        for col in &labels {
            assert_eq!(col.len(), n, "label column length mismatch");
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId { id: id.clone() });
            }
        }
        Ok(SampleTable {
            ids,
            sex,
            age_years,
            race,
            split,
            condition_names,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn sex(&self, i: usize) -> Sex {
        self.sex[i]
    }

    pub fn age_years(&self, i: usize) -> u32 {
        self.age_years[i]
    }

    pub fn age_group(&self, i: usize) -> AgeGroup {
        derive_age_group(self.age_years[i])
    }

    pub fn race(&self, i: usize) -> Race {
        self.race[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn condition_names(&self) -> &[String] {
        &self.condition_names
    }

    pub fn n_conditions(&self) -> usize {
        self.condition_names.len()
    }

    pub fn label(&self, condition: usize, i: usize) -> Label {
        self.labels[condition][i]
    }

    pub fn labels_for(&self, condition: usize) -> &[Label] {
        &self.labels[condition]
    }

    /// Row indices belonging to a split, in row order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.split[i] == split).collect()
    }

    /// The group name a sample takes along an axis.
    pub fn group_name(&self, axis: Axis, i: usize) -> &'static str {
        match axis {
            Axis::Sex => match self.sex[i] {
                Sex::Female => "female",
                Sex::Male => "male",
            },
            Axis::Age => match self.age_group(i) {
                AgeGroup::Young => "young",
                AgeGroup::Old => "old",
            },
            Axis::Race => match self.race[i] {
                Race::White => "white",
                Race::Asian => "asian",
                Race::Black => "black",
                Race::Other => "other",
            },
        }
    }

    /// Group assignment for fairness metrics: `Some(index into
    /// axis.metric_groups())`, or `None` for rows the axis excludes
    /// (race `other`).
    pub fn metric_group_index(&self, axis: Axis, i: usize) -> Option<usize> {
        let name = self.group_name(axis, i);
        axis.metric_groups().iter().position(|g| *g == name)
    }

    /// Replaces the label vectors, used by the synthetic generator.
    pub(crate) fn labels_mut(&mut self) -> &mut Vec<Vec<Label>> {
        &mut self.labels
    }
}

fn parse_label(token: &str, row: usize, column: &str) -> Result<Label, DataError> {
    match token {
        "0" => Ok(Label::Negative),
        "1" => Ok(Label::Positive),
        "-1" => Ok(Label::Missing),
        _ => Err(DataError::BadEnumValue {
            row,
            column: column.to_string(),
            token: token.to_string(),
        }),
    }
}

/// Parses a samples table. Unknown race strings map to `other`; everything
/// else is strict.
pub fn read_samples(path: &Path) -> Result<SampleTable, DataError> {
    let text = fs::read_to_string(path)?;
    parse_samples(&text)
}

pub(crate) fn parse_samples(text: &str) -> Result<SampleTable, DataError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    let want: Vec<&str> = HEADER.split(',').collect();
    for (pos, col) in want.iter().enumerate() {
        if got.get(pos) != Some(col) {
            return Err(DataError::MissingColumn { column: col.to_string() });
        }
    }

    let mut ids = Vec::new();
    let mut sex = Vec::new();
    let mut age = Vec::new();
    let mut race = Vec::new();
    let mut split = Vec::new();
    let mut labels: Vec<Vec<Label>> = vec![Vec::new(); DEFAULT_CONDITIONS.len()];
    let mut seen = HashSet::new();

    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != want.len() {
            return Err(DataError::MissingColumn {
                column: want[cells.len().min(want.len() - 1)].to_string(),
            });
        }
        let id = cells[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { id });
        }
        ids.push(id);
        sex.push(match cells[1] {
            "female" => Sex::Female,
            "male" => Sex::Male,
            tok => {
                return Err(DataError::BadEnumValue {
                    row,
                    column: "sex".into(),
                    token: tok.into(),
                })
            }
        });
        age.push(cells[2].parse::<u32>().map_err(|_| DataError::BadEnumValue {
            row,
            column: "age".into(),
            token: cells[2].into(),
        })?);
        race.push(match cells[3] {
            "white" => Race::White,
            "asian" => Race::Asian,
            "black" => Race::Black,
            _ => Race::Other,
        });
        split.push(match cells[4] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            tok => {
                return Err(DataError::BadEnumValue {
                    row,
                    column: "split".into(),
                    token: tok.into(),
                })
            }
        });
        for (c, name) in DEFAULT_CONDITIONS.iter().enumerate() {
            labels[c].push(parse_label(cells[5 + c], row, name)?);
        }
    }

    SampleTable::new(
        ids,
        sex,
        age,
        race,
        split,
        DEFAULT_CONDITIONS.iter().map(|s| s.to_string()).collect(),
        labels,
    )
}

/// Writes the table in the exact on-disk format read by [`read_samples`].
pub fn write_samples(table: &SampleTable, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{HEADER}")?;
    for i in 0..table.n_samples() {
        let sex = match table.sex(i) {
            Sex::Female => "female",
            Sex::Male => "male",
        };
        let race = match table.race(i) {
            Race::White => "white",
            Race::Asian => "asian",
            Race::Black => "black",
            Race::Other => "other",
        };
        let split = match table.split(i) {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        write!(w, "{},{},{},{},{}", table.ids[i], sex, table.age_years(i), race, split)?;
        for c in 0..table.n_conditions() {
            let cell = match table.label(c, i) {
                Label::Negative => "0",
                Label::Positive => "1",
                Label::Missing => "-1",
            };
            write!(w, ",{cell}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
