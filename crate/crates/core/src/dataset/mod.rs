//! Sample manifest and the dataset protocol built on it.
//!
//! The manifest is a UTF-8 CSV with the header
//! `id,rgb_path,thermal_raw_path,grade,thermal_valid`. Relative paths resolve
//! against the manifest's directory. Rows whose thermal frame is flagged invalid
//! stay in the RGB dataset but are excluded from the thermal and fused datasets.

mod augment;
mod sample;
mod split;
mod weights;

pub use augment::{augment, AffineConfig, AugmentationConfig, ColorJitter, CropConfig};
pub use sample::{FusedSample, SampleBuilder, SampleError};
pub use split::{make_split, SplitError, SplitPlan, MIN_PER_CLASS, NUM_FOLDS, TEST_PERCENT};
pub use weights::{class_weights, ClassWeights, WeightsError};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of Wagner grades (0 through 5).
pub const NUM_CLASSES: usize = 6;

/// Per-grade sample counts of the clinical RGB dataset.
pub const CLINICAL_RGB_COUNTS: [usize; NUM_CLASSES] = [150, 106, 496, 226, 184, 43];
/// Per-grade sample counts of the clinical thermal and fused datasets.
pub const CLINICAL_THERMAL_COUNTS: [usize; NUM_CLASSES] = [134, 84, 456, 214, 179, 41];

pub const MANIFEST_HEADER: [&str; 5] = ["id", "rgb_path", "thermal_raw_path", "grade", "thermal_valid"];

/// Wagner ulcer grade. Ordinal: adjacent grades are clinically close.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Grade(u8);

impl Grade {
    pub const ALL: [Grade; NUM_CLASSES] = [Grade(0), Grade(1), Grade(2), Grade(3), Grade(4), Grade(5)];

    pub fn new(value: u8) -> Option<Self> {
        (usize::from(value) < NUM_CLASSES).then_some(Self(value))
    }

    pub fn from_index(index: usize) -> Option<Self> {
        u8::try_from(index).ok().and_then(Self::new)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl TryFrom<u8> for Grade {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Grade::new(value).ok_or_else(|| format!("grade {value} outside 0..=5"))
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g.0
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which inputs a model sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    /// Normalized thermal channel replicated into three channels.
    Thermal,
    /// RGB plus the normalized thermal channel as a fourth channel.
    Fused,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Thermal, Modality::Fused];

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb | Modality::Thermal => 3,
            Modality::Fused => 4,
        }
    }

    pub fn uses_thermal(self) -> bool {
        !matches!(self, Modality::Rgb)
    }

    /// Channels carrying RGB colour (photometric augmentation applies only here).
    pub fn rgb_channels(self) -> std::ops::Range<usize> {
        match self {
            Modality::Rgb | Modality::Fused => 0..3,
            Modality::Thermal => 0..0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Thermal => "thermal",
            Modality::Fused => "fused",
        }
    }

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Modality::Rgb => "RGB",
            Modality::Thermal => "Thermal",
            Modality::Fused => "RGB+Thermal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "thermal" => Ok(Modality::Thermal),
            "fused" | "rgb+thermal" | "rgbt" => Ok(Modality::Fused),
            other => Err(format!("unknown modality `{other}` (expected rgb, thermal or fused)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub rgb_path: PathBuf,
    pub thermal_raw_path: Option<PathBuf>,
    pub grade: Grade,
    pub thermal_valid: bool,
}

impl SampleRecord {
    pub fn in_modality(&self, modality: Modality) -> bool {
        !modality.uses_thermal() || (self.thermal_valid && self.thermal_raw_path.is_some())
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample `{id}`: {what} file {path} does not exist")]
    MissingFile {
        id: String,
        what: &'static str,
        path: PathBuf,
    },
    #[error("sample `{id}`: grade `{value}` is not an integer in 0..=5")]
    BadGrade { id: String, value: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("manifest line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("manifest header must be `{expected}`, got `{found}`")]
    BadHeader { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-modality class tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub rgb: [usize; NUM_CLASSES],
    pub thermal: [usize; NUM_CLASSES],
    pub fused: [usize; NUM_CLASSES],
}

impl ClassCounts {
    pub fn get(&self, modality: Modality) -> [usize; NUM_CLASSES] {
        match modality {
            Modality::Rgb => self.rgb,
            Modality::Thermal => self.thermal,
            Modality::Fused => self.fused,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Builds a manifest from in-memory records, rejecting duplicate ids.
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records that belong to the given modality's dataset, in manifest order.
    pub fn records_for(&self, modality: Modality) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.in_modality(modality))
    }

    pub fn counts(&self, modality: Modality) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in self.records_for(modality) {
            counts[r.grade.index()] += 1;
        }
        counts
    }

    pub fn class_counts(&self) -> ClassCounts {
        ClassCounts {
            rgb: self.counts(Modality::Rgb),
            thermal: self.counts(Modality::Thermal),
            fused: self.counts(Modality::Fused),
        }
    }

    /// Checks that every referenced image exists.
    pub fn verify_files(&self) -> Result<(), DatasetError> {
        for r in &self.records {
            if !r.rgb_path.is_file() {
                return Err(DatasetError::MissingFile {
                    id: r.id.clone(),
                    what: "RGB",
                    path: r.rgb_path.clone(),
                });
            }
            if r.thermal_valid {
                match &r.thermal_raw_path {
                    Some(p) if p.is_file() => {}
                    Some(p) => {
                        return Err(DatasetError::MissingFile {
                            id: r.id.clone(),
                            what: "thermal",
                            path: p.clone(),
                        })
                    }
                    None => {
                        return Err(DatasetError::MissingFile {
                            id: r.id.clone(),
                            what: "thermal",
                            path: PathBuf::new(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest as CSV; paths under `base` are written relative to it.
    pub fn write_csv(&self, path: impl AsRef<Path>, base: Option<&Path>) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        let rel = |p: &Path| -> String {
            base.and_then(|b| p.strip_prefix(b).ok())
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        for r in &self.records {
            let thermal = r.thermal_raw_path.as_deref().map(rel).unwrap_or_default();
            let grade = r.grade.to_string();
            let rgb = rel(&r.rgb_path);
            let valid = if r.thermal_valid { "true" } else { "false" };
            w.write_record([r.id.as_str(), rgb.as_str(), thermal.as_str(), grade.as_str(), valid])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a manifest CSV without touching the referenced files.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(DatasetError::BadHeader {
            expected: MANIFEST_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let resolve = |s: &str| -> PathBuf {
        let p = PathBuf::from(s);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(DatasetError::BadRow {
                line,
                message: "empty id".into(),
            });
        }
        let grade_str = field(3);
        let grade = grade_str
            .parse::<u8>()
            .ok()
            .and_then(Grade::new)
            .ok_or_else(|| DatasetError::BadGrade {
                id: id.clone(),
                value: grade_str.to_string(),
            })?;
        let thermal_valid = match field(4).to_ascii_lowercase().as_str() {
            "true" => true,
            "false" => false,
            other => {
                return Err(DatasetError::BadRow {
                    line,
                    message: format!("thermal_valid must be true or false, got `{other}`"),
                })
            }
        };
        if field(1).is_empty() {
            return Err(DatasetError::BadRow {
                line,
                message: format!("sample `{id}` has no rgb_path"),
            });
        }
        let thermal = field(2);
        records.push(SampleRecord {
            rgb_path: resolve(field(1)),
            thermal_raw_path: (!thermal.is_empty()).then(|| resolve(thermal)),
            grade,
            thermal_valid,
            id,
        });
    }
    DatasetManifest::from_records(records)
}

/// Loads a manifest and verifies every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    manifest.verify_files()?;
    Ok(manifest)
}
