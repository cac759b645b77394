use std::collections::{BTreeSet, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};

use crate::{Error, Result};

const HEADER: [&str; 8] = [
    "recording_id",
    "audio_path",
    "species_id",
    "latitude",
    "longitude",
    "elevation",
    "date",
    "time",
];

/// Per-recording metadata. Absent values are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMetadata {
    pub species_id: usize,
    /// Degrees in `[-90, 90]`.
    pub latitude: Option<f64>,
    /// Degrees in `[-180, 180]`.
    pub longitude: Option<f64>,
    /// Meters.
    pub elevation: Option<f64>,
    pub date: Option<NaiveDate>,
    /// Minutes since local midnight, `[0, 1440)`.
    pub time_of_day: Option<u16>,
}

impl RecordingMetadata {
    pub fn new(species_id: usize) -> Self {
        Self {
            species_id,
            latitude: None,
            longitude: None,
            elevation: None,
            date: None,
            time_of_day: None,
        }
    }

    /// Latitude and longitude, only when both are present.
    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.latitude.zip(self.longitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub recording_id: String,
    /// Resolved against the manifest's directory when relative.
    pub audio_path: PathBuf,
    pub metadata: RecordingMetadata,
}

impl ManifestEntry {
    pub fn species_id(&self) -> usize {
        self.metadata.species_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_species: usize,
}

impl CorpusManifest {
    /// Builds a manifest, checking id uniqueness and species bounds.
    ///
    /// Species ids need not be contiguous here (a validation split may miss a
    /// class); [`load_manifest`] enforces contiguity on whole corpora.
    pub fn new(entries: Vec<ManifestEntry>, num_species: usize) -> Result<Self> {
        if num_species == 0 {
            return Err(Error::Manifest("num_species must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.recording_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate recording_id `{}`",
                    e.recording_id
                )));
            }
            if e.audio_path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!(
                    "recording `{}` has an empty audio_path",
                    e.recording_id
                )));
            }
            if e.species_id() >= num_species {
                return Err(Error::Manifest(format!(
                    "recording `{}` has species_id {} >= num_species {}",
                    e.recording_id,
                    e.species_id(),
                    num_species
                )));
            }
        }
        Ok(Self {
            entries,
            num_species,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, recording_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.recording_id == recording_id)
    }

    pub fn position(&self, recording_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.recording_id == recording_id)
    }
}

/// Reads and validates a manifest file. Relative audio paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

/// Parses manifest text. `base_dir` anchors relative audio paths.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<CorpusManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", HEADER.join(","), names.join(",")),
        });
    }

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        entries.push(parse_entry(&record, line, base_dir)?);
    }

    let species: BTreeSet<usize> = entries.iter().map(ManifestEntry::species_id).collect();
    let num_species = species.iter().next_back().map_or(0, |&m| m + 1);
    if species.len() != num_species {
        let missing: Vec<String> = (0..num_species)
            .filter(|s| !species.contains(s))
            .map(|s| s.to_string())
            .collect();
        return Err(Error::Manifest(format!(
            "non-contiguous species ids (missing {})",
            missing.join(", ")
        )));
    }
    CorpusManifest::new(entries, num_species)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_entry(record: &csv::StringRecord, line: u64, base_dir: &Path) -> Result<ManifestEntry> {
    let cell = |i: usize| record.get(i).filter(|s| !s.is_empty());

    let recording_id = cell(0)
        .ok_or_else(|| Error::Parse {
            line,
            message: "empty recording_id".into(),
        })?
        .to_string();
    let raw_path = cell(1).ok_or_else(|| Error::Parse {
        line,
        message: "empty audio_path".into(),
    })?;
    let species_id = cell(2)
        .ok_or_else(|| Error::Parse {
            line,
            message: "empty species_id".into(),
        })?
        .parse::<usize>()
        .map_err(|e| Error::Parse {
            line,
            message: format!("species_id: {e}"),
        })?;

    let latitude = parse_real(cell(3), "latitude", line)?;
    let longitude = parse_real(cell(4), "longitude", line)?;
    let elevation = parse_real(cell(5), "elevation", line)?;
    check_range(latitude, "latitude", -90.0, 90.0, line)?;
    check_range(longitude, "longitude", -180.0, 180.0, line)?;

    let date = cell(6)
        .map(|s| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Range {
                line,
                field: "date",
                message: format!("`{s}` is not a valid YYYY-MM-DD date ({e})"),
            })
        })
        .transpose()?;
    if let Some(d) = date {
        if d.year() < 1 {
            return Err(Error::Range {
                line,
                field: "date",
                message: format!("year {} before 0001", d.year()),
            });
        }
    }
    let time_of_day = cell(7).map(|s| parse_time(s, line)).transpose()?;

    let mut audio_path = PathBuf::from(raw_path);
    if audio_path.is_relative() {
        audio_path = base_dir.join(audio_path);
    }

    Ok(ManifestEntry {
        recording_id,
        audio_path,
        metadata: RecordingMetadata {
            species_id,
            latitude,
            longitude,
            elevation,
            date,
            time_of_day,
        },
    })
}

fn parse_real(cell: Option<&str>, field: &'static str, line: u64) -> Result<Option<f64>> {
    cell.map(|s| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("{field}: `{s}` is not a finite number"),
            })
    })
    .transpose()
}

fn check_range(v: Option<f64>, field: &'static str, lo: f64, hi: f64, line: u64) -> Result<()> {
    match v {
        Some(x) if !(lo..=hi).contains(&x) => Err(Error::Range {
            line,
            field,
            message: format!("{x} not in [{lo}, {hi}]"),
        }),
        _ => Ok(()),
    }
}

fn parse_time(s: &str, line: u64) -> Result<u16> {
    let bad = || Error::Range {
        line,
        field: "time",
        message: format!("`{s}` is not a valid HH:MM time"),
    };
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u16 = h.parse().map_err(|_| bad())?;
    let m: u16 = m.parse().map_err(|_| bad())?;
    if h >= 24 || m >= 60 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}
