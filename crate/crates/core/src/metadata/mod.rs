//! Metadata features: per-species imputation, solar day parts, and the
//! seven-element network input.

mod solar;
mod stats;

pub use solar::{classify_day_part, day_boundaries, sun_event_times, DayBoundaries, DayPart, SunEvents};
pub use stats::{compute_species_stats, impute_attribute, Attribute, AttributeStats, SpeciesAttributeStats};

use chrono::NaiveDate;

use crate::corpus::RecordingMetadata;
use crate::RandomSource;

/// Upper end of the elevation normalisation range, meters.
pub const ELEVATION_MAX: f64 = 5000.0;

/// Date used for the day-part computation when a recording has none.
pub fn fallback_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 3, 20).expect("valid date")
}

/// The network's metadata input:
/// `[coords?, lat, lon, elevation?, elevation, day part?, day part]`,
/// every entry in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetadataVector(pub [f64; 7]);

impl MetadataVector {
    pub const LEN: usize = 7;

    pub fn values(&self) -> &[f64; 7] {
        &self.0
    }

    pub fn coords_available(&self) -> bool {
        self.0[0] == 1.0
    }

    pub fn elevation_available(&self) -> bool {
        self.0[3] == 1.0
    }

    pub fn daypart_available(&self) -> bool {
        self.0[5] == 1.0
    }
}

pub fn normalize_latitude(lat: f64) -> f64 {
    ((lat + 90.0) / 180.0).clamp(0.0, 1.0)
}

pub fn normalize_longitude(lon: f64) -> f64 {
    ((lon + 180.0) / 360.0).clamp(0.0, 1.0)
}

pub fn normalize_elevation(elev: f64) -> f64 {
    elev.clamp(0.0, ELEVATION_MAX) / ELEVATION_MAX
}

/// Builds the metadata vector, imputing absent values from `stats`.
///
/// A missing value is replaced by a draw from its species' distribution and
/// its availability flag stays 0. The day part is flagged available only
/// when coordinates, date and time are all present.
pub fn metadata_vector(
    md: &RecordingMetadata,
    stats: &SpeciesAttributeStats,
    rng: &mut RandomSource,
) -> MetadataVector {
    build_vector(md, md.species_id, stats, rng)
}

/// Like [`metadata_vector`] but imputes from corpus-wide statistics, for
/// recordings whose species must not influence their own features.
pub fn metadata_vector_unlabeled(
    md: &RecordingMetadata,
    stats: &SpeciesAttributeStats,
    rng: &mut RandomSource,
) -> MetadataVector {
    build_vector(md, usize::MAX, stats, rng)
}

fn build_vector(
    md: &RecordingMetadata,
    species: usize,
    stats: &SpeciesAttributeStats,
    rng: &mut RandomSource,
) -> MetadataVector {
    let value = |present: Option<f64>, attr: Attribute, rng: &mut RandomSource| {
        present.unwrap_or_else(|| impute_attribute(species, attr, stats, rng))
    };
    let lat = value(md.latitude, Attribute::Latitude, rng);
    let lon = value(md.longitude, Attribute::Longitude, rng);
    let elev = value(md.elevation, Attribute::Elevation, rng);
    let time = value(md.time_of_day.map(f64::from), Attribute::TimeOfDay, rng);

    let coords = md.coordinates().is_some();
    let daypart_known = coords && md.date.is_some() && md.time_of_day.is_some();
    let part = classify_day_part(lat, lon, md.date.unwrap_or_else(fallback_date), time);

    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    MetadataVector([
        flag(coords),
        normalize_latitude(lat),
        normalize_longitude(lon),
        flag(md.elevation.is_some()),
        normalize_elevation(elev),
        flag(daypart_known),
        part.normalized(),
    ])
}
