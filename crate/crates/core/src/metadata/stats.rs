use rand_distr::{Distribution, Normal};

use crate::corpus::{CorpusManifest, RecordingMetadata};
use crate::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Latitude,
    Longitude,
    Elevation,
    TimeOfDay,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Latitude,
        Attribute::Longitude,
        Attribute::Elevation,
        Attribute::TimeOfDay,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Physical range imputed values are clamped to.
    pub fn range(self) -> (f64, f64) {
        match self {
            Attribute::Latitude => (-90.0, 90.0),
            Attribute::Longitude => (-180.0, 180.0),
            Attribute::Elevation => (-500.0, 9000.0),
            Attribute::TimeOfDay => (0.0, 1440.0 - 1e-6),
        }
    }

    /// Raw value whose normalised feature is 0.5; used when no recording in
    /// the corpus carries the attribute.
    pub fn neutral(self) -> f64 {
        match self {
            Attribute::Latitude | Attribute::Longitude => 0.0,
            Attribute::Elevation => super::ELEVATION_MAX / 2.0,
            Attribute::TimeOfDay => 720.0,
        }
    }

    pub fn get(self, md: &RecordingMetadata) -> Option<f64> {
        match self {
            Attribute::Latitude => md.latitude,
            Attribute::Longitude => md.longitude,
            Attribute::Elevation => md.elevation,
            Attribute::TimeOfDay => md.time_of_day.map(f64::from),
        }
    }
}

/// Mean and population variance over the present values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttributeStats {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl AttributeStats {
    fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self {
            mean,
            variance,
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesAttributeStats {
    per_species: Vec<[AttributeStats; 4]>,
    global: [AttributeStats; 4],
}

impl SpeciesAttributeStats {
    /// Statistics used for imputation, falling back from the species to the
    /// whole corpus to a neutral value with zero variance.
    pub fn get(&self, species: usize, attr: Attribute) -> AttributeStats {
        let i = attr.index();
        if let Some(s) = self.per_species.get(species).map(|s| s[i]) {
            if s.count > 0 {
                return s;
            }
        }
        let g = self.global[i];
        if g.count > 0 {
            return g;
        }
        AttributeStats {
            mean: attr.neutral(),
            variance: 0.0,
            count: 0,
        }
    }

    /// Statistics pooled over all species.
    pub fn global(&self, attr: Attribute) -> AttributeStats {
        self.get(usize::MAX, attr)
    }

    pub fn num_species(&self) -> usize {
        self.per_species.len()
    }
}

pub fn compute_species_stats(manifest: &CorpusManifest) -> SpeciesAttributeStats {
    let mut values = vec![vec![Vec::new(); 4]; manifest.num_species];
    let mut all = vec![Vec::new(); 4];
    for e in &manifest.entries {
        for attr in Attribute::ALL {
            if let Some(v) = attr.get(&e.metadata) {
                values[e.species_id()][attr.index()].push(v);
                all[attr.index()].push(v);
            }
        }
    }
    let pack = |v: &[Vec<f64>]| std::array::from_fn(|i| AttributeStats::from_values(&v[i]));
    SpeciesAttributeStats {
        per_species: values.iter().map(|v| pack(v)).collect(),
        global: pack(&all),
    }
}

/// Draws a replacement value from `Normal(mean, variance)` of the species'
/// attribute distribution, clamped to the attribute's range.
pub fn impute_attribute(
    species: usize,
    attr: Attribute,
    stats: &SpeciesAttributeStats,
    rng: &mut RandomSource,
) -> f64 {
    let s = stats.get(species, attr);
    let (lo, hi) = attr.range();
    let draw = if s.variance > 0.0 {
        Normal::new(s.mean, s.variance.sqrt())
            .map(|n| n.sample(rng.inner()))
            .unwrap_or(s.mean)
    } else {
        s.mean
    };
    draw.clamp(lo, hi)
}
