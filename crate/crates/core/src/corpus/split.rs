use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::CorpusManifest;
use crate::{Error, RandomSource, Result};

/// Stratified train/validation split.
///
/// The validation size is `round(len * val_fraction)`, apportioned across
/// species by largest remainder. Every species keeps at least one training
/// recording. Entries keep their manifest order in both outputs.
pub fn split_train_val(
    manifest: &CorpusManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(CorpusManifest, CorpusManifest)> {
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot split an empty manifest".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves an empty training split"
        )));
    }

    let mut by_species: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_species.entry(e.species_id()).or_default().push(i);
    }

    let target = (manifest.len() as f64 * val_fraction).round() as usize;
    // (species, floor quota, remainder, cap)
    let mut quotas: Vec<(usize, usize, f64, usize)> = by_species
        .iter()
        .map(|(&s, idx)| {
            let exact = idx.len() as f64 * val_fraction;
            let cap = idx.len() - 1;
            (s, (exact.floor() as usize).min(cap), exact - exact.floor(), cap)
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    // Largest remainders first, then any species with spare capacity.
    for pass in 0..2 {
        for &k in &order {
            if assigned >= target {
                break;
            }
            let q = &mut quotas[k];
            if q.1 < q.3 && (pass == 1 || q.2 > 0.0) {
                q.1 += 1;
                assigned += 1;
            }
        }
    }

    let mut rng = RandomSource::new(seed);
    let mut is_val = vec![false; manifest.len()];
    for (s, quota, _, _) in quotas {
        let mut members = by_species[&s].clone();
        members.shuffle(rng.inner());
        for &i in &members[..quota] {
            is_val[i] = true;
        }
    }

    let (val, train): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .cloned()
        .zip(is_val)
        .partition(|(_, v)| *v);
    let strip = |v: Vec<(crate::corpus::ManifestEntry, bool)>| v.into_iter().map(|(e, _)| e).collect();
    if train.is_empty() {
        return Err(Error::Config("validation split consumed every recording".into()));
    }
    Ok((
        CorpusManifest::new(strip(train), manifest.num_species)?,
        CorpusManifest::new(strip(val), manifest.num_species)?,
    ))
}
