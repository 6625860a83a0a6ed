//! Cloud files, dataset manifests, resampling and the synthetic benchmark.

pub mod formats;
pub mod manifest;
pub mod synth;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use formats::{load_cloud, save_cloud, CloudFormat};
pub use manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};
pub use synth::{synth_generate, synth_instance, synth_samples, ShapeClass, SynthSpec};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, normalize_unit_sphere, Point, PointCloud, SeedRule};

/// A labeled cloud ready for batching.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub coords: Vec<Point>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points_per_cloud(&self) -> Option<usize> {
        let n = self.samples.first()?.coords.len();
        self.samples.iter().all(|s| s.coords.len() == n).then_some(n)
    }
}

/// Exactly `n` points: farthest point sampling when there are more, all
/// originals plus draws with replacement when there are fewer.
pub fn resample_to_n(cloud: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::arg("cannot resample to zero points"));
    }
    let len = cloud.len();
    let pick: Vec<usize> = if len == n {
        return Ok(cloud.clone());
    } else if len > n {
        farthest_point_sample(&cloud.coords, n, SeedRule::FarthestFromCentroid)?
    } else {
        (0..len).chain((len..n).map(|_| rng.random_range(0..len))).collect()
    };
    let coords = pick.iter().map(|&i| cloud.coords[i]).collect();
    let mut out = PointCloud::new(coords, cloud.label)?;
    if let Some(f) = &cloud.features {
        let d = cloud.feature_dim;
        let values = pick
            .iter()
            .flat_map(|&i| f[i * d..(i + 1) * d].iter().copied())
            .collect();
        out = out.with_features(d, values)?;
    }
    Ok(out)
}

/// Resamples to `n` points and normalizes into the unit sphere.
pub fn prepare(coords: Vec<Point>, label: usize, n: usize, seed: u64) -> Result<Sample> {
    let cloud = PointCloud::new(coords, Some(label))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = resample_to_n(&cloud, n, &mut rng)?;
    Ok(Sample {
        coords: normalize_unit_sphere(&cloud.coords),
        label,
    })
}

/// Loads one split of a manifest, resampled to `n` points per cloud and
/// normalized into the unit sphere.
pub fn load_split(manifest: &DatasetManifest, root: &Path, split: Split, n: usize) -> Result<Dataset> {
    let samples = manifest
        .split(split)
        .enumerate()
        .map(|(i, e)| {
            let path = root.join(&e.path);
            let cloud = load_cloud(&path, CloudFormat::from_path(&path)?)?;
            prepare(cloud.coords, e.label, n, i as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::arg(format!(
            "split {} of {} is empty",
            split.name(),
            manifest.name
        )));
    }
    Ok(Dataset {
        samples,
        num_classes: manifest.num_classes,
        class_names: manifest.class_names.clone(),
    })
}

/// In-memory synthetic benchmark, prepared like a loaded manifest.
pub fn synth_datasets(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    synth_datasets_at(spec, spec.points)
}

/// Synthetic benchmark resampled to `n` points per cloud.
pub fn synth_datasets_at(spec: &SynthSpec, n: usize) -> Result<(Dataset, Dataset)> {
    let (train, test) = synth_samples(spec)?;
    let wrap = |samples: Vec<Sample>| -> Result<Dataset> {
        let samples = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| prepare(s.coords, s.label, n, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            num_classes: spec.classes.len(),
            class_names: spec.class_names(),
        })
    };
    Ok((wrap(train)?, wrap(test)?))
}
