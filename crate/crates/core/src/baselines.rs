//! Retrieval baselines over the training split: nearest neighbor by image
//! distance and the oracle that picks by distance to the ground truth.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::image::XRayImage;
use crate::metrics::volume_l2;
use crate::volume::Volume;

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub image: XRayImage,
    pub volume: Volume,
}

/// Training samples sorted by id, so a strict scan breaks ties toward the
/// lowest id.
#[derive(Debug, Clone, Default)]
pub struct BaselineIndex {
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct Retrieval<'a> {
    pub id: &'a str,
    pub distance: f64,
    pub volume: &'a Volume,
}

impl BaselineIndex {
    /// All images must share one size and all volumes one shape.
    pub fn new(mut entries: Vec<IndexEntry>) -> Result<Self> {
        if let Some(first) = entries.first() {
            let (idims, vdims) = (first.image.dims(), first.volume.dims());
            for e in &entries {
                if e.image.dims() != idims || e.volume.dims() != vdims {
                    return Err(mismatch!(
                        "entry `{}` has image {:?} and volume {:?}, expected {:?} and {:?}",
                        e.id,
                        e.image.dims(),
                        e.volume.dims(),
                        idims,
                        vdims
                    ));
                }
            }
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    fn argmin<'a>(&'a self, mut dist: impl FnMut(&IndexEntry) -> Result<f64>) -> Result<Retrieval<'a>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = dist(e)?;
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        let (i, distance) = best.ok_or(Error::EmptyIndex)?;
        let e = &self.entries[i];
        Ok(Retrieval { id: &e.id, distance, volume: &e.volume })
    }

    /// Training sample whose x-ray has the smallest mean squared difference
    /// to `query`.
    pub fn nearest_neighbor(&self, query: &XRayImage) -> Result<Retrieval<'_>> {
        self.argmin(|e| image_mse(query, &e.image))
    }

    /// Training sample whose volume is closest to `ground_truth` under the
    /// volume L2 metric. Ignores the x-ray entirely.
    pub fn oracle(&self, ground_truth: &Volume) -> Result<Retrieval<'_>> {
        self.argmin(|e| volume_l2(ground_truth, &e.volume))
    }
}

pub fn image_mse(a: &XRayImage, b: &XRayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(mismatch!("query image {:?} vs index image {:?}", a.dims(), b.dims()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}
