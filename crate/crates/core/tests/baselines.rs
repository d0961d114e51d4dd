use xray2vol_core::baselines::*;
use xray2vol_core::dataset::{synthesize_sample, DatasetConfig};
use xray2vol_core::metrics::volume_l2;
use xray2vol_core::{Error, Volume, XRayImage};

fn small_index(n_species: usize, views: usize) -> (BaselineIndex, Vec<IndexEntry>) {
    let cfg = DatasetConfig { species: n_species, views, image_size: 16, volume_size: 8, phantom_size: 16, n_steps: 16, seed: 3, ..DatasetConfig::default() };
    let mut entries = Vec::new();
    for s in 0..n_species {
        let phantom = cfg.phantom(s).unwrap();
        for (v, pose) in cfg.poses(s).iter().enumerate() {
            let (image, volume) = synthesize_sample(&phantom, pose, &cfg).unwrap();
            entries.push(IndexEntry { id: format!("sp{s:03}_v{v:03}"), image, volume });
        }
    }
    (BaselineIndex::new(entries.clone()).unwrap(), entries)
}

fn scan<'a>(entries: &'a [IndexEntry], dist: impl Fn(&IndexEntry) -> f64) -> (&'a str, f64) {
    let mut best: Option<(&str, f64)> = None;
    for e in entries {
        let d = dist(e);
        match best {
            Some((id, b)) if d > b || (d == b && id < e.id.as_str()) => {}
            _ => best = Some((&e.id, d)),
        }
    }
    best.unwrap()
}

#[test]
fn nearest_neighbor_and_oracle_match_exhaustive_scans() {
    let (index, entries) = small_index(5, 10);
    assert_eq!(index.len(), 50);
    let (queries, _) = small_index(3, 4);
    for q in queries.entries() {
        let nn = index.nearest_neighbor(&q.image).unwrap();
        let expect = scan(&entries, |e| image_mse(&q.image, &e.image).unwrap());
        assert_eq!((nn.id, nn.distance), expect);
        let or = index.oracle(&q.volume).unwrap();
        let expect = scan(&entries, |e| volume_l2(&q.volume, &e.volume).unwrap());
        assert_eq!((or.id, or.distance), expect);
        assert!(volume_l2(or.volume, &q.volume).unwrap() <= volume_l2(nn.volume, &q.volume).unwrap());
    }
}

#[test]
fn self_queries_return_distance_zero() {
    let (index, entries) = small_index(5, 10);
    for e in entries.iter().step_by(7) {
        let nn = index.nearest_neighbor(&e.image).unwrap();
        assert_eq!(nn.distance, 0.0);
        assert_eq!(index.oracle(&e.volume).unwrap().distance, 0.0);
    }
}

#[test]
fn zero_query_returns_lowest_energy_image() {
    let (index, entries) = small_index(5, 10);
    let zero = XRayImage::new(16, 16, vec![0.0; 256]).unwrap();
    let energy = |e: &IndexEntry| e.image.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
    let expect = scan(&entries, energy).0;
    assert_eq!(index.nearest_neighbor(&zero).unwrap().id, expect);
}

#[test]
fn empty_index_and_shape_errors() {
    let empty = BaselineIndex::new(vec![]).unwrap();
    assert!(matches!(empty.oracle(&Volume::zeros([8, 8, 8]).unwrap()), Err(Error::EmptyIndex)));
    let (index, _) = small_index(1, 2);
    assert!(index.oracle(&Volume::zeros([8, 8, 4]).unwrap()).is_err());
}
