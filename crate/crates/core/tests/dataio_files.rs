mod common;

use std::fs;

use msrl_core::dataio::{
    generate_synthetic, load_dataset, make_batches, read_labels, read_view, write_dataset, write_labels, write_view,
    FeatureView, Manifest, ManifestView, SyntheticSpec,
};
use msrl_core::metrics::hungarian_acc;
use msrl_core::{Matrix, MsrlError};
use proptest::prelude::*;

fn view(rows: usize, cols: usize, data: Vec<f64>) -> FeatureView {
    FeatureView {
        view_id: 0,
        backbone: "test".into(),
        data: Matrix::from_vec(rows, cols, data).unwrap(),
    }
}

#[test]
fn single_value_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.mvfv");
    write_view(&view(1, 1, vec![0.5]), &p).unwrap();
    let bytes = fs::read(&p).unwrap();
    assert_eq!(bytes.len(), 28);
    assert_eq!(&bytes[..4], b"MVFV");
    assert_eq!(&bytes[24..], &0.5f32.to_le_bytes());
    assert_eq!(read_view(&p).unwrap().data, Matrix::from_vec(1, 1, vec![0.5]).unwrap());
}

#[test]
fn file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.mvfv");
    write_view(&view(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), &p).unwrap();
    let good = fs::read(&p).unwrap();

    let mut bad = good.clone();
    bad[0] ^= 0xff;
    fs::write(&p, &bad).unwrap();
    let err = read_view(&p).unwrap_err();
    assert!(matches!(err, MsrlError::BadMagic { .. }));
    assert!(err.to_string().contains("bad magic"));

    fs::write(&p, &good[..good.len() - 1]).unwrap();
    assert!(matches!(read_view(&p), Err(MsrlError::Truncated { .. })));

    let mut long = good.clone();
    long.extend_from_slice(&[0; 4]);
    fs::write(&p, &long).unwrap();
    assert!(matches!(read_view(&p), Err(MsrlError::SizeMismatch { .. })));

    let mut nan = good;
    nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&p, &nan).unwrap();
    assert!(matches!(read_view(&p), Err(MsrlError::NonFinite(_))));
}

proptest! {
    #[test]
    fn f32_values_round_trip_exactly(rows in 1usize..6, cols in 1usize..6, seed in any::<u32>()) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| ((seed as f64 + i as f64 * 0.37).sin() * 100.0) as f32 as f64)
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mvfv");
        let v = view(rows, cols, data);
        write_view(&v, &p).unwrap();
        prop_assert_eq!(read_view(&p).unwrap().data, v.data);
    }

    #[test]
    fn batch_plans_cover_every_index(n in 1usize..200, b in 1usize..50, seed in any::<u64>(), epoch in 0usize..5) {
        prop_assume!(b <= n);
        let plan = make_batches(n, b, seed, epoch).unwrap();
        let mut seen: Vec<usize> = plan.batches().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(plan, make_batches(n, b, seed, epoch).unwrap());
    }
}

#[test]
fn batch_plan_examples() {
    let plan = make_batches(5, 2, 0, 0).unwrap();
    let sizes: Vec<usize> = plan.batches().map(<[usize]>::len).collect();
    assert_eq!(sizes, vec![2, 2, 1]);
    assert_eq!(make_batches(10, 10, 3, 1).unwrap().num_batches(), 1);
    assert!(make_batches(5, 0, 0, 0).is_err());
}

#[test]
fn labels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("l.mvlb");
    write_labels(&[3, 0, 1, 1], &p).unwrap();
    assert_eq!(read_labels(&p).unwrap(), vec![3, 0, 1, 1]);
}

#[test]
fn dataset_round_trips_through_manifest() {
    let spec = SyntheticSpec {
        clusters: 3,
        views: 2,
        samples: 30,
        dims: vec![3, 5],
        separation: 8.0,
        seed: 1,
    };
    let data = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.labels, data.labels);
    assert_eq!(back.clusters, Some(3));
    for (a, b) in back.views.iter().zip(&data.views) {
        assert!(a.data.max_abs_diff(&b.data) < 1e-5 * (1.0 + b.data.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()))));
    }
}

#[test]
fn misaligned_manifest_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_view(&view(2, 1, vec![1.0, 2.0]), &dir.path().join("a.mvfv")).unwrap();
    write_view(&view(3, 1, vec![1.0, 2.0, 3.0]), &dir.path().join("b.mvfv")).unwrap();
    let m = Manifest {
        views: vec![
            ManifestView { path: "a.mvfv".into(), backbone: "a".into() },
            ManifestView { path: "b.mvfv".into(), backbone: "b".into() },
        ],
        labels: None,
        clusters: None,
    };
    let path = dir.path().join("manifest.json");
    m.write(&path).unwrap();
    assert!(matches!(load_dataset(&path), Err(MsrlError::Misaligned(_))));

    write_labels(&[0, 1, 0], &dir.path().join("l.mvlb")).unwrap();
    let m = Manifest {
        views: vec![ManifestView { path: "a.mvfv".into(), backbone: "a".into() }],
        labels: Some("l.mvlb".into()),
        clusters: None,
    };
    m.write(&path).unwrap();
    assert!(matches!(load_dataset(&path), Err(MsrlError::Misaligned(_))));
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SyntheticSpec {
        clusters: 4,
        views: 2,
        samples: 50,
        dims: vec![6, 3],
        separation: 5.0,
        seed: 99,
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    for (x, y) in a.views.iter().zip(&b.views) {
        assert!(x.data.as_slice().iter().zip(y.data.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a.labels, b.labels);
    let bad = SyntheticSpec { dims: vec![2], ..spec };
    assert!(generate_synthetic(&bad).is_err());
}

#[test]
fn widely_separated_points_sit_at_their_centroids() {
    let spec = SyntheticSpec {
        clusters: 2,
        views: 1,
        samples: 4,
        dims: vec![2],
        separation: 100.0,
        seed: 7,
    };
    let data = generate_synthetic(&spec).unwrap();
    let labels = data.labels.unwrap();
    let x = common::rows(&data.views[0].data);
    // Nearest-centroid labelling with centroids estimated from the stored
    // labels reproduces those labels.
    let centroid = |k: usize| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(r, _)| r).collect();
        (0..2).map(|d| members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64).collect()
    };
    let (c0, c1) = (centroid(0), centroid(1));
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    for (row, &l) in x.iter().zip(&labels) {
        let nearest = if d(row, &c0) <= d(row, &c1) { 0 } else { 1 };
        assert_eq!(nearest, l);
    }
}

#[test]
fn reference_synthetic_set_is_kmeans_separable() {
    let spec = SyntheticSpec {
        clusters: 5,
        views: 2,
        samples: 1000,
        dims: vec![16, 32],
        separation: 6.0,
        seed: 0,
    };
    let data = generate_synthetic(&spec).unwrap();
    let truth = data.labels.as_ref().unwrap();
    for v in &data.views {
        let pred = common::kmeans(&common::rows(&v.data), 5, 20, 0);
        let acc = hungarian_acc(&pred, truth).unwrap();
        assert!(acc >= 0.95, "k-means ACC {acc}");
    }
}
