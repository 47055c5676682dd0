use super::*;
use crate::vae::{encode, Architecture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BLOB_SIGMA: f64 = 0.25;
const BLOB_CENTERS: [[f64; 2]; 4] = [[0.0, 0.0], [2.5, 0.0], [0.0, 2.5], [2.5, 2.5]];

/// 10 points per blob, blob spacing 10σ.
fn four_blobs(seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for c in BLOB_CENTERS {
        for _ in 0..10 {
            rows.push([
                c[0] + BLOB_SIGMA * rng.sample::<f64, _>(StandardNormal),
                c[1] + BLOB_SIGMA * rng.sample::<f64, _>(StandardNormal),
            ]);
        }
    }
    Matrix::from_rows(&rows)
}

/// Label of the nearest true blob center for each row.
fn blob_oracle(points: &Matrix) -> Vec<usize> {
    let centers = Matrix::from_rows(&BLOB_CENTERS);
    points.row_iter().map(|r| nearest_row(&centers, r)).collect()
}

/// Whether two labelings induce the same partition.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn table(points: Matrix) -> EmbeddingTable {
    EmbeddingTable::new((0..points.rows()).collect(), points, "test").unwrap()
}

#[test]
fn kmeans_with_k_equal_rows_returns_points() {
    let pts = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [-1.0, 5.0], [4.0, 4.0]]);
    let res = kmeans(&pts, 4, 1, &KmeansConfig::default()).unwrap();
    assert_eq!(res.inertia, 0.0);
    let mut got: Vec<Vec<f64>> = res.centroids.row_iter().map(<[f64]>::to_vec).collect();
    let mut want: Vec<Vec<f64>> = pts.row_iter().map(<[f64]>::to_vec).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, want);
}

#[test]
fn kmeans_single_cluster_is_mean() {
    let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [5.0, 1.0]]);
    let res = kmeans(&pts, 1, 0, &KmeansConfig::default()).unwrap();
    assert_eq!(res.centroids.row(0), &[2.0, 1.0]);
    assert_eq!(res.assignments, vec![0, 0, 0]);
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let pts = four_blobs(5);
    let res = kmeans(&pts, 4, 5, &KmeansConfig::default()).unwrap();
    for c in BLOB_CENTERS {
        let nearest = nearest_row(&res.centroids, &c);
        assert!(squared_distance(res.centroids.row(nearest), &c).sqrt() < 0.5);
    }
    let oracle = blob_oracle(&pts);
    assert!(same_partition(&res.assignments, &oracle));
    let check: f64 = pts
        .row_iter()
        .zip(&res.assignments)
        .map(|(r, &a)| squared_distance(r, res.centroids.row(a)))
        .sum();
    assert!((check - res.inertia).abs() < 1e-9);
}

#[test]
fn kmeans_inertia_nonincreasing_within_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = Matrix::new(200, 3, (0..600).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    for seed in 0..5 {
        let res = kmeans(&pts, 6, seed, &KmeansConfig::default()).unwrap();
        assert!(res.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(res.assignments.iter().all(|&a| a < 6));
    }
}

#[test]
fn kmeans_survives_duplicates_and_empty_clusters() {
    let pts = Matrix::from_rows(&[[1.0, 1.0]; 5]);
    let res = kmeans(&pts, 3, 0, &KmeansConfig::default()).unwrap();
    assert_eq!(res.centroids.rows(), 3);
    assert_eq!(res.inertia, 0.0);
}

#[test]
fn kmeans_rejects_bad_k() {
    let pts = Matrix::zeros(3, 2);
    assert!(matches!(kmeans(&pts, 0, 0, &KmeansConfig::default()), Err(DistillError::InvalidK { .. })));
    assert!(matches!(kmeans(&pts, 4, 0, &KmeansConfig::default()), Err(DistillError::InvalidK { .. })));
}

#[test]
fn kmeans_is_deterministic() {
    let pts = four_blobs(8);
    let a = kmeans(&pts, 4, 11, &KmeansConfig::default()).unwrap();
    let b = kmeans(&pts, 4, 11, &KmeansConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn select_rosetta_hand_example() {
    let t = table(Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]));
    let inputs = Matrix::from_rows(&[[10.0], [11.0], [12.0]]);
    let clusters = kmeans(&t.means, 1, 0, &KmeansConfig::default()).unwrap();
    assert!((clusters.centroids[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
    let rs = select_rosetta(&t, &clusters, &inputs, 0).unwrap();
    assert_eq!(rs.latents.row(0), &[1.0, 1.0]);
    assert_eq!(rs.inputs.row(0), &[11.0]);
    assert_eq!(rs.source_indices, vec![1]);
}

#[test]
fn select_rosetta_picks_exact_points_and_breaks_ties_low() {
    let t = table(Matrix::from_rows(&[[0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [9.0, 0.0]]));
    let inputs = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
    let clusters = ClusterResult {
        centroids: Matrix::from_rows(&[[9.0, 0.0], [5.0, 5.0]]),
        assignments: vec![1, 1, 1, 0],
        inertia: 0.0,
        inertia_trace: vec![],
        restart: 0,
    };
    let rs = select_rosetta(&t, &clusters, &inputs, 0).unwrap();
    assert_eq!(rs.source_indices, vec![3, 1]);
    assert_eq!(rs.latents, Matrix::from_rows(&[[9.0, 0.0], [5.0, 5.0]]));
}

#[test]
fn selected_latents_match_model_encoding() {
    let model = ModelState::init(Architecture::eight_gaussians(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = Matrix::new(60, 5, (0..300).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let t = EmbeddingTable::from_model(&model, &inputs).unwrap();
    assert_eq!(t.source_digest, model.digest());
    for method in Selector::ALL {
        let rs = select_variant(&t, &inputs, 5, method, 9).unwrap();
        assert_eq!(rs.len(), 5);
        assert_eq!(rs.selector, method.name());
        for r in 0..rs.len() {
            let (x, z) = rs.pair(r);
            assert_eq!(encode(&model, x).unwrap().mean.to_vec(), z.to_vec());
        }
    }
}

#[test]
fn random_selector_with_all_rows_is_permutation() {
    let t = table(Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0]]));
    let rs = select_variant(&t, &t.means, 5, Selector::Random, 2).unwrap();
    let mut idx = rs.source_indices.clone();
    idx.sort_unstable();
    assert_eq!(idx, vec![0, 1, 2, 3, 4]);
}

#[test]
fn ward_groups_far_pairs() {
    let pts = Matrix::from_rows(&[[0.0, 0.0], [100.0, 0.0], [0.5, 0.0], [100.0, 0.5]]);
    assert_eq!(ward(&pts, 2).unwrap(), vec![0, 1, 0, 1]);
    assert_eq!(ward(&pts, 4).unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(ward(&pts, 1).unwrap(), vec![0; 4]);
}

#[test]
fn ward_merge_order_by_variance_increase() {
    // 1-d points 0, 1, 3, 7: merge {0,1} (cost 0.5), then {0,1}+{3}
    // (cost 2/3·2.5² ≈ 4.17) before {3}+{7} (cost 8)
    let pts = Matrix::from_rows(&[[0.0], [1.0], [3.0], [7.0]]);
    assert_eq!(ward(&pts, 3).unwrap(), vec![0, 0, 1, 2]);
    assert_eq!(ward(&pts, 2).unwrap(), vec![0, 0, 0, 1]);
}

#[test]
fn ward_recovers_blobs() {
    let pts = four_blobs(5);
    assert!(same_partition(&ward(&pts, 4).unwrap(), &blob_oracle(&pts)));
}

#[test]
fn gmm_matches_blob_partition() {
    let pts = four_blobs(5);
    let fit = gmm(&pts, 4, 5).unwrap();
    assert!(same_partition(&fit.assignments, &blob_oracle(&pts)));
    assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(fit.resets, 0);
}

#[test]
fn gmm_resets_degenerate_components() {
    let mut rows = vec![[3.0, 3.0]; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        rows.push([20.0 + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]);
    }
    let pts = Matrix::from_rows(&rows);
    let fit = gmm(&pts, 2, 0).unwrap();
    assert!(fit.resets > 0);
    assert!(fit.means.is_finite());
    let rs = select_variant(&table(pts.clone()), &pts, 2, Selector::Gmm, 0).unwrap();
    assert_eq!(rs.len(), 2);
}

#[test]
fn selectors_are_deterministic() {
    let pts = four_blobs(12);
    let t = table(pts.clone());
    for method in Selector::ALL {
        let a = select_variant(&t, &pts, 4, method, 33).unwrap();
        let b = select_variant(&t, &pts, 4, method, 33).unwrap();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn selector_names_round_trip() {
    for m in Selector::ALL {
        assert_eq!(m.name().parse::<Selector>().unwrap(), m);
    }
    assert!("dbscan".parse::<Selector>().is_err());
}

#[test]
fn rosetta_file_round_trips_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = Matrix::new(3, 5, (0..15).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e3).collect()).unwrap();
    let latents = Matrix::new(3, 2, (0..6).map(|_| rng.sample::<f64, _>(StandardNormal) / 7.0).collect()).unwrap();
    let rs = RosettaSet::new(inputs, latents, "gmm", "abcdef0123456789", 42, vec![7, 0, 19]).unwrap();
    let mut buf = Vec::new();
    write_rosetta(&rs, &mut buf).unwrap();
    let back = read_rosetta(&buf[..]).unwrap();
    assert_eq!(back, rs);
    let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.inputs), bits(&rs.inputs));
    assert_eq!(bits(&back.latents), bits(&rs.latents));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    save_rosetta(&rs, &path).unwrap();
    assert_eq!(load_rosetta(&path).unwrap(), rs);
}

#[test]
fn rosetta_file_errors() {
    let rs = RosettaSet::new(Matrix::from_rows(&[[1.0, 2.0]]), Matrix::from_rows(&[[3.0]]), "kmeans", "x", 0, vec![0]).unwrap();
    let mut buf = Vec::new();
    write_rosetta(&rs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let short = text.replace("2.0000000000000000e0,", "");
    assert!(matches!(read_rosetta(short.as_bytes()), Err(DistillError::Parse { .. })));
    let wrong_k = text.replace("# k=1", "# k=2");
    assert!(matches!(read_rosetta(wrong_k.as_bytes()), Err(DistillError::Parse { .. })));
    let no_format = text.replace("# format=rosetta-set 1\n", "");
    assert!(read_rosetta(no_format.as_bytes()).is_err());
}

#[test]
fn embedding_table_subset_keeps_indices() {
    let t = EmbeddingTable::new(vec![4, 5, 6], Matrix::from_rows(&[[1.0], [2.0], [3.0]]), "d").unwrap();
    let s = t.subset(&[2, 0]);
    assert_eq!(s.indices, vec![6, 4]);
    assert_eq!(s.means, Matrix::from_rows(&[[3.0], [1.0]]));
    assert!(EmbeddingTable::new(vec![0], Matrix::zeros(2, 1), "d").is_err());
}
