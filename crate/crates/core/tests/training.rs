use rosetta_core::datasets::{gen_8gaussians, partition_halfplane, split_train_val, DEFAULT_SIGMA_CLUSTER, DEFAULT_SIGMA_NOISE};
use rosetta_core::vae::{train, Architecture, ModelState, TrainConfig};

fn block_medians(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks_exact(width)
        .map(|c| {
            let mut s = c.to_vec();
            s.sort_by(f64::total_cmp);
            0.5 * (s[width / 2 - 1] + s[width / 2])
        })
        .collect()
}

#[test]
fn eight_gaussians_validation_loss_settles() {
    let data = gen_8gaussians(100, DEFAULT_SIGMA_CLUSTER, DEFAULT_SIGMA_NOISE, 0).unwrap();
    let (d1, _) = partition_halfplane(&data).unwrap();
    let (tr, val) = split_train_val(&d1, 0.6, 0).unwrap();
    let config = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let init = ModelState::init(Architecture::eight_gaussians(), 1).unwrap();
    let out = train(init, &tr.inputs, Some(&val.inputs), None, &config, &mut |_| {}).unwrap();
    eprintln!("200 epochs on {} rows: {:?}", tr.len(), start.elapsed());
    let losses: Vec<f64> = out.trace.iter().map(|s| s.validation_loss.unwrap()).collect();
    let medians = block_medians(&losses, 20);
    eprintln!("{medians:?}");
    assert_eq!(medians.len(), 10);
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
}
