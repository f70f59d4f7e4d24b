use paircal::models::mlp::{HeadKind, MlpConfig, MlpPairModel};
use paircal::models::train::{train, TrainConfig};
use paircal::tasks::sin1d;

fn main() {
    let data: Vec<(f64, usize, usize)> = sin1d::dataset(5000, 3)
        .into_iter()
        .map(|e| (e.x, e.y1 as usize, e.y2 as usize))
        .collect();
    let config = MlpConfig::reference(HeadKind::BinaryMuRho);
    let tc = TrainConfig { iterations: 150, seed: 5, log_every: 150, ..TrainConfig::default() };
    // Run with MATMUL_NUM_THREADS set to 1, 2, 4, ... and compare digests.
    let result = train(MlpPairModel::init(config, 5), &data, &tc).unwrap();
    let json = serde_json::to_string(&result.model).unwrap();
    let digest = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    };
    println!("model sha256: {digest}");
}
