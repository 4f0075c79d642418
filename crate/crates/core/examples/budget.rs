use tdlab::envsim::{builtin_map, generate_dataset, MapId};
use tdlab::eval::{ground_truth, msve, value_grid_from_fn, Weighting};
use tdlab::learners::{build_model, train_value_stage, EmbeddingMode, ExperimentConfig, Method};

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(40_000);
    let m = builtin_map(MapId::Map1);
    let cfg = ExperimentConfig {
        embed_steps: 10_000,
        value_steps: steps,
        gt_rollouts: 100,
        ..ExperimentConfig::default()
    };
    let truth = ground_truth(&m, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
    for mode in [EmbeddingMode::None, EmbeddingMode::Oracle] {
        let mut msves = Vec::new();
        for seed in 0..3u64 {
            let ds = generate_dataset(&m, cfg.n_episodes, cfg.max_len, cfg.gamma, seed).unwrap();
            let (mut model, _) = build_model(&m, &ds, mode, seed, &cfg).unwrap();
            train_value_stage(&ds, &mut model, Method::Td, seed, &cfg).unwrap();
            let pred = value_grid_from_fn(&m, cfg.cell_size, |p| model.predict(p)).unwrap();
            msves.push(msve(&pred, &truth, Weighting::Uniform).unwrap());
        }
        println!("{:?} td @{} steps: msves {:?}", mode, steps, msves);
    }
}
