use tdlab::envsim::{builtin_map, generate_dataset, MapId};
use tdlab::eval::{ground_truth, msve, value_grid_from_fn, Weighting};
use tdlab::learners::{build_model, train_value_stage, EmbeddingMode, ExperimentConfig, Method};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = match args.get(1).map(|s| s.as_str()).unwrap_or("oracle") {
        "none" => EmbeddingMode::None,
        "oracle" => EmbeddingMode::Oracle,
        "timeprox" => EmbeddingMode::Timeprox,
        _ => EmbeddingMode::Sf,
    };
    let method = match args.get(2).map(|s| s.as_str()).unwrap_or("td") {
        "mc" => Method::Mc,
        _ => Method::Td,
    };
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let cfg = ExperimentConfig {
        embed_steps: 10_000,
        value_steps: 2_000, // per chunk
        gt_rollouts: 100,
        ..ExperimentConfig::default()
    };
    let m = builtin_map(MapId::Map1);
    let ds = generate_dataset(&m, cfg.n_episodes, cfg.max_len, cfg.gamma, seed).unwrap();
    let truth = ground_truth(&m, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
    let (mut model, _) = build_model(&m, &ds, mode, seed, &cfg).unwrap();
    print!("{:?} {:?} seed{}: msve@2k..20k:", mode, method, seed);
    for _chunk in 0..10 {
        train_value_stage(&ds, &mut model, method, seed, &cfg).unwrap();
        let pred = value_grid_from_fn(&m, cfg.cell_size, |p| model.predict(p)).unwrap();
        print!(" {:.2}", msve(&pred, &truth, Weighting::Uniform).unwrap());
    }
    println!();
}
