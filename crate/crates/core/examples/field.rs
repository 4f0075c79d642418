use tdlab::envsim::{builtin_map, generate_dataset, MapId};
use tdlab::eval::{ground_truth, value_grid_from_fn};
use tdlab::learners::{build_model, train_value_stage, EmbeddingMode, ExperimentConfig, Method};

fn show(label: &str, g: &tdlab::eval::ValueGrid) {
    println!("--- {label} (20-unit cells, top row = top of map) ---");
    for row in (0..g.n_rows).rev() {
        let mut line = String::new();
        for col in 0..g.n_cols {
            let c = g.cell(col, row);
            if !c.free {
                line.push_str("  ## ");
            } else {
                line.push_str(&format!("{:>4.0} ", c.value));
            }
        }
        println!("{line}");
    }
}

fn main() {
    let mode = match std::env::args().nth(1).as_deref().unwrap_or("oracle") {
        "none" => EmbeddingMode::None,
        "oracle" => EmbeddingMode::Oracle,
        "timeprox" => EmbeddingMode::Timeprox,
        _ => EmbeddingMode::Sf,
    };
    let cfg = ExperimentConfig {
        embed_steps: 10_000,
        value_steps: 10_000,
        gt_rollouts: 100,
        cell_size: 20.0,
        ..ExperimentConfig::default()
    };
    let m = builtin_map(MapId::Map1);
    let ds = generate_dataset(&m, cfg.n_episodes, cfg.max_len, cfg.gamma, 0).unwrap();
    let truth = ground_truth(&m, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
    show("ground truth", &truth);
    let (mut model, _) = build_model(&m, &ds, mode, 0, &cfg).unwrap();
    train_value_stage(&ds, &mut model, Method::Td, 0, &cfg).unwrap();
    let pred = value_grid_from_fn(&m, cfg.cell_size, |p| model.predict(p)).unwrap();
    show(&format!("{mode:?} TD prediction"), &pred);
}
