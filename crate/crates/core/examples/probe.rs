use std::time::Instant;
use tdlab::envsim::{builtin_map, MapId};
use tdlab::eval::{ground_truth, leakage_score, map2_lower_region};
use tdlab::learners::{leakage_experiment, EmbeddingMode, ExperimentConfig, Method};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("map2");
    let cfg = ExperimentConfig {
        embed_steps: 10_000,
        value_steps: 10_000,
        gt_rollouts: 100,
        ..ExperimentConfig::default()
    };
    match which {
        "map2" => {
            let layout = builtin_map(MapId::Map2);
            let t0 = Instant::now();
            let truth = ground_truth(&layout, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
            println!("ground truth map2: {:.1?}", t0.elapsed());
            for method in [Method::Td, Method::Mc] {
                for seed in 0..5u64 {
                    let t = Instant::now();
                    let out = leakage_experiment(MapId::Map2, method, EmbeddingMode::None, seed, &cfg, Some(&truth)).unwrap();
                    let lower = leakage_score(&out.error_grid, map2_lower_region()).unwrap();
                    println!(
                        "{:?} seed {}: leak_upper={:+.4} leak_lower={:+.4} msve={:.4} ({:.1?})",
                        method, seed, out.report.leakage_score, lower, out.report.msve_uniform, t.elapsed()
                    );
                }
            }
        }
        m => {
            let map_id: MapId = m.parse().unwrap();
            let layout = builtin_map(map_id);
            let t0 = Instant::now();
            let truth = ground_truth(&layout, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
            println!("ground truth {m}: {:.1?}", t0.elapsed());
            let modes: Vec<EmbeddingMode> = if map_id == MapId::Map1 {
                vec![EmbeddingMode::None, EmbeddingMode::Oracle, EmbeddingMode::Timeprox, EmbeddingMode::Sf]
            } else {
                vec![EmbeddingMode::None, EmbeddingMode::Timeprox, EmbeddingMode::Sf]
            };
            for mode in modes {
                for seed in 0..5u64 {
                    let t = Instant::now();
                    let out = leakage_experiment(map_id, Method::Td, mode, seed, &cfg, Some(&truth)).unwrap();
                    println!(
                        "td {:?} seed {}: msve={:.4} leak={:+.4} ({:.1?})",
                        mode, seed, out.report.msve_uniform, out.report.leakage_score, t.elapsed()
                    );
                }
            }
        }
    }
}
