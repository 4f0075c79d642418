use tdlab::envsim::{builtin_map, generate_dataset, MapId};
use tdlab::eval::{ground_truth, msve, value_grid_from_fn, Weighting};
use tdlab::learners::{build_model, train_value_stage, EmbeddingMode, ExperimentConfig, Method};

fn main() {
    let cfg = ExperimentConfig {
        embed_steps: 10_000,
        value_steps: 10_000,
        gt_rollouts: 100,
        ..ExperimentConfig::default()
    };
    let m = builtin_map(MapId::Map1);
    let ds = generate_dataset(&m, cfg.n_episodes, cfg.max_len, cfg.gamma, 0).unwrap();
    let truth = ground_truth(&m, cfg.gamma, cfg.cell_size, cfg.gt_rollouts, cfg.max_len, cfg.gt_seed).unwrap();
    for mode in [EmbeddingMode::Sf, EmbeddingMode::Timeprox] {
        let (mut model, _) = build_model(&m, &ds, mode, 0, &cfg).unwrap();
        // Embedding output spread over free cells.
        let (mut min, mut max) = ([f64::MAX; 2], [f64::MIN; 2]);
        for c in truth.free_cells() {
            let e = model.embed(c.center);
            for d in 0..2 {
                min[d] = min[d].min(e[d]);
                max[d] = max[d].max(e[d]);
            }
        }
        let r = train_value_stage(&ds, &mut model, Method::Td, 0, &cfg).unwrap();
        let lc = &r.loss_curve;
        let pred = value_grid_from_fn(&m, cfg.cell_size, |p| model.predict(p)).unwrap();
        let (mut pmin, mut pmax) = (f64::MAX, f64::MIN);
        for c in pred.free_cells() {
            pmin = pmin.min(c.value);
            pmax = pmax.max(c.value);
        }
        println!(
            "{:?}: emb range x[{:+.2},{:+.2}] y[{:+.2},{:+.2}] | loss {:.4}->{:.4} | pred range [{:.2},{:.2}] | msve {:.3}",
            mode, min[0], max[0], min[1], max[1],
            lc[..50].iter().sum::<f64>() / 50.0,
            lc[lc.len() - 500..].iter().sum::<f64>() / 500.0,
            pmin, pmax,
            msve(&pred, &truth, Weighting::Uniform).unwrap()
        );
    }
}
