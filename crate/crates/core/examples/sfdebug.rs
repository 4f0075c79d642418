use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdlab::embeddings::{compute_sf_targets, train_sf, SfConfig};
use tdlab::envsim::{builtin_map, generate_dataset, rollout_return, MapId};
use tdlab::geom::Point;
use tdlab::net::forward;

fn main() {
    let m = builtin_map(MapId::Map1);
    let ds = generate_dataset(&m, 100, 2000, 0.99, 0).unwrap();
    let mut cfg = SfConfig::new(0.99);
    cfg.steps = 10_000;
    let out = train_sf(&ds, &m, &cfg, 0).unwrap();
    let lc = &out.loss_curve;
    println!("loss[0..3]={:?}", &lc[..3]);
    println!("loss[end-3..]={:?}", &lc[lc.len() - 3..]);
    let n = lc.len();
    println!("mean loss last 500: {:.5}", lc[n-500..].iter().sum::<f64>()/500.0);

    // Target statistics.
    let targets = compute_sf_targets(&ds, &m, 0.99);
    let mean0 = targets.iter().map(|t| t.psi[0]).sum::<f64>() / targets.len() as f64;
    let mean1 = targets.iter().map(|t| t.psi[1]).sum::<f64>() / targets.len() as f64;
    let var0 = targets.iter().map(|t| (t.psi[0]-mean0).powi(2)).sum::<f64>() / targets.len() as f64;
    let var1 = targets.iter().map(|t| (t.psi[1]-mean1).powi(2)).sum::<f64>() / targets.len() as f64;
    println!("psi target mean=({mean0:.3},{mean1:.3}) var=({var0:.4},{var1:.4})");

    // Learned embedding at probe points vs fresh-rollout psi estimate.
    let probes = [
        Point::new(50.0, 50.0), Point::new(350.0, 50.0),
        Point::new(50.0, 150.0), Point::new(350.0, 150.0),
        Point::new(50.0, 250.0), Point::new(350.0, 250.0),
    ];
    for (i, p) in probes.iter().enumerate() {
        let pred = forward(&out.emb_spec, &out.emb_params, &m.normalize(*p)).unwrap().0;
        // MC estimate of true psi: average discounted phi over rollouts.
        let mut acc = [0.0f64; 2];
        let n_roll = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        for _ in 0..n_roll {
            // discounted phi sum via manual rollout of positions
            let mut s = *p;
            let mut disc = 1.0;
            let mut psi = [0.0f64; 2];
            for _ in 0..2000 {
                let phi = m.to_unit(s);
                psi[0] += (1.0 - 0.99) * disc * phi[0];
                psi[1] += (1.0 - 0.99) * disc * phi[1];
                let a = rand::Rng::gen_range(&mut rng, 0..360u16);
                let o = tdlab::envsim::step(&m, s, a as f64).unwrap();
                if o.terminal { break; }
                disc *= 0.99;
                s = o.state;
            }
            acc[0] += psi[0]; acc[1] += psi[1];
        }
        let _ = rollout_return;
        println!(
            "probe ({:>5.0},{:>5.0}): psi_hat=({:+.3},{:+.3})  psi_mc=({:+.3},{:+.3})",
            p.x, p.y, pred[0], pred[1], acc[0]/n_roll as f64, acc[1]/n_roll as f64
        );
    }
}
