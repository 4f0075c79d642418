//! 2-D state embeddings by three routes: a privileged hand-designed
//! unfolding of map1, a self-supervised time-proximity classifier, and
//! Monte-Carlo-regressed successor features.
//!
//! All three produce the first stage of a two-stage value model; the
//! trained ones are frozen before the value head is fit on top.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envsim::{MapLayout, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::net::{backward_into, forward, init_params, AdamHyper, MlpSpec, Optimizer};

/// Maximum unfolding angle at alpha = 1.
const ORACLE_MAX_ANGLE_DEG: f64 = 60.0;

fn rotate_about(p: Point, pivot: Point, theta: f64) -> Point {
    let (sin, cos) = theta.sin_cos();
    let dx = p.x - pivot.x;
    let dy = p.y - pivot.y;
    Point::new(
        pivot.x + cos * dx - sin * dy,
        pivot.y + sin * dx + cos * dy,
    )
}

/// Piecewise-rigid unfolding of map1's three corridors, in map units.
///
/// The middle corridor (100 ≤ y ≤ 200) stays put; the bottom corridor
/// rotates by alpha·60° about (400, 100) and the top corridor by the
/// same angle about (0, 200) — the outer corners of the two passages.
/// Those pivots keep the bottom image in y ≤ 100 and the top image in
/// y ≥ 200 for every alpha, so the transform is injective on free
/// space, an isometry within each corridor, and exactly the identity
/// at alpha = 0. Points across a wall end up far apart (≥ 100 units at
/// alpha = 1, five step lengths) because each pivot sits 100 units from
/// the near end of its wall.
pub fn oracle_transform(alpha: f64, p: Point) -> Point {
    if alpha == 0.0 {
        return p;
    }
    let theta = alpha * ORACLE_MAX_ANGLE_DEG.to_radians();
    if p.y < 100.0 {
        rotate_about(p, Point::new(400.0, 100.0), theta)
    } else if p.y > 200.0 {
        rotate_about(p, Point::new(0.0, 200.0), theta)
    } else {
        p
    }
}

/// Bounding box of map1's image under `oracle_transform`: the union of
/// the three corridor rectangles' transformed corners. At alpha = 0 this
/// is the map itself, so normalizing by it reduces to the standard map
/// normalization.
pub fn oracle_bbox(alpha: f64) -> crate::geom::Rect {
    let corners = [
        // bottom corridor
        Point::new(0.0, 0.0),
        Point::new(400.0, 0.0),
        Point::new(0.0, 100.0),
        Point::new(400.0, 100.0),
        // middle corridor
        Point::new(0.0, 200.0),
        Point::new(400.0, 200.0),
        // top corridor
        Point::new(0.0, 300.0),
        Point::new(400.0, 300.0),
    ];
    let theta = alpha * ORACLE_MAX_ANGLE_DEG.to_radians();
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut push = |p: Point| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    for c in corners {
        push(c);
        if c.y <= 100.0 {
            push(rotate_about(c, Point::new(400.0, 100.0), theta));
        }
        if c.y >= 200.0 {
            push(rotate_about(c, Point::new(0.0, 200.0), theta));
        }
    }
    crate::geom::Rect {
        min,
        max,
    }
}

/// Validated oracle embedding: map1 free space only.
pub fn oracle_embed(layout: &MapLayout, alpha: f64, s: Point) -> Result<Point> {
    if layout.map_id != "map1" {
        return Err(Error::InvalidParameter(format!(
            "the oracle embedding is defined for map1 only, not {}",
            layout.map_id
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "oracle alpha must be in [0, 1], got {alpha}"
        )));
    }
    if !layout.is_valid_state(s) {
        return Err(Error::InvalidState {
            x: s.x,
            y: s.y,
            reason: "oracle embedding input must be a valid free-space state".into(),
        });
    }
    Ok(oracle_transform(alpha, s))
}

/// Configuration of the time-proximity pair classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProxConfig {
    /// Number of discounted-time bins; the last one also absorbs
    /// cross-episode pairs.
    pub k_bins: usize,
    pub gamma: f64,
    /// Share of sampled pairs drawn from two distinct episodes.
    pub negative_fraction: f64,
    pub embedding_sizes: Vec<usize>,
    /// First size must be twice the embedding output, last must be k_bins.
    pub classifier_sizes: Vec<usize>,
    pub steps: usize,
    pub minibatch: usize,
    pub adam: AdamHyper,
}

impl TimeProxConfig {
    pub fn new(gamma: f64) -> Self {
        TimeProxConfig {
            k_bins: 5,
            gamma,
            negative_fraction: 0.2,
            embedding_sizes: vec![2, 20, 20, 20, 2],
            classifier_sizes: vec![4, 30, 30, 5],
            steps: 40_000,
            minibatch: 32,
            adam: AdamHyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_bins < 2 {
            return Err(Error::InvalidParameter("k_bins must be >= 2".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter("gamma must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.negative_fraction) {
            return Err(Error::InvalidParameter(
                "negative_fraction must be in [0, 1)".into(),
            ));
        }
        let emb = MlpSpec::new(self.embedding_sizes.clone())?;
        let cls = MlpSpec::new(self.classifier_sizes.clone())?;
        if cls.input_dim() != 2 * emb.output_dim() {
            return Err(Error::DimensionMismatch(
                "classifier input must be twice the embedding output".into(),
            ));
        }
        if cls.output_dim() != self.k_bins {
            return Err(Error::DimensionMismatch(
                "classifier output must equal k_bins".into(),
            ));
        }
        Ok(())
    }
}

/// Upper bin boundaries T_1..T_{K−1}: T_k = ln(1 − k/K)/ln γ, the
/// quantiles that give the geometric Δt distribution equal bin mass.
/// Bin k covers Δt ∈ (T_{k−1}, T_k]; bin K is (T_{K−1}, ∞).
pub fn timeprox_bins(gamma: f64, k_bins: usize) -> Vec<f64> {
    let ln_gamma = gamma.ln();
    (1..k_bins)
        .map(|k| (1.0 - k as f64 / k_bins as f64).ln() / ln_gamma)
        .collect()
}

/// 0-based bin label for an integer time offset.
pub fn bin_label(boundaries: &[f64], dt: usize) -> usize {
    boundaries.iter().filter(|&&t| dt as f64 > t).count()
}

/// Δt ~ Geometric with P(Δt = d) = (1−γ)·γ^{d−1}, d ≥ 1.
fn sample_dt(gamma: f64, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    1 + ((1.0 - u).ln() / gamma.ln()).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePair {
    pub s1: Point,
    pub s2: Point,
    pub label: usize,
}

/// Draw one training pair: with probability 1 − negative_fraction an
/// ordered same-episode pair (earlier state first) labelled by its
/// discounted-time bin, otherwise a cross-episode pair labelled with
/// the last bin.
pub fn sample_pair(
    ds: &TrajectoryDataset,
    cfg: &TimeProxConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StatePair> {
    let n_eps = ds.episodes.len();
    if n_eps == 0 {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if cfg.negative_fraction > 0.0 && n_eps < 2 {
        return Err(Error::Dataset(
            "cross-episode pairs need at least two episodes".into(),
        ));
    }
    if rng.gen::<f64>() >= cfg.negative_fraction {
        let boundaries = timeprox_bins(cfg.gamma, cfg.k_bins);
        // Resample until the drawn Δt fits inside the drawn episode.
        for _ in 0..100_000 {
            let ep = &ds.episodes[rng.gen_range(0..n_eps)];
            let dt = sample_dt(cfg.gamma, rng);
            if dt >= ep.n_states() {
                continue;
            }
            let t = rng.gen_range(0..ep.n_states() - dt);
            return Ok(StatePair {
                s1: ep.state(t),
                s2: ep.state(t + dt),
                label: bin_label(&boundaries, dt),
            });
        }
        Err(Error::Dataset(
            "episodes are too short for the sampled time offsets".into(),
        ))
    } else {
        let i = rng.gen_range(0..n_eps);
        let j = loop {
            let j = rng.gen_range(0..n_eps);
            if j != i {
                break j;
            }
        };
        let e1 = &ds.episodes[i];
        let e2 = &ds.episodes[j];
        Ok(StatePair {
            s1: e1.state(rng.gen_range(0..e1.n_states())),
            s2: e2.state(rng.gen_range(0..e2.n_states())),
            label: cfg.k_bins - 1,
        })
    }
}

/// Stable softmax cross-entropy; returns (loss, d loss/d logits).
fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let loss = -(grad[label].max(1e-300)).ln();
    grad[label] -= 1.0;
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct TimeproxOutput {
    pub emb_spec: MlpSpec,
    pub emb_params: Vec<f64>,
    pub classifier_spec: MlpSpec,
    pub classifier_params: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

/// Train the shared-embedding pair classifier and keep the embedding.
pub fn train_timeprox(
    ds: &TrajectoryDataset,
    layout: &MapLayout,
    cfg: &TimeProxConfig,
    seed: u64,
) -> Result<TimeproxOutput> {
    cfg.validate()?;
    let emb_spec = MlpSpec::new(cfg.embedding_sizes.clone())?;
    let cls_spec = MlpSpec::new(cfg.classifier_sizes.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb_params = init_params(&emb_spec, &mut rng);
    let mut cls_params = init_params(&cls_spec, &mut rng);

    let n_emb = emb_spec.n_params();
    let n_total = n_emb + cls_spec.n_params();
    let mut opt = Optimizer::adam(cfg.adam, n_total);
    let mut joint = vec![0.0; n_total];
    joint[..n_emb].copy_from_slice(&emb_params);
    joint[n_emb..].copy_from_slice(&cls_params);

    let emb_dim = emb_spec.output_dim();
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut grad = vec![0.0; n_total];
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss_sum = 0.0;
        let inv_b = 1.0 / cfg.minibatch as f64;
        for _ in 0..cfg.minibatch {
            let pair = sample_pair(ds, cfg, &mut rng)?;
            let (e1, c1) = forward(&emb_spec, &joint[..n_emb], &layout.normalize(pair.s1))?;
            let (e2, c2) = forward(&emb_spec, &joint[..n_emb], &layout.normalize(pair.s2))?;
            let mut cls_in = e1.clone();
            cls_in.extend_from_slice(&e2);
            let (logits, c_cls) = forward(&cls_spec, &joint[n_emb..], &cls_in)?;
            let (loss, mut dlogits) = softmax_ce(&logits, pair.label);
            loss_sum += loss;
            dlogits.iter_mut().for_each(|g| *g *= inv_b);
            let din = backward_into(
                &cls_spec,
                &joint[n_emb..],
                &c_cls,
                &dlogits,
                &mut grad[n_emb..],
            );
            backward_into(
                &emb_spec,
                &joint[..n_emb],
                &c1,
                &din[..emb_dim],
                &mut grad[..n_emb],
            );
            backward_into(
                &emb_spec,
                &joint[..n_emb],
                &c2,
                &din[emb_dim..],
                &mut grad[..n_emb],
            );
        }
        let loss = loss_sum * inv_b;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step });
        }
        loss_curve.push(loss);
        opt.apply(&mut joint, &grad)?;
    }
    emb_params.copy_from_slice(&joint[..n_emb]);
    cls_params.copy_from_slice(&joint[n_emb..]);
    Ok(TimeproxOutput {
        emb_spec,
        emb_params,
        classifier_spec: cls_spec,
        classifier_params: cls_params,
        loss_curve,
    })
}

/// Discounted future feature sum for one state, (1−γ)-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfTarget {
    pub s: Point,
    pub psi: [f64; 2],
}

/// ψ_t = (1−γ)·Σ_{k≥0} γ^k·φ(S_{t+k}) over the stored suffix, with
/// φ the position scaled to [0, 1]²; computed by the backward recursion
/// ψ_t = (1−γ)·φ(S_t) + γ·ψ_{t+1}.
pub fn compute_sf_targets(
    ds: &TrajectoryDataset,
    layout: &MapLayout,
    gamma: f64,
) -> Vec<SfTarget> {
    let mut targets = Vec::new();
    for ep in &ds.episodes {
        let n = ep.n_states();
        let mut psi = [0.0, 0.0];
        let start = targets.len();
        targets.resize(
            start + n,
            SfTarget {
                s: Point::new(0.0, 0.0),
                psi: [0.0, 0.0],
            },
        );
        for t in (0..n).rev() {
            let s = ep.state(t);
            let phi = layout.to_unit(s);
            if t == n - 1 {
                psi = [(1.0 - gamma) * phi[0], (1.0 - gamma) * phi[1]];
            } else {
                psi = [
                    (1.0 - gamma) * phi[0] + gamma * psi[0],
                    (1.0 - gamma) * phi[1] + gamma * psi[1],
                ];
            }
            targets[start + t] = SfTarget { s, psi };
        }
    }
    targets
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfConfig {
    pub gamma: f64,
    pub embedding_sizes: Vec<usize>,
    pub steps: usize,
    pub minibatch: usize,
    pub adam: AdamHyper,
}

impl SfConfig {
    pub fn new(gamma: f64) -> Self {
        SfConfig {
            gamma,
            embedding_sizes: vec![2, 20, 20, 20, 2],
            steps: 40_000,
            minibatch: 32,
            adam: AdamHyper::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SfOutput {
    pub emb_spec: MlpSpec,
    pub emb_params: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

/// Regress successor-feature targets with plain Monte-Carlo mean-squared
/// error — no bootstrapping anywhere in this stage.
pub fn train_sf(
    ds: &TrajectoryDataset,
    layout: &MapLayout,
    cfg: &SfConfig,
    seed: u64,
) -> Result<SfOutput> {
    let spec = MlpSpec::new(cfg.embedding_sizes.clone())?;
    if spec.output_dim() != 2 {
        return Err(Error::DimensionMismatch(
            "successor-feature embedding must output 2 dims".into(),
        ));
    }
    let targets = compute_sf_targets(ds, layout, cfg.gamma);
    if targets.is_empty() {
        return Err(Error::Dataset("no states to regress".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(&spec, &mut rng);
    let mut opt = Optimizer::adam(cfg.adam, params.len());
    let mut grad = vec![0.0; params.len()];
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let inv_b = 1.0 / cfg.minibatch as f64;
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.minibatch {
            let t = &targets[rng.gen_range(0..targets.len())];
            let (out, cache) = forward(&spec, &params, &layout.normalize(t.s))?;
            let err = [out[0] - t.psi[0], out[1] - t.psi[1]];
            loss_sum += 0.5 * (err[0] * err[0] + err[1] * err[1]);
            let dout = [err[0] * inv_b, err[1] * inv_b];
            backward_into(&spec, &params, &cache, &dout, &mut grad);
        }
        let loss = loss_sum * inv_b;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step });
        }
        loss_curve.push(loss);
        opt.apply(&mut params, &grad)?;
    }
    Ok(SfOutput {
        emb_spec: spec,
        emb_params: params,
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{builtin_map, generate_dataset, MapId};
    use approx::assert_abs_diff_eq;

    #[test]
    fn oracle_is_identity_at_alpha_zero() {
        let m = builtin_map(MapId::Map1);
        for p in [
            Point::new(0.1, 0.2),
            Point::new(350.0, 50.0),
            Point::new(123.456, 250.789),
        ] {
            let out = oracle_embed(&m, 0.0, p).unwrap();
            assert_eq!(out, p);
        }
    }

    #[test]
    fn oracle_is_rigid_within_a_corridor() {
        let a = Point::new(40.0, 30.0);
        let b = Point::new(260.0, 80.0);
        for alpha in [0.25, 0.5, 1.0] {
            let (ta, tb) = (oracle_transform(alpha, a), oracle_transform(alpha, b));
            assert_abs_diff_eq!(ta.dist(tb), a.dist(b), epsilon = 1e-9);
        }
        let c = Point::new(150.0, 250.0);
        let d = Point::new(380.0, 290.0);
        let (tc, td) = (oracle_transform(1.0, c), oracle_transform(1.0, d));
        assert_abs_diff_eq!(tc.dist(td), c.dist(d), epsilon = 1e-9);
    }

    #[test]
    fn oracle_separates_across_wall_pairs_at_full_alpha() {
        // Pairs 10 units apart straddling wall A (y=100) and wall B (y=200).
        for x in [0.0, 150.0, 299.0, 300.0] {
            let below = oracle_transform(1.0, Point::new(x, 95.0));
            let above = oracle_transform(1.0, Point::new(x, 105.0));
            assert!(
                below.dist(above) >= 100.0,
                "wall A pair at x={x}: {}",
                below.dist(above)
            );
        }
        for x in [100.0, 250.0, 400.0] {
            let below = oracle_transform(1.0, Point::new(x, 195.0));
            let above = oracle_transform(1.0, Point::new(x, 205.0));
            assert!(
                below.dist(above) >= 100.0,
                "wall B pair at x={x}: {}",
                below.dist(above)
            );
        }
    }

    #[test]
    fn oracle_images_stay_in_disjoint_half_planes() {
        let m = builtin_map(MapId::Map1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut points = Vec::new();
        while points.len() < 300 {
            let p = Point::new(rng.gen::<f64>() * 400.0, rng.gen::<f64>() * 300.0);
            if m.is_free(p) {
                points.push(p);
            }
        }
        for alpha in [0.25, 1.0] {
            let images: Vec<Point> = points.iter().map(|&p| oracle_transform(alpha, p)).collect();
            for (p, img) in points.iter().zip(&images) {
                if p.y < 100.0 {
                    assert!(img.y <= 100.0 + 1e-9);
                } else if p.y > 200.0 {
                    assert!(img.y >= 200.0 - 1e-9);
                }
            }
            // Injectivity on the sample.
            for i in 0..images.len() {
                for j in (i + 1)..images.len() {
                    assert!(images[i].dist(images[j]) > 1e-9);
                }
            }
        }
    }

    #[test]
    fn oracle_rejects_bad_inputs() {
        let m1 = builtin_map(MapId::Map1);
        let m2 = builtin_map(MapId::Map2);
        assert!(oracle_embed(&m2, 1.0, Point::new(10.0, 10.0)).is_err());
        assert!(oracle_embed(&m1, 2.0, Point::new(10.0, 10.0)).is_err());
        assert!(oracle_embed(&m1, 1.0, Point::new(150.0, 100.0)).is_err()); // on wall A
    }

    #[test]
    fn bin_boundaries_frozen_values() {
        let b = timeprox_bins(0.99, 5);
        assert_eq!(b.len(), 4);
        assert_abs_diff_eq!(b[0], 22.202_596_467_108_95, epsilon = 1e-9);
        assert_abs_diff_eq!(b[3], 160.137_724_340_165_82, epsilon = 1e-9);
        for w in b.windows(2) {
            assert!(w[0] < w[1]);
        }
        let b2 = timeprox_bins(0.99, 2);
        assert_abs_diff_eq!(b2[0], 0.5f64.ln() / 0.99f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bins_have_analytically_equal_mass() {
        // P(T_{k−1} < Δt ≤ T_k) = γ^⌊T_{k−1}⌋ − γ^⌊T_k⌋ for the integer
        // geometric; integer rounding is the only deviation from 1/K.
        for gamma in [0.95, 0.99, 0.995] {
            let k = 5usize;
            let b = timeprox_bins(gamma, k);
            let tol = 2.0 / b[0].ceil();
            let mut lo = 0.0f64;
            for (i, &hi) in b.iter().enumerate() {
                let mass = gamma.powi(lo.floor() as i32) - gamma.powi(hi.floor() as i32);
                assert!(
                    (mass - 1.0 / k as f64).abs() <= tol,
                    "bin {i} mass {mass} at gamma={gamma}"
                );
                lo = hi;
            }
        }
    }

    #[test]
    fn geometric_draws_fill_bins_uniformly() {
        // Monte-Carlo check of the equal-likelihood construction.
        let gamma = 0.99;
        let k = 5;
        let b = timeprox_bins(gamma, k);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 1_000_000;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[bin_label(&b, sample_dt(gamma, &mut rng))] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 0.2).abs() < 0.01,
                "bin {i} frequency {freq} should be ~= 1/5"
            );
        }
    }

    #[test]
    fn labels_respect_boundaries() {
        let b = timeprox_bins(0.99, 5);
        assert_eq!(bin_label(&b, 10), 0); // T1 ~= 22.2
        assert_eq!(bin_label(&b, 23), 1);
        assert_eq!(bin_label(&b, 161), 4);
    }

    #[test]
    fn cross_episode_pairs_get_last_bin() {
        let m = builtin_map(MapId::Map2);
        let ds = generate_dataset(&m, 4, 50, 0.99, 1).unwrap();
        let mut cfg = TimeProxConfig::new(0.99);
        cfg.negative_fraction = 1.0 - 1e-12; // force the negative branch
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let pair = sample_pair(&ds, &cfg, &mut rng).unwrap();
            assert_eq!(pair.label, 4);
        }
    }

    #[test]
    fn pair_label_histogram_matches_construction() {
        // Fixed-length synthetic episodes: long enough that Δt
        // resampling is negligible (terminated map episodes would skew
        // the conditional Δt distribution towards small offsets).
        let n_states = 2000usize;
        let episodes: Vec<crate::envsim::Episode> = (0..4)
            .map(|e| crate::envsim::Episode {
                x: (0..n_states).map(|i| (e * 7 + i) as f64 % 400.0).collect(),
                y: (0..n_states).map(|i| (e * 13 + i) as f64 % 300.0).collect(),
                action: vec![0; n_states - 1],
                reward: vec![0.0; n_states - 1],
                terminated: false,
            })
            .collect();
        let ds = TrajectoryDataset {
            map_id: "map2".into(),
            gamma: 0.99,
            seed: 0,
            n_episodes: episodes.len(),
            episodes,
        };
        let cfg = TimeProxConfig::new(0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = vec![0usize; cfg.k_bins];
        for _ in 0..n {
            counts[sample_pair(&ds, &cfg, &mut rng).unwrap().label] += 1;
        }
        // Bins 1..K−1 each get ~(1 − nf)/K of the draws; the last bin
        // gets that plus the negatives.
        let base = (1.0 - cfg.negative_fraction) / cfg.k_bins as f64;
        for (i, &c) in counts.iter().enumerate().take(cfg.k_bins - 1) {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - base).abs() < 0.01,
                "bin {i} frequency {freq}, expected ~{base}"
            );
        }
        let last = counts[cfg.k_bins - 1] as f64 / n as f64;
        assert!((last - (base + cfg.negative_fraction)).abs() < 0.01);
    }

    #[test]
    fn pairs_need_two_episodes_when_negatives_requested() {
        let m = builtin_map(MapId::Map2);
        let ds = generate_dataset(&m, 1, 50, 0.99, 1).unwrap();
        let cfg = TimeProxConfig::new(0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pair(&ds, &cfg, &mut rng).is_err());
    }

    #[test]
    fn sf_backward_recursion_equals_direct_sum() {
        let m = builtin_map(MapId::Map1);
        let ds = generate_dataset(&m, 3, 120, 0.99, 13).unwrap();
        let gamma = 0.97;
        let targets = compute_sf_targets(&ds, &m, gamma);
        let mut idx = 0;
        for ep in &ds.episodes {
            for t in 0..ep.n_states() {
                let mut direct = [0.0, 0.0];
                let mut w = 1.0 - gamma;
                for k in t..ep.n_states() {
                    let phi = m.to_unit(ep.state(k));
                    direct[0] += w * phi[0];
                    direct[1] += w * phi[1];
                    w *= gamma;
                }
                assert_abs_diff_eq!(targets[idx].psi[0], direct[0], epsilon = 1e-12);
                assert_abs_diff_eq!(targets[idx].psi[1], direct[1], epsilon = 1e-12);
                idx += 1;
            }
        }
        assert_eq!(idx, targets.len());
    }

    #[test]
    fn sf_single_state_suffix_and_constant_limit() {
        let m = builtin_map(MapId::Map1);
        let gamma = 0.9;
        // A blocked-in-place pseudo-episode: same position everywhere.
        let z = Point::new(120.0, 60.0);
        let n = 400;
        let ds = TrajectoryDataset {
            map_id: "map1".into(),
            gamma,
            seed: 0,
            n_episodes: 1,
            episodes: vec![crate::envsim::Episode {
                x: vec![z.x; n + 1],
                y: vec![z.y; n + 1],
                action: vec![0; n],
                reward: vec![0.0; n],
                terminated: false,
            }],
        };
        let targets = compute_sf_targets(&ds, &m, gamma);
        let phi = m.to_unit(z);
        // Final state: single-term sum (1−γ)·φ(z).
        let last = targets.last().unwrap();
        assert_abs_diff_eq!(last.psi[0], (1.0 - gamma) * phi[0], epsilon = 1e-14);
        // First state of a long constant trajectory: ψ → φ(z).
        let first = &targets[0];
        let expected = phi[0] * (1.0 - gamma.powi(n as i32 + 1));
        assert_abs_diff_eq!(first.psi[0], expected, epsilon = 1e-12);
        assert!((first.psi[0] - phi[0]).abs() < 1e-12);
        // Bounded by the feature range.
        assert!(targets
            .iter()
            .all(|t| (0.0..=1.0).contains(&t.psi[0]) && (0.0..=1.0).contains(&t.psi[1])));
    }

    #[test]
    fn sf_targets_reduce_to_features_at_tiny_gamma() {
        let m = builtin_map(MapId::Map1);
        let ds = generate_dataset(&m, 2, 40, 0.99, 4).unwrap();
        let targets = compute_sf_targets(&ds, &m, 1e-12);
        for t in &targets {
            let phi = m.to_unit(t.s);
            assert_abs_diff_eq!(t.psi[0], phi[0], epsilon = 1e-9);
            assert_abs_diff_eq!(t.psi[1], phi[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn sf_training_reduces_loss() {
        let m = builtin_map(MapId::Map2);
        let ds = generate_dataset(&m, 20, 300, 0.99, 7).unwrap();
        let mut cfg = SfConfig::new(0.99);
        cfg.steps = 6000;
        let out = train_sf(&ds, &m, &cfg, 5).unwrap();
        let head: f64 = out.loss_curve[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 =
            out.loss_curve[out.loss_curve.len() - 200..].iter().sum::<f64>() / 200.0;
        assert!(
            tail < 0.5 * head,
            "loss did not halve: start {head}, end {tail}"
        );
    }

    #[test]
    fn sf_training_is_deterministic() {
        let m = builtin_map(MapId::Map2);
        let ds = generate_dataset(&m, 5, 100, 0.99, 7).unwrap();
        let mut cfg = SfConfig::new(0.99);
        cfg.steps = 50;
        let a = train_sf(&ds, &m, &cfg, 11).unwrap();
        let b = train_sf(&ds, &m, &cfg, 11).unwrap();
        assert_eq!(a.emb_params, b.emb_params);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn timeprox_training_is_deterministic_and_keeps_classifier_separate() {
        let m = builtin_map(MapId::Map2);
        let ds = generate_dataset(&m, 6, 200, 0.99, 2).unwrap();
        let mut cfg = TimeProxConfig::new(0.99);
        cfg.steps = 40;
        let a = train_timeprox(&ds, &m, &cfg, 3).unwrap();
        let b = train_timeprox(&ds, &m, &cfg, 3).unwrap();
        assert_eq!(a.emb_params, b.emb_params);
        assert_eq!(a.loss_curve, b.loss_curve);

        // The embedding function reads only w_e: recomputing an embedding
        // after perturbing the classifier weights changes nothing.
        let s = m.normalize(Point::new(57.0, 230.0));
        let before = forward(&a.emb_spec, &a.emb_params, &s).unwrap().0;
        let mut perturbed_cls = a.classifier_params.clone();
        for w in perturbed_cls.iter_mut() {
            *w += 1.0;
        }
        let after = forward(&a.emb_spec, &a.emb_params, &s).unwrap().0;
        assert_eq!(before, after);
    }
}
