use gradings::autodiff::AdamConfig;
use gradings::baselines::{CovarianceType, GmmFitOptions};
use gradings::eval::{
    fit_model, fpr_at_tpr, roc, split_train_eval, variant_scores, GmmSelection, ModelChoice,
    ModelParams, Variant,
};
use gradings::flows::TrainConfig;
use gradings::trajectory::{
    apply_standardizer, fit_standardizer, flatten_segment, segment_trajectory, FeatureVector,
    LocationPoint, Trajectory,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const M_LAT: f64 = 111_320.0;
const BASE: f64 = 1_236_556_800.0;

fn nrm(rng: &mut impl Rng, m: f64, s: f64) -> f64 { m + s * rng.sample::<f64, _>(StandardNormal) }
fn deg(lat: f64, e: f64, n: f64) -> (f64, f64) { (n / M_LAT, e / (M_LAT * lat.to_radians().cos())) }

// Normal: tight cruising-speed band, arbitrary curvature/heading/center.
// Abnormal: identical geometry but off-band speeds (slower or faster).
fn route(rng: &mut impl Rng, len: usize, id: String, coupled: bool) -> Trajectory {
    let clat = nrm(rng, 39.90, 0.010);
    let clon = nrm(rng, 116.40, 0.012);
    let radius = rng.gen_range(1200.0..3600.0);
    let speed = if coupled {
        (18.0 - radius / 300.0 + nrm(rng, 0.0, 0.2)).clamp(5.0, 15.0)
    } else {
        let r_fake = rng.gen_range(1200.0..3600.0);
        (18.0 - r_fake / 300.0 + nrm(rng, 0.0, 0.2)).clamp(5.0, 15.0)
    };
    let morning = rng.gen_bool(0.5);
    let peak = if morning { 8.5 } else { 18.0 };
    let week = rng.gen_range(0..26) as f64;
    let day = rng.gen_range(0..5) as f64;
    let hour = nrm(rng, peak, 0.75).clamp(0.0, 23.99);
    let t0 = BASE + week * 604800.0 + day * 86400.0 + hour * 3600.0;

    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let burst: Option<(usize, usize)> = if rng.gen_bool(0.5) {
        if rng.gen_bool(0.5) { Some((0, 2)) } else { Some((len - 2, len)) }
    } else {
        None
    };
    let mut pts = Vec::with_capacity(len);
    for i in 0..len {
        let glitch = burst.map_or(false, |(a, b)| i >= a && i < b);
        let sigma = if glitch { 150.0 } else { 8.0 };
        let e = radius * angle.cos() + nrm(rng, 0.0, sigma);
        let n = radius * angle.sin() + nrm(rng, 0.0, sigma);
        let (dlat, dlon) = deg(clat, e, n);
        pts.push(LocationPoint::new(clat + dlat, clon + dlon, t0 + i as f64 * 60.0).unwrap());
        angle += dir * speed * 60.0 / radius;
    }
    Trajectory::new(id, pts).unwrap()
}

fn gen(seed: u64, n_norm: usize, n_ab: usize) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = (0..n_norm).map(|i| {
        let len = rng.gen_range(15..=25);
        route(&mut rng, len, format!("n{i}"), true)
    }).collect();
    let abnormal = (0..n_ab).map(|i| {
        let len = rng.gen_range(15..=25);
        route(&mut rng, len, format!("a{i}"), false)
    }).collect();
    (normal, abnormal)
}

#[test]
fn probe_scenario() {
    let window = 10;
    let (normal, abnormal) = gen(42, 455, 91);

    let mut params = ModelParams::default();
    params.train = TrainConfig {
        epochs: 50, batch_size: 128, seed: 0,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
    };

    for seed in 1..=2u64 {
        let split = split_train_eval(&normal, &abnormal, 0.8, seed).unwrap();
        let mut feats = Vec::new();
        for t in &split.train {
            if t.len() < window { continue; }
            for seg in segment_trajectory(t, window).unwrap() {
                feats.push(flatten_segment(&seg));
            }
        }
        let stats = fit_standardizer(&feats).unwrap();
        let std_train: Vec<FeatureVector> = feats.iter().map(|f| apply_standardizer(&stats, f).unwrap()).collect();

        for (label, choice, gmm) in [
            ("gmm-diag16", ModelChoice::Gmm, Some((16usize, CovarianceType::Diagonal))),
            ("gmm-full4", ModelChoice::Gmm, Some((4, CovarianceType::Full))),
            ("gmm-full16", ModelChoice::Gmm, Some((16, CovarianceType::Full))),
            ("maf", ModelChoice::Maf, None),
            ("lof", ModelChoice::Lof, None),
        ] {
            if let Some((k, cov)) = gmm {
                params.gmm = GmmSelection::Fixed { k, cov_type: cov, fit: GmmFitOptions::default() };
            }
            let t0 = std::time::Instant::now();
            let (model, _) = fit_model(choice, &std_train, &params, seed).unwrap();
            let fit_time = t0.elapsed().as_secs_f64();
            for variant in [Variant::Median, Variant::Segment] {
                let (sn, _, _) = variant_scores(&model, &split.eval_normal, window, &stats, variant).unwrap();
                let (sa, _, _) = variant_scores(&model, &split.eval_abnormal, window, &stats, variant).unwrap();
                let curve = roc(&sa, &sn).unwrap();
                println!(
                    "seed {seed} {label} {variant:?}: AUROC={:.4} FPR80={:.4} (fit {:.1}s)",
                    curve.auroc, fpr_at_tpr(&curve, 0.8), fit_time
                );
            }
        }
    }
}
