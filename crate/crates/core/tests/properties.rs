use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctxmon::domain::{ContextSchema, ContextSpace, RawContext};
use ctxmon::envsim::{make_preset, GroundTruthModel};
use ctxmon::eval::{correct_controller_probability, true_regret};
use ctxmon::logistic::{fit_mle, pad_context, predict_violation, reg_nll, reg_nll_gradient, FitConfig};
use ctxmon::policy::decide;
use ctxmon::uncertainty::{init_state, rebuild, select_pair, sm_update, uncertainty_norm, SamplingStrategy};
use ctxmon::{Choice, ContextVector, ControllerId, MonitorModel};

fn vector(d: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-range..range, d)
}

/// `(d, data)` with contexts in the unit box.
fn dataset(max_d: usize, max_n: usize) -> impl Strategy<Value = (usize, Vec<(Vec<f64>, bool)>)> {
    (1..=max_d).prop_flat_map(move |d| {
        (
            Just(d),
            prop::collection::vec((vector(d, 1.0), any::<bool>()), 1..=max_n),
        )
    })
}

fn monitor(k: usize, d: usize) -> impl Strategy<Value = MonitorModel> {
    prop::collection::vec(-1.0f64..1.0, k * d)
        .prop_map(move |v| MonitorModel::new(DMatrix::from_row_slice(k, d, &v), 10.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences((d, data) in dataset(4, 30), seed in vector(4, 3.0), lambda in 0.01f64..2.0) {
        let theta = DVector::from_column_slice(&seed[..d]);
        let g = reg_nll_gradient(&theta, &data, lambda).unwrap();
        let h = 1e-5;
        let fd = DVector::from_fn(d, |i, _| {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p[i] += h;
            m[i] -= h;
            (reg_nll(&p, &data, lambda).unwrap() - reg_nll(&m, &data, lambda).unwrap()) / (2.0 * h)
        });
        prop_assert!((&fd - &g).norm() <= 1e-4 * g.norm().max(1e-3));
    }

    #[test]
    fn fit_beats_nearby_points((d, data) in dataset(3, 40), lambda in 0.05f64..1.0, dirs in prop::collection::vec(vector(3, 1.0), 50)) {
        let cfg = FitConfig { lambda, q_bound: 1e6, ..FitConfig::default() };
        let theta = fit_mle(&data, d, &cfg, None).unwrap();
        let best = reg_nll(&theta, &data, lambda).unwrap();
        for dir in dirs {
            let dir = DVector::from_column_slice(&dir[..d]);
            if dir.norm() < 1e-9 {
                continue;
            }
            let moved = &theta + dir.normalize() * 0.1;
            prop_assert!(best <= reg_nll(&moved, &data, lambda).unwrap() + 1e-12);
        }
    }

    #[test]
    fn stacked_fit_matches_per_controller_fits(
        k in 2usize..=3,
        (d, data) in dataset(3, 60),
        owners in prop::collection::vec(0usize..3, 60),
        lambda in 0.05f64..1.0,
    ) {
        let cfg = FitConfig { lambda, q_bound: 1e6, ..FitConfig::default() };
        let mut per = vec![Vec::new(); k];
        let mut stacked = Vec::new();
        for ((x, y), owner) in data.iter().zip(&owners) {
            let c = owner % k;
            let xi = ContextVector::new(x.clone()).unwrap();
            stacked.push((pad_context(&xi, ControllerId(c), k).unwrap().as_slice().to_vec(), *y));
            per[c].push((x.clone(), *y));
        }
        let joint = fit_mle(&stacked, k * d, &cfg, None).unwrap();
        for (c, rows) in per.iter().enumerate() {
            let own = fit_mle(rows, d, &cfg, None).unwrap();
            prop_assert!((&own - joint.rows(c * d, d)).amax() < 1e-6);
        }
    }

    #[test]
    fn prediction_is_monotone_in_the_logit(a in vector(3, 4.0), b in vector(3, 4.0), x in vector(3, 1.0)) {
        let xi = ContextVector::new(x).unwrap();
        let (ta, tb) = (DVector::from_vec(a), DVector::from_vec(b));
        let (za, zb) = (ta.dot(xi.as_vector()), tb.dot(xi.as_vector()));
        let (pa, pb) = (predict_violation(&ta, &xi).unwrap(), predict_violation(&tb, &xi).unwrap());
        if za <= zb {
            prop_assert!(pa <= pb);
        } else {
            prop_assert!(pa >= pb);
        }
    }

    #[test]
    fn rank_one_update_never_raises_uncertainty(
        steps in prop::collection::vec((vector(4, 1.0), 0.0f64..0.25), 0..30),
        x in vector(4, 1.0),
        other in vector(4, 1.0),
        w in 0.0f64..0.25,
    ) {
        let mut h_inv = DMatrix::identity(4, 4) * 10.0;
        for (v, wi) in steps {
            h_inv = sm_update(&h_inv, &DVector::from_vec(v), wi);
        }
        let (x, other) = (DVector::from_vec(x), DVector::from_vec(other));
        let after = sm_update(&h_inv, &x, w);
        prop_assert!(uncertainty_norm(&x, &after).unwrap() <= uncertainty_norm(&x, &h_inv).unwrap() + 1e-12);
        prop_assert!(uncertainty_norm(&other, &after).unwrap() <= uncertainty_norm(&other, &h_inv).unwrap() + 1e-12);
    }

    #[test]
    fn incremental_inverse_matches_rebuild(theta in vector(3, 2.0), xs in prop::collection::vec(vector(3, 1.0), 1..100)) {
        let theta = DVector::from_vec(theta);
        let lambda = FitConfig::default().lambda;
        let mut state = init_state(1, 3, lambda).unwrap();
        let mut data = Vec::new();
        for x in xs {
            let xi = ContextVector::new(x.clone()).unwrap();
            state.record(ControllerId(0), &xi, &theta);
            data.push((x, false));
        }
        let fresh = rebuild(&theta, &data, lambda).unwrap();
        prop_assert!((state.h_inv(ControllerId(0)) - fresh).amax() < 1e-7);
    }

    #[test]
    fn max_both_ignores_candidate_order(
        xs in prop::collection::vec(vector(3, 1.0), 1..12),
        pulls in prop::collection::vec((0usize..3, vector(3, 1.0)), 0..20),
        perm_seed in any::<u64>(),
    ) {
        let mut state = init_state(3, 3, 1.0).unwrap();
        for (c, x) in pulls {
            state.record(ControllerId(c), &ContextVector::new(x).unwrap(), &DVector::zeros(3));
        }
        let contexts: Vec<ContextVector> = xs.into_iter().map(|x| ContextVector::new(x).unwrap()).collect();
        let candidates: Vec<_> = contexts.iter().enumerate().collect();
        let mut shuffled = candidates.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_pair(&candidates, &state, SamplingStrategy::MaxBoth, &mut rng).unwrap();
        let b = select_pair(&shuffled, &state, SamplingStrategy::MaxBoth, &mut rng).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_theta_keeps_the_best_controller(m in monitor(4, 3), x in vector(3, 1.0), scale in 0.1f64..3.0, tau in 0.0f64..1.0) {
        let xi = ContextVector::new(x).unwrap();
        let scaled = MonitorModel::new(m.theta() * scale, 10.0).unwrap();
        prop_assert_eq!(decide(&m, &xi, tau).best_controller, decide(&scaled, &xi, tau).best_controller);
        prop_assert_eq!(decide(&m, &xi, tau), decide(&m, &xi, tau));
    }

    #[test]
    fn diversion_is_monotone_in_tau(m in monitor(3, 3), x in vector(3, 1.0), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let xi = ContextVector::new(x).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if decide(&m, &xi, lo).chosen == Choice::FailSafe {
            prop_assert_eq!(decide(&m, &xi, hi).chosen, Choice::FailSafe);
        }
    }

    #[test]
    fn encoding_is_injective_and_bounded(
        cats in prop::collection::vec(2usize..5, 0..3),
        n_bin in 0usize..3,
        clusters in prop::collection::vec(2usize..5, 0..2),
        bias in any::<bool>(),
        picks in prop::collection::vec(any::<u16>(), 2),
    ) {
        let schema = ContextSchema {
            categorical_features: cats.iter().enumerate().map(|(i, &c)| (format!("c{i}"), c)).collect(),
            binary_features: (0..n_bin).map(|i| format!("b{i}")).collect(),
            cluster_features: clusters.iter().enumerate().map(|(i, &c)| (format!("k{i}"), c)).collect(),
            include_bias: bias,
        };
        prop_assume!(schema.dim() > 0);
        let space = ContextSpace::enumerate(&schema).unwrap();
        let bound = space.norm_bound();
        for xi in space.contexts() {
            prop_assert!(xi.norm() <= bound + 1e-12);
        }
        let a = picks[0] as usize % space.len();
        let b = picks[1] as usize % space.len();
        let (ra, rb): (&RawContext, &RawContext) = (space.raw(a), space.raw(b));
        let (ea, eb) = (schema.encode_raw(ra).unwrap(), schema.encode_raw(rb).unwrap());
        prop_assert_eq!(ra == rb, ea == eb);
        prop_assert_eq!(&schema.decode(&ea).unwrap(), ra);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regret_is_nonnegative_and_zero_when_always_correct(m in monitor(4, 8)) {
        let preset = make_preset("rq1_4ctrl").unwrap();
        let truth: &GroundTruthModel = &preset.truth;
        let m = MonitorModel::new(m.theta() * 3.0, 10.0).unwrap();
        let regret = true_regret(&m, truth, &preset.space).unwrap();
        prop_assert!(regret >= 0.0);
        if correct_controller_probability(&m, truth, &preset.space).unwrap() == 1.0 {
            prop_assert!(regret < 1e-12);
        }
    }
}
