use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::{train_dynamics, DynamicsConfig};
use crate::env::{collect_dataset, Behavior, ContinuousDataset, PointNavConfig};
use crate::nn::MlpSpec;

fn small_config() -> AgentConfig {
    AgentConfig {
        hidden: vec![16, 16],
        batch: 32,
        gradient_steps: 200,
        log_every: 50,
        ..AgentConfig::default()
    }
}

fn dataset(seed: u64) -> ContinuousDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect_dataset(
        &PointNavConfig::default(),
        &Behavior::scripted(0.3),
        500,
        true,
        &mut rng,
    )
    .unwrap()
}

fn dynamics_for(data: &ContinuousDataset, steps: u64) -> DynamicsModel {
    let cfg = DynamicsConfig {
        steps,
        hidden: vec![8, 8],
        batch: 32,
        ..DynamicsConfig::default()
    };
    train_dynamics(data, &cfg, &[], &mut ChaCha8Rng::seed_from_u64(99))
        .unwrap()
        .pop()
        .unwrap()
}

fn agent(cfg: AgentConfig, data: &ContinuousDataset) -> AgentState {
    let dyn_model = dynamics_for(data, 20);
    AgentState::init(
        cfg,
        Some(dyn_model),
        data.state_mean.clone(),
        data.state_std.clone(),
        &mut ChaCha8Rng::seed_from_u64(7),
    )
    .unwrap()
}

/// `Q(s, a) = c · relu(s_0)` with one hidden unit.
fn state_critic(c: f64) -> Mlp {
    let spec = MlpSpec::regression(4, &[1], 1).unwrap();
    Mlp::new(spec, vec![1.0, 0.0, 0.0, 0.0, 0.0, c, 0.0]).unwrap()
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn zero_discount_targets_are_rewards_and_critics_fit_them() {
    let data = dataset(0);
    let mut cfg = small_config();
    cfg.gamma = 0.0;
    cfg.hidden = vec![64, 64];
    let mut st = agent(cfg, &data);
    let batch = data.arrays().gather(&(0..32).collect::<Vec<_>>());
    assert_eq!(st.critic_targets(&batch), batch.r);
    for _ in 0..20_000 {
        st.critic_update(&batch);
    }
    let q = AgentState::q_values(&st.critics, batch.s.view(), batch.a.view());
    for k in 0..st.critics.len() {
        let err = (&q.column(k) - &batch.r).mapv(f64::abs);
        assert!(err.iter().all(|&e| e < 1e-2), "critic {k}: {err}");
    }
}

#[test]
fn terminal_transitions_ignore_target_critics() {
    let data = dataset(1);
    let mut st = agent(small_config(), &data);
    let mut batch = data.arrays().gather(&(0..16).collect::<Vec<_>>());
    batch.done.fill(1.0);
    let before = st.critic_targets(&batch);
    for t in &mut st.target_critics {
        t.params.iter_mut().for_each(|p| *p = 1e3 * (*p + 1.0));
    }
    assert_eq!(st.critic_targets(&batch), before);
    assert_eq!(before, batch.r);
}

/// Five transitions whose actions equal the (frozen) actor's choices, so
/// bootstrapped pairs are exactly the dataset pairs and the critic fixed
/// point solves `Q = r + γ·P·Q`.
#[test]
fn critics_reach_the_tabular_fixed_point() {
    let data = dataset(2);
    let mut cfg = small_config();
    cfg.hidden = vec![32, 32];
    cfg.gamma = 0.9;
    let mut st = agent(cfg, &data);
    let s: Array2<f64> = array![
        [-1.0, -1.0],
        [0.0, 0.5],
        [1.0, -0.5],
        [0.5, 1.5],
        [-0.5, 1.0]
    ];
    let next = [1usize, 2, 0, 4, 3];
    let r = array![0.5, -1.0, 0.25, 1.0, -0.5];
    let a = st.actor.forward_batch(s.view());
    let s2 = s.select(ndarray::Axis(0), &next);
    let batch = TransitionArrays {
        s: s.clone(),
        a,
        r: r.clone(),
        s2,
        done: Array1::zeros(5),
    };
    let mut m = nalgebra::DMatrix::<f64>::identity(5, 5);
    for (i, &j) in next.iter().enumerate() {
        m[(i, j)] -= 0.9;
    }
    let exact = m
        .lu()
        .solve(&nalgebra::DVector::from_iterator(5, r.iter().copied()))
        .unwrap();

    for _ in 0..20_000 {
        st.critic_update(&batch);
        for (t, c) in st.target_critics.iter_mut().zip(&st.critics) {
            polyak_update(&mut t.params, &c.params, st.config.tau);
        }
    }
    let q = AgentState::q_values(&st.critics, batch.s.view(), batch.a.view());
    for k in 0..st.critics.len() {
        for i in 0..5 {
            assert!(
                (q[[i, k]] - exact[i]).abs() < 5e-2,
                "critic {k}, transition {i}: {} vs {}",
                q[[i, k]],
                exact[i]
            );
        }
    }
}

#[test]
fn zero_alpha_gives_unit_weights() {
    let data = dataset(3);
    let mut cfg = small_config();
    cfg.alpha = 0.0;
    let st = agent(cfg, &data);
    let out = st
        .scas_regularizer(&data.arrays(), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert!(out.weights.iter().all(|&w| w == 1.0));
    assert_eq!(out.max_raw_weight, 1.0);
}

#[test]
fn large_value_gaps_saturate_at_the_clip() {
    let data = dataset(4);
    let mut cfg = small_config();
    cfg.hidden = vec![1];
    let mut st = agent(cfg, &data);
    st.critics = vec![state_critic(100.0); st.config.n_critics];
    let batch = TransitionArrays {
        s: array![[0.0, 0.0], [0.0, 0.3]],
        a: array![[0.0, 0.0], [0.1, 0.1]],
        r: array![0.0, 0.0],
        s2: array![[1.0, 0.0], [-1.0, 0.0]],
        done: array![0.0, 0.0],
    };
    let (w, max_raw) = st.regularizer_weights(&batch);
    assert_eq!(w[0], 50.0);
    assert!(max_raw > 1e200);
    // V(s') − V(s) = 0 here since relu clamps s'_0 = −1.
    assert_eq!(w[1], 1.0);
}

#[test]
fn exact_reconstruction_gives_zero_regularizer() {
    let data = dataset(5);
    let mut cfg = small_config();
    cfg.sigma = 0.0;
    let st = agent(cfg, &data);
    let mut batch = data.arrays().gather(&(0..20).collect::<Vec<_>>());
    batch.a = st.actor.forward_batch(batch.s.view());
    let d = st.dynamics.as_ref().unwrap();
    batch.s2 = d
        .net
        .forward_batch(crate::dynamics::model_input(batch.s.view(), batch.a.view()).view());
    let out = st
        .scas_regularizer(&batch, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(out.value, 0.0);
    assert!(out.actor_grad.iter().all(|&g| g == 0.0));
}

#[test]
fn weights_carry_no_actor_gradient() {
    let data = dataset(6);
    let st = agent(small_config(), &data);
    let batch = data.arrays().gather(&(0..64).collect::<Vec<_>>());
    let out = st
        .scas_regularizer(&batch, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let constants = out.weights.clone();
    let (value, grad) = st
        .weighted_alignment(out.perturbed_states.view(), batch.s2.view(), &constants)
        .unwrap();
    assert_eq!(value.to_bits(), out.value.to_bits());
    assert_eq!(bits(&grad), bits(&out.actor_grad));
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let data = dataset(7);
    let mut st = agent(small_config(), &data);
    let batch = data.arrays().gather(&(0..16).collect::<Vec<_>>());
    let w = Array1::from_iter((0..16).map(|i| 0.5 + i as f64 / 8.0));
    let s_hat = st.perturb_states(batch.s.view(), &mut ChaCha8Rng::seed_from_u64(2));
    let (_, grad) = st
        .weighted_alignment(s_hat.view(), batch.s2.view(), &w)
        .unwrap();
    let h = 1e-6;
    for idx in (0..st.actor.num_params()).step_by(7) {
        let orig = st.actor.params[idx];
        st.actor.params[idx] = orig + h;
        let up = st
            .weighted_alignment(s_hat.view(), batch.s2.view(), &w)
            .unwrap()
            .0;
        st.actor.params[idx] = orig - h;
        let down = st
            .weighted_alignment(s_hat.view(), batch.s2.view(), &w)
            .unwrap()
            .0;
        st.actor.params[idx] = orig;
        let fd = (up - down) / (2.0 * h);
        assert!(
            (fd - grad[idx]).abs() <= 1e-4 * fd.abs().max(1e-2),
            "param {idx}: fd {fd} vs {}",
            grad[idx]
        );
    }
}

#[test]
fn lambda_one_steps_along_the_regularizer_only() {
    let data = dataset(8);
    let mut cfg = small_config();
    cfg.lambda = 1.0;
    let st = agent(cfg, &data);
    let batch = data.arrays().gather(&(0..32).collect::<Vec<_>>());

    let mut a = st.clone();
    a.policy_update(&batch, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    let mut b = st.clone();
    let reg = b
        .scas_regularizer(&batch, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    b.actor_adam.step(&mut b.actor.params, &reg.actor_grad, 1.0);
    assert_eq!(bits(&a.actor.params), bits(&b.actor.params));
}

#[test]
fn lambda_zero_is_pure_normalized_q_ascent() {
    let data = dataset(9);
    let mut cfg = small_config();
    cfg.lambda = 0.0;
    let st = AgentState::init(
        cfg,
        None,
        data.state_mean.clone(),
        data.state_std.clone(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let batch = data.arrays().gather(&(0..32).collect::<Vec<_>>());

    let mut a = st.clone();
    let stats = a
        .policy_update(&batch, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    assert_eq!(stats.max_weight, None);
    let mut b = st.clone();
    let (_, _, g) = b.normalized_q(batch.s.view());
    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
    b.actor_adam.step(&mut b.actor.params, &neg, 1.0);
    assert_eq!(bits(&a.actor.params), bits(&b.actor.params));
}

#[test]
fn constant_q_has_zero_actor_gradient() {
    let data = dataset(10);
    let mut st = agent(small_config(), &data);
    for c in &mut st.critics {
        let n = c.num_params();
        c.params.iter_mut().for_each(|p| *p = 0.0);
        c.params[n - 1] = -3.0;
    }
    let batch = data.arrays().gather(&(0..32).collect::<Vec<_>>());
    let (value, mean_q, grad) = st.normalized_q(batch.s.view());
    assert_eq!(mean_q, -3.0);
    assert_eq!(value, -1.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn untrained_dynamics_and_mismatched_statistics_are_refused() {
    let data = dataset(11);
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let untrained = dynamics_for(&data, 0);
    assert!(matches!(
        train(&data, Some(untrained), &cfg, &mut rng, &mut NoObserver),
        Err(ScasError::UntrainedDynamics)
    ));
    assert!(matches!(
        train(&data, None, &cfg, &mut rng, &mut NoObserver),
        Err(ScasError::UntrainedDynamics)
    ));
    let other = dataset(12);
    let foreign = dynamics_for(&other, 5);
    assert!(matches!(
        train(&data, Some(foreign), &cfg, &mut rng, &mut NoObserver),
        Err(ScasError::NormalizationMismatch)
    ));
}

#[test]
fn zero_steps_returns_the_initialization() {
    let data = dataset(13);
    let mut cfg = small_config();
    cfg.gradient_steps = 0;
    let dyn_model = dynamics_for(&data, 5);
    let trained = train(
        &data,
        Some(dyn_model.clone()),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(21),
        &mut NoObserver,
    )
    .unwrap();
    let fresh = AgentState::init(
        cfg,
        Some(dyn_model),
        data.state_mean.clone(),
        data.state_std.clone(),
        &mut ChaCha8Rng::seed_from_u64(21),
    )
    .unwrap();
    assert_eq!(trained.step, 0);
    assert!(trained.parameters().eq(fresh.parameters()));
}

struct Recorder(Vec<MetricsRow>);

impl TrainObserver for Recorder {
    fn record(&mut self, row: &MetricsRow) -> Result<std::ops::ControlFlow<()>> {
        self.0.push(row.clone());
        Ok(std::ops::ControlFlow::Continue(()))
    }
}

#[test]
fn training_is_deterministic_and_weights_stay_clipped() {
    let data = dataset(14);
    let cfg = small_config();
    let dyn_model = dynamics_for(&data, 30);
    let run = || {
        let mut rec = Recorder(Vec::new());
        let st = train(
            &data,
            Some(dyn_model.clone()),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
            &mut rec,
        )
        .unwrap();
        (st, rec.0)
    };
    let (a, rows_a) = run();
    let (b, rows_b) = run();
    assert_eq!(a.step, cfg.gradient_steps);
    assert!(a
        .parameters()
        .zip(b.parameters())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(rows_a, rows_b);
    assert_eq!(rows_a.len(), 4);
    for r in &rows_a {
        let w = r.max_weight.unwrap();
        let raw = r.max_raw_weight.unwrap();
        assert!(w <= cfg.weight_clip);
        assert_eq!(w, raw.min(cfg.weight_clip));
        assert!(r.critic_loss.is_some() && r.mean_q.is_some());
    }
}

#[test]
fn behavior_cloning_fits_dataset_actions() {
    let data = dataset(15);
    let mut cfg = AgentConfig::behavior_cloning();
    cfg.hidden = vec![32, 32];
    cfg.gradient_steps = 3000;
    cfg.batch = 64;
    cfg.actor_lr = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let arrays = data.arrays();
    let init = AgentState::init(
        cfg.clone(),
        None,
        data.state_mean.clone(),
        data.state_std.clone(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let mse = |st: &AgentState| {
        let d = st.actor.forward_batch(arrays.s.view()) - &arrays.a;
        d.mapv(|x| x * x).sum() / arrays.len() as f64
    };
    let st = train(&data, None, &cfg, &mut rng, &mut NoObserver).unwrap();
    assert!(st.dynamics.is_none());
    assert!(
        mse(&st) < 0.5 * mse(&init),
        "{} vs {}",
        mse(&st),
        mse(&init)
    );
}

#[test]
fn untrained_actor_acts_near_zero() {
    let data = dataset(16);
    let st = agent(AgentConfig::default(), &data);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PointNavConfig::default();
    for _ in 0..1000 {
        let s = crate::env::env_reset(&cfg, crate::env::StartMode::InDist, &mut rng).unwrap();
        let a = st.act(&s).unwrap();
        assert!(a.iter().all(|x| x.abs() < 0.05), "{a:?}");
        assert_eq!(a, st.act(&s).unwrap());
    }
}

proptest! {
    #[test]
    fn actions_stay_in_the_box(x in -1e6f64..1e6, y in -1e6f64..1e6, seed in 0u64..20) {
        let data = dataset(17);
        let mut cfg = small_config();
        cfg.actor_final_scale = 10.0;
        let st = AgentState::init(
            cfg,
            None,
            data.state_mean.clone(),
            data.state_std.clone(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        let a = st.act(&[x, y]).unwrap();
        prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn bundles_round_trip() {
    let data = dataset(18);
    let st = agent(small_config(), &data);
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_bundle(dir.path(), &st, 42, &data.content_hash()).unwrap();
    let (back, m2) = load_bundle(dir.path()).unwrap();
    assert_eq!(manifest, m2);
    assert!(back.parameters().eq(st.parameters()));
    assert_eq!(back.dynamics, st.dynamics);
    assert_eq!(back.config, st.config);
}
