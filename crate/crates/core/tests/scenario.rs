use bfn_cl::bfn::{CategoricalReadout, LossKind};
use bfn_cl::continual::{
    BufferPolicy, BufferScope, Origin, Scenario, ScenarioSeeds, StrategyConfig, TaskStream, TrainingConfig,
};
use bfn_cl::data::{split_tasks, synthetic_mixture, MixtureMode, SplitMode, SplitSpec};
use bfn_cl::eval::loss_matrix_row;
use bfn_cl::model::{Activation, Mlp, NetworkSpec, OptimizerKind, TimeEmbedding};
use bfn_cl::schedule::ScheduleSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: ScenarioSeeds = ScenarioSeeds { training: 11, strategy: 12 };

fn stream(classes_per_task: usize) -> TaskStream {
    let modes = vec![
        MixtureMode { mean: vec![-0.5], stdev: 0.05 },
        MixtureMode { mean: vec![0.5], stdev: 0.05 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = synthetic_mixture(600, &modes, &[0.5, 0.5], &mut rng).unwrap();
    let spec = SplitSpec { mode: SplitMode::ClassIncremental { classes_per_task }, seed: 9, test_fraction: 0.2 };
    split_tasks(&ds, &spec).unwrap()
}

fn net(stream: &TaskStream) -> Mlp {
    let schema = stream.schema();
    let heads = schema.heads();
    let spec = NetworkSpec {
        input_width: schema.feature_width(),
        hidden_widths: vec![32],
        output_width: heads.iter().map(|h| h.width()).sum(),
        activation: Activation::Silu,
        time_embedding: TimeEmbedding::Sinusoidal { frequencies: 4 },
        heads,
    };
    Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn scenario(stream: &TaskStream, strategy: StrategyConfig, steps: usize) -> Scenario<'_> {
    Scenario {
        stream,
        strategy,
        schedules: ScheduleSet::default(),
        training: TrainingConfig {
            steps_per_task: steps,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            loss: LossKind::ContinuousTime { t_samples: 1 },
        },
        generator_readout: CategoricalReadout::Argmax,
        record_provenance: true,
    }
}

#[test]
fn zero_lambda_matches_finetune_exactly() {
    let s = stream(1);
    let ft = scenario(&s, StrategyConfig::Finetune, 60).run(net(&s), SEEDS, &mut ()).unwrap();
    let reg = scenario(&s, StrategyConfig::Regularize { p: 2, lambda: 0.0 }, 60).run(net(&s), SEEDS, &mut ()).unwrap();
    assert_eq!(ft.net.params.values(), reg.net.params.values());
    assert_eq!(ft.final_train_loss, reg.final_train_loss);
}

#[test]
fn single_task_stream_ignores_strategy() {
    let s = stream(2);
    assert_eq!(s.len(), 1);
    let base = scenario(&s, StrategyConfig::Finetune, 50).run(net(&s), SEEDS, &mut ()).unwrap();
    let others = [
        StrategyConfig::Regularize { p: 1, lambda: 10.0 },
        StrategyConfig::Buffer { capacity: 20, policy: BufferPolicy::Ring, scope: BufferScope::PerTask, replay_fraction: 0.5 },
        StrategyConfig::GenerativeReplay { replay_fraction: 0.5, generator_steps: 5 },
    ];
    for strategy in others {
        let out = scenario(&s, strategy, 50).run(net(&s), SEEDS, &mut ()).unwrap();
        assert_eq!(out.net.params.values(), base.net.params.values(), "{}", strategy.name());
    }
}

#[test]
fn generative_replay_never_touches_old_rows() {
    let s = stream(1);
    let strategy = StrategyConfig::GenerativeReplay { replay_fraction: 0.5, generator_steps: 5 };
    let out = scenario(&s, strategy, 20).run(net(&s), SEEDS, &mut ()).unwrap();
    let log = out.provenance_log.unwrap();
    assert!(log[0].iter().all(|o| matches!(o, Origin::Task { task: 0, .. })));
    assert!(log[1].iter().all(|o| matches!(o, Origin::Task { task: 1, .. } | Origin::Generated { by_task: 0 })));
    let generated = log[1].iter().filter(|o| matches!(o, Origin::Generated { .. })).count();
    assert_eq!(generated, 20 * 16);
}

#[test]
fn buffer_replays_earlier_task_rows() {
    let s = stream(1);
    let strategy =
        StrategyConfig::Buffer { capacity: 50, policy: BufferPolicy::Reservoir, scope: BufferScope::Global, replay_fraction: 0.25 };
    let out = scenario(&s, strategy, 20).run(net(&s), SEEDS, &mut ()).unwrap();
    let log = out.provenance_log.unwrap();
    assert!(log[0].iter().all(|o| matches!(o, Origin::Task { task: 0, .. })));
    let old = log[1].iter().filter(|o| matches!(o, Origin::Task { task: 0, .. })).count();
    assert_eq!(old, 20 * 8);
}

#[test]
fn finetune_forgets_the_first_task() {
    let s = stream(1);
    struct Rows(Vec<Vec<f64>>);
    impl bfn_cl::continual::TaskObserver for Rows {
        fn task_finished(&mut self, _: usize, net: &Mlp, stream: &TaskStream) -> bfn_cl::Result<()> {
            self.0.push(loss_matrix_row(net, stream, &ScheduleSet::default(), 8, 3)?);
            Ok(())
        }
    }
    let mut rows = Rows(Vec::new());
    scenario(&s, StrategyConfig::Finetune, 400).run(net(&s), SEEDS, &mut rows).unwrap();
    let increase = rows.0[1][0] - rows.0[0][0];
    assert!(increase >= 0.1, "task 0 bits/dim went {} -> {}", rows.0[0][0], rows.0[1][0]);
}

#[test]
fn invalid_strategy_is_rejected_before_training() {
    let s = stream(1);
    let bad = StrategyConfig::Regularize { p: 3, lambda: 1.0 };
    assert!(scenario(&s, bad, 10).run(net(&s), SEEDS, &mut ()).is_err());
    let bad = StrategyConfig::Regularize { p: 2, lambda: -1.0 };
    assert!(scenario(&s, bad, 10).run(net(&s), SEEDS, &mut ()).is_err());
}
