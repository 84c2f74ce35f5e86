use super::*;
use crate::data::synth_shapes;
use crate::model::{save_checkpoint, LatentSpec};
use crate::objective::{capacity_at, CapacitySchedule};

fn tiny_config(objective: ObjectiveMode, spec: LatentSpec) -> TrainConfig {
    TrainConfig {
        dataset: "synth".into(),
        model: ModelConfig::new([1, 32, 32], spec).unwrap(),
        objective,
        learning_rate: 5e-4,
        batch_size: 16,
        epochs: 2,
        seed: 5,
        kl_log_interval: 3,
    }
}

fn joint() -> ObjectiveMode {
    ObjectiveMode::JointVae {
        schedule: CapacitySchedule {
            gamma: 100.0,
            cz_max: 5.0,
            cz_ramp_iters: 10,
            cc_max: 3f64.ln(),
            cc_ramp_iters: 7,
        },
    }
}

fn tiny_data() -> Dataset {
    synth_shapes(1, 0).subset(80, 1)
}

#[test]
fn runs_expected_iterations_and_logs() {
    let config = tiny_config(joint(), LatentSpec::new(3, vec![3]));
    let (ckpt, log) = train(&config, &tiny_data()).unwrap();
    // 80 / 16 = 5 iterations per epoch
    assert_eq!(ckpt.state.iteration, 10);
    let iters: Vec<u64> = log.rows.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![0, 3, 6, 9]);
    assert!(iters.windows(2).all(|w| w[0] < w[1]));
    let ObjectiveMode::JointVae { schedule } = config.objective else { unreachable!() };
    for row in &log.rows {
        assert_eq!(row.report.capacities, capacity_at(&schedule, row.iteration, &[3]));
        assert_eq!(row.report.kl_continuous_per_unit.len(), 3);
        assert_eq!(row.report.kl_discrete_per_var.len(), 1);
    }
    assert_eq!(log.rows[2].epoch, 1);
}

#[test]
fn training_is_bitwise_reproducible() {
    let config = tiny_config(joint(), LatentSpec::new(3, vec![3]));
    let data = tiny_data();
    let (a, la) = train(&config, &data).unwrap();
    let (b, lb) = train(&config, &data).unwrap();
    assert_eq!(la.to_csv(), lb.to_csv());
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&pa, &a.model, &a.state).unwrap();
    save_checkpoint(&pb, &b.model, &b.state).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());

    let mut other = config.clone();
    other.seed = 6;
    let (c, _) = train(&other, &data).unwrap();
    assert_ne!(c.model, a.model);
}

#[test]
fn csv_unit_columns_sum_to_the_total() {
    let config = tiny_config(joint(), LatentSpec::new(4, vec![3, 2]));
    let (_, log) = train(&config, &tiny_data()).unwrap();
    let csv = log.to_csv();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[..4], ["iteration", "recon", "kl_z_total", "kl_c_total"]);
    assert_eq!(header[4..8], ["kl_z0", "kl_z1", "kl_z2", "kl_z3"]);
    assert_eq!(header[8..10], ["kl_c0", "kl_c1"]);
    for (line, row) in lines.zip(&log.rows) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let units: f64 = cells[4..8].iter().sum();
        assert_eq!(units, cells[2]);
        assert_eq!(cells[2], row.report.kl_continuous());
        assert_eq!(cells[3], row.report.kl_discrete());
    }
}

#[test]
fn baseline_modes_train_without_discrete_heads() {
    for mode in [
        ObjectiveMode::Vae,
        ObjectiveMode::BetaVae { beta: 4.0 },
        ObjectiveMode::CcBetaVae {
            gamma: 100.0,
            schedule: CapacitySchedule {
                gamma: 100.0,
                cz_max: 5.0,
                cz_ramp_iters: 10,
                cc_max: 0.0,
                cc_ramp_iters: 10,
            },
        },
    ] {
        let config = tiny_config(mode, LatentSpec::new(3, vec![]));
        let (ckpt, log) = train(&config, &tiny_data()).unwrap();
        assert!(ckpt.model.param("encoder.logits0.weight").is_none());
        assert!(log.rows.iter().all(|r| r.report.kl_discrete_per_var.is_empty()));
        assert!(log.rows.iter().all(|r| r.report.total.is_finite()));
    }
}

#[test]
fn recon_improves_on_tiny_run() {
    let mut config = tiny_config(ObjectiveMode::Vae, LatentSpec::new(4, vec![]));
    config.epochs = 6;
    config.learning_rate = 1e-3;
    let (_, log) = train(&config, &tiny_data()).unwrap();
    let first = log.rows.first().unwrap().report.recon;
    let last = log.rows.last().unwrap().report.recon;
    assert!(last < 0.7 * first, "{first} -> {last}");
}

#[test]
fn mismatched_dataset_rejected() {
    let config = tiny_config(joint(), LatentSpec::new(3, vec![3]));
    let wide = Dataset::new([1, 64, 64], vec![0.0; 64 * 64]).unwrap();
    let err = train(&config, &wide).unwrap_err();
    assert!(err.to_string().contains("do not match"), "{err}");
}

#[test]
fn divergence_reports_iteration() {
    let mut config = tiny_config(ObjectiveMode::Vae, LatentSpec::new(3, vec![]));
    config.learning_rate = 1e30;
    config.kl_log_interval = 1;
    let err = train(&config, &tiny_data()).unwrap_err();
    match err {
        Error::Diverged { iteration, last_report } => {
            assert!(iteration >= 1);
            assert!(last_report.contains("recon"), "{last_report}");
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn checkpoint_carries_optimizer_state() {
    let config = tiny_config(joint(), LatentSpec::new(3, vec![3]));
    let (ckpt, _) = train(&config, &tiny_data()).unwrap();
    let n = ckpt.model.params().len();
    assert_eq!(ckpt.state.extra.len(), 1 + 2 * n);
    assert_eq!(ckpt.state.extra[0].1.item(), Some(10.0));
    let meta: TrainConfig = serde_json::from_value(ckpt.state.metadata.clone()).unwrap();
    assert_eq!(meta, config);
}
