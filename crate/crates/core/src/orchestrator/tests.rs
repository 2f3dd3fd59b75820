use super::*;
use crate::dataset::make_synthetic;
use rand::Rng;

fn federation(n: usize, clients: usize, seed: u64) -> Federation {
    let data = make_synthetic(n, 8, 4, seed).unwrap();
    let (train, test) = data.split(0.2, seed).unwrap();
    Federation::new(train, test, clients, seed).unwrap()
}

fn config(seed: u64, k: usize) -> RoundConfig {
    let train = TrainConfig {
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    RoundConfig {
        seed,
        k,
        train,
        ..RoundConfig::default()
    }
}

fn check_phase_order(result: &RoundResult) {
    let last_data = result
        .message_log
        .iter()
        .filter(|e| e.kind == MessageKind::DataReport)
        .map(|e| e.timestamp)
        .fold(f64::NEG_INFINITY, f64::max);
    for e in result
        .message_log
        .iter()
        .filter(|e| e.kind == MessageKind::WeightReport)
    {
        assert!(e.timestamp > last_data);
    }
}

#[test]
fn flaps_round_with_ten_heads() {
    let fed = federation(1500, 200, 1);
    let result = run_flaps_round(&fed, &config(1, 10)).unwrap();
    let counts = count_messages(&result);
    assert_eq!(
        counts.get(EdgeClass::ServerHead, MessageKind::WeightReport),
        10
    );
    assert_eq!(
        counts.get(EdgeClass::ServerHead, MessageKind::ModelDownload),
        10
    );
    assert_eq!(counts.class_total(EdgeClass::ServerHead), 20);
    assert_eq!(counts.kind_total(MessageKind::BudgetBroadcast), 200);
    assert_eq!(counts.kind_total(MessageKind::ReadyQuery), 200);
    assert_eq!(counts.kind_total(MessageKind::ClusterAssign), 200);
    assert_eq!(counts.kind_total(MessageKind::GlobalUpdate), 200);
    // heads keep their own report local
    assert_eq!(
        counts.get(EdgeClass::ClientHead, MessageKind::DataReport),
        190
    );
    assert_eq!(result.heads.len(), 10);
    assert!(result.topology_violations().is_empty());
    assert!(result.dropped_clients.is_empty());
    // every training example reaches exactly one head
    assert_eq!(result.training_examples, fed.train.len() as u64);
    check_phase_order(&result);
    let t = result.timing;
    assert!((t.total - (t.t1 + t.t2 + t.t3 + t.t4)).abs() < 1e-12);
    assert!([t.t1, t.t2, t.t3, t.t4]
        .iter()
        .all(|v| *v >= 0.0 && *v <= t.total));
}

#[test]
fn flaps_is_deterministic() {
    let fed = federation(600, 40, 2);
    let a = run_flaps_round(&fed, &config(5, 4)).unwrap();
    let b = run_flaps_round(&fed, &config(5, 4)).unwrap();
    assert!(a.same_outcome(&b));
    let c = run_flaps_round(&fed, &config(6, 4)).unwrap();
    assert!(!a.same_outcome(&c));
}

#[test]
fn k_bounds() {
    let fed = federation(300, 20, 3);
    for k in [0, 1, 20, 21] {
        assert!(matches!(
            run_flaps_round(&fed, &config(0, k)),
            Err(OrchestratorError::Config(_))
        ));
    }
    assert!(run_flaps_round(&fed, &config(0, 19)).is_ok());
}

#[test]
fn near_n_heads_approach_fl_counts() {
    let fed = federation(400, 30, 4);
    let flaps = run_flaps_round(&fed, &config(4, 29)).unwrap();
    let fl = run_fl_baseline(&fed, &config(4, 29)).unwrap();
    let a = count_messages(&flaps).class_total(EdgeClass::ServerHead);
    let b = count_messages(&fl).class_total(EdgeClass::ServerHead);
    assert_eq!((a, b), (58, 60));
}

#[test]
fn fl_counts_every_client() {
    let fed = federation(400, 25, 4);
    let fl = run_fl_baseline(&fed, &config(4, 2)).unwrap();
    let counts = count_messages(&fl);
    assert_eq!(
        counts.get(EdgeClass::ServerHead, MessageKind::ModelDownload),
        25
    );
    assert_eq!(
        counts.get(EdgeClass::ServerHead, MessageKind::WeightReport),
        25
    );
    assert_eq!(counts.class_total(EdgeClass::ClientHead), 0);
    assert!(fl.topology_violations().is_empty());
}

#[test]
fn single_client_fl_matches_central() {
    let fed = federation(300, 1, 5);
    let fl = run_fl_baseline(&fed, &config(9, 2)).unwrap();
    let central = run_central_baseline(&fed, &config(9, 2)).unwrap();
    assert_eq!(fl.model, central.model);
    assert_eq!(fl.metrics, central.metrics);
}

#[test]
fn identical_clients_average_to_one_client() {
    let base = make_synthetic(60, 4, 3, 6).unwrap();
    let copies = 5;
    let idx: Vec<usize> = (0..copies).flat_map(|_| 0..base.len()).collect();
    let train = base.subset(&idx);
    let shards = (0..copies)
        .map(|i| ClientShard::new(i as u32 + 1, i * base.len(), base.len()))
        .collect();
    let fed = Federation {
        train,
        test: base.clone(),
        shards,
    };
    let fl = run_fl_baseline(&fed, &config(2, 2)).unwrap();

    let solo = Federation {
        train: base.clone(),
        test: base.clone(),
        shards: vec![ClientShard::new(1, 0, base.len())],
    };
    let one = run_fl_baseline(&solo, &config(2, 2)).unwrap();
    for (a, b) in fl.model.flatten().iter().zip(one.model.flatten()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn fl_close_to_central_on_twenty_clients() {
    // observed on this setup: fl 0.883, central 0.925
    let fed = federation(2000, 20, 7);
    let fl = run_fl_baseline(&fed, &config(7, 2)).unwrap();
    let central = run_central_baseline(&fed, &config(7, 2)).unwrap();
    let gap = (fl.metrics.fscore - central.metrics.fscore).abs();
    assert!(
        gap <= 0.05,
        "fl {} central {}",
        fl.metrics.fscore,
        central.metrics.fscore
    );
}

#[test]
fn post_report_drops_leave_metrics_unchanged() {
    let fed = federation(1000, 60, 8);
    let base = run_flaps_round(&fed, &config(8, 6)).unwrap();
    let cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::PostReport, 0.3),
        ..config(8, 6)
    };
    let dropped = run_flaps_round(&fed, &cfg).unwrap();
    assert!(!dropped.dropped_clients.is_empty());
    assert!(dropped
        .dropped_clients
        .iter()
        .all(|c| !dropped.heads.contains(c)));
    assert_eq!(dropped.metrics, base.metrics);
    assert_eq!(dropped.model, base.model);
    let updates = |r: &RoundResult| count_messages(r).kind_total(MessageKind::GlobalUpdate);
    assert_eq!(updates(&dropped), 60 - dropped.dropped_clients.len());
    assert_eq!(updates(&base), 60);
}

#[test]
fn head_drops_reduce_weight_reports() {
    let fed = federation(1000, 60, 9);
    let cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::HeadTraining, 0.5),
        ..config(3, 8)
    };
    let result = run_flaps_round(&fed, &cfg).unwrap();
    let lost = result.dropped_clients.len();
    assert!(lost > 0 && lost < 8);
    assert_eq!(
        count_messages(&result).kind_total(MessageKind::WeightReport),
        8 - lost
    );
    assert_eq!(
        count_messages(&result).kind_total(MessageKind::ModelDownload),
        8
    );
    assert!(result.training_examples < fed.train.len() as u64);
}

#[test]
fn report_drops_shrink_training_data() {
    let fed = federation(1000, 60, 10);
    let cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::Report, 0.2),
        ..config(10, 5)
    };
    let result = run_flaps_round(&fed, &cfg).unwrap();
    assert!(result.training_examples < fed.train.len() as u64);
    check_phase_order(&result);
    assert!(result.topology_violations().is_empty());
}

#[test]
fn ready_drop_aborts_then_restarts() {
    let fed = federation(500, 30, 11);
    let mut cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::Ready, 1.0),
        ..config(11, 3)
    };
    let err = run_flaps_round(&fed, &cfg).unwrap_err();
    let aborted = err.aborted().expect("restartable").clone();
    assert_eq!(aborted.phase, DropPhase::Ready);
    assert_eq!(aborted.attempt, 0);
    assert_eq!(aborted.dropped_clients.len(), 30);

    cfg.drops = DropModel::none();
    let retry = restart_round(&aborted, &fed, &cfg).unwrap();
    assert_eq!(retry.attempt, 1);
    assert!(retry.dropped_clients.is_empty());
}

#[test]
fn forced_aborts_exhaust_attempts() {
    let fed = federation(500, 30, 12);
    let cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::Ready, 1.0),
        max_attempts: 3,
        ..config(12, 3)
    };
    let first = run_flaps_round(&fed, &cfg).unwrap_err();
    let second = restart_round(first.aborted().unwrap(), &fed, &cfg).unwrap_err();
    let third = restart_round(second.aborted().unwrap(), &fed, &cfg).unwrap_err();
    assert_eq!(third.aborted().unwrap().attempt, 2);
    assert!(matches!(
        restart_round(third.aborted().unwrap(), &fed, &cfg),
        Err(OrchestratorError::AttemptsExhausted { attempts: 3 })
    ));
    assert!(matches!(
        run_with_restarts(Mode::Flaps, &fed, &cfg),
        Err(OrchestratorError::AttemptsExhausted { .. })
    ));
    let fl = run_with_restarts(Mode::Fl, &fed, &cfg);
    assert!(matches!(
        fl,
        Err(OrchestratorError::AttemptsExhausted { .. })
    ));
}

#[test]
fn all_heads_dropped_aborts() {
    let fed = federation(500, 30, 13);
    let cfg = RoundConfig {
        drops: DropModel::none().with(DropPhase::HeadTraining, 1.0),
        ..config(13, 4)
    };
    let err = run_flaps_round(&fed, &cfg).unwrap_err();
    assert_eq!(err.aborted().unwrap().phase, DropPhase::HeadTraining);
}

#[test]
fn retry_seeds_use_fresh_streams() {
    let draw = |seed: u64| -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..16).map(|_| rng.random()).collect()
    };
    let original = draw(attempt_seed(21, 0));
    let retries: Vec<Vec<u64>> = (1..5).map(|a| draw(attempt_seed(21, a))).collect();
    for r in &retries {
        assert_ne!(r, &original);
        // no shifted overlap with the original stream either
        assert!(r.iter().all(|v| !original.contains(v)));
    }
    assert_ne!(retries[0], retries[1]);
    assert_eq!(attempt_seed(21, 0), 21);
}

#[test]
fn tcp_transport_matches_sim() {
    let fed = federation(400, 20, 14);
    let sim = run_flaps_round(&fed, &config(14, 3)).unwrap();
    let cfg = RoundConfig {
        transport: TransportKind::Tcp,
        ..config(14, 3)
    };
    let tcp = run_flaps_round(&fed, &cfg).unwrap();
    assert!(sim.same_outcome(&tcp));
}

#[test]
fn central_has_no_traffic() {
    let fed = federation(300, 10, 15);
    let c = run_central_baseline(&fed, &config(15, 2)).unwrap();
    assert_eq!(count_messages(&c).total(), 0);
    assert_eq!(c.k, None);
    assert!(c.metrics.accuracy > 0.5);
}

#[test]
fn mode_names() {
    for m in Mode::ALL {
        assert_eq!(m.name().parse::<Mode>(), Ok(m));
    }
    assert!(Mode::Flaps < Mode::Fl && Mode::Fl < Mode::Central);
    assert_eq!("tcp".parse::<TransportKind>(), Ok(TransportKind::Tcp));
}
