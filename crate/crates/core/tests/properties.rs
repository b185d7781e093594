use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentiscale::analytics::{bucketize, ema, pearson_at_lag, Aggregate, TimeSeries};
use sentiscale::dist::Weibull;
use sentiscale::metrics::finalize_engine;
use sentiscale::policies::FixedPolicy;
use sentiscale::workload::{self, ClassId, SentimentTriple};
use sentiscale::{distribute_cycles, Engine, SimConfig, WorkItem, Workload};

fn item(id: u64, post: f64, cycles: f64) -> WorkItem {
    WorkItem::new(id, post, ClassId(0), cycles, SentimentTriple::neutral())
}

fn series(values: &[f64]) -> TimeSeries {
    TimeSeries {
        bucket_width_s: 60.0,
        origin_s: 0.0,
        values: values.iter().map(|v| Some(*v)).collect(),
        counts: vec![1; values.len()],
    }
}

proptest! {
    #[test]
    fn sharing_conserves_cycles(
        demands in prop::collection::vec(0.0f64..1e6, 0..20),
        budget in 0.0f64..2e6,
    ) {
        let mut items: Vec<WorkItem> = demands.iter().enumerate().map(|(i, &c)| item(i as u64, i as f64, c)).collect();
        let before: f64 = items.iter().map(|i| i.cycles_remaining).sum();
        let d = distribute_cycles(&mut items, budget, 1.0);
        let after: f64 = items.iter().map(|i| i.cycles_remaining).sum();
        let consumed = before - after;
        prop_assert!((consumed + d.idle_cycles - budget).abs() <= 1e-9 * budget.max(before).max(1.0));
        prop_assert!(d.idle_cycles >= 0.0);
        if before >= budget {
            prop_assert!(d.idle_cycles <= 1e-9 * budget.max(1.0));
        } else {
            prop_assert!(items.is_empty());
        }
        prop_assert_eq!(d.completed.len() + items.len(), demands.len());
        prop_assert!(d.completed.iter().all(|c| c.completion_time == Some(1.0) && c.cycles_remaining == 0.0));
    }

    #[test]
    fn equal_demands_finish_together(n in 1usize..10, c in 1.0f64..1e6) {
        let mut items: Vec<WorkItem> = (0..n).map(|i| item(i as u64, 0.0, c)).collect();
        let d = distribute_cycles(&mut items, c * n as f64 * (1.0 + 1e-12), 1.0);
        prop_assert_eq!(d.completed.len(), n);
    }

    #[test]
    fn weibull_quantile_inverts_cdf(shape in 0.3f64..8.0, scale in 1e-3f64..1e9, p in 1e-6f64..0.999999) {
        let w = Weibull::new(shape, scale).unwrap();
        let x = w.quantile(p).unwrap();
        prop_assert!((w.cdf(x) - p).abs() < 1e-9);
    }

    #[test]
    fn ema_stays_within_input_range(xs in prop::collection::vec(-1e3f64..1e3, 1..50), alpha in 0.01f64..=1.0) {
        let s = ema(&series(&xs), alpha).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in s.values.iter().flatten() {
            prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
        }
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let ab = pearson_at_lag(&series(&a), &series(&b), 0).unwrap();
        let ba = pearson_at_lag(&series(&b), &series(&a), 0).unwrap();
        prop_assert_eq!(ab.is_some(), ba.is_some());
        if let (Some(x), Some(y)) = (ab, ba) {
            prop_assert!((-1.0..=1.0).contains(&x));
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_add_up(times in prop::collection::vec(0.0f64..1e4, 1..200)) {
        let points: Vec<(f64, f64)> = times.iter().map(|t| (*t, 1.0)).collect();
        let s = bucketize(&points, Aggregate::Count, 60.0).unwrap();
        prop_assert_eq!(s.counts.iter().sum::<usize>(), times.len());
    }
}

fn random_workload(seed: u64, n: usize, rate: f64, mean_cycles: f64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let items = (0..n)
        .map(|i| {
            t += -(1.0 - rng.random::<f64>()).ln() / rate;
            let c = -(1.0 - rng.random::<f64>()).ln() * mean_cycles;
            item(i as u64, t, c)
        })
        .collect();
    Workload {
        items,
        classes: Vec::new(),
    }
}

#[test]
fn trace_round_trip_is_stable() {
    let spec = workload::SyntheticSpec {
        duration_s: 600.0,
        ..Default::default()
    };
    let w = workload::generate_synthetic(&spec).unwrap();
    let mut first = Vec::new();
    workload::write_trace(&mut first, &w.items).unwrap();
    let back = workload::read_trace(first.as_slice(), None, Some(&w.classes)).unwrap();
    assert_eq!(back.items.len(), w.items.len());
    let mut second = Vec::new();
    workload::write_trace(&mut second, &back.items).unwrap();
    assert_eq!(first, second);
    for (a, b) in w.items.iter().zip(&back.items) {
        assert_eq!(a.id, b.id);
        assert!((a.post_time - b.post_time).abs() <= 1e-8 * a.post_time.abs().max(1.0));
        assert!((a.cycles_required - b.cycles_required).abs() <= 1e-8 * a.cycles_required.max(1.0));
    }
}

#[test]
fn more_cpus_never_hurt_latency() {
    let w = random_workload(3, 3000, 40.0, 1e8);
    let mean_latency = |cpus: u32| {
        let cfg = SimConfig {
            starting_cpus: cpus,
            ..Default::default()
        };
        let mut e = Engine::new(cfg, w.clone()).unwrap();
        e.run(&mut FixedPolicy);
        finalize_engine(&e, 0.0).mean_latency
    };
    let l: Vec<f64> = (1..=4).map(mean_latency).collect();
    assert!(l.windows(2).all(|p| p[1] <= p[0]), "{l:?}");
}

#[test]
fn identical_inputs_give_identical_runs() {
    let w = random_workload(9, 2000, 30.0, 5e7);
    let run = || {
        let mut e = Engine::new(SimConfig::default(), w.clone())
            .unwrap()
            .with_event_log();
        e.run(&mut FixedPolicy);
        (
            e.completed().to_vec(),
            e.timeline().to_vec(),
            e.events().unwrap().to_vec(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn littles_law_holds_for_a_stable_queue() {
    let w = random_workload(17, 200_000, 50.0, 3.2e7);
    let cfg = SimConfig {
        horizon_s: Some(4000.0),
        ..Default::default()
    };
    let mut e = Engine::new(cfg, w).unwrap();
    e.run(&mut FixedPolicy);
    let m = finalize_engine(&e, 1000.0);
    assert!(m.littles_law_gap() < 0.05, "gap {}", m.littles_law_gap());
}
