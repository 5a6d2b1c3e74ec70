use edgeplan::advisor::{parse_reply, DraftStep, PlanDraft, ReplyBody, ReplyKind, ScriptedAdvisor};
use edgeplan::codec::{compress, decompress};
use edgeplan::fedsim::{
    fedavg_aggregate, init_model, run_fl, trial_loop, Augmentation, ConfigPatch, DataSpec, FederatedData, FlConfig,
    LrSchedule, ModelParams, Optimizer, UploadMode,
};
use edgeplan::offload::{best_partition, kind_latency, scheme_latency, Scheme, SchemeKind};
use edgeplan::planner::{Combine, InputSource};
use edgeplan::registry::{candidates_for, LayerProfile, ModelManifest, Scenario, TaskKind};
use proptest::prelude::*;

const KINDS: [TaskKind; 7] = [
    TaskKind::ImageClassification,
    TaskKind::ImageCaptioning,
    TaskKind::Vqa,
    TaskKind::PoseDetection,
    TaskKind::PoseToImage,
    TaskKind::MoodFromTraffic,
    TaskKind::MoodFromPhysio,
];

fn task_kind() -> impl Strategy<Value = TaskKind> {
    (0..KINDS.len()).prop_map(|i| KINDS[i].clone())
}

fn layers(max: usize) -> impl Strategy<Value = Vec<LayerProfile>> {
    prop::collection::vec(
        (1u64..1_000_000_000_000, 1u64..5_000_000).prop_map(|(flops, out_feature_bytes)| LayerProfile {
            flops,
            out_feature_bytes,
        }),
        1..=max,
    )
}

fn manifests() -> impl Strategy<Value = Vec<ModelManifest>> {
    prop::collection::vec((task_kind(), 1u64..1_000_000_000, 1u64..5_000_000, layers(12)), 1..8).prop_map(|ms| {
        ms.into_iter()
            .enumerate()
            .map(|(i, (task_kind, param_count, input_bytes, layers))| ModelManifest {
                id: format!("extra_{}", 7 - i),
                task_kind,
                param_count,
                input_bytes,
                layers,
            })
            .collect()
    })
}

fn scenario_with(models: Vec<ModelManifest>) -> Scenario {
    let mut s = Scenario::bundled();
    s.models.extend(models);
    s
}

fn manifest(layers: Vec<LayerProfile>, input_bytes: u64) -> ModelManifest {
    ModelManifest {
        id: "m".into(),
        task_kind: TaskKind::Vqa,
        param_count: 1,
        input_bytes,
        layers,
    }
}

fn draft() -> impl Strategy<Value = PlanDraft> {
    let step = (
        task_kind(),
        prop::option::of("[a-z][a-z0-9_]{0,8}"),
        prop::option::of(prop_oneof![
            Just(InputSource::UserData),
            Just(InputSource::PreviousStep),
            "[a-z]{1,6}".prop_map(InputSource::Sensor),
        ]),
    )
        .prop_map(|(task, model, input)| DraftStep { task, model, input });
    let combine = prop::option::of(prop_oneof![
        Just(Combine::Single),
        Just(Combine::Sequence),
        Just(Combine::FuseOutputs)
    ]);
    (prop::collection::vec(step, 1..4), combine).prop_map(|(tasks, combine)| PlanDraft { tasks, combine })
}

fn patch() -> impl Strategy<Value = ConfigPatch> {
    let optimizer = prop_oneof![
        Just(Optimizer::Sgd),
        (0.0..1.0f64).prop_map(|mu| Optimizer::SgdMomentum { mu }),
        (0.0..1.0f64, 0.0..1.0f64, 1e-10..1e-4f64).prop_map(|(beta1, beta2, eps)| Optimizer::Adam { beta1, beta2, eps }),
    ];
    let schedule = prop_oneof![
        Just(LrSchedule::Constant),
        (0.01..1.0f64, 1usize..50).prop_map(|(factor, every_rounds)| LrSchedule::StepDecay { factor, every_rounds }),
    ];
    let augmentation = prop_oneof![
        Just(Augmentation::None),
        (0.0..1.0f64).prop_map(|sigma| Augmentation::GaussianJitter { sigma })
    ];
    (
        prop::option::of(prop_oneof![Just("linear".to_string()), "mlp-[1-9][0-9]?".prop_map(String::from)]),
        prop::option::of(1e-5..1.0f64),
        prop::option::of(optimizer),
        prop::option::of(schedule),
        prop::option::of(augmentation),
    )
        .prop_map(|(model_arch, lr, optimizer, lr_schedule, augmentation)| ConfigPatch {
            model_arch,
            lr,
            optimizer,
            lr_schedule,
            augmentation,
        })
}

fn small_fl() -> FlConfig {
    FlConfig {
        n_clients: 3,
        batch_size: 16,
        local_epochs: 1,
        global_rounds: 3,
        model_arch: "mlp-4".into(),
        ..FlConfig::default()
    }
}

fn small_data(seed: u64) -> FederatedData {
    DataSpec {
        dim: 3,
        classes: 3,
        train_samples: 90,
        test_samples: 30,
        seed,
        ..DataSpec::default()
    }
    .generate()
}

proptest! {
    #[test]
    fn scenario_toml_round_trips(models in manifests()) {
        let s = scenario_with(models);
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn candidates_are_exactly_the_matching_models(models in manifests(), kind in task_kind()) {
        let s = scenario_with(models);
        let found = candidates_for(&kind, &s);
        prop_assert!(found.iter().all(|m| m.task_kind == kind));
        prop_assert_eq!(found.len(), s.models.iter().filter(|m| m.task_kind == kind).count());
        prop_assert!(found.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn parse_reply_never_panics(text in ".{0,200}", plan in any::<bool>()) {
        let kind = if plan { ReplyKind::Plan } else { ReplyKind::FlProposal };
        let _ = parse_reply(&text, kind);
    }

    #[test]
    fn plan_replies_round_trip(d in draft(), before in "[^{]{0,30}", after in "[^{]{0,30}") {
        let body = ReplyBody::Plan(d);
        let text = format!("{before}{}{after}", body.to_wire());
        prop_assert_eq!(parse_reply(&text, ReplyKind::Plan).unwrap().body, body);
    }

    #[test]
    fn patch_replies_round_trip(p in patch(), before in "[^{]{0,30}") {
        let body = ReplyBody::FlProposal(p);
        let text = format!("{before}{}", body.to_wire());
        prop_assert_eq!(parse_reply(&text, ReplyKind::FlProposal).unwrap().body, body);
    }

    #[test]
    fn best_partition_beats_every_split(model in layers(12), input in 1u64..5_000_000) {
        let s = Scenario::bundled();
        let m = manifest(model, input);
        let best = best_partition(&m, &s);
        for split in 0..=m.layers.len() {
            let l = scheme_latency(&m, Scheme::CoInference { split }, &s).unwrap();
            prop_assert!(best.latency.total <= l.total);
            if l.total == best.latency.total {
                prop_assert!(best.split <= split);
            }
        }
    }

    #[test]
    fn latency_never_rises_with_uplink_rate(model in layers(12), a in 1e3..1e7f64, b in 1e3..1e7f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut slow = Scenario::bundled();
        slow.links.client_edge_up.rate = lo;
        let mut fast = slow.clone();
        fast.links.client_edge_up.rate = hi;
        let m = manifest(model, 200_000);
        for kind in [SchemeKind::ClientOnly, SchemeKind::EdgeOnlyLossless, SchemeKind::EdgeOnlyLossy, SchemeKind::CoInference, SchemeKind::CloudOnly] {
            let (slow_l, _) = kind_latency(&m, kind, &slow).unwrap();
            let (fast_l, _) = kind_latency(&m, kind, &fast).unwrap();
            prop_assert!(fast_l.total <= slow_l.total, "{}: {} > {}", kind, fast_l.total, slow_l.total);
            let sum = slow_l.parts().iter().fold(0.0, |acc, p| acc + p);
            prop_assert_eq!(sum, slow_l.total);
            prop_assert!(slow_l.parts().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn arithmetic_coding_is_lossless(alphabet in 1usize..300, raw in prop::collection::vec(any::<u32>(), 0..2000)) {
        let symbols: Vec<u32> = raw.iter().map(|s| s % alphabet as u32).collect();
        prop_assert_eq!(decompress(&compress(&symbols, alphabet)).unwrap(), symbols);
    }

    #[test]
    fn aggregation_ignores_order_and_weight_scale(
        seeds in prop::collection::vec(0u64..1000, 1..6),
        raw_weights in prop::collection::vec(0.01..10.0f64, 6),
        scale in 1e-3..1e3f64,
        rotate in 0usize..6,
    ) {
        let models: Vec<ModelParams> = seeds.iter().map(|&s| init_model("mlp-5", 4, 3, s).unwrap()).collect();
        let weights = &raw_weights[..models.len()];
        let base = fedavg_aggregate(&models, weights).unwrap();

        let k = rotate % models.len();
        let mut m2 = models.clone();
        m2.rotate_left(k);
        let mut w2 = weights.to_vec();
        w2.rotate_left(k);
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        for other in [fedavg_aggregate(&m2, &w2).unwrap(), fedavg_aggregate(&models, &scaled).unwrap()] {
            for (a, b) in base.weights.iter().zip(&other.weights) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{} vs {}", a, b);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fl_runs_reproduce_and_clocks_advance(seed in any::<u64>(), rounds in 1usize..5, parallel in any::<bool>()) {
        let scenario = Scenario::bundled();
        let data = small_data(seed % 7);
        let mut cfg = FlConfig { global_rounds: rounds, ..small_fl() };
        if parallel {
            cfg.upload_mode = UploadMode::Parallel;
        }
        let a = run_fl(&cfg, &data, &scenario, seed).unwrap();
        let b = run_fl(&cfg, &data, &scenario, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), rounds);
        prop_assert!(a[0].wallclock_s > 0.0);
        prop_assert!(a.windows(2).all(|w| w[1].wallclock_s > w[0].wallclock_s));
        prop_assert!(a.iter().enumerate().all(|(i, p)| p.round == i + 1 && (0.0..=1.0).contains(&p.accuracy)));
    }

    #[test]
    fn trial_loop_respects_its_budget(
        max_trials in 1usize..5,
        script in prop::collection::vec(prop_oneof![
            Just("{\"patch\": {\"lr\": 0.1}}".to_string()),
            Just("{\"patch\": {\"optimizer\": \"momentum:0.5\"}}".to_string()),
            Just("NO_CHANGE".to_string()),
            Just("no idea".to_string()),
        ], 0..6),
    ) {
        let scenario = Scenario::bundled();
        let data = small_data(1);
        let advisor = ScriptedAdvisor::new(script.clone());
        let outcome = trial_loop(&advisor, &small_fl(), &data, &scenario, max_trials, 1.1, 3);
        prop_assert!(outcome.records.len() <= max_trials);
        prop_assert!(outcome.records.iter().enumerate().all(|(i, r)| r.trial_index == i + 1));
        // An exhausted script answers NO_CHANGE, which still runs once.
        let expected = match script.iter().position(|r| r == "NO_CHANGE" || r == "no idea") {
            Some(i) if script[i] == "NO_CHANGE" => i + 1,
            Some(i) => i,
            None => script.len() + 1,
        };
        prop_assert_eq!(outcome.records.len(), expected.min(max_trials));
    }
}
