use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use proptest::prelude::*;
use urbanflow::annotations::{parse_annotations, substitute, WidgetValues};
use urbanflow::canonical::ContentHash;
use urbanflow::engine::{cache_key, BuiltinExecutor, Engine, RunContext, Schedule};
use urbanflow::interaction::{propagate, LinkSpec, SelectionState};
use urbanflow::layers::{deserialize_layer, serialize_layer, AttributeDef, DataLayer, Dtype, LayerKind, Value};
use urbanflow::model::{
    apply_mutation, topological_order, validate, CanvasRect, DataDependency, DataflowSpec, Edge, Mutation, NodeKind,
    NodeSpec, PortKinds,
};
use urbanflow::ops::{group_by, normalize, remove_duplicates, AggFunc, AggSpec, NormalizeMethod};
use urbanflow::provenance::ProvenanceStore;

fn cell(dtype: Dtype) -> BoxedStrategy<Value> {
    match dtype {
        Dtype::Number => prop_oneof![
            1 => Just(Value::Null),
            6 => (-1e6f64..1e6).prop_map(Value::Number),
            1 => Just(Value::Number(-0.0)),
            1 => (-50i32..50).prop_map(|i| Value::Number(i as f64)),
        ]
        .boxed(),
        Dtype::Boolean => prop_oneof![Just(Value::Null), any::<bool>().prop_map(Value::Bool)].boxed(),
        _ => prop_oneof![1 => Just(Value::Null), 5 => "[a-zé \"\\\\,\n]{0,8}".prop_map(Value::Text)].boxed(),
    }
}

fn table() -> impl Strategy<Value = DataLayer> {
    let dtypes = proptest::collection::vec(prop_oneof![Just(Dtype::Number), Just(Dtype::Text), Just(Dtype::Boolean)], 1..5);
    dtypes.prop_flat_map(|dtypes| {
        let row = dtypes.iter().map(|d| cell(*d)).collect::<Vec<_>>();
        let schema: Vec<AttributeDef> = dtypes.iter().enumerate().map(|(i, d)| AttributeDef::new(format!("c{i}"), *d)).collect();
        proptest::collection::vec(row, 0..30).prop_map(move |records| DataLayer::table(schema.clone(), records).unwrap())
    })
}

proptest! {
    #[test]
    fn envelopes_round_trip_byte_identically(layer in table()) {
        let bytes = serialize_layer(&layer);
        let back = deserialize_layer(&bytes).unwrap();
        prop_assert_eq!(&back, &layer);
        prop_assert_eq!(serialize_layer(&back), bytes);
        prop_assert_eq!(back.content_hash(), layer.content_hash());
    }

    #[test]
    fn substitution_leaves_no_sites(
        pieces in proptest::collection::vec(("[a-z {}\":0-9$\\[]{0,6}", 0usize..5), 0..6)
    ) {
        let widgets = [
            "$[slider,Height,0,200,5,20]",
            "$[checkbox,Show,true]",
            "$[dropdown,Mark,bar|line|point,2]",
            "$[date,Since,2024-02-29]",
            "$$[",
        ];
        // Stray `$[` in the filler would itself be a malformed site.
        let code: String = pieces
            .iter()
            .map(|(filler, w)| format!("{}{}", filler.replace("$[", "$ ["), widgets[*w]))
            .collect::<String>()
            .replace("$$$[", "$ $$[");
        let sites = parse_annotations(&code).unwrap();
        let out = substitute(&code, &sites, &WidgetValues::new()).unwrap();
        prop_assert!(parse_annotations(&out.replace("$[", "$ [")).unwrap().is_empty());
        // The literal text around the sites survives in order.
        let mut rest = out.as_str();
        for (filler, _) in &pieces {
            let lit = filler.replace("$[", "$ [");
            let lit = lit.trim_end_matches('$');
            let at = rest.find(lit);
            prop_assert!(at.is_some(), "{lit:?} missing from {out:?}");
            rest = &rest[at.unwrap() + lit.len()..];
        }
    }
}

fn node(id: usize) -> NodeSpec {
    NodeSpec::new(format!("n{id}"), NodeKind::Transform, "t", r#"{"op":"identity"}"#, vec![PortKinds::any()], vec![PortKinds::any()])
}

fn source(id: usize) -> NodeSpec {
    NodeSpec::new(
        format!("n{id}"),
        NodeKind::Loader,
        "load",
        format!(r#"{{"op":"load_csv","data":"v\n{id}\n"}}"#),
        vec![],
        vec![PortKinds::any()],
    )
}

#[derive(Debug, Clone)]
enum Step {
    Add(bool),
    Edge(usize, usize),
    Remove(usize),
    Move(usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => any::<bool>().prop_map(Step::Add),
        6 => (0usize..12, 0usize..12).prop_map(|(a, b)| Step::Edge(a, b)),
        1 => (0usize..12).prop_map(Step::Remove),
        1 => (0usize..12).prop_map(Step::Move),
    ]
}

/// Whether `to` is reachable from `from` over data edges.
fn reaches(spec: &DataflowSpec, from: &str, to: &str) -> bool {
    let mut seen = HashSet::new();
    let mut stack = vec![from.to_string()];
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n.clone()) {
            stack.extend(spec.data_deps.iter().filter(|d| d.source.as_str() == n).map(|d| d.target.to_string()));
        }
    }
    false
}

proptest! {
    #[test]
    fn accepted_mutations_keep_the_spec_valid(steps in proptest::collection::vec(step(), 1..40)) {
        let mut spec = DataflowSpec::empty("w", "w");
        let mut log = Vec::new();
        let mut next_id = 0;
        for s in steps {
            let ids: Vec<String> = spec.nodes.iter().map(|n| n.id.to_string()).collect();
            let m = match s {
                Step::Add(loader) => {
                    next_id += 1;
                    Mutation::AddNode { node: if loader { source(next_id) } else { node(next_id) }, rect: None }
                }
                Step::Edge(a, b) if !ids.is_empty() => {
                    let (a, b) = (&ids[a % ids.len()], &ids[b % ids.len()]);
                    Mutation::AddEdge { edge: Edge::Data(DataDependency::new(a.as_str(), b.as_str())) }
                }
                Step::Remove(a) if !ids.is_empty() => Mutation::RemoveNode { id: ids[a % ids.len()].as_str().into() },
                Step::Move(a) if !ids.is_empty() => {
                    Mutation::MoveNode { id: ids[a % ids.len()].as_str().into(), rect: CanvasRect { x: a as f64, ..Default::default() } }
                }
                _ => continue,
            };
            let cyclic = match &m {
                Mutation::AddEdge { edge: Edge::Data(d) } => reaches(&spec, d.target.as_str(), d.source.as_str()),
                _ => false,
            };
            match apply_mutation(&spec, &m) {
                Ok(next) => {
                    prop_assert!(!cyclic, "cycle accepted: {m:?}");
                    let report = validate(&next);
                    prop_assert!(report.ok, "{:?}", report.violations);
                    let order = topological_order(&next).unwrap();
                    let pos: BTreeMap<_, _> = order.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
                    for d in &next.data_deps {
                        prop_assert!(pos[&d.source] < pos[&d.target]);
                    }
                    spec = next;
                    log.push(m);
                }
                Err(_) => {}
            }
        }
        let replayed = log.iter().fold(DataflowSpec::empty("w", "w"), |s, m| apply_mutation(&s, m).unwrap());
        prop_assert_eq!(replayed.to_canonical_bytes(), spec.to_canonical_bytes());
    }

    #[test]
    fn cache_key_ignores_layout_and_comments(x in -1e3f64..1e3, pinned in any::<bool>()) {
        let a = node(1);
        let mut b = a.clone();
        b.pinned = pinned;
        b.comments.push(urbanflow::model::Comment { id: "c".into(), user: "u".into(), timestamp: chrono::Utc::now(), text: format!("{x}") });
        let h = [ContentHash::of(b"layer")];
        prop_assert_eq!(cache_key(&a, &h, &a.widget_values).unwrap(), cache_key(&b, &h, &b.widget_values).unwrap());
        let mut c = a.clone();
        c.canonical_code.push(' ');
        prop_assert_ne!(cache_key(&a, &h, &a.widget_values).unwrap(), cache_key(&c, &h, &c.widget_values).unwrap());
    }
}

fn keyed(keys: &[u8], name: &str) -> DataLayer {
    DataLayer::table(
        vec![AttributeDef::new(name, Dtype::Text)],
        keys.iter().map(|k| vec![Value::Text(format!("k{k}"))]).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn propagation_is_a_fixed_point(
        a_keys in proptest::collection::vec(0u8..6, 1..20),
        b_keys in proptest::collection::vec(0u8..6, 1..20),
        picks in proptest::collection::btree_set(0usize..20, 0..6),
    ) {
        let a = keyed(&a_keys, "k");
        let b = keyed(&b_keys, "k");
        let layers: BTreeMap<_, _> = [("A".into(), &a), ("B".into(), &b)].into_iter().collect();
        let links = vec![LinkSpec { from: "A".into(), to: "B".into(), local_key_attr: "k".into(), remote_key_attr: "k".into() }];
        let mut states = BTreeMap::new();
        let mut origin = SelectionState::new("A");
        origin.selected = picks.into_iter().filter(|&i| i < a_keys.len()).collect();
        states.insert("A".into(), origin.clone());
        propagate(&"A".into(), &mut states, &links, &layers).unwrap();
        // Oracle: B rows whose key appears among the picked A rows.
        let picked: HashSet<u8> = origin.selected.iter().map(|&i| a_keys[i]).collect();
        let expect: BTreeSet<usize> = b_keys.iter().enumerate().filter(|(_, k)| picked.contains(k)).map(|(i, _)| i).collect();
        prop_assert_eq!(&states[&"B".into()].selected, &expect);
        let settled = states.clone();
        let changed = propagate(&"A".into(), &mut states, &links, &layers).unwrap();
        prop_assert!(changed.is_empty());
        prop_assert_eq!(states, settled);
    }

    #[test]
    fn wrangling_invariants(layer in table()) {
        let deduped = remove_duplicates(&layer, &[]).unwrap();
        prop_assert!(deduped.len() <= layer.len());
        let mut seen = HashSet::new();
        for r in deduped.records() {
            let fresh = seen.insert(format!("{:?}", r));
            prop_assert!(fresh);
        }
        prop_assert_eq!(remove_duplicates(&deduped, &[]).unwrap(), deduped);

        if let Some(col) = layer.schema().iter().position(|a| a.dtype == Dtype::Number) {
            let name = layer.schema()[col].name.clone();
            if let Ok(scaled) = normalize(&layer, &name, NormalizeMethod::Minmax) {
                for v in scaled.column(col).filter_map(Value::as_f64) {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            if let Some(key) = layer.schema().iter().find(|a| a.dtype == Dtype::Text) {
                let total: f64 = layer.column(col).filter_map(Value::as_f64).sum();
                let grouped = group_by(&layer, &[key.name.clone()], &[AggSpec::new(name.clone(), AggFunc::Sum)]).unwrap();
                let got: f64 = grouped.column(1).filter_map(Value::as_f64).sum();
                prop_assert!((got - total).abs() <= 1e-6 * total.abs().max(1.0));
            }
        }
    }
}

fn random_dag(seed: u64, n: usize) -> DataflowSpec {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut spec = DataflowSpec::empty("d", "d");
    for i in 0..n {
        let parent = (i > 0 && rng.gen_bool(0.7)).then(|| rng.gen_range(0..i));
        let node = match parent {
            None => source(i),
            Some(_) => NodeSpec::new(
                format!("n{i}"),
                NodeKind::Transform,
                "scale",
                format!(r#"{{"op":"scale","column":"v","factor":{}}}"#, rng.gen_range(1..5)),
                vec![PortKinds::any()],
                vec![PortKinds::any()],
            ),
        };
        spec = apply_mutation(&spec, &Mutation::AddNode { node, rect: None }).unwrap();
        if let Some(p) = parent {
            let edge = Edge::Data(DataDependency::new(format!("n{p}"), format!("n{i}")));
            spec = apply_mutation(&spec, &Mutation::AddEdge { edge }).unwrap();
        }
    }
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedules_agree(seed in any::<u64>(), n in 1usize..12) {
        let spec = random_dag(seed, n);
        let sel = BTreeMap::new();
        let run = |schedule| {
            let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("d")), Arc::new(BuiltinExecutor::default())).with_schedule(schedule);
            engine
                .run_dataflow(&spec, &RunContext::new("u", &sel))
                .unwrap()
                .into_iter()
                .map(|r| (r.node_id, r.outputs))
                .collect::<BTreeMap<_, _>>()
        };
        prop_assert_eq!(run(Schedule::Parallel), run(Schedule::Serial));
    }
}

#[test]
fn kinds_are_checked_on_edges() {
    let mut spec = DataflowSpec::empty("k", "k");
    let img = NodeSpec::new("img", NodeKind::Loader, "l", "", vec![], vec![PortKinds::of(&[LayerKind::Image])]);
    let grid_only = NodeSpec::new("g", NodeKind::Transform, "t", "", vec![PortKinds::of(&[LayerKind::Grid])], vec![PortKinds::any()]);
    for n in [img, grid_only] {
        spec = apply_mutation(&spec, &Mutation::AddNode { node: n, rect: None }).unwrap();
    }
    let r = apply_mutation(&spec, &Mutation::AddEdge { edge: Edge::Data(DataDependency::new("img", "g")) });
    assert!(r.is_err());
}
