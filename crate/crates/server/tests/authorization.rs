use std::collections::BTreeSet;

use proptest::prelude::*;
use urbanflow::interaction::SelectionMode;
use urbanflow::model::{CanvasRect, DataDependency, Edge, Mutation, NodeId, NodeSpec};
use urbanflow_server::{Service, ServiceError};

#[derive(Debug, Clone)]
enum Attempt {
    Read,
    Visualization,
    Mutate(u8),
    Comment(String),
    Run,
    RunNode,
    Select(usize),
    Rollback,
    Tree,
    Export,
    Invite,
    Output,
}

fn attempt() -> impl Strategy<Value = Attempt> {
    prop_oneof![
        Just(Attempt::Read),
        Just(Attempt::Visualization),
        (0u8..4).prop_map(Attempt::Mutate),
        "[a-z ]{1,12}".prop_map(Attempt::Comment),
        Just(Attempt::Run),
        Just(Attempt::RunNode),
        (0usize..3).prop_map(Attempt::Select),
        Just(Attempt::Rollback),
        Just(Attempt::Tree),
        Just(Attempt::Export),
        Just(Attempt::Invite),
        Just(Attempt::Output),
    ]
}

fn mutation(k: u8) -> Mutation {
    match k {
        0 => Mutation::RemoveNode { id: "t".into() },
        1 => Mutation::MoveNode { id: "t".into(), rect: CanvasRect { x: 9.0, ..Default::default() } },
        2 => Mutation::AddEdge { edge: Edge::Data(DataDependency::new("t", "i")) },
        _ => Mutation::AddNode { node: NodeSpec::interaction("intruder", 1), rect: None },
    }
}

fn outcome(svc: &Service, ws: &str, a: &Attempt) -> Result<(), ServiceError> {
    let eve = "eve";
    let t = NodeId::from("t");
    match a {
        Attempt::Read => svc.get_workspace(eve, ws, false).map(drop),
        Attempt::Visualization => svc.get_workspace(eve, ws, true).map(drop),
        Attempt::Mutate(k) => svc.post_mutation(eve, ws, mutation(*k)).map(drop),
        Attempt::Comment(text) => svc.post_comment(eve, ws, &t, text).map(drop),
        Attempt::Run => svc.run_dataflow(eve, ws, false).map(drop),
        Attempt::RunNode => svc.run_node(eve, ws, &t, true).map(drop),
        Attempt::Select(i) => svc.select(eve, ws, &"i".into(), &BTreeSet::from([*i]), SelectionMode::Replace).map(drop),
        Attempt::Rollback => {
            let root = svc.version_tree("ana", ws, &t).unwrap().version.id;
            svc.rollback(eve, ws, &t, &root).map(drop)
        }
        Attempt::Tree => svc.version_tree(eve, ws, &t).map(drop),
        Attempt::Export => svc.prov_export(eve, ws, None).map(drop),
        Attempt::Invite => svc.add_member(eve, ws, eve).map(drop),
        Attempt::Output => svc.output(eve, ws, &t, 0, true).map(drop),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn non_members_change_and_see_nothing(attempts in proptest::collection::vec(attempt(), 1..12)) {
        let svc = Service::in_memory();
        svc.register_user("ana", "Ana", "ana-secret-pw").unwrap();
        svc.register_user("eve", "Eve", "eve-secret-pw").unwrap();
        let ws = svc.create_workspace("ana", "private").unwrap();
        svc.post_mutation("ana", &ws, Mutation::AddNode {
            node: urbanflow::ops::TemplateRegistry::with_builtins().require("load.csv").unwrap().instantiate("t"),
            rect: None,
        }).unwrap();
        let before = (svc.get_workspace("ana", &ws, false).unwrap(), svc.transactions("ana", &ws).unwrap(), svc.executions("ana", &ws).unwrap());
        for a in &attempts {
            prop_assert_eq!(outcome(&svc, &ws, a), Err(ServiceError::Forbidden));
        }
        let after = (svc.get_workspace("ana", &ws, false).unwrap(), svc.transactions("ana", &ws).unwrap(), svc.executions("ana", &ws).unwrap());
        prop_assert_eq!(before, after);
        prop_assert!(svc.list_workspaces("eve").is_empty());
    }
}
