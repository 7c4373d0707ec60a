use urbanflow::model::Mutation;
use urbanflow_server::{Config, Service};

#[test]
fn workspaces_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = Config { db_path: Some(dir.path().join("state.redb")), data_dir: Some(dir.path().to_path_buf()), ..Config::default() };
    let (ws, spec, events) = {
        let svc = Service::open(config.clone()).unwrap();
        svc.register_user("ana", "Ana", "ana-secret-pw").unwrap();
        let ws = svc.create_workspace("ana", "kept").unwrap();
        svc.add_node("ana", &ws, "load.csv", "l", None).unwrap();
        svc.post_mutation("ana", &ws, Mutation::UpdateCode { id: "l".into(), code: r#"{"op":"load_csv","data":"a\n1\n"}"#.into() })
            .unwrap();
        svc.run_dataflow("ana", &ws, false).unwrap();
        let view = svc.get_workspace("ana", &ws, false).unwrap();
        (ws, view.spec, view.last_event)
    };
    let svc = Service::open(config).unwrap();
    let token = svc.create_session("ana", "ana-secret-pw").unwrap();
    assert_eq!(svc.authenticate(&token).unwrap(), "ana");
    let view = svc.get_workspace("ana", &ws, false).unwrap();
    assert_eq!((view.spec, view.last_event), (spec, events));
    assert_eq!(svc.transactions("ana", &ws).unwrap().len(), 3);
    assert_eq!(svc.version_tree("ana", &ws, &"l".into()).unwrap().size(), 2);
    // The persisted cache index answers the rerun.
    svc.run_dataflow("ana", &ws, false).unwrap();
    assert_eq!(svc.invocations("ana", &ws).unwrap(), 0);
}
