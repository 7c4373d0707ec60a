//! REST routes over [`Service`].

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use urbanflow::canonical::ContentHash;
use urbanflow::interaction::SelectionMode;
use urbanflow::model::{CanvasRect, Mutation, NodeId, NodeKind};

use crate::service::{Output, Service, ServiceError};

type Shared = Arc<Service>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut body = json!({"error": self.code(), "detail": self.to_string()});
        if let ServiceError::Run(e) = &self {
            body["run_error"] = serde_json::to_value(e).unwrap_or_default();
        }
        (status, Json(body)).into_response()
    }
}

type Reply = Result<Response, ServiceError>;

fn ok<T: serde::Serialize>(value: T) -> Reply {
    Ok(Json(value).into_response())
}

fn created<T: serde::Serialize>(value: T) -> Reply {
    Ok((StatusCode::CREATED, Json(value)).into_response())
}

fn user_of(svc: &Service, headers: &HeaderMap) -> Result<String, ServiceError> {
    let value = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).ok_or(ServiceError::Unauthenticated)?;
    let token = value.strip_prefix("Bearer ").ok_or(ServiceError::Unauthenticated)?;
    svc.authenticate(token.trim())
}

fn body<T: for<'de> Deserialize<'de>>(bytes: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(bytes).map_err(|e| ServiceError::Invalid(format!("bad request body: {e}")))
}

/// Run blocking service work off the async runtime.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/users", post(register))
        .route("/sessions", post(session))
        .route("/workspaces", post(create_workspace).get(list_workspaces))
        .route("/workspaces/{id}", get(get_workspace))
        .route("/workspaces/{id}/members", post(add_member))
        .route("/workspaces/{id}/events", get(events))
        .route("/workspaces/{id}/mutations", post(mutate))
        .route("/workspaces/{id}/nodes", post(add_node))
        .route("/workspaces/{id}/run", post(run_all))
        .route("/workspaces/{id}/nodes/{nid}/run", post(run_one))
        .route("/workspaces/{id}/nodes/{nid}/output", get(output))
        .route("/workspaces/{id}/nodes/{nid}/provenance/tree", get(tree))
        .route("/workspaces/{id}/nodes/{nid}/provenance/rollback", post(rollback))
        .route("/workspaces/{id}/nodes/{nid}/comments", get(comments).post(comment))
        .route("/workspaces/{id}/interactions/{inid}/selection", post(select))
        .route("/workspaces/{id}/selections", get(selections))
        .route("/workspaces/{id}/provenance/transactions", get(transactions))
        .route("/workspaces/{id}/provenance/executions", get(executions))
        .route("/workspaces/{id}/prov/export", get(prov_export))
        .route("/templates", get(list_templates).post(import_template))
        .route("/templates/{tid}", get(get_template))
        .with_state(svc)
}

#[derive(Deserialize)]
struct NewUser {
    id: String,
    #[serde(default)]
    display_name: String,
    secret: String,
}

async fn register(State(svc): State<Shared>, raw: Bytes) -> Reply {
    let req: NewUser = body(&raw)?;
    created(svc.register_user(&req.id, &req.display_name, &req.secret)?)
}

#[derive(Deserialize)]
struct Login {
    user_id: String,
    secret: String,
}

async fn session(State(svc): State<Shared>, raw: Bytes) -> Reply {
    let req: Login = body(&raw)?;
    let token = svc.create_session(&req.user_id, &req.secret)?;
    created(json!({"token": token, "user_id": req.user_id}))
}

#[derive(Deserialize)]
struct NewWorkspace {
    name: String,
}

async fn create_workspace(State(svc): State<Shared>, headers: HeaderMap, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: NewWorkspace = body(&raw)?;
    created(json!({"id": svc.create_workspace(&user, &req.name)?}))
}

async fn list_workspaces(State(svc): State<Shared>, headers: HeaderMap) -> Reply {
    let user = user_of(&svc, &headers)?;
    let list: Vec<_> = svc.list_workspaces(&user).into_iter().map(|(id, name)| json!({"id": id, "name": name})).collect();
    ok(list)
}

#[derive(Deserialize)]
struct WorkspaceQuery {
    mode: Option<String>,
}

async fn get_workspace(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, Query(q): Query<WorkspaceQuery>) -> Reply {
    let user = user_of(&svc, &headers)?;
    let visualization = match q.mode.as_deref() {
        None | Some("edit") => false,
        Some("visualization") => true,
        Some(other) => return Err(ServiceError::Invalid(format!("unknown mode {other}"))),
    };
    ok(svc.get_workspace(&user, &id, visualization)?)
}

#[derive(Deserialize)]
struct NewMember {
    user_id: String,
}

async fn add_member(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: NewMember = body(&raw)?;
    ok(json!({"members": svc.add_member(&user, &id, &req.user_id)?}))
}

#[derive(Deserialize)]
struct PollQuery {
    #[serde(default)]
    after: u64,
    #[serde(default)]
    timeout: u64,
}

async fn events(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, Query(q): Query<PollQuery>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.poll_events(&user, &id, q.after, Duration::from_millis(q.timeout)).await?)
}

async fn mutate(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let m: Mutation = body(&raw)?;
    ok(svc.post_mutation(&user, &id, m)?)
}

#[derive(Deserialize)]
struct NewNode {
    template_id: String,
    node_id: String,
    #[serde(default)]
    rect: Option<CanvasRect>,
}

async fn add_node(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: NewNode = body(&raw)?;
    ok(svc.add_node(&user, &id, &req.template_id, &req.node_id, req.rect)?)
}

#[derive(Deserialize, Default)]
struct RunRequest {
    #[serde(default)]
    bypass_cache: bool,
}

fn run_request(raw: &Bytes) -> Result<RunRequest, ServiceError> {
    if raw.iter().all(u8::is_ascii_whitespace) {
        Ok(RunRequest::default())
    } else {
        body(raw)
    }
}

async fn run_all(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req = run_request(&raw)?;
    ok(blocking(move || svc.run_dataflow(&user, &id, req.bypass_cache)).await?)
}

async fn run_one(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req = run_request(&raw)?;
    ok(blocking(move || svc.run_node(&user, &id, &NodeId::from(nid), req.bypass_cache)).await?)
}

#[derive(Deserialize)]
struct OutputQuery {
    format: Option<String>,
    #[serde(default)]
    port: usize,
}

async fn output(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>, Query(q): Query<OutputQuery>) -> Reply {
    let user = user_of(&svc, &headers)?;
    let view = match q.format.as_deref() {
        None | Some("envelope") => false,
        Some("view") => true,
        Some(other) => return Err(ServiceError::Invalid(format!("unknown format {other}"))),
    };
    match blocking(move || svc.output(&user, &id, &NodeId::from(nid), q.port, view)).await? {
        Output::Envelope(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Output::View(desc) => Ok(([(header::CONTENT_TYPE, "application/json")], desc.to_bytes()).into_response()),
    }
}

async fn tree(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.version_tree(&user, &id, &NodeId::from(nid))?)
}

#[derive(Deserialize)]
struct RollbackRequest {
    version: ContentHash,
}

async fn rollback(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: RollbackRequest = body(&raw)?;
    ok(svc.rollback(&user, &id, &NodeId::from(nid), &req.version)?)
}

async fn comments(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.comments(&user, &id, &NodeId::from(nid))?)
}

#[derive(Deserialize)]
struct NewComment {
    text: String,
}

async fn comment(State(svc): State<Shared>, headers: HeaderMap, Path((id, nid)): Path<(String, String)>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: NewComment = body(&raw)?;
    created(json!({"id": svc.post_comment(&user, &id, &NodeId::from(nid), &req.text)?}))
}

#[derive(Deserialize)]
struct SelectionRequest {
    #[serde(default)]
    ids: BTreeSet<usize>,
    mode: SelectionMode,
}

async fn select(State(svc): State<Shared>, headers: HeaderMap, Path((id, inid)): Path<(String, String)>, raw: Bytes) -> Reply {
    let user = user_of(&svc, &headers)?;
    let req: SelectionRequest = body(&raw)?;
    ok(blocking(move || svc.select(&user, &id, &NodeId::from(inid), &req.ids, req.mode)).await?)
}

async fn selections(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.selections(&user, &id)?)
}

async fn transactions(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.transactions(&user, &id)?)
}

async fn executions(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Reply {
    let user = user_of(&svc, &headers)?;
    ok(svc.executions(&user, &id)?)
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<u64>,
    to: Option<u64>,
}

async fn prov_export(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>, Query(q): Query<RangeQuery>) -> Reply {
    let user = user_of(&svc, &headers)?;
    let range = match (q.from, q.to) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(0), b.unwrap_or(u64::MAX))),
    };
    ok(blocking(move || svc.prov_export(&user, &id, range)).await?)
}

#[derive(Deserialize)]
struct TemplateQuery {
    kind: Option<NodeKind>,
}

async fn list_templates(State(svc): State<Shared>, headers: HeaderMap, Query(q): Query<TemplateQuery>) -> Reply {
    user_of(&svc, &headers)?;
    ok(svc.templates(q.kind))
}

async fn get_template(State(svc): State<Shared>, headers: HeaderMap, Path(tid): Path<String>) -> Reply {
    user_of(&svc, &headers)?;
    ok(svc.template(&tid)?)
}

async fn import_template(State(svc): State<Shared>, headers: HeaderMap, raw: Bytes) -> Reply {
    user_of(&svc, &headers)?;
    created(json!({"template_id": svc.import_template(&raw)?}))
}
