//! Two users sharing a workspace over HTTP: build a small flow, comment,
//! run it and read a view, while the second user long-polls for events.
//! Starts the server in-process on a free port.

use std::future::IntoFuture;
use std::sync::Arc;

use reqwest::Client;
use serde_json::{json, Value};
use urbanflow_server::{router, Service};

struct User {
    http: Client,
    base: String,
    token: String,
}

impl User {
    async fn join(base: &str, id: &str) -> reqwest::Result<User> {
        let http = Client::new();
        let secret = format!("{id}-password");
        http.post(format!("{base}/users")).json(&json!({"id": id, "display_name": id, "secret": secret})).send().await?;
        let session: Value =
            http.post(format!("{base}/sessions")).json(&json!({"user_id": id, "secret": secret})).send().await?.json().await?;
        Ok(User { http, base: base.into(), token: session["token"].as_str().unwrap_or_default().into() })
    }

    async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> reqwest::Result<Value> {
        let mut req = self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let r = req.send().await?;
        Ok(r.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> reqwest::Result<Value> {
        self.call(reqwest::Method::GET, path, None).await
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Result<Value> {
        self.call(reqwest::Method::POST, path, Some(body)).await
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(axum::serve(listener, router(Arc::new(Service::in_memory()))).into_future());

    let ana = User::join(&base, "ana").await?;
    let ben = User::join(&base, "ben").await?;
    let ws = ana.post("/workspaces", json!({"name": "complaints"})).await?["id"].as_str().unwrap_or_default().to_string();
    ana.post(&format!("/workspaces/{ws}/members"), json!({"user_id": "ben"})).await?;

    let watcher = {
        let (http, base, token, ws) = (ben.http.clone(), ben.base.clone(), ben.token.clone(), ws.clone());
        tokio::spawn(async move {
            let mut after = 0;
            while after < 7 {
                let url = format!("{base}/workspaces/{ws}/events?after={after}&timeout=2000");
                let events: Vec<Value> = http.get(url).bearer_auth(&token).send().await?.json().await?;
                for e in &events {
                    println!("  [ben sees] #{} {} by {}", e["seq"], e["kind"], e["actor"]);
                    after = e["seq"].as_u64().unwrap_or(after);
                }
            }
            Ok::<_, reqwest::Error>(())
        })
    };

    let data = "hood,complaints\nN01,14\nN02,3\nN03,9\n";
    ana.post(&format!("/workspaces/{ws}/nodes"), json!({"template_id": "load.csv", "node_id": "counts"})).await?;
    ana.post(&format!("/workspaces/{ws}/nodes"), json!({"template_id": "view.chart", "node_id": "chart"})).await?;
    let code = json!({"op": "load_csv", "data": data}).to_string();
    ana.post(&format!("/workspaces/{ws}/mutations"), json!({"op": "update_code", "id": "counts", "code": code})).await?;
    let chart = json!({"view": "chart", "mark": "bar", "x": "hood", "y": "complaints"}).to_string();
    ben.post(&format!("/workspaces/{ws}/mutations"), json!({"op": "update_code", "id": "chart", "code": chart})).await?;
    let edge = json!({"type": "data", "source": "counts", "target": "chart", "layer_slots": [{"output": 0, "input": 0}]});
    ben.post(&format!("/workspaces/{ws}/mutations"), json!({"op": "add_edge", "edge": edge})).await?;
    ben.post(&format!("/workspaces/{ws}/nodes/counts/comments"), json!({"text": "N02 looks low"})).await?;

    let results = ana.post(&format!("/workspaces/{ws}/run"), json!({})).await?;
    println!("run: {}", results.as_array().map_or(0, Vec::len));
    let view = ana.get(&format!("/workspaces/{ws}/nodes/chart/output?format=view")).await?;
    for m in view["content"]["marks"].as_array().into_iter().flatten() {
        println!("  bar {} = {}", m["x"], m["y"]);
    }
    watcher.await??;

    let txs = ana.get(&format!("/workspaces/{ws}/provenance/transactions")).await?;
    for t in txs.as_array().into_iter().flatten() {
        println!("tx {} {} {}", t["seq"], t["user"], t["summary"]);
    }
    Ok(())
}
