#![allow(dead_code)]

use std::sync::Arc;

use reqwest::{Client, Method, StatusCode};
use serde_json::{json, Value};
use urbanflow_server::{router, Service};

pub struct Server {
    pub base: String,
    pub svc: Arc<Service>,
}

pub async fn spawn(svc: Service) -> Server {
    let svc = Arc::new(svc);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(svc.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { base: format!("http://{addr}"), svc }
}

/// A logged-in HTTP client.
pub struct Session {
    pub http: Client,
    pub base: String,
    pub token: String,
    pub user: String,
}

impl Server {
    pub async fn login(&self, user: &str) -> Session {
        let http = Client::new();
        let secret = format!("{user}-secret-pw");
        let r = http
            .post(format!("{}/users", self.base))
            .json(&json!({"id": user, "display_name": user, "secret": secret}))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), StatusCode::CREATED);
        let r = http
            .post(format!("{}/sessions", self.base))
            .json(&json!({"user_id": user, "secret": secret}))
            .send()
            .await
            .unwrap();
        let token = r.json::<Value>().await.unwrap()["token"].as_str().unwrap().to_string();
        Session { http, base: self.base.clone(), token, user: user.into() }
    }
}

impl Session {
    pub fn clone_ref(&self) -> Session {
        Session { http: self.http.clone(), base: self.base.clone(), token: self.token.clone(), user: self.user.clone() }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let r = req.send().await.unwrap();
        let status = r.status();
        let bytes = r.bytes().await.unwrap();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(body)).await
    }
}
