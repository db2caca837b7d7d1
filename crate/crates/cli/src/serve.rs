use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use pyramid_core::{AnsweredQuery, KnowledgePyramid, Pipeline};
use serde::Deserialize;
use serde_json::json;

#[derive(Deserialize)]
struct AnswerRequest {
    question: String,
}

struct Shared {
    pipeline: Pipeline,
    pyramid: KnowledgePyramid,
}

type Reply = Result<Json<AnsweredQuery>, (StatusCode, Json<serde_json::Value>)>;

async fn answer(State(shared): State<Arc<Shared>>, Json(req): Json<AnswerRequest>) -> Reply {
    if req.question.trim().is_empty() {
        return Err((
            StatusCode::BAD_REQUEST,
            Json(json!({"error": "usage", "message": "question is empty"})),
        ));
    }
    // Backends block, so keep them off the async workers.
    let outcome = tokio::task::spawn_blocking(move || {
        shared.pipeline.answer(&shared.pyramid, &req.question)
    })
    .await;
    match outcome {
        Ok(Ok(answered)) => Ok(Json(answered)),
        Ok(Err(e)) => {
            let class = e.class();
            let status = match class {
                pyramid_core::ErrorClass::Usage => StatusCode::BAD_REQUEST,
                pyramid_core::ErrorClass::Backend => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            Err((status, Json(json!({"error": class.as_str(), "message": e.to_string()}))))
        }
        Err(e) => Err((
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "internal", "message": e.to_string()})),
        )),
    }
}

pub fn router(pipeline: Pipeline, pyramid: KnowledgePyramid) -> Router {
    Router::new()
        .route("/answer", post(answer))
        .with_state(Arc::new(Shared { pipeline, pyramid }))
}

pub fn run(pipeline: Pipeline, pyramid: KnowledgePyramid, addr: &str) -> Result<(), String> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| format!("cannot bind {addr}: {e}"))?;
        let local = listener.local_addr().map_err(|e| e.to_string())?;
        eprintln!("listening on http://{local}");
        axum::serve(listener, router(pipeline, pyramid))
            .await
            .map_err(|e| e.to_string())
    })
}
