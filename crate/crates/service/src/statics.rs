use std::path::{Component, Path, PathBuf};

use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};

use crate::{ApiError, Shared};

/// Served at `/` when no UI bundle directory is configured.
const PLACEHOLDER: &str = r#"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>iterbank</title></head>
<body>
<h1>iterbank</h1>
<p>No UI bundle is configured. Start the server with <code>--ui &lt;dir&gt;</code>
to serve the correction editor, or use the JSON API directly:</p>
<ul>
<li><a href="/api/project">/api/project</a></li>
<li><a href="/api/trend">/api/trend</a></li>
<li><a href="/api/labels">/api/labels</a></li>
</ul>
</body>
</html>
"#;

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto the bundle directory, refusing anything that
/// could leave it.
fn resolve(root: &Path, uri_path: &str) -> Option<PathBuf> {
    let rel = Path::new(uri_path.trim_start_matches('/'));
    let mut out = root.to_path_buf();
    for c in rel.components() {
        match c {
            Component::Normal(part) => out.push(part),
            _ => return None,
        }
    }
    Some(out)
}

pub(crate) async fn serve_static(State(s): State<Shared>, method: Method, uri: Uri) -> Response {
    let path = uri.path();
    if path.starts_with("/api/") || path == "/api" {
        return ApiError::not_found(format!("no endpoint {method} {path}")).into_response();
    }
    if method != Method::GET && method != Method::HEAD {
        return ApiError::new(
            StatusCode::METHOD_NOT_ALLOWED,
            "method_not_allowed",
            "static files are read-only",
        )
        .into_response();
    }
    let Some(root) = &s.ui_dir else {
        return if path == "/" || path == "/index.html" {
            Html(PLACEHOLDER).into_response()
        } else {
            ApiError::not_found(format!("no file {path}")).into_response()
        };
    };
    let Some(mut file) = resolve(root, path) else {
        return ApiError::bad_request("invalid path").into_response();
    };
    if file.is_dir() {
        file.push("index.html");
    }
    if !file.is_file() && Path::new(path).extension().is_none() {
        // client-side routes fall back to the app shell
        file = root.join("index.html");
    }
    match tokio::fs::read(&file).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&file))], bytes).into_response(),
        Err(_) => ApiError::not_found(format!("no file {path}")).into_response(),
    }
}
