use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use stackd_core::config::ServiceConfig;
use stackd_core::stack::Stack;
use thiserror::Error;
use tokio::net::TcpListener;

use crate::handler::{Api, ApiRequest, ACTOR_HEADER};

const MAX_BODY: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid configuration: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),

    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] stackd_core::Error),

    #[error("server failure: {0}")]
    Io(#[from] std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::ConfigInvalid(_) => "config-invalid",
            ServeError::BindFailure { .. } => "bind-failure",
            ServeError::Core(e) => e.code(),
            ServeError::Io(_) => "storage-io",
        }
    }
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    api: Api,
}

impl Server {
    /// Validate the configuration, open the data directory and bind.
    pub async fn bind(config: ServiceConfig) -> Result<Self, ServeError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ServeError::ConfigInvalid(problems));
        }
        let addr = config.listen_address.clone();
        let stack = Stack::open(config)?;
        Self::bind_stack(Arc::new(stack), &addr).await
    }

    pub async fn bind_stack(stack: Arc<Stack>, addr: &str) -> Result<Self, ServeError> {
        let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self {
            listener,
            api: Api::new(stack),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn router(api: Api) -> Router {
        Router::new()
            .fallback(dispatch)
            .layer(DefaultBodyLimit::max(MAX_BODY))
            .with_state(api)
    }

    /// Serve until `shutdown` resolves, then finish in-flight requests.
    pub async fn run<F>(self, shutdown: F) -> Result<(), ServeError>
    where
        F: Future<Output = ()> + Send + 'static,
    {
        if let Ok(addr) = self.listener.local_addr() {
            tracing::info!(%addr, "stackd listening");
        }
        axum::serve(self.listener, Self::router(self.api))
            .with_graceful_shutdown(shutdown)
            .await?;
        tracing::info!("stackd stopped");
        Ok(())
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Bind and serve until a shutdown signal arrives.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    Server::bind(config).await?.run(shutdown_signal()).await
}

async fn dispatch(State(api): State<Api>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b.to_vec(),
        Err(e) => return (StatusCode::PAYLOAD_TOO_LARGE, e.to_string()).into_response(),
    };
    let request = ApiRequest {
        method: parts.method.as_str().to_string(),
        path: parts.uri.path().to_string(),
        query: parts.uri.query().map(str::to_string),
        actor: parts
            .headers
            .get(ACTOR_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
        body,
    };
    // store operations block on the file system
    let response = match tokio::task::spawn_blocking(move || api.handle(&request)).await {
        Ok(r) => r,
        Err(e) => {
            tracing::error!(error = %e, "request handler panicked");
            return (StatusCode::INTERNAL_SERVER_ERROR, "internal error").into_response();
        }
    };
    Response::builder()
        .status(response.status)
        .header(header::CONTENT_TYPE, response.content_type)
        .body(Body::from(response.body))
        .unwrap_or_else(|_| StatusCode::INTERNAL_SERVER_ERROR.into_response())
}
