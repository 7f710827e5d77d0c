//! Authenticated HTTP front end: uploads, worker callbacks, status, per-center
//! oversight and bundle downloads, plus HTTP clients for remote workers.

pub mod api;
pub mod auth;
pub mod client;
pub mod platform;
pub mod records;

use std::future::Future;
use std::sync::Arc;

pub use api::{router, AllQueueStats, CallbackAck, LoginRequest, LoginResponse};
pub use auth::{Role, User, UserDirectory};
pub use client::{HttpNotifier, HttpQueue};
pub use platform::{LocalNotifier, Platform, PlatformError, ServiceConfig};
pub use records::{NightState, RecordState, UploadRecord};

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    platform: Arc<Platform>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(platform))
        .with_graceful_shutdown(shutdown)
        .await
}
