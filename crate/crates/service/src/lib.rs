//! HTTP service for star-rating experiments on segmentation overlays.

pub mod api;
pub mod clock;
pub mod driver;
pub mod store;

pub use api::{router, AppState, ServiceConfig};
pub use clock::{Clock, SteppingClock, SystemClock};
pub use store::{ExperimentStore, Recorded, ResponseEnvelope, ResponseInput, StoreError};

/// Serve `state` on `addr` until the process is interrupted.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(std::sync::Arc::new(state))).await
}
