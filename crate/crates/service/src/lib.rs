//! Session-oriented HTTP service for interactive registration and overlay
//! playback. See `docs/api.md` for the wire format.

pub mod api;
pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::router;
pub use error::ServiceError;
pub use otoar_vision::Point2;
pub use session::Session;

/// Serves the API on `listener` until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, data_root: PathBuf) -> std::io::Result<()> {
    axum::serve(listener, router(data_root)).await
}

/// Binds `addr` and serves from a dedicated runtime on a background thread.
/// Returns the bound address.
pub fn spawn_background(addr: SocketAddr, data_root: PathBuf) -> std::io::Result<SocketAddr> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    std::thread::spawn(move || rt.block_on(serve(listener, data_root)));
    Ok(bound)
}
