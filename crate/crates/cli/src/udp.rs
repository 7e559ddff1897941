//! The authoritative DNS listener.

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::UdpSocket;

use crate::service::Service;

/// Answers queries until the socket fails. IPv6 sources are ignored.
pub async fn serve(socket: UdpSocket, service: Arc<Service>) -> std::io::Result<()> {
    let mut buf = vec![0u8; 4096];
    loop {
        let (n, from) = socket.recv_from(&mut buf).await?;
        let SocketAddr::V4(src) = from else { continue };
        let reply = service.edge.handle_query(&buf[..n], src, service.now());
        if !reply.is_empty() {
            if let Err(e) = socket.send_to(&reply, from).await {
                log::debug!("reply to {from}: {e}");
            }
        }
    }
}
