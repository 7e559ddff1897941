//! How queries reach a name server, and how fast.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no response after {0} attempts")]
    Timeout(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait DnsTransport {
    /// Sends one query and returns the raw response.
    fn exchange(&mut self, query: &[u8]) -> Result<Vec<u8>, TransportError>;
}

/// Plain UDP with per-attempt timeout and retries.
pub struct UdpTransport {
    socket: UdpSocket,
    server: SocketAddr,
    attempts: u32,
}

impl UdpTransport {
    pub fn connect(server: SocketAddr, timeout: Duration, attempts: u32) -> io::Result<UdpTransport> {
        let bind: SocketAddr = if server.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(bind)?;
        socket.set_read_timeout(Some(timeout))?;
        socket.connect(server)?;
        Ok(UdpTransport {
            socket,
            server,
            attempts: attempts.max(1),
        })
    }

    pub fn server(&self) -> SocketAddr {
        self.server
    }
}

impl DnsTransport for UdpTransport {
    fn exchange(&mut self, query: &[u8]) -> Result<Vec<u8>, TransportError> {
        let id = query.get(..2);
        let mut buf = vec![0u8; 4096];
        for _ in 0..self.attempts {
            self.socket.send(query)?;
            loop {
                match self.socket.recv(&mut buf) {
                    // stray answers to earlier attempts are skipped
                    Ok(n) if buf.get(..2) == id => return Ok(buf[..n].to_vec()),
                    Ok(_) => continue,
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Err(TransportError::Timeout(self.attempts))
    }
}

/// Calls a function instead of the network, e.g. a simulated world.
pub struct InProcess<F>(pub F);

impl<F: FnMut(&[u8]) -> Vec<u8>> DnsTransport for InProcess<F> {
    fn exchange(&mut self, query: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok((self.0)(query))
    }
}

/// Spaces calls at least `1 / qps` apart.
pub struct RateLimiter {
    interval: Duration,
    next: Option<Instant>,
}

pub const DEFAULT_QPS: f64 = 500.0;

impl RateLimiter {
    /// `qps` must be finite and positive.
    pub fn new(qps: f64) -> RateLimiter {
        assert!(qps.is_finite() && qps > 0.0, "rate limit must be positive, got {qps}");
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / qps),
            next: None,
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the next slot.
    pub fn acquire(&mut self) {
        let now = Instant::now();
        if let Some(next) = self.next {
            if next > now {
                thread::sleep(next - now);
            }
        }
        let base = self.next.map_or(now, |n| n.max(now));
        self.next = Some(base + self.interval);
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        RateLimiter::new(DEFAULT_QPS)
    }
}
