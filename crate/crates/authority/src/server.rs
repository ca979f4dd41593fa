//! Threaded TCP front end: one thread and one [`Session`] per connection.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::frame::{read_payload, write_frame};
use crate::node::AuthorityNode;

pub const BASE_PORT: u16 = 5055;

/// Default port of the authority at position `index` of the universe.
pub fn default_port(index: usize) -> u16 {
    BASE_PORT + index as u16
}

#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open sessions finish on their own.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

pub fn serve(node: Arc<AuthorityNode>, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let accept = thread::Builder::new()
        .name(format!("authority-{}", node.id()))
        .spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let node = Arc::clone(&node);
                let _ = thread::Builder::new().spawn(move || handle_connection(node, stream));
            }
        })?;
    Ok(ServerHandle {
        addr: local,
        stop,
        accept: Some(accept),
    })
}

fn handle_connection(node: Arc<AuthorityNode>, stream: TcpStream) {
    // Connections silent for twice the idle timeout are dropped outright;
    // shorter gaps are answered with an `expired` error by the session.
    let _ = stream.set_read_timeout(Some(node.idle_timeout().saturating_mul(2)));
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(&stream);
    let mut writer = BufWriter::new(write_half);
    let mut session = node.session();
    while let Ok(payload) = read_payload(&mut reader) {
        let reply = session.handle(&payload);
        if write_frame(&mut writer, &reply).is_err() || session.is_closed() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}
