//! Broker plus ingest over TCP, one thread per connection.
//!
//! The hook runs before any acknowledgment is written, so a publish whose
//! record could not be stored is never acked and the client retries it.

use std::collections::HashMap;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, error, info, warn};

use super::{Ingest, Store, StoreError};
use crate::clock::Millis;
use crate::mqtt::{decode, encode, Broker, BrokerConfig, ConnId, Packet};

const POLL: Duration = Duration::from_millis(50);

struct Hub<S: Store> {
    broker: Broker,
    ingest: Ingest<S>,
    writers: HashMap<ConnId, TcpStream>,
}

pub struct Service<S: Store + Send + 'static> {
    listener: TcpListener,
    hub: Arc<Mutex<Hub<S>>>,
    shutdown: Arc<AtomicBool>,
    next_conn: AtomicU64,
}

impl<S: Store + Send + 'static> Service<S> {
    pub fn bind(
        addr: impl ToSocketAddrs,
        ingest: Ingest<S>,
        config: BrokerConfig,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Service {
            listener,
            hub: Arc::new(Mutex::new(Hub {
                broker: Broker::new(config),
                ingest,
                writers: HashMap::new(),
            })),
            shutdown: Arc::new(AtomicBool::new(false)),
            next_conn: AtomicU64::new(1),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Setting the flag makes [`Service::run`] return within ~100 ms.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    /// Accepts until shut down, then joins every connection thread and
    /// flushes the store.
    pub fn run(self) -> Result<Ingest<S>, StoreError> {
        let mut threads: Vec<JoinHandle<()>> = Vec::new();
        while !self.shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let conn = self.next_conn.fetch_add(1, Ordering::SeqCst);
                    debug!("connection {conn} from {peer}");
                    let hub = Arc::clone(&self.hub);
                    let shutdown = Arc::clone(&self.shutdown);
                    threads.push(thread::spawn(move || {
                        if let Err(e) = serve_conn(conn, stream, &hub, &shutdown) {
                            debug!("connection {conn} ended: {e}");
                        }
                        let mut h = hub.lock().expect("hub lock");
                        h.broker.close(conn);
                        h.writers.remove(&conn);
                    }));
                    threads.retain(|t| !t.is_finished());
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        for t in threads {
            let _ = t.join();
        }
        let hub = Arc::try_unwrap(self.hub)
            .ok()
            .expect("all connection threads joined")
            .into_inner()
            .expect("hub lock");
        let mut ingest = hub.ingest;
        ingest.flush()?;
        info!("service stopped, {} records stored", ingest.records().len());
        Ok(ingest)
    }
}

fn serve_conn<S: Store>(
    conn: ConnId,
    mut stream: TcpStream,
    hub: &Mutex<Hub<S>>,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    {
        let mut h = hub.lock().expect("hub lock");
        h.broker.open(conn);
        h.writers.insert(conn, stream.try_clone()?);
    }
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let mut last_seen = Instant::now();
    let mut keep_alive: Option<Duration> = None;
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                last_seen = Instant::now();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if keep_alive.is_some_and(|k| last_seen.elapsed() > k * 3 / 2) {
                    return Err(io::Error::new(ErrorKind::TimedOut, "keep-alive expired"));
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        loop {
            let (packet, used) = match decode(&buf) {
                Ok(Some(p)) => p,
                Ok(None) => break,
                Err(e) => {
                    warn!("connection {conn}: {e}");
                    return Ok(());
                }
            };
            buf.drain(..used);
            if let Packet::Connect(c) = &packet {
                keep_alive =
                    (c.keep_alive_s > 0).then(|| Duration::from_secs(c.keep_alive_s.into()));
            }
            if !dispatch(conn, packet, &mut stream, hub)? {
                return Ok(());
            }
        }
    }
}

/// Returns false when the connection must close.
fn dispatch<S: Store>(
    conn: ConnId,
    packet: Packet,
    stream: &mut TcpStream,
    hub: &Mutex<Hub<S>>,
) -> io::Result<bool> {
    let mut h = hub.lock().expect("hub lock");
    let out = h.broker.handle(conn, packet, Millis::wall_clock());
    for m in &out.hook {
        if let Err(e) = h.ingest.on_message(&m.topic, &m.payload, m.received_at) {
            error!("dropping connection {conn}: {e}");
            return Ok(false);
        }
    }
    for p in &out.responses {
        stream.write_all(&encode(p).expect("broker packets encode"))?;
    }
    for (target, p) in &out.deliveries {
        if let Some(w) = h.writers.get_mut(target) {
            if let Err(e) = w.write_all(&encode(p).expect("broker packets encode")) {
                debug!("delivery to {target} failed: {e}");
            }
        }
    }
    Ok(!out.close)
}
