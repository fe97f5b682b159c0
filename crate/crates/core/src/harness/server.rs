//! In-process metrics endpoints, one HTTP listener per service.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use tiny_http::{Header, Response, Server};

use super::service::ServiceSim;
use super::HarnessError;

/// How a request decides the simulated time it reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Serve whatever state the driver last advanced to.
    Manual,
    /// Advance to the wall clock before every response.
    Wall,
}

pub fn wall_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

pub const TEXT_FORMAT: &str = "text/plain; version=0.0.4";

pub struct ServiceEndpoint {
    pub name: String,
    pub addr: SocketAddr,
    pub sim: Arc<Mutex<ServiceSim>>,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl ServiceEndpoint {
    /// Bind `host:port` (the service's configured port, 0 for any) and serve `GET /metrics`.
    pub fn start(host: &str, sim: ServiceSim, clock: Clock) -> Result<Self, HarnessError> {
        let name = sim.service().name.clone();
        let want = format!("{host}:{}", sim.service().port);
        let server = Server::http(&want)
            .map_err(|e| HarnessError::PortUnavailable { service: name.clone(), addr: want.clone(), message: e.to_string() })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| HarnessError::PortUnavailable { service: name.clone(), addr: want, message: "not an IP listener".into() })?;
        let server = Arc::new(server);
        let sim = Arc::new(Mutex::new(sim));
        let handle = {
            let (server, sim) = (server.clone(), sim.clone());
            std::thread::spawn(move || serve(&server, &sim, clock))
        };
        Ok(ServiceEndpoint { name, addr, sim, server, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/metrics", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServiceEndpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve(server: &Server, sim: &Mutex<ServiceSim>, clock: Clock) {
    for req in server.incoming_requests() {
        let resp = if req.url() == "/metrics" && *req.method() == tiny_http::Method::Get {
            let mut s = sim.lock().expect("sim lock");
            if clock == Clock::Wall {
                s.advance_to(wall_now());
            }
            let header = Header::from_bytes("Content-Type", TEXT_FORMAT).expect("static header");
            Response::from_string(s.exposition()).with_header(header)
        } else {
            Response::from_string("not found").with_status_code(404)
        };
        if let Err(e) = req.respond(resp) {
            log::debug!("metrics client went away: {e}");
        }
    }
}
