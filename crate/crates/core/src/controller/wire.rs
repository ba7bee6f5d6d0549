//! Wire protocol: one JSON request per line, one JSON response per line,
//! over TCP. Agents poll rather than accepting inbound connections, so
//! vantage points behind NAT or VPN egress still work.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::model::{ReportRecord, TestTarget, VantagePoint};

use super::{Assignment, Controller, ControllerError, ExperimentSpec, ReportFilter, SubmitAck};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Request {
    Register {
        vantage: VantagePoint,
    },
    PollAssignments {
        token: String,
    },
    Submit {
        token: String,
        records: Vec<serde_json::Value>,
    },
    Query {
        #[serde(default)]
        filter: ReportFilter,
    },
    Schedule {
        spec: ExperimentSpec,
        horizon_hours: u32,
    },
    AddTargetList {
        name: String,
        targets: Vec<TestTarget>,
    },
    ListVantagePoints {},
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum Response {
    Registered { token: String },
    Assignments { assignments: Vec<Assignment> },
    Ack(SubmitAck),
    Records { records: Vec<ReportRecord> },
    VantagePoints { vantage_points: Vec<VantagePoint> },
    Scheduled { assignments: usize },
    Error { error: String },
}

fn handle(controller: &Mutex<Controller>, request: Request) -> Response {
    let result = (|| -> Result<Response, ControllerError> {
        let mut c = controller.lock().expect("controller lock");
        Ok(match request {
            Request::Register { vantage } => Response::Registered {
                token: c.register_vantage(vantage)?,
            },
            Request::PollAssignments { token } => Response::Assignments {
                assignments: c.poll_assignments(&token)?,
            },
            Request::Submit { token, records } => Response::Ack(c.submit_report(&token, &records)?),
            Request::Query { filter } => Response::Records {
                records: c.query_reports(&filter),
            },
            Request::Schedule {
                spec,
                horizon_hours,
            } => Response::Scheduled {
                assignments: c
                    .schedule(spec, Duration::hours(horizon_hours as i64))?
                    .len(),
            },
            Request::AddTargetList { name, targets } => {
                c.add_target_list(&name, targets)?;
                Response::Scheduled { assignments: 0 }
            }
            Request::ListVantagePoints {} => Response::VantagePoints {
                vantage_points: c.vantage_points(),
            },
        })
    })();
    result.unwrap_or_else(|e| Response::Error {
        error: e.to_string(),
    })
}

/// Serves a controller over TCP; one thread per connection, requests
/// handled until the peer closes.
pub struct Server {
    listener: TcpListener,
    controller: Arc<Mutex<Controller>>,
}

impl Server {
    pub fn bind(controller: Controller, addr: &str) -> Result<Self, ControllerError> {
        let listener = TcpListener::bind(addr)?;
        Ok(Server {
            listener,
            controller: Arc::new(Mutex::new(controller)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Accept loop; runs until the process exits.
    pub fn run(&self) {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let controller = Arc::clone(&self.controller);
            std::thread::spawn(move || {
                let _ = serve_connection(&controller, stream);
            });
        }
    }

    /// Bind and serve on a background thread; returns the bound address.
    pub fn spawn(controller: Controller, addr: &str) -> Result<SocketAddr, ControllerError> {
        let server = Server::bind(controller, addr)?;
        let bound = server.local_addr();
        std::thread::spawn(move || server.run());
        Ok(bound)
    }
}

fn serve_connection(controller: &Mutex<Controller>, stream: TcpStream) -> std::io::Result<()> {
    let peer = stream.try_clone()?;
    let reader = BufReader::new(peer);
    let mut writer = stream;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(request) => handle(controller, request),
            Err(e) => Response::Error {
                error: format!("bad request: {e}"),
            },
        };
        let text = serde_json::to_string(&response).expect("responses always serialize");
        writeln!(writer, "{text}")?;
        writer.flush()?;
    }
    Ok(())
}

/// One-connection-per-call client.
pub struct Client {
    addr: String,
}

impl Client {
    pub fn new(addr: &str) -> Self {
        Client {
            addr: addr.to_string(),
        }
    }

    pub fn call(&self, request: &Request) -> Result<Response, ControllerError> {
        let stream = TcpStream::connect(&self.addr)
            .map_err(|e| ControllerError::Wire(format!("connect {}: {e}", self.addr)))?;
        let mut writer = stream
            .try_clone()
            .map_err(|e| ControllerError::Wire(e.to_string()))?;
        let text = serde_json::to_string(request).expect("requests always serialize");
        writeln!(writer, "{text}").map_err(|e| ControllerError::Wire(e.to_string()))?;
        writer
            .flush()
            .map_err(|e| ControllerError::Wire(e.to_string()))?;
        let mut reader = BufReader::new(stream);
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| ControllerError::Wire(e.to_string()))?;
        if line.is_empty() {
            return Err(ControllerError::Wire("connection closed".into()));
        }
        serde_json::from_str(&line).map_err(|e| ControllerError::Wire(format!("bad response: {e}")))
    }

    pub fn register(&self, vantage: VantagePoint) -> Result<String, ControllerError> {
        match self.call(&Request::Register { vantage })? {
            Response::Registered { token } => Ok(token),
            other => Err(unexpected(other)),
        }
    }

    pub fn poll_assignments(&self, token: &str) -> Result<Vec<Assignment>, ControllerError> {
        match self.call(&Request::PollAssignments {
            token: token.to_string(),
        })? {
            Response::Assignments { assignments } => Ok(assignments),
            other => Err(unexpected(other)),
        }
    }

    pub fn submit(
        &self,
        token: &str,
        records: &[ReportRecord],
    ) -> Result<SubmitAck, ControllerError> {
        let values = records
            .iter()
            .map(|r| serde_json::to_value(r).expect("records serialize"))
            .collect();
        match self.call(&Request::Submit {
            token: token.to_string(),
            records: values,
        })? {
            Response::Ack(ack) => Ok(ack),
            other => Err(unexpected(other)),
        }
    }

    pub fn query(&self, filter: &ReportFilter) -> Result<Vec<ReportRecord>, ControllerError> {
        match self.call(&Request::Query {
            filter: filter.clone(),
        })? {
            Response::Records { records } => Ok(records),
            other => Err(unexpected(other)),
        }
    }

    pub fn list_vantage_points(&self) -> Result<Vec<VantagePoint>, ControllerError> {
        match self.call(&Request::ListVantagePoints {})? {
            Response::VantagePoints { vantage_points } => Ok(vantage_points),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(response: Response) -> ControllerError {
    match response {
        Response::Error { error } => ControllerError::Wire(error),
        other => ControllerError::Wire(format!("unexpected response {other:?}")),
    }
}
